//! Input transform applied to every utterance before the regressor.

use super::{apply_mask, apply_pca, PcaProjection, Result, SaliencyError, SelectionMask};
use crate::corpus::{Corpus, EmbeddingSequence, Utterance};

#[derive(Clone, Debug, PartialEq)]
pub enum InputTransform {
    Identity,
    Mask(SelectionMask),
    Pca(PcaProjection),
}

impl InputTransform {
    /// Output width given `source_dims` input columns.
    pub fn output_dims(&self, source_dims: usize) -> usize {
        match self {
            InputTransform::Identity => source_dims,
            InputTransform::Mask(m) => m.kept.len(),
            InputTransform::Pca(p) => p.target_dims(),
        }
    }

    pub fn source_dims(&self) -> Option<usize> {
        match self {
            InputTransform::Identity => None,
            InputTransform::Mask(m) => Some(m.source_dims),
            InputTransform::Pca(p) => Some(p.source_dims()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            InputTransform::Identity => "identity",
            InputTransform::Mask(_) => "mask",
            InputTransform::Pca(_) => "pca",
        }
    }

    pub fn apply(&self, seq: &EmbeddingSequence) -> Result<EmbeddingSequence> {
        match self {
            InputTransform::Identity => Ok(seq.clone()),
            InputTransform::Mask(m) => apply_mask(seq, m),
            InputTransform::Pca(p) => apply_pca(seq, p),
        }
    }

    /// Transforms every utterance; ids, splits and labels are kept.
    pub fn apply_corpus(&self, corpus: &Corpus) -> Result<Corpus> {
        let utterances = corpus
            .utterances()
            .iter()
            .map(|u| {
                Ok(Utterance {
                    record: u.record.clone(),
                    embedding: self.apply(&u.embedding)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus::new(utterances)?)
    }

    /// Text form: a `kind` line followed by the mask or projection text.
    pub fn to_text(&self) -> String {
        match self {
            InputTransform::Identity => "identity\n".into(),
            InputTransform::Mask(m) => format!("mask\n{}", m.to_text()),
            InputTransform::Pca(p) => format!("pca\n{}", p.to_text(p.target_dims() as f64 / p.source_dims() as f64)),
        }
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (kind, rest) = text.split_once('\n').unwrap_or((text, ""));
        match kind.trim() {
            "identity" => Ok(InputTransform::Identity),
            "mask" => Ok(InputTransform::Mask(SelectionMask::from_text(rest)?)),
            "pca" => Ok(InputTransform::Pca(PcaProjection::from_text(rest)?)),
            other => Err(SaliencyError::Parse {
                what: "input transform",
                reason: format!("unknown kind '{other}'"),
            }),
        }
    }
}
