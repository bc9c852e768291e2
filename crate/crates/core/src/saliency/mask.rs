use std::fs;
use std::path::Path;

use super::{Method, Result, SaliencyError, SaliencyScores};
use crate::corpus::EmbeddingSequence;

/// Retained dimension indices, ascending, out of `source_dims`.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionMask {
    pub kept: Vec<usize>,
    pub source_dims: usize,
    pub method: Method,
    pub fraction: f64,
}

/// `round(fraction · dims)` with halves rounded up.
pub fn selection_size(fraction: f64, dims: usize) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(SaliencyError::Fraction(fraction));
    }
    let k = (fraction * dims as f64 + 0.5).floor() as usize;
    if k == 0 {
        return Err(SaliencyError::EmptySelection { fraction, dims });
    }
    Ok(k.min(dims))
}

/// Keeps the `round(fraction · N)` dimensions with the largest aggregated
/// score. Equal scores prefer the lower index.
pub fn rank_and_select(scores: &SaliencyScores, fraction: f64) -> Result<SelectionMask> {
    let dims = scores.dims();
    let k = selection_size(fraction, dims)?;
    let mut kept = ranking(&scores.aggregated);
    kept.truncate(k);
    kept.sort_unstable();
    Ok(SelectionMask {
        kept,
        source_dims: dims,
        method: scores.method,
        fraction,
    })
}

/// Dimension indices ordered by descending score, ties by ascending index.
pub(crate) fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

impl SelectionMask {
    /// Mask keeping every dimension.
    pub fn full(dims: usize, method: Method) -> Self {
        SelectionMask {
            kept: (0..dims).collect(),
            source_dims: dims,
            method,
            fraction: 1.0,
        }
    }

    /// Hand-picked mask; indices are sorted and must be unique and in range.
    pub fn manual(mut kept: Vec<usize>, source_dims: usize) -> Result<Self> {
        kept.sort_unstable();
        let mask = SelectionMask {
            fraction: kept.len() as f64 / source_dims.max(1) as f64,
            kept,
            source_dims,
            method: Method::Manual,
        };
        mask.validate()?;
        Ok(mask)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kept.is_empty() {
            return Err(SaliencyError::Mask("no dimension kept".into()));
        }
        if self.kept.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SaliencyError::Mask("indices must be strictly ascending".into()));
        }
        if let Some(&k) = self.kept.last().filter(|&&k| k >= self.source_dims) {
            return Err(SaliencyError::Mask(format!(
                "index {k} out of range [0, {})",
                self.source_dims
            )));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(SaliencyError::Fraction(self.fraction));
        }
        Ok(())
    }

    /// The mask equivalent to applying `self` and then `inner`, where `inner`
    /// indexes the columns `self` produces.
    pub fn compose(&self, inner: &SelectionMask) -> Result<SelectionMask> {
        if inner.source_dims != self.kept.len() {
            return Err(SaliencyError::DimensionMismatch {
                expected: self.kept.len(),
                found: inner.source_dims,
            });
        }
        Ok(SelectionMask {
            kept: inner.kept.iter().map(|&j| self.kept[j]).collect(),
            source_dims: self.source_dims,
            method: Method::Manual,
            fraction: inner.kept.len() as f64 / self.source_dims as f64,
        })
    }

    /// Two-line text form: `dims=<N> method=<m> fraction=<f>` then the kept
    /// indices separated by spaces.
    pub fn to_text(&self) -> String {
        let idx: Vec<String> = self.kept.iter().map(usize::to_string).collect();
        format!(
            "dims={} method={} fraction={}\n{}\n",
            self.source_dims,
            self.method,
            self.fraction,
            idx.join(" ")
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let err = |reason: String| SaliencyError::Parse {
            what: "mask file",
            reason,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| err("empty file".into()))?;
        let (mut dims, mut method, mut fraction) = (None, None, None);
        for token in header.split_whitespace() {
            match token.split_once('=') {
                Some(("dims", v)) => dims = Some(v.parse::<usize>().map_err(|e| err(e.to_string()))?),
                Some(("method", v)) => method = Some(v.parse::<Method>().map_err(err)?),
                Some(("fraction", v)) => {
                    fraction = Some(v.parse::<f64>().map_err(|e| err(e.to_string()))?)
                }
                _ => return Err(err(format!("unexpected header token '{token}'"))),
            }
        }
        let kept = lines
            .next()
            .unwrap_or("")
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| err(format!("index '{t}': {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let mask = SelectionMask {
            kept,
            source_dims: dims.ok_or_else(|| err("missing dims".into()))?,
            method: method.ok_or_else(|| err("missing method".into()))?,
            fraction: fraction.ok_or_else(|| err("missing fraction".into()))?,
        };
        mask.validate()?;
        Ok(mask)
    }

    pub fn write(&self, dest: impl AsRef<Path>) -> Result<()> {
        let dest = dest.as_ref();
        fs::write(dest, self.to_text()).map_err(|source| SaliencyError::Io {
            path: dest.to_path_buf(),
            source,
        })
    }

    pub fn read(src: impl AsRef<Path>) -> Result<Self> {
        let src = src.as_ref();
        let text = fs::read_to_string(src).map_err(|source| SaliencyError::Io {
            path: src.to_path_buf(),
            source,
        })?;
        Self::from_text(&text)
    }

    /// Restricts one frame to the kept dimensions.
    pub fn apply_frame(&self, frame: &[f64]) -> Vec<f64> {
        self.kept.iter().map(|&k| frame[k]).collect()
    }
}

/// Keeps only the masked columns of `seq`; frames are untouched.
pub fn apply_mask(seq: &EmbeddingSequence, mask: &SelectionMask) -> Result<EmbeddingSequence> {
    if seq.cols() != mask.source_dims {
        return Err(SaliencyError::DimensionMismatch {
            expected: mask.source_dims,
            found: seq.cols(),
        });
    }
    let mut values = Vec::with_capacity(seq.rows() * mask.kept.len());
    for r in 0..seq.rows() {
        let row = seq.row(r);
        values.extend(mask.kept.iter().map(|&k| row[k]));
    }
    Ok(EmbeddingSequence::new(seq.rows(), mask.kept.len(), values)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(agg: &[f64]) -> SaliencyScores {
        let rows: Vec<[f64; 3]> = agg.iter().map(|a| [*a; 3]).collect();
        SaliencyScores {
            method: Method::Ccs,
            per_label: rows.clone(),
            aggregated: agg.to_vec(),
            base_term: rows,
            gamma_term: vec![[0.0; 3]; agg.len()],
        }
    }

    #[test]
    fn selection_examples() {
        let s = scores(&[0.9, 0.1, 0.5, 0.5]);
        assert_eq!(rank_and_select(&s, 1.0).unwrap().kept, vec![0, 1, 2, 3]);
        assert_eq!(rank_and_select(&s, 0.5).unwrap().kept, vec![0, 2]);
        assert!(matches!(rank_and_select(&s, 0.0), Err(SaliencyError::Fraction(_))));
        assert!(matches!(rank_and_select(&s, 1.5), Err(SaliencyError::Fraction(_))));
        assert!(matches!(
            rank_and_select(&s, 0.1),
            Err(SaliencyError::EmptySelection { .. })
        ));
    }

    #[test]
    fn round_half_up() {
        assert_eq!(selection_size(0.5, 5).unwrap(), 3);
        assert_eq!(selection_size(0.8, 64).unwrap(), 51);
        assert_eq!(selection_size(0.6, 64).unwrap(), 38);
        assert_eq!(selection_size(0.4, 64).unwrap(), 26);
        assert_eq!(selection_size(0.125, 4).unwrap(), 1);
    }

    #[test]
    fn apply_examples() {
        let seq = EmbeddingSequence::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let full = SelectionMask::full(2, Method::Ccs);
        assert_eq!(apply_mask(&seq, &full).unwrap(), seq);
        let one = SelectionMask::manual(vec![1], 2).unwrap();
        let out = apply_mask(&seq, &one).unwrap();
        assert_eq!(out, EmbeddingSequence::from_rows(&[vec![2.0], vec![4.0]]).unwrap());
        let wrong = SelectionMask::full(3, Method::Ccs);
        assert!(apply_mask(&seq, &wrong).is_err());
    }

    #[test]
    fn composition_matches_direct_indexing() {
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|r| (0..8).map(|c| (r * 10 + c) as f64).collect())
            .collect();
        let seq = EmbeddingSequence::from_rows(&rows).unwrap();
        let outer = SelectionMask::manual(vec![1, 2, 4, 6, 7], 8).unwrap();
        let inner = SelectionMask::manual(vec![0, 3, 4], 5).unwrap();
        let twice = apply_mask(&apply_mask(&seq, &outer).unwrap(), &inner).unwrap();
        let composed = outer.compose(&inner).unwrap();
        assert_eq!(composed.kept, vec![1, 6, 7]);
        assert_eq!(apply_mask(&seq, &composed).unwrap(), twice);
    }

    #[test]
    fn text_round_trip() {
        let m = SelectionMask {
            kept: vec![0, 3, 9],
            source_dims: 10,
            method: Method::Mis,
            fraction: 0.3,
        };
        assert_eq!(m.to_text(), "dims=10 method=mis fraction=0.3\n0 3 9\n");
        assert_eq!(SelectionMask::from_text(&m.to_text()).unwrap(), m);
        assert!(SelectionMask::from_text("dims=10 method=mis fraction=0.3\n0 3 12\n").is_err());
        assert!(SelectionMask::from_text("dims=10 fraction=0.3\n0\n").is_err());
        assert!(SelectionMask::manual(vec![2, 2], 4).is_err());
    }
}
