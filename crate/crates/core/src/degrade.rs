//! Feature-space noise injection at a controlled signal-to-noise ratio.
//!
//! `P_signal` is the mean square of the embedding matrix after subtracting
//! its grand mean. Gaussian noise is drawn per cell and rescaled so that its
//! mean square is exactly `P_signal / 10^(snr/10)`; the realised SNR is
//! therefore exact rather than exact in expectation. The noise stream is
//! seeded from the spec seed and the utterance id, so outputs are
//! independent of processing order, and the same unit draws are reused
//! across SNR levels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, EmbeddingSequence, Split, Utterance, UtteranceRecord};

#[derive(Debug, Error)]
pub enum DegradeError {
    #[error("snr_db {0} must be finite")]
    Snr(f64),
    #[error("utterance '{0}' has zero signal power")]
    ZeroPower(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

pub type Result<T, E = DegradeError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradeSpec {
    pub snr_db: f64,
    pub seed: u64,
}

impl DegradeSpec {
    pub fn new(snr_db: f64, seed: u64) -> Result<Self> {
        let s = DegradeSpec { snr_db, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_finite() {
            Ok(())
        } else {
            Err(DegradeError::Snr(self.snr_db))
        }
    }

    /// Id suffix, e.g. `@25dB`.
    pub fn suffix(&self) -> String {
        format!("@{}dB", self.snr_db)
    }
}

/// Mean square of the matrix after removing its grand mean.
pub fn signal_power(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// `10·log10(P_signal / P_noise)` between a clean and a perturbed matrix.
pub fn measured_snr_db(clean: &[f64], noisy: &[f64]) -> f64 {
    let noise: f64 = clean
        .iter()
        .zip(noisy)
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        / clean.len() as f64;
    10.0 * (signal_power(clean) / noise).log10()
}

/// Adds Gaussian noise to `seq` at `spec.snr_db`. `id` keys the noise stream.
pub fn perturb(seq: &EmbeddingSequence, id: &str, spec: &DegradeSpec) -> Result<EmbeddingSequence> {
    spec.validate()?;
    let values = seq.values();
    let power = signal_power(values);
    if values.iter().all(|v| *v == values[0]) || !(power > 0.0) {
        return Err(DegradeError::ZeroPower(id.to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(spec.seed, id));
    let noise: Vec<f64> = (0..values.len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let drawn = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
    let target = power / 10f64.powf(spec.snr_db / 10.0);
    let scale = (target / drawn).sqrt();
    let out = values.iter().zip(&noise).map(|(v, e)| v + scale * e).collect();
    Ok(EmbeddingSequence::new(seq.rows(), seq.cols(), out)?)
}

/// Perturbs every eval-split utterance and tags its id with the SNR; other
/// splits and all labels are copied unchanged.
pub fn degrade_corpus(corpus: &Corpus, spec: &DegradeSpec) -> Result<Corpus> {
    spec.validate()?;
    let utterances = corpus
        .utterances()
        .par_iter()
        .map(|u| {
            if u.record.split != Split::Eval {
                return Ok(u.clone());
            }
            Ok(Utterance {
                record: UtteranceRecord {
                    id: format!("{}{}", u.record.id, spec.suffix()),
                    ..u.record.clone()
                },
                embedding: perturb(&u.embedding, &u.record.id, spec)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus::new(utterances)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SyntheticSpec};
    use rand::Rng;

    fn unit_seq(rows: usize, cols: usize, seed: u64) -> EmbeddingSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EmbeddingSequence::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    fn frobenius(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn high_snr_is_nearly_identity() {
        let seq = unit_seq(10, 20, 1);
        let out = perturb(&seq, "u", &DegradeSpec::new(120.0, 3).unwrap()).unwrap();
        let diff: Vec<f64> = out.values().iter().zip(seq.values()).map(|(a, b)| a - b).collect();
        assert!(frobenius(&diff) / frobenius(seq.values()) < 1e-4);
    }

    #[test]
    fn realised_snr_matches_target() {
        let seq = unit_seq(100, 100, 2);
        for snr in [25.0, 15.0, 5.0, -3.0] {
            let out = perturb(&seq, "utt", &DegradeSpec::new(snr, 9).unwrap()).unwrap();
            assert!((measured_snr_db(seq.values(), out.values()) - snr).abs() < 0.1);
        }
    }

    #[test]
    fn deterministic_per_id() {
        let seq = unit_seq(4, 4, 3);
        let spec = DegradeSpec::new(10.0, 5).unwrap();
        assert_eq!(perturb(&seq, "a", &spec).unwrap(), perturb(&seq, "a", &spec).unwrap());
        assert_ne!(perturb(&seq, "a", &spec).unwrap(), perturb(&seq, "b", &spec).unwrap());
    }

    #[test]
    fn constant_input_is_rejected() {
        let seq = EmbeddingSequence::new(3, 2, vec![0.7; 6]).unwrap();
        assert!(matches!(
            perturb(&seq, "c", &DegradeSpec::new(10.0, 0).unwrap()),
            Err(DegradeError::ZeroPower(_))
        ));
        assert!(DegradeSpec::new(f64::INFINITY, 0).is_err());
    }

    #[test]
    fn corpus_rows_and_labels_preserved() {
        let corpus = generate_synthetic(&SyntheticSpec::planted(40, 6, 2, 0.5, 4)).unwrap();
        let spec = DegradeSpec::new(25.0, 1).unwrap();
        let out = degrade_corpus(&corpus, &spec).unwrap();
        assert_eq!(out.len(), corpus.len());
        for (a, b) in corpus.utterances().iter().zip(out.utterances()) {
            assert_eq!(a.record.labels, b.record.labels);
            assert_eq!(a.record.split, b.record.split);
            if a.record.split == Split::Eval {
                assert_eq!(b.record.id, format!("{}@25dB", a.record.id));
                assert_ne!(a.embedding, b.embedding);
            } else {
                assert_eq!(a, b);
            }
        }
    }
}
