//! Synthetic corpora with planted salient dimensions.
//!
//! Each utterance draws a latent triple `z ~ N(0, I₃)`; its mean labels are
//! `clamp(4 + 1.2 z, 1, 7)`. Informative dimensions carry a fixed unit-norm
//! linear mix of `z` plus per-frame Gaussian noise of scale `noise_scale`;
//! every other dimension is unit Gaussian noise.
//!
//! With the heteroscedastic profile the grader variance is
//! `0.2 + 0.6 |z_v|` on all three affect dimensions, and each stored mean
//! gets extra noise with standard deviation `0.5 * variance` before clamping.
//! The homoscedastic profile stores a constant variance of 0.25.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    AffectLabels, Corpus, CorpusError, EmbeddingSequence, Result, Split, Utterance,
    UtteranceRecord, LIKERT_MAX, LIKERT_MIN,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceProfile {
    Homoscedastic,
    Heteroscedastic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_utterances: usize,
    pub n_dims: usize,
    /// Inclusive frame-count range.
    pub frames_range: [usize; 2],
    pub informative_dims: Vec<usize>,
    pub noise_scale: f64,
    pub variance_profile: VarianceProfile,
    pub seed: u64,
    /// Share of utterances tagged `valid`; the first utterances go to train.
    #[serde(default = "default_holdout")]
    pub valid_fraction: f64,
    /// Share of utterances tagged `eval` (the last ones).
    #[serde(default = "default_holdout")]
    pub eval_fraction: f64,
}

fn default_holdout() -> f64 {
    0.15
}

pub(crate) const HOMOSCEDASTIC_VARIANCE: f64 = 0.25;

impl SyntheticSpec {
    /// `n_informative` dimensions spread evenly over `n_dims`.
    pub fn planted(
        n_utterances: usize,
        n_dims: usize,
        n_informative: usize,
        noise_scale: f64,
        seed: u64,
    ) -> Self {
        let informative_dims = (0..n_informative)
            .map(|i| i * n_dims / n_informative.max(1))
            .collect();
        SyntheticSpec {
            n_utterances,
            n_dims,
            frames_range: [8, 16],
            informative_dims,
            noise_scale,
            variance_profile: VarianceProfile::Homoscedastic,
            seed,
            valid_fraction: default_holdout(),
            eval_fraction: default_holdout(),
        }
    }

    pub fn with_profile(mut self, profile: VarianceProfile) -> Self {
        self.variance_profile = profile;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CorpusError::Spec(m));
        if self.n_utterances == 0 {
            return fail("n_utterances must be positive".into());
        }
        if self.n_dims == 0 {
            return fail("n_dims must be positive".into());
        }
        let [lo, hi] = self.frames_range;
        if lo == 0 || lo > hi {
            return fail(format!("frames_range [{lo}, {hi}] must satisfy 1 <= min <= max"));
        }
        if let Some(k) = self.informative_dims.iter().find(|&&k| k >= self.n_dims) {
            return fail(format!(
                "informative dim {k} out of range [0, {})",
                self.n_dims
            ));
        }
        let mut sorted = self.informative_dims.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.informative_dims.len() {
            return fail("informative_dims contains duplicates".into());
        }
        if !(self.noise_scale.is_finite() && self.noise_scale > 0.0) {
            return fail(format!("noise_scale {} must be positive", self.noise_scale));
        }
        let holdout = self.valid_fraction + self.eval_fraction;
        if !(0.0..=1.0).contains(&self.valid_fraction)
            || !(0.0..=1.0).contains(&self.eval_fraction)
            || holdout >= 1.0
        {
            return fail("valid_fraction + eval_fraction must lie in [0, 1)".into());
        }
        Ok(())
    }

    /// Split tag of utterance `i`.
    fn split_of(&self, i: usize) -> Split {
        let n = self.n_utterances as f64;
        let n_train = (n * (1.0 - self.valid_fraction - self.eval_fraction)).round() as usize;
        let n_valid = (n * self.valid_fraction).round() as usize;
        if i < n_train {
            Split::Train
        } else if i < n_train + n_valid {
            Split::Valid
        } else {
            Split::Eval
        }
    }
}

/// Synthetic utterance id for index `i`.
pub fn synthetic_id(i: usize) -> String {
    format!("utt{i:05}")
}

/// Generates the corpus in memory. Values are rounded to binary32 so the
/// corpus equals what reading back its EMB1 files would produce.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    let mut mix = vec![None; spec.n_dims];
    for &k in &spec.informative_dims {
        let mut a = [normal(&mut rng), normal(&mut rng), normal(&mut rng)];
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        a.iter_mut().for_each(|v| *v /= norm);
        mix[k] = Some(a);
    }

    let mut utterances = Vec::with_capacity(spec.n_utterances);
    for i in 0..spec.n_utterances {
        let z = [normal(&mut rng), normal(&mut rng), normal(&mut rng)];
        let frames = rng.random_range(spec.frames_range[0]..=spec.frames_range[1]);
        let mut values = Vec::with_capacity(frames * spec.n_dims);
        for _ in 0..frames {
            for a in &mix {
                let v = match a {
                    Some(a) => {
                        a[0] * z[0] + a[1] * z[1] + a[2] * z[2]
                            + spec.noise_scale * normal(&mut rng)
                    }
                    None => normal(&mut rng),
                };
                values.push(f64::from(v as f32));
            }
        }

        let mut mean = [0.0; 3];
        let mut variance = [HOMOSCEDASTIC_VARIANCE; 3];
        for d in 0..3 {
            mean[d] = 4.0 + 1.2 * z[d];
        }
        if spec.variance_profile == VarianceProfile::Heteroscedastic {
            let var = 0.2 + 0.6 * z[0].abs();
            for d in 0..3 {
                variance[d] = var;
                mean[d] += 0.5 * var * normal(&mut rng);
            }
        }
        for m in &mut mean {
            *m = m.clamp(LIKERT_MIN, LIKERT_MAX);
        }

        let id = synthetic_id(i);
        utterances.push(Utterance {
            record: UtteranceRecord {
                embedding_path: PathBuf::from("emb").join(format!("{id}.emb")),
                id,
                split: spec.split_of(i),
                labels: AffectLabels { mean, variance },
            },
            embedding: EmbeddingSequence::new(frames, spec.n_dims, values)?,
        });
    }
    Corpus::new(utterances)
}
