//! Mini-batch training under the CCC loss with early stopping.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{backward_batch, forward_batch};
use super::{ModelError, Parameters, RegressorModel, Result, TrainConfig};
use crate::corpus::{Corpus, EmbeddingSequence, Split, Utterance};
use crate::metrics::{ccc_loss_and_grad, ccc_loss_with_variance_and_grad, ccc_or_zero, LossOutput, MetricsError};
use crate::saliency::InputTransform;

/// One training or evaluation sample after the input transform.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub seq: EmbeddingSequence,
    /// `(μ_v, μ_a, μ_d, σ²_v, σ²_a, σ²_d)`.
    pub targets: [f64; 6],
}

impl Example {
    pub fn from_utterance(u: &Utterance) -> Self {
        Example {
            id: u.record.id.clone(),
            seq: u.embedding.clone(),
            targets: u.record.labels.as_row(),
        }
    }

    /// Applies `transform` to every utterance of `split`.
    pub fn from_split(corpus: &Corpus, split: Split, transform: &InputTransform) -> Result<Vec<Self>> {
        corpus
            .split(split)
            .into_iter()
            .map(|u| {
                let seq = transform
                    .apply(&u.embedding)
                    .map_err(|e| ModelError::Config(format!("input transform: {e}")))?;
                Ok(Example {
                    id: u.record.id.clone(),
                    seq,
                    targets: u.record.labels.as_row(),
                })
            })
            .collect()
    }
}

/// Update rule. `Sgd` is `θ ← θ − lr·g`; `Adam` uses β = (0.9, 0.999), ε = 1e-8.
///
/// Adam is the default: under the CCC loss the per-parameter gradients are
/// O(1/batch) and plain SGD at lr 5e-4 does not leave the initial plateau
/// within a few hundred epochs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

enum OptimizerState {
    Sgd,
    Adam { m: Parameters, v: Parameters, step: i32 },
}

impl OptimizerState {
    fn new(kind: Optimizer, model: &RegressorModel) -> Self {
        match kind {
            Optimizer::Sgd => OptimizerState::Sgd,
            Optimizer::Adam => OptimizerState::Adam {
                m: Parameters::zeros(&model.config),
                v: Parameters::zeros(&model.config),
                step: 0,
            },
        }
    }

    fn apply(&mut self, model: &mut RegressorModel, grad: &Parameters, lr: f64) {
        let params = model.params_mut();
        match self {
            OptimizerState::Sgd => {
                for (p, g) in params.tensors_mut().into_iter().zip(grad.tensors()) {
                    for (x, d) in p.iter_mut().zip(g) {
                        *x -= lr * d;
                    }
                }
            }
            OptimizerState::Adam { m, v, step } => {
                *step += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(*step);
                let c2 = 1.0 - ADAM_BETA2.powi(*step);
                let tensors = params
                    .tensors_mut()
                    .into_iter()
                    .zip(grad.tensors())
                    .zip(m.tensors_mut().into_iter().zip(v.tensors_mut()));
                for ((p, g), (mt, vt)) in tensors {
                    for i in 0..p.len() {
                        mt[i] = ADAM_BETA1 * mt[i] + (1.0 - ADAM_BETA1) * g[i];
                        vt[i] = ADAM_BETA2 * vt[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                        p[i] -= lr * (mt[i] / c1) / ((vt[i] / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub train_loss: f64,
    /// Validation CCC on mean targets (valence, activation, dominance).
    pub valid_ccc: [f64; 3],
}

impl EpochRecord {
    pub fn mean_valid_ccc(&self) -> f64 {
        self.valid_ccc.iter().sum::<f64>() / 3.0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch number whose parameters were kept.
    pub selected: Option<usize>,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,ccc_v,ccc_a,ccc_d,selected";

    pub fn selected_record(&self) -> Option<&EpochRecord> {
        let sel = self.selected?;
        self.epochs.iter().find(|e| e.epoch == sel)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for e in &self.epochs {
            writeln!(
                out,
                "{},{:.9},{:.9},{:.9},{:.9},{}",
                e.epoch,
                e.train_loss,
                e.valid_ccc[0],
                e.valid_ccc[1],
                e.valid_ccc[2],
                u8::from(self.selected == Some(e.epoch))
            )
            .unwrap();
        }
        out
    }
}

/// Target rows for a batch: 3 rows of means, plus 3 variance rows when the
/// model has 6 heads.
fn target_rows(batch: &[&Example], heads: usize) -> Vec<Vec<f64>> {
    (0..heads)
        .map(|r| batch.iter().map(|e| e.targets[r]).collect())
        .collect()
}

/// Loss and exact parameter gradient of one mini-batch. The CCC couples all
/// batch members, so the gradient reflects batch means and variances.
pub fn batch_loss(
    model: &RegressorModel,
    batch: &[&Example],
    tc: &TrainConfig,
) -> Result<(LossOutput, Parameters)> {
    let seqs: Vec<&EmbeddingSequence> = batch.iter().map(|e| &e.seq).collect();
    let (pred, caches) = forward_batch(model, &seqs)?;
    let target = target_rows(batch, model.config.heads);
    let out = if model.config.heads == 6 {
        ccc_loss_with_variance_and_grad(&pred, &target, &tc.loss_weights)?
    } else {
        ccc_loss_and_grad(&pred, &target, &tc.loss_weights)?
    };
    let grad = backward_batch(model, &seqs, &caches, &out.grad)?;
    Ok((out, grad))
}

/// CCC of the mean heads against mean targets over `examples`.
pub(super) fn validation_ccc(model: &RegressorModel, examples: &[Example]) -> Result<[f64; 3]> {
    let seqs: Vec<&EmbeddingSequence> = examples.iter().map(|e| &e.seq).collect();
    let (pred, _) = forward_batch(model, &seqs)?;
    let mut out = [0.0; 3];
    for (d, slot) in out.iter_mut().enumerate() {
        let target: Vec<f64> = examples.iter().map(|e| e.targets[d]).collect();
        *slot = ccc_or_zero(&pred[d], &target)?.value;
    }
    Ok(out)
}

/// Trains on the corpus train split, selecting on the valid split.
pub fn train(
    model: RegressorModel,
    corpus: &Corpus,
    tc: &TrainConfig,
) -> Result<(RegressorModel, TrainHistory)> {
    let train_set = Example::from_split(corpus, Split::Train, &InputTransform::Identity)?;
    let valid_set = Example::from_split(corpus, Split::Valid, &InputTransform::Identity)?;
    train_on(model, &train_set, &valid_set, tc)
}

/// Training loop over prepared examples.
///
/// Each epoch shuffles the training set with a generator seeded from
/// `tc.seed` and steps once per batch; a trailing batch of one sample is
/// skipped because batch CCC needs two. After every epoch the mean
/// validation CCC is recorded; the best epoch's parameters are returned and
/// training stops after `tc.patience` epochs without strict improvement.
pub fn train_on(
    mut model: RegressorModel,
    train_set: &[Example],
    valid_set: &[Example],
    tc: &TrainConfig,
) -> Result<(RegressorModel, TrainHistory)> {
    tc.validate()?;
    let want_heads = if tc.use_variance_targets { 6 } else { 3 };
    if model.config.heads != want_heads {
        return Err(ModelError::TrainConfig(format!(
            "use_variance_targets={} needs {want_heads} heads, model has {}",
            tc.use_variance_targets, model.config.heads
        )));
    }
    if train_set.len() < 2 {
        return Err(ModelError::EmptySplit("train"));
    }
    if valid_set.len() < 2 {
        return Err(ModelError::EmptySplit("valid"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(tc.seed, "train.shuffle"));
    let mut optimizer = OptimizerState::new(tc.optimizer, &model);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Parameters)> = None;
    let mut stale = 0;

    for epoch in 1..=tc.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(tc.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (out, grad) = match batch_loss(&model, &batch, tc) {
                Ok(v) => v,
                // no signal: every prediction row or target row is constant
                Err(ModelError::Metrics(MetricsError::DegenerateLoss)) => continue,
                Err(ModelError::NonFinite(what)) => {
                    return Err(diverged(epoch, format!("non-finite {what}"), history))
                }
                Err(e) => return Err(e),
            };
            if !out.loss.is_finite() || !grad.all_finite() {
                return Err(diverged(epoch, "non-finite loss or gradient".into(), history));
            }
            optimizer.apply(&mut model, &grad, tc.learning_rate);
            if !model.params.all_finite() {
                return Err(diverged(epoch, "non-finite parameters".into(), history));
            }
            loss_sum += out.loss;
            batches += 1;
        }
        let valid_ccc = match validation_ccc(&model, valid_set) {
            Ok(v) => v,
            Err(ModelError::NonFinite(what)) => {
                return Err(diverged(epoch, format!("non-finite {what}"), history))
            }
            Err(e) => return Err(e),
        };
        let record = EpochRecord {
            epoch,
            train_loss: if batches > 0 { loss_sum / batches as f64 } else { 0.0 },
            valid_ccc,
        };
        let score = record.mean_valid_ccc();
        history.epochs.push(record);
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, model.params.clone()));
            history.selected = Some(epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= tc.patience {
                break;
            }
        }
    }
    if let Some((_, params)) = best {
        *model.params_mut() = params;
    }
    Ok((model, history))
}

fn diverged(epoch: usize, reason: String, history: TrainHistory) -> ModelError {
    ModelError::Diverged {
        epoch,
        reason,
        history,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SyntheticSpec};
    use crate::model::{forward, ModelConfig};

    fn tiny_cfg(input_dim: usize, heads: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            input_dim,
            conv_kernel: 3,
            conv_channels: 4,
            gru_layers: 2,
            gru_units: 4,
            embedding_dim: 3,
            heads,
            seed,
        }
    }

    fn small_sets() -> (Vec<Example>, Vec<Example>) {
        let spec = SyntheticSpec::planted(80, 6, 2, 0.3, 9);
        let corpus = generate_synthetic(&spec).unwrap();
        let t = InputTransform::Identity;
        (
            Example::from_split(&corpus, Split::Train, &t).unwrap(),
            Example::from_split(&corpus, Split::Valid, &t).unwrap(),
        )
    }

    fn quick_tc() -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            learning_rate: 0.01,
            max_epochs: 4,
            patience: 2,
            optimizer: Optimizer::Adam,
            ..TrainConfig::default()
        }
    }

    /// Central finite differences of the batch loss against the analytic
    /// gradient, through the batch-coupled CCC.
    fn check_batch_gradient(heads: usize, seed: u64) {
        let (train_set, _) = small_sets();
        let model = RegressorModel::new(tiny_cfg(6, heads, seed)).unwrap();
        assert!(model.parameter_count() <= 2000);
        let batch: Vec<&Example> = train_set.iter().skip(seed as usize).take(5).collect();
        let tc = TrainConfig {
            use_variance_targets: heads == 6,
            ..TrainConfig::default()
        };
        let (_, grad) = batch_loss(&model, &batch, &tc).unwrap();
        let mut probe = model.clone();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for ti in 0..grad.tensors().len() {
            for j in 0..grad.tensors()[ti].len() {
                let orig = probe.params.tensors()[ti][j];
                probe.params_mut().tensors_mut()[ti][j] = orig + h;
                let up = batch_loss(&probe, &batch, &tc).unwrap().0.loss;
                probe.params_mut().tensors_mut()[ti][j] = orig - h;
                let down = batch_loss(&probe, &batch, &tc).unwrap().0.loss;
                probe.params_mut().tensors_mut()[ti][j] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grad.tensors()[ti][j];
                worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6));
            }
        }
        assert!(worst < 1e-4, "heads {heads} seed {seed}: max rel err {worst}");
    }

    #[test]
    fn batch_gradient_matches_finite_differences() {
        for seed in 0..3 {
            check_batch_gradient(3, seed);
        }
        check_batch_gradient(6, 7);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (tr, va) = small_sets();
        for opt in [Optimizer::Sgd, Optimizer::Adam] {
            let model = RegressorModel::new(tiny_cfg(6, 3, 1)).unwrap();
            let tc = TrainConfig {
                learning_rate: 0.0,
                optimizer: opt,
                ..quick_tc()
            };
            let (trained, hist) = train_on(model.clone(), &tr, &va, &tc).unwrap();
            assert_eq!(trained.params, model.params);
            let first = hist.epochs[0].valid_ccc;
            assert!(hist.epochs.iter().all(|e| e.valid_ccc == first));
            assert_eq!(hist.selected, Some(1));
            assert_eq!(hist.epochs.len(), 1 + tc.patience);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (tr, va) = small_sets();
        let run = || {
            let model = RegressorModel::new(tiny_cfg(6, 3, 2)).unwrap();
            train_on(model, &tr, &va, &quick_tc()).unwrap()
        };
        let (m1, h1) = run();
        let (m2, h2) = run();
        assert_eq!(h1, h2);
        assert_eq!(m1.params, m2.params);
    }

    #[test]
    fn returned_parameters_are_the_selected_epoch() {
        let (tr, va) = small_sets();
        let model = RegressorModel::new(tiny_cfg(6, 3, 3)).unwrap();
        let tc = TrainConfig {
            max_epochs: 6,
            patience: 6,
            learning_rate: 0.05,
            ..quick_tc()
        };
        let (trained, hist) = train_on(model, &tr, &va, &tc).unwrap();
        let best = hist
            .epochs
            .iter()
            .map(EpochRecord::mean_valid_ccc)
            .fold(f64::NEG_INFINITY, f64::max);
        let sel = hist.selected_record().unwrap();
        assert_eq!(sel.mean_valid_ccc(), best);
        let again = validation_ccc(&trained, &va).unwrap();
        assert_eq!(again, sel.valid_ccc);
    }

    #[test]
    fn rejects_head_mismatch_and_tiny_splits() {
        let (tr, va) = small_sets();
        let model = RegressorModel::new(tiny_cfg(6, 3, 4)).unwrap();
        let tc = TrainConfig {
            use_variance_targets: true,
            ..quick_tc()
        };
        assert!(matches!(
            train_on(model.clone(), &tr, &va, &tc),
            Err(ModelError::TrainConfig(_))
        ));
        assert!(matches!(
            train_on(model, &tr[..1], &va, &quick_tc()),
            Err(ModelError::EmptySplit("train"))
        ));
    }

    #[test]
    fn divergence_reports_history() {
        let (tr, va) = small_sets();
        let mut model = RegressorModel::new(tiny_cfg(6, 3, 5)).unwrap();
        model.params_mut().head_w[0] = f64::NAN;
        match train_on(model, &tr, &va, &quick_tc()) {
            Err(ModelError::Diverged { epoch, .. }) => assert_eq!(epoch, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn history_csv_marks_selection() {
        let hist = TrainHistory {
            epochs: vec![
                EpochRecord {
                    epoch: 1,
                    train_loss: -0.1,
                    valid_ccc: [0.1, 0.2, 0.3],
                },
                EpochRecord {
                    epoch: 2,
                    train_loss: -0.2,
                    valid_ccc: [0.0, 0.0, 0.0],
                },
            ],
            selected: Some(1),
        };
        let csv = hist.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], TrainHistory::CSV_HEADER);
        assert!(lines[1].ends_with(",1"));
        assert!(lines[2].ends_with(",0"));
    }

    #[test]
    fn single_example_forward_matches_batch_member() {
        let (tr, _) = small_sets();
        let model = RegressorModel::new(tiny_cfg(6, 3, 6)).unwrap();
        let seqs: Vec<&EmbeddingSequence> = tr.iter().take(4).map(|e| &e.seq).collect();
        let (pred, _) = forward_batch(&model, &seqs).unwrap();
        for (i, s) in seqs.iter().enumerate() {
            let (one, _) = forward(&model, s).unwrap();
            assert_eq!(one, vec![pred[0][i], pred[1][i], pred[2][i]]);
        }
    }
}
