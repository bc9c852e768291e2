//! Concordance correlation coefficient, the weighted CCC loss and per-bin MSE.
//!
//! All moments are population moments (divide by n). When exactly one input
//! is constant the CCC is 0; when both are constant it is undefined.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("both inputs are constant; CCC is undefined")]
    Degenerate,
    #[error("every CCC term of the loss is degenerate")]
    DegenerateLoss,
    #[error("expected {expected} rows, got {found}")]
    Rows { expected: usize, found: usize },
    #[error("invalid loss weights alpha={alpha}, beta={beta}")]
    Weights { alpha: f64, beta: f64 },
    #[error("invalid bin edges: {0}")]
    Edges(String),
    #[error("target {0} lies outside the bin edges")]
    OutOfRange(f64),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

/// Affect dimension names in label order.
pub const DIMENSIONS: [&str; 3] = ["valence", "activation", "dominance"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CccBreakdown {
    pub value: f64,
    pub pearson: f64,
    pub mean_x: f64,
    pub mean_y: f64,
    pub var_x: f64,
    pub var_y: f64,
}

impl CccBreakdown {
    /// Breakdown reported for a degenerate pair: every statistic but the
    /// means is zero.
    fn zero(mean_x: f64, mean_y: f64) -> Self {
        CccBreakdown {
            value: 0.0,
            pearson: 0.0,
            mean_x,
            mean_y,
            var_x: 0.0,
            var_y: 0.0,
        }
    }
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricsError::TooShort(x.len()));
    }
    Ok(())
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|a| *a == v[0])
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

struct Moments {
    mean_x: f64,
    mean_y: f64,
    var_x: f64,
    var_y: f64,
    cov: f64,
}

fn moments(x: &[f64], y: &[f64]) -> Moments {
    let n = x.len() as f64;
    let mean_x = mean(x);
    let mean_y = mean(y);
    let (mut var_x, mut var_y, mut cov) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        var_x += dx * dx;
        var_y += dy * dy;
        cov += dx * dy;
    }
    Moments {
        mean_x,
        mean_y,
        var_x: var_x / n,
        var_y: var_y / n,
        cov: cov / n,
    }
}

/// Concordance correlation coefficient of `x` (estimates) and `y` (targets).
pub fn ccc(x: &[f64], y: &[f64]) -> Result<CccBreakdown> {
    check_pair(x, y)?;
    let (cx, cy) = (is_constant(x), is_constant(y));
    if cx && cy {
        return Err(MetricsError::Degenerate);
    }
    let m = moments(x, y);
    if cx || cy {
        return Ok(CccBreakdown {
            var_x: if cx { 0.0 } else { m.var_x },
            var_y: if cy { 0.0 } else { m.var_y },
            ..CccBreakdown::zero(m.mean_x, m.mean_y)
        });
    }
    let dm = m.mean_x - m.mean_y;
    Ok(CccBreakdown {
        value: 2.0 * m.cov / (m.var_x + m.var_y + dm * dm),
        pearson: m.cov / (m.var_x * m.var_y).sqrt(),
        mean_x: m.mean_x,
        mean_y: m.mean_y,
        var_x: m.var_x,
        var_y: m.var_y,
    })
}

/// Like [`ccc`] but maps the both-constant case to a zero breakdown.
pub fn ccc_or_zero(x: &[f64], y: &[f64]) -> Result<CccBreakdown> {
    match ccc(x, y) {
        Err(MetricsError::Degenerate) => Ok(CccBreakdown::zero(mean(x), mean(y))),
        other => other,
    }
}

/// CCC and its gradient with respect to every estimate `x_i`.
///
/// Returns `None` when both inputs are constant.
pub fn ccc_with_grad(x: &[f64], y: &[f64]) -> Result<Option<(f64, Vec<f64>)>> {
    check_pair(x, y)?;
    if is_constant(x) && is_constant(y) {
        return Ok(None);
    }
    let n = x.len() as f64;
    let m = moments(x, y);
    let dm = m.mean_x - m.mean_y;
    let num = 2.0 * m.cov;
    let den = m.var_x + m.var_y + dm * dm;
    let value = num / den;
    // d num / dx_i = 2 (y_i - μ_y) / n
    // d den / dx_i = 2 (x_i - μ_x) / n + 2 (μ_x - μ_y) / n
    let grad = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let dnum = 2.0 * (b - m.mean_y) / n;
            let dden = 2.0 * ((a - m.mean_x) + dm) / n;
            (dnum * den - num * dden) / (den * den)
        })
        .collect();
    Ok(Some((value, grad)))
}

/// Weights of the valence and activation terms; dominance gets `1 - α - β`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0 / 3.0,
            beta: 1.0 / 3.0,
        }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let w = LossWeights { alpha, beta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha.is_finite()
            && self.beta.is_finite()
            && self.alpha >= 0.0
            && self.beta >= 0.0
            && self.alpha + self.beta <= 1.0 + 1e-12;
        if ok {
            Ok(())
        } else {
            Err(MetricsError::Weights {
                alpha: self.alpha,
                beta: self.beta,
            })
        }
    }

    /// `[α, β, 1 − α − β]`.
    pub fn as_array(&self) -> [f64; 3] {
        [self.alpha, self.beta, 1.0 - self.alpha - self.beta]
    }
}

/// Loss value, per-row CCC and gradient with respect to the predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// CCC per prediction row; degenerate rows report 0.
    pub ccc: Vec<f64>,
    /// Same shape as the predictions.
    pub grad: Vec<Vec<f64>>,
}

fn check_rows(pred: &[Vec<f64>], target: &[Vec<f64>], rows: usize) -> Result<()> {
    for m in [pred, target] {
        if m.len() != rows {
            return Err(MetricsError::Rows {
                expected: rows,
                found: m.len(),
            });
        }
    }
    Ok(())
}

/// `−Σ_d w_d · CCC_d` over three rows, plus its gradient. Degenerate rows
/// contribute 0. Returns `None` if all three are degenerate.
fn weighted_block(
    pred: &[Vec<f64>],
    target: &[Vec<f64>],
    w: &LossWeights,
) -> Result<Option<LossOutput>> {
    let weights = w.as_array();
    let mut loss = 0.0;
    let mut cccs = Vec::with_capacity(3);
    let mut grads = Vec::with_capacity(3);
    let mut any = false;
    for d in 0..3 {
        match ccc_with_grad(&pred[d], &target[d])? {
            Some((value, g)) => {
                any = true;
                loss -= weights[d] * value;
                cccs.push(value);
                grads.push(g.into_iter().map(|v| -weights[d] * v).collect());
            }
            None => {
                check_pair(&pred[d], &target[d])?;
                cccs.push(0.0);
                grads.push(vec![0.0; pred[d].len()]);
            }
        }
    }
    Ok(any.then_some(LossOutput {
        loss,
        ccc: cccs,
        grad: grads,
    }))
}

/// Combined CCC loss over `(valence, activation, dominance)` rows, with gradient.
pub fn ccc_loss_and_grad(
    pred: &[Vec<f64>],
    target: &[Vec<f64>],
    w: &LossWeights,
) -> Result<LossOutput> {
    w.validate()?;
    check_rows(pred, target, 3)?;
    weighted_block(pred, target, w)?.ok_or(MetricsError::DegenerateLoss)
}

/// Loss over six rows `(μ_v, μ_a, μ_d, σ²_v, σ²_a, σ²_d)`: the mean of the
/// combined loss on the mean rows and on the variance rows.
///
/// A variance half that is entirely degenerate contributes 0; a degenerate
/// mean half is an error as in [`ccc_loss_and_grad`].
pub fn ccc_loss_with_variance_and_grad(
    pred: &[Vec<f64>],
    target: &[Vec<f64>],
    w: &LossWeights,
) -> Result<LossOutput> {
    w.validate()?;
    check_rows(pred, target, 6)?;
    let means = weighted_block(&pred[..3], &target[..3], w)?.ok_or(MetricsError::DegenerateLoss)?;
    let vars = weighted_block(&pred[3..], &target[3..], w)?.unwrap_or_else(|| LossOutput {
        loss: 0.0,
        ccc: vec![0.0; 3],
        grad: pred[3..].iter().map(|r| vec![0.0; r.len()]).collect(),
    });
    let half = |g: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        g.into_iter()
            .map(|r| r.into_iter().map(|v| 0.5 * v).collect())
            .collect()
    };
    let mut grad = half(means.grad);
    grad.extend(half(vars.grad));
    let mut ccc = means.ccc;
    ccc.extend(vars.ccc);
    Ok(LossOutput {
        loss: 0.5 * means.loss + 0.5 * vars.loss,
        ccc,
        grad,
    })
}

pub fn ccc_loss(pred: &[Vec<f64>], target: &[Vec<f64>], w: &LossWeights) -> Result<f64> {
    ccc_loss_and_grad(pred, target, w).map(|o| o.loss)
}

pub fn ccc_loss_with_variance(
    pred: &[Vec<f64>],
    target: &[Vec<f64>],
    w: &LossWeights,
) -> Result<f64> {
    ccc_loss_with_variance_and_grad(pred, target, w).map(|o| o.loss)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinStat {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `None` for an empty bin.
    pub mse: Option<f64>,
}

/// Seven unit-width bins centred on the integer Likert points 1..=7.
pub fn default_bin_edges() -> Vec<f64> {
    (0..8).map(|i| 0.5 + i as f64).collect()
}

/// Squared error of `pred` against `target`, grouped by the target's bin.
/// Bins are left-closed; the last bin is also right-closed.
pub fn mse_by_bin(pred: &[f64], target: &[f64], edges: &[f64]) -> Result<Vec<BinStat>> {
    if pred.len() != target.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), target.len()));
    }
    if edges.len() < 2 {
        return Err(MetricsError::Edges("need at least two edges".into()));
    }
    if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricsError::Edges("edges must be finite and strictly increasing".into()));
    }
    if edges[0] > 1.0 || edges[edges.len() - 1] < 7.0 {
        return Err(MetricsError::Edges("edges must cover [1, 7]".into()));
    }
    let nbins = edges.len() - 1;
    let mut sums = vec![0.0; nbins];
    let mut counts = vec![0usize; nbins];
    for (p, t) in pred.iter().zip(target) {
        let last = edges[nbins];
        let bin = if *t == last {
            nbins - 1
        } else {
            match edges.partition_point(|e| e <= t) {
                0 => return Err(MetricsError::OutOfRange(*t)),
                i if i > nbins => return Err(MetricsError::OutOfRange(*t)),
                i => i - 1,
            }
        };
        sums[bin] += (p - t) * (p - t);
        counts[bin] += 1;
    }
    Ok((0..nbins)
        .map(|b| BinStat {
            lo: edges[b],
            hi: edges[b + 1],
            count: counts[b],
            mse: (counts[b] > 0).then(|| sums[b] / counts[b] as f64),
        })
        .collect())
}

/// Metrics of one affect dimension over an evaluated split.
#[derive(Clone, Debug, PartialEq)]
pub struct DimensionSummary {
    pub dimension: &'static str,
    pub ccc: CccBreakdown,
    pub bins: Vec<BinStat>,
}

pub const EVAL_CSV_HEADER: &str = "split,dimension,ccc,bin_index,bin_count,bin_mse";

/// Long-format evaluation table: one row per dimension and bin. Empty bins
/// print `NA` for the MSE.
pub fn evaluation_csv(split: &str, dims: &[DimensionSummary]) -> String {
    let mut out = String::from(EVAL_CSV_HEADER);
    out.push('\n');
    for d in dims {
        for (i, b) in d.bins.iter().enumerate() {
            let mse = b.mse.map_or_else(|| "NA".to_string(), |m| format!("{m:.9}"));
            writeln!(
                out,
                "{split},{},{:.9},{i},{},{mse}",
                d.dimension, d.ccc.value, b.count
            )
            .unwrap();
        }
    }
    out
}
