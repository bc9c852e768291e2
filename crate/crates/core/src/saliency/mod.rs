//! Per-dimension task saliency.
//!
//! For every dimension `k` and mean label `L`, the score is
//!
//! ```text
//! S_k(L) = dep(H̄_k, L) + γ_k(L)
//! γ_k(L) = 1/(N−1) · Σ_{j≠k} dep(H̄_j, L) · dep(H̄_k, H̄_j)
//! ```
//!
//! where `dep` is the absolute Pearson correlation (CCS) or the plug-in
//! mutual information (MIS), and the aggregated score is the mean of `S_k`
//! over valence, activation and dominance. Dimensions are then ranked by the
//! aggregated score to build a [`SelectionMask`].

mod mask;
mod mi;
mod pca;
mod report;
mod transform;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::PooledMatrix;

pub use mask::{apply_mask, rank_and_select, selection_size, SelectionMask};
pub use mi::{mutual_information, mutual_information_binned, quantile_bins, DEFAULT_BINS};
pub use pca::{apply_pca, fit_pca, sample_frames, PcaProjection, MAX_PCA_FRAMES};
pub use report::{parse_saliency_report, saliency_report_csv, write_saliency_report, ReportRow};
pub use transform::InputTransform;

#[derive(Debug, Error)]
pub enum SaliencyError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("need at least 2 dimensions, got {0}")]
    TooFewDims(usize),
    #[error("non-finite value {0}")]
    NonFinite(f64),
    #[error("{0}")]
    Bins(String),
    #[error("fraction {0} outside (0, 1]")]
    Fraction(f64),
    #[error("fraction {fraction} of {dims} dims keeps no dimension")]
    EmptySelection { fraction: f64, dims: usize },
    #[error("dimension mismatch: expected {expected} cols, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("method {0} does not produce saliency scores")]
    NotAScorer(Method),
    #[error("invalid mask: {0}")]
    Mask(String),
    #[error("invalid PCA request: {0}")]
    Pca(String),
    #[error("malformed {what}: {reason}")]
    Parse { what: &'static str, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
}

pub type Result<T, E = SaliencyError> = std::result::Result<T, E>;

/// Dimensionality-reduction method tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ccs,
    Mis,
    Pca,
    Manual,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ccs => "ccs",
            Method::Mis => "mis",
            Method::Pca => "pca",
            Method::Manual => "manual",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "ccs" => Ok(Method::Ccs),
            "mis" => Ok(Method::Mis),
            "pca" => Ok(Method::Pca),
            "manual" => Ok(Method::Manual),
            other => Err(format!("unknown method '{other}' (expected ccs, mis, pca or manual)")),
        }
    }
}

/// Scores of every dimension against the three mean labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyScores {
    pub method: Method,
    /// `S` per dimension, columns (valence, activation, dominance).
    pub per_label: Vec<[f64; 3]>,
    /// Mean of `per_label` over the three labels.
    pub aggregated: Vec<f64>,
    /// Label-dependence term of `S`.
    pub base_term: Vec<[f64; 3]>,
    /// Redundancy term γ of `S`.
    pub gamma_term: Vec<[f64; 3]>,
}

impl SaliencyScores {
    pub fn dims(&self) -> usize {
        self.aggregated.len()
    }
}

fn check_vectors(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(SaliencyError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(SaliencyError::TooFewSamples {
            needed: 2,
            got: x.len(),
        });
    }
    Ok(())
}

/// Centres and scales `x` to unit population variance; a constant input
/// maps to all zeros.
fn standardize(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var == 0.0 || x.iter().all(|v| *v == x[0]) {
        return vec![0.0; x.len()];
    }
    let sd = var.sqrt();
    x.iter().map(|v| (v - mean) / sd).collect()
}

fn abs_dot(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (s / a.len() as f64).abs()
}

/// Absolute Pearson correlation with population moments; 0 when either
/// input is constant.
pub fn abs_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    check_vectors(x, y)?;
    Ok(abs_dot(&standardize(x), &standardize(y)).min(1.0))
}

/// Dependence measure used by a scoring method.
#[derive(Clone, Copy, Debug)]
enum Dependence {
    Correlation,
    MutualInformation { bins: usize },
}

impl Dependence {
    fn for_method(method: Method, bins: usize) -> Result<Self> {
        match method {
            Method::Ccs => Ok(Dependence::Correlation),
            Method::Mis => Ok(Dependence::MutualInformation { bins }),
            other => Err(SaliencyError::NotAScorer(other)),
        }
    }

    fn between(self, x: &[f64], y: &[f64]) -> Result<f64> {
        match self {
            Dependence::Correlation => abs_correlation(x, y),
            Dependence::MutualInformation { bins } => mutual_information(x, y, bins),
        }
    }
}

/// γ_k for one label: the relevance-weighted mean dependence of dimension
/// `k` on every other dimension. `relevance[j]` must be `dep(H̄_j, label)`.
pub fn gamma(
    k: usize,
    pooled: &PooledMatrix,
    relevance: &[f64],
    method: Method,
    bins: usize,
) -> Result<f64> {
    let n_dims = pooled.cols();
    if n_dims < 2 {
        return Err(SaliencyError::TooFewDims(n_dims));
    }
    if relevance.len() != n_dims {
        return Err(SaliencyError::LengthMismatch(relevance.len(), n_dims));
    }
    let dep = Dependence::for_method(method, bins)?;
    let hk = pooled.column(k);
    let mut acc = 0.0;
    for (j, w) in relevance.iter().enumerate() {
        if j != k {
            acc += w * dep.between(&hk, &pooled.column(j))?;
        }
    }
    Ok(acc / (n_dims - 1) as f64)
}

/// Prepared per-variable state so pairwise dependences are cheap.
enum Prepared {
    Standardized(Vec<Vec<f64>>),
    Binned(Vec<Vec<usize>>, usize),
}

impl Prepared {
    fn new(columns: &[Vec<f64>], dep: Dependence) -> Self {
        match dep {
            Dependence::Correlation => {
                Prepared::Standardized(columns.iter().map(|c| standardize(c)).collect())
            }
            Dependence::MutualInformation { bins } => Prepared::Binned(
                columns.iter().map(|c| quantile_bins(c, bins)).collect(),
                bins,
            ),
        }
    }

    fn pair(&self, a: usize, other: &Prepared, b: usize) -> f64 {
        match (self, other) {
            (Prepared::Standardized(x), Prepared::Standardized(y)) => abs_dot(&x[a], &y[b]).min(1.0),
            (Prepared::Binned(x, bins), Prepared::Binned(y, _)) => {
                mutual_information_binned(&x[a], &y[b], *bins)
            }
            _ => unreachable!("mixed dependence preparations"),
        }
    }
}

/// Scores every pooled dimension against the three mean-label columns
/// (valence, activation, dominance). Callers pass training utterances only.
pub fn score_saliency(
    pooled: &PooledMatrix,
    labels: &[Vec<f64>; 3],
    method: Method,
    bins: usize,
) -> Result<SaliencyScores> {
    let dep = Dependence::for_method(method, bins)?;
    let n = pooled.rows();
    let n_dims = pooled.cols();
    for l in labels {
        if l.len() != n {
            return Err(SaliencyError::LengthMismatch(l.len(), n));
        }
    }
    if n < 2 {
        return Err(SaliencyError::TooFewSamples { needed: 2, got: n });
    }
    if n_dims < 2 {
        return Err(SaliencyError::TooFewDims(n_dims));
    }
    if let Dependence::MutualInformation { bins } = dep {
        if bins == 0 || n < bins {
            return Err(SaliencyError::Bins(format!(
                "{n} samples cannot fill {bins} bins"
            )));
        }
    }
    if let Some(v) = pooled
        .values()
        .iter()
        .chain(labels.iter().flatten())
        .find(|v| !v.is_finite())
    {
        return Err(SaliencyError::NonFinite(*v));
    }

    let columns: Vec<Vec<f64>> = (0..n_dims).map(|k| pooled.column(k)).collect();
    let dims = Prepared::new(&columns, dep);
    let targets = Prepared::new(labels, dep);

    // relevance[l][j] = dep(H̄_j, L_l)
    let relevance: Vec<Vec<f64>> = (0..3)
        .map(|l| (0..n_dims).map(|j| dims.pair(j, &targets, l)).collect())
        .collect();

    // One row of the dimension-dependence matrix per k; the j loop runs in
    // ascending order so the sums do not depend on thread scheduling.
    let rows: Vec<([f64; 3], [f64; 3])> = (0..n_dims)
        .into_par_iter()
        .map(|k| {
            let mut acc = [0.0; 3];
            for j in 0..n_dims {
                if j == k {
                    continue;
                }
                let d = dims.pair(k, &dims, j);
                for l in 0..3 {
                    acc[l] += relevance[l][j] * d;
                }
            }
            let scale = (n_dims - 1) as f64;
            let gamma = acc.map(|a| a / scale);
            let base = [relevance[0][k], relevance[1][k], relevance[2][k]];
            (base, gamma)
        })
        .collect();

    let base_term: Vec<[f64; 3]> = rows.iter().map(|r| r.0).collect();
    let gamma_term: Vec<[f64; 3]> = rows.iter().map(|r| r.1).collect();
    let per_label: Vec<[f64; 3]> = rows
        .iter()
        .map(|(b, g)| [b[0] + g[0], b[1] + g[1], b[2] + g[2]])
        .collect();
    let aggregated = per_label.iter().map(|s| (s[0] + s[1] + s[2]) / 3.0).collect();
    Ok(SaliencyScores {
        method,
        per_label,
        aggregated,
        base_term,
        gamma_term,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn pearson_two_pass(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
        let sx = (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n).sqrt();
        let sy = (y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n).sqrt();
        cov / (sx * sy)
    }

    fn random_pooled(rng: &mut ChaCha8Rng, n: usize, dims: usize) -> PooledMatrix {
        PooledMatrix::from_rows(
            (0..n)
                .map(|_| (0..dims).map(|_| rng.sample(StandardNormal)).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn abs_correlation_examples() {
        assert!((abs_correlation(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((abs_correlation(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(abs_correlation(&[1.0, 1.0, 1.0], &[0.0, 5.0, 1.0]).unwrap(), 0.0);
        assert!(abs_correlation(&[1.0], &[1.0]).is_err());
        assert!(abs_correlation(&[1.0, 2.0], &[1.0]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x: Vec<f64> = (0..200).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.3 * v + rng.random_range(-1.0..1.0)).collect();
        let c = abs_correlation(&x, &y).unwrap();
        assert!((c - pearson_two_pass(&x, &y).abs()).abs() < 1e-12);
    }

    #[test]
    fn gamma_two_identical_dims() {
        let col = [0.3, -1.0, 2.0, 0.7];
        let pooled = PooledMatrix::from_rows(col.iter().map(|v| vec![*v, *v]).collect()).unwrap();
        let r = 0.42;
        let g = gamma(0, &pooled, &[r, r], Method::Ccs, 16).unwrap();
        assert!((g - r).abs() < 1e-15);
        let single = PooledMatrix::from_rows(vec![vec![1.0], vec![2.0]]).unwrap();
        assert!(matches!(
            gamma(0, &single, &[1.0], Method::Ccs, 16),
            Err(SaliencyError::TooFewDims(1))
        ));
    }

    #[test]
    fn gamma_near_zero_for_independent_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let pooled = random_pooled(&mut rng, 1000, 5);
        let label: Vec<f64> = (0..1000).map(|_| rng.sample(StandardNormal)).collect();
        let rel: Vec<f64> = (0..5)
            .map(|j| abs_correlation(&pooled.column(j), &label).unwrap())
            .collect();
        for k in 0..5 {
            assert!(gamma(k, &pooled, &rel, Method::Ccs, 16).unwrap() < 0.1);
        }
    }

    #[test]
    fn gamma_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let pooled = random_pooled(&mut rng, 30, 4);
        let label: Vec<f64> = (0..30).map(|_| rng.sample(StandardNormal)).collect();
        let rel: Vec<f64> = (0..4)
            .map(|j| pearson_two_pass(&pooled.column(j), &label).abs())
            .collect();
        for k in 0..4 {
            let mut direct = 0.0;
            for j in 0..4 {
                if j != k {
                    direct += rel[j] * pearson_two_pass(&pooled.column(k), &pooled.column(j)).abs();
                }
            }
            direct /= 3.0;
            let g = gamma(k, &pooled, &rel, Method::Ccs, 16).unwrap();
            assert!((g - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_dimension_has_zero_base() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| vec![5.0, rng.sample(StandardNormal), rng.sample(StandardNormal)])
            .collect();
        let pooled = PooledMatrix::from_rows(rows).unwrap();
        let labels: [Vec<f64>; 3] =
            std::array::from_fn(|_| (0..40).map(|_| rng.random_range(1.0..7.0)).collect());
        let s = score_saliency(&pooled, &labels, Method::Ccs, 16).unwrap();
        assert_eq!(s.base_term[0], [0.0; 3]);
        assert_eq!(s.gamma_term[0], [0.0; 3]);
        assert_eq!(s.per_label[0], s.gamma_term[0]);
    }

    #[test]
    fn exact_label_copy_ranks_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let n = 200;
        let mu_v: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..7.0)).collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut r = vec![mu_v[i]];
                r.extend((0..7).map(|_| rng.sample::<f64, _>(StandardNormal)));
                r
            })
            .collect();
        let pooled = PooledMatrix::from_rows(rows).unwrap();
        let labels = [
            mu_v,
            (0..n).map(|_| rng.random_range(1.0..7.0)).collect(),
            (0..n).map(|_| rng.random_range(1.0..7.0)).collect(),
        ];
        for method in [Method::Ccs, Method::Mis] {
            let s = score_saliency(&pooled, &labels, method, 8).unwrap();
            let best = (0..8)
                .max_by(|&a, &b| s.aggregated[a].total_cmp(&s.aggregated[b]))
                .unwrap();
            assert_eq!(best, 0, "{method}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let pooled = PooledMatrix::from_rows(vec![vec![1.0, 2.0]]).unwrap();
        let labels = [vec![1.0], vec![1.0], vec![1.0]];
        assert!(score_saliency(&pooled, &labels, Method::Ccs, 16).is_err());
        let pooled = PooledMatrix::from_rows(vec![vec![1.0, 2.0], vec![2.0, f64::NAN]]).unwrap();
        let labels = [vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]];
        assert!(matches!(
            score_saliency(&pooled, &labels, Method::Ccs, 16),
            Err(SaliencyError::NonFinite(_))
        ));
        assert!(matches!(
            score_saliency(&pooled, &labels, Method::Pca, 16),
            Err(SaliencyError::NotAScorer(Method::Pca))
        ));
    }
}
