//! Plug-in mutual information over equal-frequency bins.

use super::{Result, SaliencyError};

/// Default number of quantile bins per variable.
pub const DEFAULT_BINS: usize = 16;

/// Equal-frequency bin index of every sample.
///
/// Samples are ranked by value with ties kept in index order; the sample at
/// rank `r` falls in bin `⌊r·B/n⌋`.
pub fn quantile_bins(x: &[f64], bins: usize) -> Vec<usize> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal values keep index order
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = rank * bins / n;
    }
    out
}

/// Mutual information in nats between two pre-binned variables.
pub fn mutual_information_binned(a: &[usize], b: &[usize], bins: usize) -> f64 {
    let n = a.len();
    let mut joint = vec![0u32; bins * bins];
    let mut ca = vec![0u32; bins];
    let mut cb = vec![0u32; bins];
    for (&i, &j) in a.iter().zip(b) {
        joint[i * bins + j] += 1;
        ca[i] += 1;
        cb[j] += 1;
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let c = joint[i * bins + j];
            if c > 0 {
                let c = f64::from(c);
                mi += c / nf * (c * nf / (f64::from(ca[i]) * f64::from(cb[j]))).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Plug-in mutual information (nats) from a `bins × bins` joint histogram of
/// equal-frequency bins.
pub fn mutual_information(x: &[f64], y: &[f64], bins: usize) -> Result<f64> {
    if x.len() != y.len() {
        return Err(SaliencyError::LengthMismatch(x.len(), y.len()));
    }
    if bins == 0 {
        return Err(SaliencyError::Bins("bins must be positive".into()));
    }
    if x.len() < bins {
        return Err(SaliencyError::Bins(format!(
            "{} samples cannot fill {bins} bins",
            x.len()
        )));
    }
    if let Some(v) = x.iter().chain(y).find(|v| !v.is_finite()) {
        return Err(SaliencyError::NonFinite(*v));
    }
    Ok(mutual_information_binned(
        &quantile_bins(x, bins),
        &quantile_bins(y, bins),
        bins,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Rank by counting, then a direct histogram sum.
    fn mi_by_counting(x: &[f64], y: &[f64], bins: usize) -> f64 {
        let n = x.len();
        let bin = |v: &[f64], i: usize| {
            let rank = (0..n)
                .filter(|&j| v[j] < v[i] || (v[j] == v[i] && j < i))
                .count();
            rank * bins / n
        };
        let bx: Vec<usize> = (0..n).map(|i| bin(x, i)).collect();
        let by: Vec<usize> = (0..n).map(|i| bin(y, i)).collect();
        let mut total = 0.0;
        for a in 0..bins {
            for b in 0..bins {
                let c = (0..n).filter(|&i| bx[i] == a && by[i] == b).count() as f64;
                let pa = bx.iter().filter(|&&v| v == a).count() as f64 / n as f64;
                let pb = by.iter().filter(|&&v| v == b).count() as f64 / n as f64;
                if c > 0.0 {
                    let p = c / n as f64;
                    total += p * (p / (pa * pb)).ln();
                }
            }
        }
        total
    }

    #[test]
    fn identity_gives_log_bins() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..2000).map(|_| rng.sample(StandardNormal)).collect();
        let mi = mutual_information(&x, &x, 16).unwrap();
        assert!((mi - 16f64.ln()).abs() < 1e-6, "{mi}");
        let cube: Vec<f64> = x.iter().map(|v| v * v * v).collect();
        let mi3 = mutual_information(&x, &cube, 16).unwrap();
        assert!((mi3 - mi).abs() < 1e-6);
    }

    #[test]
    fn independent_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..2000).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = (0..2000).map(|_| rng.sample(StandardNormal)).collect();
        let mi = mutual_information(&x, &y, 16).unwrap();
        assert!(mi < 0.08, "{mi}");
        assert!(mi >= 0.0);
    }

    #[test]
    fn matches_counting_oracle_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let n = rng.random_range(8..60);
            let x: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..5u8))).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let bins = rng.random_range(1..8);
            let fast = mutual_information(&x, &y, bins).unwrap();
            assert!((fast - mi_by_counting(&x, &y, bins)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_short_inputs() {
        assert!(mutual_information(&[1.0, 2.0], &[1.0, 2.0], 3).is_err());
        assert!(mutual_information(&[1.0, 2.0], &[1.0], 1).is_err());
        assert!(mutual_information(&[1.0], &[1.0], 0).is_err());
    }

    #[test]
    fn bins_are_balanced() {
        let x: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64).collect();
        let b = quantile_bins(&x, 10);
        for k in 0..10 {
            assert_eq!(b.iter().filter(|&&v| v == k).count(), 10);
        }
    }
}
