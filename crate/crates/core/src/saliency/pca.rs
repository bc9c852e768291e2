//! PCA projection baseline.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Result, SaliencyError};
use crate::corpus::{EmbeddingSequence, Utterance};

/// Frames sampled for fitting at most.
pub const MAX_PCA_FRAMES: usize = 100_000;

/// Orthonormal projection onto the top principal directions.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    /// `d × N`, one unit-norm direction per row.
    pub components: Vec<Vec<f64>>,
    /// Sample variance (divisor `S − 1`) along each component, nonincreasing.
    pub explained_variance: Vec<f64>,
}

/// Collects the frames of `utterances`, uniformly subsampled without
/// replacement to at most `max_frames` (sampled frames keep corpus order).
pub fn sample_frames<'a, I>(utterances: I, max_frames: usize, seed: u64) -> Vec<Vec<f64>>
where
    I: IntoIterator<Item = &'a Utterance>,
{
    let all: Vec<&[f64]> = utterances
        .into_iter()
        .flat_map(|u| (0..u.embedding.rows()).map(move |r| u.embedding.row(r)))
        .collect();
    if all.len() <= max_frames {
        return all.into_iter().map(<[f64]>::to_vec).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, all.len(), max_frames).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| all[i].to_vec()).collect()
}

/// Fits a `d`-component PCA by SVD of the centred sample matrix.
///
/// Each component is signed so that its largest-magnitude entry is positive.
pub fn fit_pca(samples: &[Vec<f64>], d: usize) -> Result<PcaProjection> {
    let n_dims = samples.first().map_or(0, Vec::len);
    if samples.iter().any(|s| s.len() != n_dims) {
        return Err(SaliencyError::Pca("samples have different lengths".into()));
    }
    if d == 0 || d > n_dims {
        return Err(SaliencyError::Pca(format!(
            "target dimension {d} must lie in [1, {n_dims}]"
        )));
    }
    if samples.len() <= d {
        return Err(SaliencyError::Pca(format!(
            "{} samples are not enough for {d} components",
            samples.len()
        )));
    }
    if let Some(v) = samples.iter().flatten().find(|v| !v.is_finite()) {
        return Err(SaliencyError::NonFinite(*v));
    }
    let s = samples.len();
    let mut mean = vec![0.0; n_dims];
    for row in samples {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= s as f64);

    let centred = DMatrix::from_fn(s, n_dims, |i, j| samples[i][j] - mean[j]);
    let svd = centred.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| SaliencyError::Pca("SVD did not produce right singular vectors".into()))?;
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));

    let mut components = Vec::with_capacity(d);
    let mut explained_variance = Vec::with_capacity(d);
    for &i in order.iter().take(d) {
        let mut row: Vec<f64> = v_t.row(i).iter().copied().collect();
        let pivot = row
            .iter()
            .enumerate()
            .fold(0, |best, (j, v)| if v.abs() > row[best].abs() { j } else { best });
        if row[pivot] < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(row);
        explained_variance.push(sv[i] * sv[i] / (s - 1) as f64);
    }
    if components.len() < d {
        return Err(SaliencyError::Pca(format!(
            "only {} components available",
            components.len()
        )));
    }
    Ok(PcaProjection {
        mean,
        components,
        explained_variance,
    })
}

impl PcaProjection {
    pub fn source_dims(&self) -> usize {
        self.mean.len()
    }

    pub fn target_dims(&self) -> usize {
        self.components.len()
    }

    /// `components · (frame − mean)`.
    pub fn project_frame(&self, frame: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| {
                c.iter()
                    .zip(frame.iter().zip(&self.mean))
                    .map(|(w, (x, m))| w * (x - m))
                    .sum()
            })
            .collect()
    }

    /// `componentsᵀ · projected + mean`.
    pub fn reconstruct_frame(&self, projected: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, p) in self.components.iter().zip(projected) {
            for (o, w) in out.iter_mut().zip(c) {
                *o += w * p;
            }
        }
        out
    }

    /// Text form: a header line, the mean, the explained variances, then one
    /// line per component. Values use shortest round-trip formatting.
    pub fn to_text(&self, fraction: f64) -> String {
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
        let mut out = format!(
            "dims={} components={} method=pca fraction={fraction}\n",
            self.source_dims(),
            self.target_dims()
        );
        writeln!(out, "mean {}", join(&self.mean)).unwrap();
        writeln!(out, "explained_variance {}", join(&self.explained_variance)).unwrap();
        for c in &self.components {
            writeln!(out, "component {}", join(c)).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let err = |reason: String| SaliencyError::Parse {
            what: "projection file",
            reason,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| err("empty file".into()))?;
        let mut dims = None;
        let mut count = None;
        for token in header.split_whitespace() {
            match token.split_once('=') {
                Some(("dims", v)) => dims = Some(v.parse::<usize>().map_err(|e| err(e.to_string()))?),
                Some(("components", v)) => {
                    count = Some(v.parse::<usize>().map_err(|e| err(e.to_string()))?)
                }
                Some(("method", "pca")) | Some(("fraction", _)) => {}
                _ => return Err(err(format!("unexpected header token '{token}'"))),
            }
        }
        let dims = dims.ok_or_else(|| err("missing dims".into()))?;
        let count = count.ok_or_else(|| err("missing components".into()))?;
        let mut row = |tag: &str, len: usize| -> Result<Vec<f64>> {
            let line = lines.next().ok_or_else(|| err(format!("missing '{tag}' line")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(tag) {
                return Err(err(format!("expected '{tag}' line")));
            }
            let values = parts
                .map(|t| t.parse::<f64>().map_err(|e| err(format!("'{t}': {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if values.len() != len {
                return Err(err(format!("'{tag}' has {} values, expected {len}", values.len())));
            }
            Ok(values)
        };
        let mean = row("mean", dims)?;
        let explained_variance = row("explained_variance", count)?;
        let components = (0..count)
            .map(|_| row("component", dims))
            .collect::<Result<Vec<_>>>()?;
        Ok(PcaProjection {
            mean,
            components,
            explained_variance,
        })
    }

    pub fn write(&self, dest: impl AsRef<Path>, fraction: f64) -> Result<()> {
        let dest = dest.as_ref();
        fs::write(dest, self.to_text(fraction)).map_err(|source| SaliencyError::Io {
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

    /// CSV `component,explained_variance,ratio` where ratio is relative to
    /// the variance captured by the kept components.
    pub fn explained_variance_csv(&self) -> String {
        let total: f64 = self.explained_variance.iter().sum();
        let mut out = String::from("component,explained_variance,ratio\n");
        for (i, v) in self.explained_variance.iter().enumerate() {
            let ratio = if total > 0.0 { v / total } else { 0.0 };
            writeln!(out, "{i},{v:.9e},{ratio:.9e}").unwrap();
        }
        out
    }
}

/// Projects every frame of `seq`; the frame count is unchanged.
pub fn apply_pca(seq: &EmbeddingSequence, proj: &PcaProjection) -> Result<EmbeddingSequence> {
    if seq.cols() != proj.source_dims() {
        return Err(SaliencyError::DimensionMismatch {
            expected: proj.source_dims(),
            found: seq.cols(),
        });
    }
    let mut values = Vec::with_capacity(seq.rows() * proj.target_dims());
    for r in 0..seq.rows() {
        values.extend(proj.project_frame(seq.row(r)));
    }
    Ok(EmbeddingSequence::new(seq.rows(), proj.target_dims(), values)?)
}
