//! Corpus data model: embedding sequences, affect labels, manifests and pooling.

mod emb;
mod manifest;
mod synth;

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use emb::{decode_embedding, encode_embedding, read_embedding_file, write_embedding_file, MAGIC};
pub use manifest::{format_manifest_line, load_manifest, parse_manifest_line, write_corpus};
pub use synth::{generate_synthetic, SyntheticSpec, VarianceProfile};

/// Likert bounds of the affect scale.
pub const LIKERT_MIN: f64 = 1.0;
pub const LIKERT_MAX: f64 = 7.0;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found:?} at offset 0, expected \"EMB1\"")]
    BadMagic { path: PathBuf, found: [u8; 4] },
    #[error("{path}: truncated at offset {offset}: need {needed} bytes, file has {len}")]
    Truncated {
        path: PathBuf,
        offset: usize,
        needed: usize,
        len: usize,
    },
    #[error("{path}: {extra} trailing bytes after payload")]
    TrailingBytes { path: PathBuf, extra: usize },
    #[error("{path}: non-finite value at row {row}, col {col} (offset {offset})")]
    NonFiniteCell {
        path: PathBuf,
        row: usize,
        col: usize,
        offset: usize,
    },
    #[error("invalid shape {rows}x{cols}: {reason}")]
    Shape {
        rows: usize,
        cols: usize,
        reason: String,
    },
    #[error("non-finite value at row {row}, col {col}")]
    NonFinite { row: usize, col: usize },
    #[error("manifest line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("duplicate utterance id '{id}'")]
    DuplicateId { id: String },
    #[error("record '{id}': {field} = {value} outside [1, 7]")]
    LabelRange {
        id: String,
        field: &'static str,
        value: f64,
    },
    #[error("record '{id}': {field} = {value} is negative or non-finite")]
    BadVariance {
        id: String,
        field: &'static str,
        value: f64,
    },
    #[error("record '{id}': embedding has {found} cols, corpus has {expected}")]
    InconsistentCols {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("empty corpus")]
    Empty,
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// One utterance's frame-by-dimension embedding matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSequence {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl EmbeddingSequence {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(CorpusError::Shape {
                rows,
                cols,
                reason: "rows and cols must be positive".into(),
            });
        }
        if values.len() != rows * cols {
            return Err(CorpusError::Shape {
                rows,
                cols,
                reason: format!("expected {} values, got {}", rows * cols, values.len()),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CorpusError::NonFinite {
                row: i / cols,
                col: i % cols,
            });
        }
        Ok(EmbeddingSequence { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(CorpusError::Shape {
                rows: rows.len(),
                cols,
                reason: "ragged rows".into(),
            });
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Frame count.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Embedding dimension.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Frame mean of every column.
    pub fn mean_pool(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (a, v) in acc.iter_mut().zip(self.row(r)) {
                *a += v;
            }
        }
        let m = self.rows as f64;
        acc.iter_mut().for_each(|a| *a /= m);
        acc
    }
}

/// Frame mean of every column of `seq`.
pub fn mean_pool(seq: &EmbeddingSequence) -> Vec<f64> {
    seq.mean_pool()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Eval];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Eval => "eval",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "eval" => Ok(Split::Eval),
            other => Err(format!("unknown split '{other}' (expected train, valid or eval)")),
        }
    }
}

/// Mean and grader variance for valence, activation, dominance (in that order).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffectLabels {
    pub mean: [f64; 3],
    pub variance: [f64; 3],
}

impl AffectLabels {
    pub const MEAN_FIELDS: [&'static str; 3] = ["mean_v", "mean_a", "mean_d"];
    pub const VAR_FIELDS: [&'static str; 3] = ["var_v", "var_a", "var_d"];

    /// Checks the Likert range of the means and non-negativity of variances.
    pub fn validate(&self, id: &str) -> Result<()> {
        for (i, &m) in self.mean.iter().enumerate() {
            if !(LIKERT_MIN..=LIKERT_MAX).contains(&m) {
                return Err(CorpusError::LabelRange {
                    id: id.to_string(),
                    field: Self::MEAN_FIELDS[i],
                    value: m,
                });
            }
        }
        for (i, &v) in self.variance.iter().enumerate() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CorpusError::BadVariance {
                    id: id.to_string(),
                    field: Self::VAR_FIELDS[i],
                    value: v,
                });
            }
        }
        Ok(())
    }

    /// `[μ_v, μ_a, μ_d, σ²_v, σ²_a, σ²_d]`.
    pub fn as_row(&self) -> [f64; 6] {
        [
            self.mean[0],
            self.mean[1],
            self.mean[2],
            self.variance[0],
            self.variance[1],
            self.variance[2],
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceRecord {
    pub id: String,
    pub split: Split,
    pub embedding_path: PathBuf,
    pub labels: AffectLabels,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub record: UtteranceRecord,
    pub embedding: EmbeddingSequence,
}

/// Validated utterances in manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    utterances: Vec<Utterance>,
    cols: usize,
}

impl Corpus {
    /// Validates unique ids, label ranges and a shared embedding width.
    pub fn new(utterances: Vec<Utterance>) -> Result<Self> {
        let first = utterances.first().ok_or(CorpusError::Empty)?;
        let cols = first.embedding.cols();
        let mut seen = HashSet::with_capacity(utterances.len());
        for u in &utterances {
            if !seen.insert(u.record.id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    id: u.record.id.clone(),
                });
            }
            u.record.labels.validate(&u.record.id)?;
            if u.embedding.cols() != cols {
                return Err(CorpusError::InconsistentCols {
                    id: u.record.id.clone(),
                    expected: cols,
                    found: u.embedding.cols(),
                });
            }
        }
        Ok(Corpus { utterances, cols })
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn into_utterances(self) -> Vec<Utterance> {
        self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Embedding dimension shared by every utterance.
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Utterances tagged with `split`, in manifest order.
    pub fn split(&self, split: Split) -> Vec<&Utterance> {
        self.utterances
            .iter()
            .filter(|u| u.record.split == split)
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.utterances
            .iter()
            .filter(|u| u.record.split == split)
            .count()
    }
}

/// Per-utterance mean-pooled embeddings, one row per utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct PooledMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl PooledMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        if n == 0 || cols == 0 {
            return Err(CorpusError::Empty);
        }
        if rows.iter().any(|r| r.len() != cols) {
            return Err(CorpusError::Shape {
                rows: n,
                cols,
                reason: "ragged rows".into(),
            });
        }
        Ok(PooledMatrix {
            rows: n,
            cols,
            values: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    /// Values of dimension `k` over all utterances.
    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, k)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Label rows aligned with a [`PooledMatrix`]; columns are
/// `(μ_v, μ_a, μ_d, σ²_v, σ²_a, σ²_d)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMatrix {
    rows: Vec<[f64; 6]>,
}

impl LabelMatrix {
    pub fn new(rows: Vec<[f64; 6]>) -> Self {
        LabelMatrix { rows }
    }

    pub fn rows(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[f64; 6] {
        &self.rows[i]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    /// The three mean-label columns.
    pub fn mean_columns(&self) -> [Vec<f64>; 3] {
        [self.column(0), self.column(1), self.column(2)]
    }
}

/// Mean-pools every utterance and stacks labels in the same order.
pub fn pool_corpus<'a, I>(utterances: I) -> Result<(PooledMatrix, LabelMatrix)>
where
    I: IntoIterator<Item = &'a Utterance>,
{
    let (pooled, labels): (Vec<_>, Vec<_>) = utterances
        .into_iter()
        .map(|u| (u.embedding.mean_pool(), u.record.labels.as_row()))
        .unzip();
    if pooled.is_empty() {
        return Err(CorpusError::Empty);
    }
    Ok((PooledMatrix::from_rows(pooled)?, LabelMatrix::new(labels)))
}
