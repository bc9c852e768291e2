//! Split evaluation and parameter accounting.

use std::fmt::Write as _;

use super::net::forward_batch;
use super::train::Example;
use super::{parameter_count, ModelConfig, ModelError, RegressorModel, Result};
use crate::corpus::EmbeddingSequence;
use crate::metrics::{
    ccc_or_zero, default_bin_edges, evaluation_csv, mse_by_bin, DimensionSummary, DIMENSIONS,
};

/// Metrics of one evaluated split.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub split: String,
    pub dimensions: Vec<DimensionSummary>,
}

impl Evaluation {
    pub fn ccc(&self) -> [f64; 3] {
        [
            self.dimensions[0].ccc.value,
            self.dimensions[1].ccc.value,
            self.dimensions[2].ccc.value,
        ]
    }

    pub fn mean_ccc(&self) -> f64 {
        self.ccc().iter().sum::<f64>() / 3.0
    }

    pub fn to_csv(&self) -> String {
        evaluation_csv(&self.split, &self.dimensions)
    }
}

/// Full-split forward; CCC per dimension on mean targets and per-bin MSE
/// over unit-width Likert bins.
pub fn evaluate(model: &RegressorModel, examples: &[Example], split: &str) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(ModelError::EmptySplit("evaluation"));
    }
    let seqs: Vec<&EmbeddingSequence> = examples.iter().map(|e| &e.seq).collect();
    let (pred, _) = forward_batch(model, &seqs)?;
    let edges = default_bin_edges();
    let dimensions = DIMENSIONS
        .iter()
        .enumerate()
        .map(|(d, name)| {
            let target: Vec<f64> = examples.iter().map(|e| e.targets[d]).collect();
            Ok(DimensionSummary {
                dimension: name,
                ccc: ccc_or_zero(&pred[d], &target)?,
                bins: mse_by_bin(&pred[d], &target, &edges)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        split: split.to_string(),
        dimensions,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSizeRow {
    pub input_dim: usize,
    pub parameters: usize,
    /// At 4 bytes per parameter.
    pub bytes: usize,
    /// `1 − params / params_of_first`.
    pub rel_reduction: f64,
}

impl ModelSizeRow {
    pub const CSV_HEADER: &'static str = "input_dim,parameters,bytes,rel_reduction";

    pub fn csv(rows: &[ModelSizeRow]) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in rows {
            writeln!(
                out,
                "{},{},{},{:.9}",
                r.input_dim, r.parameters, r.bytes, r.rel_reduction
            )
            .unwrap();
        }
        out
    }
}

/// Parameter counts relative to the first config. Configs must differ only
/// in `input_dim`.
pub fn model_size_report(cfgs: &[ModelConfig]) -> Result<Vec<ModelSizeRow>> {
    let Some(base) = cfgs.first() else {
        return Ok(Vec::new());
    };
    let base_count = parameter_count(base);
    cfgs.iter()
        .map(|c| {
            c.validate()?;
            let same = ModelConfig {
                input_dim: base.input_dim,
                ..c.clone()
            };
            if &same != base {
                return Err(ModelError::Config(
                    "size report configs must differ only in input_dim".into(),
                ));
            }
            let n = parameter_count(c);
            Ok(ModelSizeRow {
                input_dim: c.input_dim,
                parameters: n,
                bytes: 4 * n,
                rel_reduction: 1.0 - n as f64 / base_count as f64,
            })
        })
        .collect()
}
