//! Time-convolutional GRU regressor.
//!
//! Per utterance: kernel-3 temporal convolution (zero padded, tanh) → stacked
//! GRU layers → mean over time → linear + tanh embedding → linear heads.
//! Heads predict raw Likert means (3 heads), optionally followed by grader
//! variances (6 heads). All arithmetic is `f64`.

mod checkpoint;
mod eval;
mod net;
mod params;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{LossWeights, MetricsError};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use eval::{evaluate, model_size_report, Evaluation, ModelSizeRow};
pub use net::{backward, backward_batch, forward, forward_batch, ForwardCache};
pub use params::{tensor_specs, GruWeights, Parameters, TensorSpec};
pub use train::{
    batch_loss, train, train_on, EpochRecord, Example, Optimizer, TrainHistory,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("invalid training config: {0}")]
    TrainConfig(String),
    #[error("input has {found} cols, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite activation in {0}")]
    NonFinite(&'static str),
    #[error("cache does not match this model or input ({0})")]
    StaleCache(&'static str),
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        history: TrainHistory,
    },
    #[error("split '{0}' is empty")]
    EmptySplit(&'static str),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub conv_kernel: usize,
    pub conv_channels: usize,
    pub gru_layers: usize,
    pub gru_units: usize,
    pub embedding_dim: usize,
    pub heads: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Full-size architecture: 2×256 GRU, 128-d embedding.
    pub fn full_scale(input_dim: usize) -> Self {
        ModelConfig {
            input_dim,
            conv_kernel: 3,
            conv_channels: 128,
            gru_layers: 2,
            gru_units: 256,
            embedding_dim: 128,
            heads: 3,
            seed: 0,
        }
    }

    /// Desk-scale architecture used for synthetic experiments.
    pub fn desk(input_dim: usize) -> Self {
        ModelConfig {
            gru_units: 32,
            embedding_dim: 16,
            ..Self::full_scale(input_dim)
        }
    }

    pub fn with_variance_heads(mut self, enabled: bool) -> Self {
        self.heads = if enabled { 6 } else { 3 };
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim),
            ("conv_channels", self.conv_channels),
            ("gru_layers", self.gru_layers),
            ("gru_units", self.gru_units),
            ("embedding_dim", self.embedding_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if self.conv_kernel == 0 || self.conv_kernel % 2 == 0 {
            return Err(ModelError::Config(format!(
                "conv_kernel {} must be odd",
                self.conv_kernel
            )));
        }
        if self.heads != 3 && self.heads != 6 {
            return Err(ModelError::Config(format!("heads {} must be 3 or 6", self.heads)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub loss_weights: LossWeights,
    pub use_variance_targets: bool,
    pub optimizer: Optimizer,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            learning_rate: 0.0005,
            max_epochs: 200,
            patience: 10,
            loss_weights: LossWeights::default(),
            use_variance_targets: false,
            optimizer: Optimizer::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Full-size batch of 64.
    pub fn full_scale() -> Self {
        TrainConfig {
            batch_size: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(ModelError::TrainConfig(m));
        if self.batch_size < 2 {
            return fail("batch_size must be at least 2 (batch CCC needs two samples)".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return fail(format!("learning_rate {} must be >= 0", self.learning_rate));
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be positive".into());
        }
        if self.patience == 0 {
            return fail("patience must be at least 1".into());
        }
        self.loss_weights.validate()?;
        Ok(())
    }
}

/// Trained (or freshly initialized) network.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressorModel {
    pub config: ModelConfig,
    pub params: Parameters,
    /// Bumped on every parameter update; caches record it.
    generation: u64,
}

impl RegressorModel {
    /// Xavier-uniform weights drawn from `cfg.seed`, zero biases.
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let params = Parameters::init(&cfg);
        Ok(RegressorModel {
            config: cfg,
            params,
            generation: 0,
        })
    }

    pub fn from_parameters(cfg: ModelConfig, params: Parameters) -> Result<Self> {
        cfg.validate()?;
        params.check_shapes(&cfg)?;
        Ok(RegressorModel {
            config: cfg,
            params,
            generation: 0,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Mutable parameter access; invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut Parameters {
        self.generation += 1;
        &mut self.params
    }
}

/// Same as [`RegressorModel::new`].
pub fn init_model(cfg: ModelConfig) -> Result<RegressorModel> {
    RegressorModel::new(cfg)
}

/// Closed-form parameter count of a configuration.
pub fn parameter_count(cfg: &ModelConfig) -> usize {
    tensor_specs(cfg).iter().map(TensorSpec::len).sum()
}
