//! TOML configuration files and their echoes.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use embsal::model::{ModelConfig, Optimizer, TrainConfig};
use embsal::{derive_seed, LossWeights, Method};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Architecture without the input width, which comes from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub conv_kernel: usize,
    pub conv_channels: usize,
    pub gru_layers: usize,
    pub gru_units: usize,
    pub embedding_dim: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        let d = ModelConfig::desk(1);
        ArchConfig {
            conv_kernel: d.conv_kernel,
            conv_channels: d.conv_channels,
            gru_layers: d.gru_layers,
            gru_units: d.gru_units,
            embedding_dim: d.embedding_dim,
        }
    }
}

impl ArchConfig {
    /// Init seed is derived from the global seed under `model.init`.
    pub fn model_config(&self, input_dim: usize, variance: bool, seed: u64) -> ModelConfig {
        ModelConfig {
            input_dim,
            conv_kernel: self.conv_kernel,
            conv_channels: self.conv_channels,
            gru_layers: self.gru_layers,
            gru_units: self.gru_units,
            embedding_dim: self.embedding_dim,
            heads: 3,
            seed: derive_seed(seed, "model.init"),
        }
        .with_variance_heads(variance)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub alpha: f64,
    pub beta: f64,
    pub optimizer: Optimizer,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            max_epochs: t.max_epochs,
            patience: t.patience,
            alpha: t.loss_weights.alpha,
            beta: t.loss_weights.beta,
            optimizer: t.optimizer,
        }
    }
}

impl TrainSection {
    /// Shuffle seed is derived from the global seed under `train`.
    pub fn train_config(&self, variance: bool, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            patience: self.patience,
            loss_weights: LossWeights {
                alpha: self.alpha,
                beta: self.beta,
            },
            use_variance_targets: variance,
            optimizer: self.optimizer,
            seed: derive_seed(seed, "train"),
        }
    }
}

/// Everything `train` needs; written back verbatim as `config.toml`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    pub manifest: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub variance_targets: bool,
    #[serde(default)]
    pub model: ArchConfig,
    #[serde(default)]
    pub train: TrainSection,
}

impl TrainRunConfig {
    pub fn new(manifest: PathBuf) -> Self {
        TrainRunConfig {
            manifest,
            mask: None,
            projection: None,
            seed: 0,
            variance_targets: false,
            model: ArchConfig::default(),
            train: TrainSection::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mask.is_some() && self.projection.is_some() {
            bail!("give either a mask or a projection, not both");
        }
        Ok(())
    }

    /// Same config with every path made absolute.
    pub fn absolutized(&self) -> Result<Self> {
        Ok(TrainRunConfig {
            manifest: absolute(&self.manifest)?,
            mask: self.mask.as_deref().map(absolute).transpose()?,
            projection: self.projection.as_deref().map(absolute).transpose()?,
            ..self.clone()
        })
    }
}

fn default_methods() -> Vec<Method> {
    vec![Method::Ccs]
}

fn default_fractions() -> Vec<f64> {
    vec![1.0]
}

fn default_variance() -> Vec<bool> {
    vec![false]
}

fn default_bins() -> usize {
    embsal::saliency::DEFAULT_BINS
}

/// Grid over method × fraction × variance flag; every trained cell is also
/// evaluated on the eval split degraded at each SNR.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub manifest: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    #[serde(default = "default_variance")]
    pub variance: Vec<bool>,
    #[serde(default)]
    pub snr_db: Vec<f64>,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default)]
    pub model: ArchConfig,
    #[serde(default)]
    pub train: TrainSection,
}

impl SweepConfig {
    pub fn new(manifest: PathBuf) -> Self {
        SweepConfig {
            manifest,
            seed: 0,
            methods: default_methods(),
            fractions: default_fractions(),
            variance: default_variance(),
            snr_db: Vec::new(),
            bins: default_bins(),
            model: ArchConfig::default(),
            train: TrainSection::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(m) = self.methods.iter().find(|m| **m == Method::Manual) {
            bail!("method {m} cannot be swept");
        }
        if let Some(f) = self.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            bail!("fraction {f} outside (0, 1]");
        }
        if let Some(s) = self.snr_db.iter().find(|s| !s.is_finite()) {
            bail!("snr {s} must be finite");
        }
        if self.methods.is_empty() || self.fractions.is_empty() || self.variance.is_empty() {
            bail!("methods, fractions and variance must be non-empty");
        }
        Ok(())
    }
}

pub fn absolute(p: &Path) -> Result<PathBuf> {
    fs::canonicalize(p).with_context(|| format!("{}", p.display()))
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    Ok(toml::to_string(value)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_config_round_trips() {
        let mut c = TrainRunConfig::new("/tmp/m.txt".into());
        c.mask = Some("/tmp/mask.txt".into());
        c.seed = 7;
        c.train.optimizer = Optimizer::Sgd;
        let text = to_toml(&c).unwrap();
        let back: TrainRunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_sweep_config_uses_defaults() {
        let c: SweepConfig = toml::from_str(
            "manifest = \"m.txt\"\nmethods = [\"ccs\", \"pca\"]\nfractions = [1.0, 0.5]\n[train]\nmax_epochs = 3\n",
        )
        .unwrap();
        assert_eq!(c.variance, vec![false]);
        assert_eq!(c.train.max_epochs, 3);
        assert_eq!(c.train.batch_size, TrainSection::default().batch_size);
        c.validate().unwrap();
        assert!(toml::from_str::<SweepConfig>("manifest = \"m\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn sweep_validation() {
        let mut c = SweepConfig::new("m".into());
        c.fractions = vec![0.0];
        assert!(c.validate().is_err());
        c.fractions = vec![1.0];
        c.methods = vec![Method::Manual];
        assert!(c.validate().is_err());
    }
}
