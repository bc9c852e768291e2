//! Experiment pipeline behind the `embsal` binary.
//!
//! Subcommands map one-to-one onto functions in [`commands`] and
//! [`sweep`], so integration tests drive the same code paths as the binary.

pub mod commands;
pub mod config;
pub mod sweep;

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use embsal::{Method, Split};

use crate::config::{read_toml, SweepConfig, TrainRunConfig};

#[derive(Debug, Parser)]
#[command(name = "embsal", version, about = "Task saliency of embedding dimensions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus from a TOML spec.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score dimensions on the train split and write a report plus mask
    /// (or a PCA projection).
    Saliency {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "ccs")]
        method: Method,
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
        #[arg(long, default_value_t = embsal::saliency::DEFAULT_BINS)]
        bins: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a mask from an existing saliency report at a new fraction.
    Select {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        fraction: f64,
        #[arg(long, default_value = "ccs")]
        method: Method,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a regressor and write checkpoint, history and config echo.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "eval")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a copy of a corpus whose eval split carries additive noise.
    Degrade {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        snr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run or resume an experiment grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Summary and model-size tables.
    Report {
        /// `results.csv` from a sweep.
        #[arg(long)]
        results: Option<PathBuf>,
        /// Full input width for the model-size table.
        #[arg(long)]
        input_dim: Option<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 0.8, 0.6, 0.4])]
        fraction: Vec<f64>,
        #[arg(long)]
        variance_targets: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Base config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub projection: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub variance_targets: bool,
    #[arg(long)]
    pub out: PathBuf,
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<TrainRunConfig> {
        let mut cfg = match (&self.config, &self.manifest) {
            (Some(path), _) => read_toml::<TrainRunConfig>(path)?,
            (None, Some(m)) => TrainRunConfig::new(m.clone()),
            (None, None) => bail!("train needs --manifest or --config"),
        };
        if let Some(m) = &self.manifest {
            cfg.manifest = m.clone();
        }
        if self.mask.is_some() {
            cfg.mask = self.mask.clone();
            cfg.projection = None;
        }
        if self.projection.is_some() {
            cfg.projection = self.projection.clone();
            cfg.mask = None;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.variance_targets |= self.variance_targets;
        Ok(cfg)
    }
}

/// Executes one subcommand; returns the lines to print on success.
pub fn run(cli: Cli) -> Result<Vec<String>> {
    use commands::*;
    let mut say = Vec::new();
    match cli.command {
        Command::Gen { spec, seed, out } => {
            let m = cmd_gen(&spec, seed, &out)?;
            say.push(format!("wrote {}", m.display()));
        }
        Command::Saliency {
            manifest,
            method,
            fraction,
            bins,
            seed,
            out,
        } => {
            for p in cmd_saliency(&manifest, method, fraction, bins, seed, &out)? {
                say.push(format!("wrote {}", p.display()));
            }
        }
        Command::Select {
            report,
            fraction,
            method,
            out,
        } => {
            let mask = cmd_select(&report, fraction, method, &out)?;
            say.push(format!("kept {} of {} dims -> {}", mask.kept.len(), mask.source_dims, out.display()));
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let hist = cmd_train(&cfg, &args.out)?;
            if let Some(r) = hist.selected_record() {
                say.push(format!(
                    "selected epoch {} of {}: valid ccc {:.4} {:.4} {:.4} (mean {:.4})",
                    r.epoch,
                    hist.epochs.len(),
                    r.valid_ccc[0],
                    r.valid_ccc[1],
                    r.valid_ccc[2],
                    r.mean_valid_ccc()
                ));
            }
        }
        Command::Eval {
            checkpoint,
            manifest,
            split,
            out,
        } => {
            let ev = cmd_eval(&checkpoint, &manifest, split, &out)?;
            let c = ev.ccc();
            say.push(format!(
                "{split}: ccc {:.4} {:.4} {:.4} (mean {:.4})",
                c[0],
                c[1],
                c[2],
                ev.mean_ccc()
            ));
        }
        Command::Degrade {
            manifest,
            snr,
            seed,
            out,
        } => {
            let m = cmd_degrade(&manifest, snr, seed, &out)?;
            say.push(format!("wrote {}", m.display()));
        }
        Command::Sweep { config, out, jobs } => {
            let cfg: SweepConfig = read_toml(&config)?;
            let outcome = sweep::cmd_sweep(&cfg, &out, jobs)?;
            say.push(format!(
                "{} rows ({} cells reused) -> {}",
                outcome.rows.len(),
                outcome.reused,
                outcome.results_path.display()
            ));
            if !outcome.failures.is_empty() {
                for (cell, e) in &outcome.failures {
                    say.push(format!("cell {cell} failed: {e}"));
                }
                bail!("{} sweep cell(s) failed; see failures.csv", outcome.failures.len());
            }
        }
        Command::Report {
            results,
            input_dim,
            fraction,
            variance_targets,
            out,
        } => {
            if results.is_none() && input_dim.is_none() {
                bail!("report needs --results and/or --input-dim");
            }
            if let Some(r) = results {
                let text = std::fs::read_to_string(&r)?;
                let rows = sweep::parse_results_csv(&text)?;
                let p = out.join("summary.csv");
                write_file(&p, sweep::summary_csv(&rows))?;
                say.push(format!("wrote {}", p.display()));
            }
            if let Some(n) = input_dim {
                let rows = model_size_table(&config::ArchConfig::default(), n, &fraction, variance_targets)?;
                let p = out.join("model_size.csv");
                write_file(&p, embsal::model::ModelSizeRow::csv(&rows))?;
                say.push(format!("wrote {}", p.display()));
            }
        }
    }
    Ok(say)
}

