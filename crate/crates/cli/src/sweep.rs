//! Resumable experiment grid over method × fraction × variance flag.
//!
//! Each cell trains one model and evaluates it on the clean eval split and on
//! the eval split degraded at every configured SNR. A cell lives in its own
//! directory under `cells/`; `hash.txt` holds the SHA-256 of the cell's
//! canonical TOML config and is written last, so a cell counts as done only
//! if its hash matches the current config.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use embsal::corpus::load_manifest;
use embsal::degrade::{degrade_corpus, DegradeSpec};
use embsal::model::{parameter_count, write_checkpoint};
use embsal::{derive_seed, Corpus, Method, Split};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::commands::{build_transform, evaluate_checkpoint, train_model, write_file};
use crate::config::{absolute, to_toml, ArchConfig, SweepConfig, TrainSection};

pub const RESULTS_HEADER: &str = "method,fraction,variance,snr,ccc_v,ccc_a,ccc_d,param_bytes,rel_reduction";

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub method: Method,
    pub fraction: f64,
    pub variance: bool,
    /// `None` for the clean eval split.
    pub snr_db: Option<f64>,
    pub ccc: [f64; 3],
    pub param_bytes: usize,
    pub rel_reduction: f64,
}

impl SweepRow {
    pub fn mean_ccc(&self) -> f64 {
        self.ccc.iter().sum::<f64>() / 3.0
    }

    pub fn to_line(&self) -> String {
        let snr = self.snr_db.map_or_else(|| "clean".to_string(), |s| s.to_string());
        format!(
            "{},{},{},{snr},{:.6},{:.6},{:.6},{},{:.6}",
            self.method,
            self.fraction,
            u8::from(self.variance),
            self.ccc[0],
            self.ccc[1],
            self.ccc[2],
            self.param_bytes,
            self.rel_reduction
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            bail!("results row needs 9 fields: '{line}'");
        }
        let num = |s: &str| s.parse::<f64>().with_context(|| format!("'{s}' in '{line}'"));
        Ok(SweepRow {
            method: f[0].parse().map_err(anyhow::Error::msg)?,
            fraction: num(f[1])?,
            variance: match f[2] {
                "1" => true,
                "0" => false,
                other => bail!("variance flag '{other}'"),
            },
            snr_db: if f[3] == "clean" { None } else { Some(num(f[3])?) },
            ccc: [num(f[4])?, num(f[5])?, num(f[6])?],
            param_bytes: f[7].parse()?,
            rel_reduction: num(f[8])?,
        })
    }
}

pub fn parse_results_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(RESULTS_HEADER) {
        bail!("results table has an unexpected header");
    }
    lines.filter(|l| !l.trim().is_empty()).map(SweepRow::parse).collect()
}

/// Canonical per-cell config; its TOML text is hashed.
#[derive(Serialize)]
struct CellConfig<'a> {
    manifest: &'a Path,
    manifest_sha256: &'a str,
    seed: u64,
    method: Method,
    fraction: f64,
    variance: bool,
    snr_db: &'a [f64],
    bins: usize,
    model: &'a ArchConfig,
    train: &'a TrainSection,
}

#[derive(Clone, Debug)]
struct Cell {
    method: Method,
    fraction: f64,
    variance: bool,
}

impl Cell {
    fn dir_name(&self) -> String {
        format!(
            "{}_f{}_{}",
            self.method,
            self.fraction,
            if self.variance { "w" } else { "wo" }
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    /// `(cell directory name, error)`.
    pub failures: Vec<(String, String)>,
    /// Cells reused from a previous run.
    pub reused: usize,
    pub results_path: PathBuf,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Shared<'a> {
    cfg: &'a SweepConfig,
    manifest: PathBuf,
    manifest_sha: String,
    corpus: Corpus,
    /// One degraded corpus per configured SNR, built on first use.
    degraded: std::sync::OnceLock<Result<Vec<Corpus>, String>>,
    out: &'a Path,
}

impl Shared<'_> {
    fn degraded(&self) -> Result<&[Corpus]> {
        let built = self.degraded.get_or_init(|| {
            self.cfg
                .snr_db
                .iter()
                .map(|&snr| {
                    let spec = DegradeSpec::new(snr, derive_seed(self.cfg.seed, "degrade"))?;
                    Ok(degrade_corpus(&self.corpus, &spec)?)
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e: anyhow::Error| format!("{e:#}"))
        });
        match built {
            Ok(v) => Ok(v),
            Err(e) => bail!("{e}"),
        }
    }

    fn cell_hash(&self, cell: &Cell) -> Result<String> {
        let cc = CellConfig {
            manifest: &self.manifest,
            manifest_sha256: &self.manifest_sha,
            seed: self.cfg.seed,
            method: cell.method,
            fraction: cell.fraction,
            variance: cell.variance,
            snr_db: &self.cfg.snr_db,
            bins: self.cfg.bins,
            model: &self.cfg.model,
            train: &self.cfg.train,
        };
        let text = to_toml(&cc)?;
        Ok(sha256_hex(text.as_bytes()))
    }

    /// Returns the cell's result lines and whether they were reused.
    fn run_cell(&self, cell: &Cell) -> Result<(Vec<String>, bool)> {
        let dir = self.out.join("cells").join(cell.dir_name());
        let hash = self.cell_hash(cell)?;
        let hash_path = dir.join("hash.txt");
        let rows_path = dir.join("rows.csv");
        if fs::read_to_string(&hash_path).ok().as_deref() == Some(hash.as_str()) {
            if let Ok(text) = fs::read_to_string(&rows_path) {
                return Ok((text.lines().map(str::to_string).collect(), true));
            }
        }
        if dir.exists() {
            fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
        let cfg = self.cfg;
        let (transform, _) = build_transform(&self.corpus, cell.method, cell.fraction, cfg.bins, cfg.seed)?;
        let (ckpt, history) =
            train_model(&self.corpus, &transform, &cfg.model, &cfg.train, cell.variance, cfg.seed)?;
        let full = parameter_count(&cfg.model.model_config(self.corpus.cols(), cell.variance, cfg.seed));
        let params = ckpt.model.parameter_count();
        let row = |snr_db: Option<f64>, ccc: [f64; 3]| SweepRow {
            method: cell.method,
            fraction: cell.fraction,
            variance: cell.variance,
            snr_db,
            ccc,
            param_bytes: 4 * params,
            rel_reduction: 1.0 - params as f64 / full as f64,
        };
        let mut rows = vec![row(None, evaluate_checkpoint(&ckpt, &self.corpus, Split::Eval)?.ccc())];
        for (snr, corpus) in cfg.snr_db.iter().zip(self.degraded()?) {
            rows.push(row(Some(*snr), evaluate_checkpoint(&ckpt, corpus, Split::Eval)?.ccc()));
        }
        let lines: Vec<String> = rows.iter().map(SweepRow::to_line).collect();
        fs::create_dir_all(&dir)?;
        write_checkpoint(&ckpt, dir.join("model.ckpt"))?;
        write_file(&dir.join("history.csv"), history.to_csv())?;
        let mut text = String::new();
        for l in &lines {
            writeln!(text, "{l}").unwrap();
        }
        write_file(&rows_path, text)?;
        write_file(&hash_path, &hash)?;
        Ok((lines, false))
    }
}

/// Runs (or resumes) the grid with up to `jobs` cells in parallel and writes
/// `results.csv`, `sweep.toml` and, if any cell failed, `failures.csv`.
/// Rows follow grid order regardless of scheduling.
pub fn cmd_sweep(cfg: &SweepConfig, out: &Path, jobs: usize) -> Result<SweepOutcome> {
    cfg.validate()?;
    let manifest = absolute(&cfg.manifest)?;
    let manifest_bytes = fs::read(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let shared = Shared {
        cfg,
        manifest_sha: sha256_hex(&manifest_bytes),
        corpus: load_manifest(&manifest)?,
        manifest,
        degraded: std::sync::OnceLock::new(),
        out,
    };
    let mut cells = Vec::new();
    for &method in &cfg.methods {
        for &fraction in &cfg.fractions {
            for &variance in &cfg.variance {
                cells.push(Cell {
                    method,
                    fraction,
                    variance,
                });
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("building the worker pool")?;
    let results: Vec<Result<(Vec<String>, bool)>> =
        pool.install(|| cells.par_iter().map(|c| shared.run_cell(c)).collect());

    let echo = SweepConfig {
        manifest: shared.manifest.clone(),
        ..cfg.clone()
    };
    write_file(&out.join("sweep.toml"), to_toml(&echo)?)?;

    let mut outcome = SweepOutcome::default();
    let mut table = String::from(RESULTS_HEADER);
    table.push('\n');
    for (cell, res) in cells.iter().zip(results) {
        match res {
            Ok((lines, reused)) => {
                outcome.reused += usize::from(reused);
                for l in lines {
                    outcome.rows.push(SweepRow::parse(&l)?);
                    table.push_str(&l);
                    table.push('\n');
                }
            }
            Err(e) => outcome.failures.push((cell.dir_name(), format!("{e:#}"))),
        }
    }
    let failures_path = out.join("failures.csv");
    if outcome.failures.is_empty() {
        if failures_path.exists() {
            fs::remove_file(&failures_path)?;
        }
    } else {
        let mut text = String::from("cell,error\n");
        for (c, e) in &outcome.failures {
            writeln!(text, "{c},\"{}\"", e.replace('"', "'")).unwrap();
        }
        write_file(&failures_path, text)?;
    }
    outcome.results_path = out.join("results.csv");
    write_file(&outcome.results_path, table)?;
    Ok(outcome)
}

pub const SUMMARY_HEADER: &str = "method,fraction,variance,snr,mean_ccc,rel_ccc_change,param_bytes,rel_reduction";

/// Mean CCC per row and its relative change against the fraction-1.0 row of
/// the same method, variance flag and SNR (`NA` when absent).
pub fn summary_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let base = rows.iter().find(|b| {
            b.method == r.method && b.variance == r.variance && b.snr_db == r.snr_db && b.fraction == 1.0
        });
        let change = base
            .filter(|b| b.mean_ccc() != 0.0)
            .map_or_else(|| "NA".to_string(), |b| format!("{:.6}", r.mean_ccc() / b.mean_ccc() - 1.0));
        let snr = r.snr_db.map_or_else(|| "clean".to_string(), |s| s.to_string());
        writeln!(
            out,
            "{},{},{},{snr},{:.6},{change},{},{:.6}",
            r.method,
            r.fraction,
            u8::from(r.variance),
            r.mean_ccc(),
            r.param_bytes,
            r.rel_reduction
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_text_round_trip() {
        let r = SweepRow {
            method: Method::Pca,
            fraction: 0.8,
            variance: true,
            snr_db: Some(15.0),
            ccc: [0.5, 0.25, 0.125],
            param_bytes: 1234,
            rel_reduction: 0.25,
        };
        assert_eq!(r.to_line(), "pca,0.8,1,15,0.500000,0.250000,0.125000,1234,0.250000");
        assert_eq!(SweepRow::parse(&r.to_line()).unwrap(), r);
        let clean = SweepRow { snr_db: None, ..r };
        assert!(clean.to_line().contains(",clean,"));
        assert_eq!(SweepRow::parse(&clean.to_line()).unwrap(), clean);
    }

    #[test]
    fn summary_relative_change() {
        let base = SweepRow {
            method: Method::Ccs,
            fraction: 1.0,
            variance: false,
            snr_db: None,
            ccc: [0.8; 3],
            param_bytes: 100,
            rel_reduction: 0.0,
        };
        let half = SweepRow {
            fraction: 0.5,
            ccc: [0.4; 3],
            ..base.clone()
        };
        let text = summary_csv(&[base, half]);
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[1].contains(",0.000000,"));
        assert!(lines[2].contains(",-0.500000,"));
    }
}
