//! One function per subcommand. Each writes its artifacts and returns a
//! short summary for the caller to print.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use embsal::corpus::{generate_synthetic, load_manifest, pool_corpus, write_corpus};
use embsal::degrade::{degrade_corpus, DegradeSpec};
use embsal::model::{
    evaluate, model_size_report, read_checkpoint, train_on, write_checkpoint, Checkpoint, Evaluation, Example,
    ModelSizeRow, RegressorModel, TrainHistory,
};
use embsal::saliency::{
    fit_pca, parse_saliency_report, rank_and_select, sample_frames, saliency_report_csv, score_saliency,
    selection_size, InputTransform, MAX_PCA_FRAMES,
};
use embsal::{derive_seed, Corpus, Method, SaliencyScores, SelectionMask, Split, SyntheticSpec};
use serde::Serialize;

use crate::config::{read_toml, to_toml, ArchConfig, TrainRunConfig, TrainSection};

pub const MANIFEST_NAME: &str = "manifest.txt";

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Generates a synthetic corpus from a TOML spec. The spec is validated
/// before anything is written and the manifest is the last file created.
pub fn cmd_gen(spec_path: &Path, seed: Option<u64>, out: &Path) -> Result<PathBuf> {
    let mut spec: SyntheticSpec = read_toml(spec_path)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    let corpus = generate_synthetic(&spec)?;
    write_file(&out.join("spec.toml"), to_toml(&spec)?)?;
    Ok(write_corpus(&corpus, out, MANIFEST_NAME)?)
}

/// Train-split saliency scores for CCS or MIS.
pub fn train_scores(corpus: &Corpus, method: Method, bins: usize) -> Result<SaliencyScores> {
    let (pooled, labels) = pool_corpus(corpus.split(Split::Train))?;
    Ok(score_saliency(&pooled, &labels.mean_columns(), method, bins)?)
}

/// Builds the input transform for `method` at `fraction` from the train
/// split. Scores are returned for the score-based methods.
pub fn build_transform(
    corpus: &Corpus,
    method: Method,
    fraction: f64,
    bins: usize,
    seed: u64,
) -> Result<(InputTransform, Option<SaliencyScores>)> {
    match method {
        Method::Ccs | Method::Mis => {
            let scores = train_scores(corpus, method, bins)?;
            let mask = rank_and_select(&scores, fraction)?;
            Ok((InputTransform::Mask(mask), Some(scores)))
        }
        Method::Pca => {
            let d = selection_size(fraction, corpus.cols())?;
            let frames = sample_frames(corpus.split(Split::Train), MAX_PCA_FRAMES, derive_seed(seed, "pca.sample"));
            Ok((InputTransform::Pca(fit_pca(&frames, d)?), None))
        }
        Method::Manual => bail!("manual masks are read from a file, not computed"),
    }
}

#[derive(Serialize)]
struct SaliencyEcho<'a> {
    manifest: &'a Path,
    method: Method,
    fraction: f64,
    bins: usize,
    seed: u64,
}

/// Writes `saliency.csv` + `mask.txt`, or for PCA `projection.txt` +
/// `explained_variance.csv`, plus `config.toml`.
pub fn cmd_saliency(
    manifest: &Path,
    method: Method,
    fraction: f64,
    bins: usize,
    seed: u64,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let corpus = load_manifest(manifest)?;
    let (transform, scores) = build_transform(&corpus, method, fraction, bins, seed)?;
    let mut written = Vec::new();
    let mut emit = |name: &str, text: String| -> Result<()> {
        let p = out.join(name);
        write_file(&p, text)?;
        written.push(p);
        Ok(())
    };
    match (&transform, scores) {
        (InputTransform::Mask(mask), Some(scores)) => {
            emit("saliency.csv", saliency_report_csv(&scores, mask)?)?;
            emit("mask.txt", mask.to_text())?;
        }
        (InputTransform::Pca(p), _) => {
            emit("projection.txt", p.to_text(fraction))?;
            emit("explained_variance.csv", p.explained_variance_csv())?;
        }
        _ => unreachable!("score methods yield masks"),
    }
    let echo = SaliencyEcho {
        manifest: &crate::config::absolute(manifest)?,
        method,
        fraction,
        bins,
        seed,
    };
    emit("config.toml", to_toml(&echo)?)?;
    Ok(written)
}

/// Re-selects from an existing saliency report at a new fraction.
pub fn cmd_select(report: &Path, fraction: f64, method: Method, out: &Path) -> Result<SelectionMask> {
    let text = fs::read_to_string(report).with_context(|| format!("reading {}", report.display()))?;
    let rows = parse_saliency_report(&text)?;
    for (i, r) in rows.iter().enumerate() {
        if r.dim != i {
            bail!("report rows must list dims 0..N in order (row {i} has dim {})", r.dim);
        }
    }
    let scores = SaliencyScores {
        method,
        per_label: rows.iter().map(|r| r.per_label).collect(),
        aggregated: rows.iter().map(|r| r.mu).collect(),
        base_term: vec![[0.0; 3]; rows.len()],
        gamma_term: vec![[0.0; 3]; rows.len()],
    };
    let mask = rank_and_select(&scores, fraction)?;
    write_file(out, mask.to_text())?;
    Ok(mask)
}

pub fn load_transform(mask: Option<&Path>, projection: Option<&Path>) -> Result<InputTransform> {
    Ok(match (mask, projection) {
        (Some(_), Some(_)) => bail!("give either a mask or a projection, not both"),
        (Some(m), None) => InputTransform::Mask(SelectionMask::read(m)?),
        (None, Some(p)) => InputTransform::Pca(embsal::PcaProjection::read(p)?),
        (None, None) => InputTransform::Identity,
    })
}

/// Trains one model on the transformed corpus.
pub fn train_model(
    corpus: &Corpus,
    transform: &InputTransform,
    arch: &ArchConfig,
    train: &TrainSection,
    variance: bool,
    seed: u64,
) -> Result<(Checkpoint, TrainHistory)> {
    if let Some(src) = transform.source_dims() {
        if src != corpus.cols() {
            bail!("transform expects {src} input dims, corpus has {}", corpus.cols());
        }
    }
    let train_set = Example::from_split(corpus, Split::Train, transform)?;
    let valid_set = Example::from_split(corpus, Split::Valid, transform)?;
    let cfg = arch.model_config(transform.output_dims(corpus.cols()), variance, seed);
    let model = RegressorModel::new(cfg)?;
    let (model, history) = train_on(model, &train_set, &valid_set, &train.train_config(variance, seed))?;
    Ok((
        Checkpoint {
            model,
            transform: transform.clone(),
        },
        history,
    ))
}

/// Writes `model.ckpt`, `history.csv` and `config.toml` (absolute paths,
/// reloadable with `--config`).
pub fn cmd_train(cfg: &TrainRunConfig, out: &Path) -> Result<TrainHistory> {
    cfg.validate()?;
    let cfg = cfg.absolutized()?;
    let transform = load_transform(cfg.mask.as_deref(), cfg.projection.as_deref())?;
    let corpus = load_manifest(&cfg.manifest)?;
    let (ckpt, history) = train_model(&corpus, &transform, &cfg.model, &cfg.train, cfg.variance_targets, cfg.seed)?;
    write_file(&out.join("config.toml"), to_toml(&cfg)?)?;
    write_file(&out.join("history.csv"), history.to_csv())?;
    fs::create_dir_all(out)?;
    write_checkpoint(&ckpt, out.join("model.ckpt"))?;
    Ok(history)
}

/// Applies the checkpoint's input transform to `split` and evaluates.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, corpus: &Corpus, split: Split) -> Result<Evaluation> {
    let examples = Example::from_split(corpus, split, &ckpt.transform)?;
    if examples.is_empty() {
        bail!("split '{split}' is empty");
    }
    Ok(evaluate(&ckpt.model, &examples, split.as_str())?)
}

pub fn cmd_eval(checkpoint: &Path, manifest: &Path, split: Split, out: &Path) -> Result<Evaluation> {
    let ckpt = read_checkpoint(checkpoint)?;
    let corpus = load_manifest(manifest)?;
    let ev = evaluate_checkpoint(&ckpt, &corpus, split)?;
    write_file(out, ev.to_csv())?;
    Ok(ev)
}

pub fn cmd_degrade(manifest: &Path, snr_db: f64, seed: u64, out: &Path) -> Result<PathBuf> {
    let spec = DegradeSpec::new(snr_db, derive_seed(seed, "degrade"))?;
    let corpus = load_manifest(manifest)?;
    let degraded = degrade_corpus(&corpus, &spec)?;
    Ok(write_corpus(&degraded, out, MANIFEST_NAME)?)
}

/// Parameter counts of the default desk architecture at each fraction of
/// `input_dim` (`model_size.csv`).
pub fn model_size_table(arch: &ArchConfig, input_dim: usize, fractions: &[f64], variance: bool) -> Result<Vec<ModelSizeRow>> {
    let cfgs = fractions
        .iter()
        .map(|&f| Ok(arch.model_config(selection_size(f, input_dim)?, variance, 0)))
        .collect::<Result<Vec<_>>>()?;
    Ok(model_size_report(&cfgs)?)
}
