//! Line-oriented manifest files.
//!
//! One record per line as whitespace-separated `key=value` pairs:
//!
//! ```text
//! id=utt00000 split=train embedding_path=emb/utt00000.emb mean_v=3.5 mean_a=4 mean_d=4.25 var_v=0.3 var_a=0.2 var_d=0.2
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. `var_*` default to 0.
//! Relative embedding paths resolve against the manifest's directory.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{
    read_embedding_file, write_embedding_file, AffectLabels, Corpus, CorpusError, Result, Split,
    Utterance, UtteranceRecord,
};

const KNOWN_KEYS: [&str; 9] = [
    "id",
    "split",
    "embedding_path",
    "mean_v",
    "mean_a",
    "mean_d",
    "var_v",
    "var_a",
    "var_d",
];

/// Parses one manifest line into a record. The embedding path is returned
/// as written; label ranges are validated.
pub fn parse_manifest_line(line: &str, line_no: usize) -> Result<UtteranceRecord> {
    let parse_err = |reason: String| CorpusError::Parse {
        line: line_no,
        reason,
    };
    let mut fields: HashMap<&str, &str> = HashMap::new();
    for token in line.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| parse_err(format!("token '{token}' is not key=value")))?;
        if !KNOWN_KEYS.contains(&key) {
            return Err(parse_err(format!("unknown field '{key}'")));
        }
        if fields.insert(key, value).is_some() {
            return Err(parse_err(format!("field '{key}' given twice")));
        }
    }
    let required = |key: &str| {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| parse_err(format!("missing field '{key}'")))
    };
    let number = |key: &str, default: Option<f64>| -> Result<f64> {
        match (fields.get(key), default) {
            (Some(v), _) => v
                .parse::<f64>()
                .map_err(|_| parse_err(format!("field '{key}': '{v}' is not a number"))),
            (None, Some(d)) => Ok(d),
            (None, None) => Err(parse_err(format!("missing field '{key}'"))),
        }
    };

    let id = required("id")?.to_string();
    if id.is_empty() {
        return Err(parse_err("empty id".into()));
    }
    let split: Split = required("split")?.parse().map_err(parse_err)?;
    let embedding_path = PathBuf::from(required("embedding_path")?);
    let mut labels = AffectLabels {
        mean: [0.0; 3],
        variance: [0.0; 3],
    };
    for i in 0..3 {
        labels.mean[i] = number(AffectLabels::MEAN_FIELDS[i], None)?;
        labels.variance[i] = number(AffectLabels::VAR_FIELDS[i], Some(0.0))?;
    }
    labels.validate(&id)?;
    Ok(UtteranceRecord {
        id,
        split,
        embedding_path,
        labels,
    })
}

/// Formats a record as a manifest line (no trailing newline).
pub fn format_manifest_line(record: &UtteranceRecord) -> String {
    let l = &record.labels;
    let mut s = String::new();
    write!(
        s,
        "id={} split={} embedding_path={}",
        record.id,
        record.split,
        record.embedding_path.display()
    )
    .unwrap();
    for i in 0..3 {
        write!(s, " {}={}", AffectLabels::MEAN_FIELDS[i], l.mean[i]).unwrap();
    }
    for i in 0..3 {
        write!(s, " {}={}", AffectLabels::VAR_FIELDS[i], l.variance[i]).unwrap();
    }
    s
}

/// Loads and validates a manifest and every embedding it references.
///
/// Embedding files are read in parallel; the returned corpus keeps manifest
/// order. Record paths in the result are resolved (absolute or relative to
/// the working directory).
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut record = parse_manifest_line(trimmed, i + 1)?;
        if !ids.insert(record.id.clone()) {
            return Err(CorpusError::DuplicateId { id: record.id });
        }
        if record.embedding_path.is_relative() {
            record.embedding_path = base.join(&record.embedding_path);
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(CorpusError::Empty);
    }
    let utterances = records
        .into_par_iter()
        .map(|record| {
            let embedding = read_embedding_file(&record.embedding_path)?;
            Ok(Utterance { record, embedding })
        })
        .collect::<Result<Vec<_>>>()?;
    Corpus::new(utterances)
}

/// Writes every embedding to `dir/emb/<id>.emb` and a manifest at
/// `dir/<manifest_name>` with relative paths. The manifest is written to a
/// temporary name and renamed last, so a failed write leaves no manifest.
pub fn write_corpus(corpus: &Corpus, dir: impl AsRef<Path>, manifest_name: &str) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let emb_dir = dir.join("emb");
    fs::create_dir_all(&emb_dir).map_err(|source| CorpusError::Io {
        path: emb_dir.clone(),
        source,
    })?;
    let mut manifest = String::new();
    for u in corpus.utterances() {
        let rel = PathBuf::from("emb").join(format!("{}.emb", u.record.id));
        write_embedding_file(&u.embedding, dir.join(&rel))?;
        let record = UtteranceRecord {
            embedding_path: rel,
            ..u.record.clone()
        };
        manifest.push_str(&format_manifest_line(&record));
        manifest.push('\n');
    }
    let dest = dir.join(manifest_name);
    let tmp = dir.join(format!("{manifest_name}.tmp"));
    fs::write(&tmp, manifest).map_err(|source| CorpusError::Io {
        path: tmp.clone(),
        source,
    })?;
    fs::rename(&tmp, &dest).map_err(|source| CorpusError::Io {
        path: dest.clone(),
        source,
    })?;
    Ok(dest)
}
