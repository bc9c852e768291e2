//! EMB1 embedding files.
//!
//! Layout (little-endian, no padding, no trailer):
//! - magic: `b"EMB1"`
//! - rows: u32
//! - cols: u32
//! - values: rows * cols IEEE-754 binary32, row-major

use std::fs;
use std::path::Path;

use super::{CorpusError, EmbeddingSequence, Result};

pub const MAGIC: [u8; 4] = *b"EMB1";
const HEADER_LEN: usize = 12;

/// Serializes `seq` to EMB1 bytes. Values are narrowed to binary32.
pub fn encode_embedding(seq: &EmbeddingSequence) -> Result<Vec<u8>> {
    let rows = u32::try_from(seq.rows()).map_err(|_| shape_overflow(seq))?;
    let cols = u32::try_from(seq.cols()).map_err(|_| shape_overflow(seq))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * seq.values().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for (i, v) in seq.values().iter().enumerate() {
        let narrow = *v as f32;
        if !narrow.is_finite() {
            return Err(CorpusError::NonFinite {
                row: i / seq.cols(),
                col: i % seq.cols(),
            });
        }
        out.extend_from_slice(&narrow.to_le_bytes());
    }
    Ok(out)
}

fn shape_overflow(seq: &EmbeddingSequence) -> CorpusError {
    CorpusError::Shape {
        rows: seq.rows(),
        cols: seq.cols(),
        reason: "dimension does not fit in u32".into(),
    }
}

/// Parses EMB1 bytes. `path` is used only for error messages.
pub fn decode_embedding(bytes: &[u8], path: &Path) -> Result<EmbeddingSequence> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(bad_magic(bytes, path));
        }
        return Err(CorpusError::Truncated {
            path: path.to_path_buf(),
            offset: bytes.len(),
            needed: HEADER_LEN,
            len: bytes.len(),
        });
    }
    if bytes[..4] != MAGIC {
        return Err(bad_magic(bytes, path));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if rows == 0 || cols == 0 {
        return Err(CorpusError::Shape {
            rows,
            cols,
            reason: format!("{}: rows and cols must be positive", path.display()),
        });
    }
    let needed = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| CorpusError::Shape {
            rows,
            cols,
            reason: "payload size overflows".into(),
        })?;
    if bytes.len() < needed {
        // first cell that is not fully present
        let offset = HEADER_LEN + (bytes.len() - HEADER_LEN) / 4 * 4;
        return Err(CorpusError::Truncated {
            path: path.to_path_buf(),
            offset,
            needed,
            len: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(CorpusError::TrailingBytes {
            path: path.to_path_buf(),
            extra: bytes.len() - needed,
        });
    }
    let mut values = Vec::with_capacity(rows * cols);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(CorpusError::NonFiniteCell {
                path: path.to_path_buf(),
                row: i / cols,
                col: i % cols,
                offset: HEADER_LEN + 4 * i,
            });
        }
        values.push(f64::from(v));
    }
    EmbeddingSequence::new(rows, cols, values)
}

fn bad_magic(bytes: &[u8], path: &Path) -> CorpusError {
    let mut found = [0u8; 4];
    found.copy_from_slice(&bytes[..4]);
    CorpusError::BadMagic {
        path: path.to_path_buf(),
        found,
    }
}

pub fn write_embedding_file(seq: &EmbeddingSequence, dest: impl AsRef<Path>) -> Result<()> {
    let dest = dest.as_ref();
    let bytes = encode_embedding(seq)?;
    fs::write(dest, bytes).map_err(|source| CorpusError::Io {
        path: dest.to_path_buf(),
        source,
    })
}

pub fn read_embedding_file(src: impl AsRef<Path>) -> Result<EmbeddingSequence> {
    let src = src.as_ref();
    let bytes = fs::read(src).map_err(|source| CorpusError::Io {
        path: src.to_path_buf(),
        source,
    })?;
    decode_embedding(&bytes, src)
}
