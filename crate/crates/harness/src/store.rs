//! File helpers for run artifacts: atomic JSON writes and append-only
//! line logs.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{HarnessError, Result};

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

/// Writes pretty JSON to a sibling temp file, then renames it into place.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::artifact(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| HarnessError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::artifact(path, e))
}

/// Appends one compact JSON record plus newline and flushes.
pub fn append_jsonl<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut line = serde_json::to_string(value).map_err(|e| HarnessError::artifact(path, e))?;
    line.push('\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| HarnessError::io(path, e))?;
    f.write_all(line.as_bytes()).map_err(|e| HarnessError::io(path, e))?;
    f.sync_data().map_err(|e| HarnessError::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| HarnessError::artifact(path, format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

/// Rewrites a line log keeping only its first `keep` records.
pub fn truncate_jsonl(path: &Path, keep: usize) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let kept: String = text.lines().take(keep).map(|l| format!("{l}\n")).collect();
    if kept.lines().count() < keep {
        return Err(HarnessError::artifact(
            path,
            format!("expected at least {keep} records"),
        ));
    }
    write_atomic(path, kept.as_bytes())
}
