//! File helpers shared by the pipeline: atomic writes, inputs that report
//! missing files by name, and the label CSV format.

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::action_space::ActionId;
use crate::error::{Error, Result};

/// Writes `bytes` to a temporary file next to `path` and renames it over
/// `path`, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::format(format!("{} line {}", path.display(), i + 1), e.to_string()))
        })
        .collect()
}

/// Serializes `rows` as CSV with a header row.
pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::format("csv", e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::format("csv", e.to_string()))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let bytes = read_bytes(path)?;
    csv::Reader::from_reader(bytes.as_slice())
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}

/// One row of a label file: `segment_id,k,action_id`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub segment_id: String,
    pub k: usize,
    pub action_id: ActionId,
}

/// Groups label rows by segment, checking that steps are contiguous from 0.
pub fn group_labels(rows: &[LabelRow]) -> Result<Vec<(String, Vec<ActionId>)>> {
    let mut out: Vec<(String, Vec<ActionId>)> = Vec::new();
    for r in rows {
        match out.last_mut() {
            Some((id, ids)) if *id == r.segment_id => {
                if r.k != ids.len() {
                    return Err(Error::format("labels", format!("segment {} jumps to step {}", r.segment_id, r.k)));
                }
                ids.push(r.action_id);
            }
            _ => {
                if r.k != 0 {
                    return Err(Error::format("labels", format!("segment {} starts at step {}", r.segment_id, r.k)));
                }
                out.push((r.segment_id.clone(), vec![r.action_id]));
            }
        }
    }
    Ok(out)
}
