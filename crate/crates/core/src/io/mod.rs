//! Trajectory files (extended XYZ, LAMMPS text dumps), sidecars and the
//! benchmark report.

mod extxyz;
mod lammps;
mod report;

pub use extxyz::{parse_extxyz, read_extxyz, write_extxyz, write_extxyz_with, ExtxyzWriter};
pub use lammps::{parse_lammps_dump, read_lammps_dump, DumpOptions, LammpsDump};
pub use report::{emit_report, BenchmarkReport, Comparison, ReportEntry, ReportMetadata, Verdict, REPORT_SCHEMA_VERSION};

use crate::system::SystemError;
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
    #[error("unsupported format: {0}")]
    Unsupported(String),
    #[error("a report must contain at least one entry")]
    EmptyReport,
    #[error("duplicate report entry `{0}`")]
    DuplicateEntry(String),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

/// Writes through a temporary sibling and renames, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

/// Pretty JSON with object keys sorted.
pub fn to_sorted_json<T: Serialize>(value: &T) -> Result<String, IoError> {
    // serde_json::Value keeps maps in a BTreeMap, so a round trip through it sorts keys.
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    write_atomic(path, to_sorted_json(value)?.as_bytes())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    write_atomic(path, text.as_bytes())
}
