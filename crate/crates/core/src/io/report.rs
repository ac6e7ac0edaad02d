//! Benchmark comparison report: `report.json` (sorted keys) and `report.txt`.

use super::{to_sorted_json, write_text, IoError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// How a candidate value is judged against the reference value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// |c − r| ≤ tol·|r|
    Relative,
    /// |c − r| ≤ tol
    Absolute,
    /// c ≥ tol (reference shown for context)
    AtLeast,
    /// c ≤ tol
    AtMost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub name: String,
    pub reference: f64,
    pub candidate: f64,
    pub comparison: Comparison,
    pub tolerance: f64,
    pub passed: bool,
    #[serde(default)]
    pub unit: String,
    #[serde(default)]
    pub note: String,
    #[serde(default)]
    pub artifacts: Vec<PathBuf>,
}

impl ReportEntry {
    pub fn compare(name: &str, reference: f64, candidate: f64, comparison: Comparison, tolerance: f64) -> Self {
        let passed = match comparison {
            Comparison::Relative => (candidate - reference).abs() <= tolerance * reference.abs(),
            Comparison::Absolute => (candidate - reference).abs() <= tolerance,
            Comparison::AtLeast => candidate >= tolerance,
            Comparison::AtMost => candidate <= tolerance,
        };
        Self {
            name: name.to_string(),
            reference,
            candidate,
            comparison,
            tolerance,
            passed,
            unit: String::new(),
            note: String::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn with_unit(mut self, unit: &str) -> Self {
        self.unit = unit.to_string();
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }

    pub fn with_artifact(mut self, path: impl Into<PathBuf>) -> Self {
        self.artifacts.push(path.into());
        self
    }

    /// Entry that failed to run at all.
    pub fn errored(name: &str, message: impl Into<String>) -> Self {
        Self { passed: false, ..Self::compare(name, f64::NAN, f64::NAN, Comparison::Absolute, 0.0) }.with_note(message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub reference_model: String,
    pub candidate_model: String,
    pub seed: u64,
    pub config_hash: String,
    pub tool_version: String,
    /// Wall times, timestamps and other run-dependent values; excluded from determinism checks.
    #[serde(default)]
    pub run: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub schema_version: u32,
    pub metadata: ReportMetadata,
    /// Failures first, otherwise in the order the tests ran.
    pub entries: Vec<ReportEntry>,
    pub verdict: Verdict,
}

impl BenchmarkReport {
    pub fn new(metadata: ReportMetadata, entries: Vec<ReportEntry>) -> Result<Self, IoError> {
        if entries.is_empty() {
            return Err(IoError::EmptyReport);
        }
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.name.as_str()) {
                return Err(IoError::DuplicateEntry(e.name.clone()));
            }
        }
        let mut entries = entries;
        entries.sort_by_key(|e| e.passed);
        let verdict = if entries.iter().all(|e| e.passed) { Verdict::Pass } else { Verdict::Fail };
        Ok(Self { schema_version: REPORT_SCHEMA_VERSION, metadata, entries, verdict })
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    /// 0 when every entry passed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }

    /// NaN (errored entries) serialize as null; JSON has no NaN.
    pub fn to_json(&self) -> Result<String, IoError> {
        to_sorted_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self, IoError> {
        #[derive(Deserialize)]
        struct Raw {
            schema_version: u32,
            metadata: ReportMetadata,
            entries: Vec<RawEntry>,
            verdict: Verdict,
        }
        #[derive(Deserialize)]
        struct RawEntry {
            name: String,
            reference: Option<f64>,
            candidate: Option<f64>,
            comparison: Comparison,
            tolerance: f64,
            passed: bool,
            #[serde(default)]
            unit: String,
            #[serde(default)]
            note: String,
            #[serde(default)]
            artifacts: Vec<PathBuf>,
        }
        let raw: Raw = serde_json::from_str(text)?;
        Ok(Self {
            schema_version: raw.schema_version,
            metadata: raw.metadata,
            entries: raw
                .entries
                .into_iter()
                .map(|e| ReportEntry {
                    name: e.name,
                    reference: e.reference.unwrap_or(f64::NAN),
                    candidate: e.candidate.unwrap_or(f64::NAN),
                    comparison: e.comparison,
                    tolerance: e.tolerance,
                    passed: e.passed,
                    unit: e.unit,
                    note: e.note,
                    artifacts: e.artifacts,
                })
                .collect(),
            verdict: raw.verdict,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let m = &self.metadata;
        let _ = writeln!(s, "ffbench report (schema {})", self.schema_version);
        let _ = writeln!(s, "reference: {}", m.reference_model);
        let _ = writeln!(s, "candidate: {}", m.candidate_model);
        let _ = writeln!(s, "seed {}  config {}", m.seed, m.config_hash);
        let _ = writeln!(s);
        for e in &self.entries {
            let rule = match e.comparison {
                Comparison::Relative => format!("rel ≤ {}", e.tolerance),
                Comparison::Absolute => format!("abs ≤ {}", e.tolerance),
                Comparison::AtLeast => format!("≥ {}", e.tolerance),
                Comparison::AtMost => format!("≤ {}", e.tolerance),
            };
            let _ = writeln!(
                s,
                "{} {:<28} ref {:>12.6} cand {:>12.6} {} [{}]{}",
                if e.passed { "PASS" } else { "FAIL" },
                e.name,
                e.reference,
                e.candidate,
                e.unit,
                rule,
                if e.note.is_empty() { String::new() } else { format!("  {}", e.note) }
            );
        }
        let _ = writeln!(s, "\nverdict: {}", if self.passed() { "PASS" } else { "FAIL" });
        s
    }
}

/// Writes `report.json` and `report.txt` into `dir`; returns their paths.
pub fn emit_report(report: &BenchmarkReport, dir: &Path) -> Result<(PathBuf, PathBuf), IoError> {
    let json = dir.join("report.json");
    let text = dir.join("report.txt");
    write_text(&json, &report.to_json()?)?;
    write_text(&text, &report.to_text())?;
    Ok((json, text))
}
