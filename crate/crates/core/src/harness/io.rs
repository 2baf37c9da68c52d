//! Plain-text instance files and JSON-lines traces.
//!
//! - Marginals: one decimal value per line. Blank lines are skipped.
//! - Costs: one comma-separated row per line.
//! - Traces: one JSON object per line, tagged by a `record` field.
//!
//! Values are written with 17 significant digits so they read back
//! bit-exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{PotError, Result};
use crate::problem::IterationRecord;

fn parse_value(cell: &str, line: usize) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|e| PotError::Parse { line, message: format!("{cell:?}: {e}") })?;
    if !v.is_finite() {
        return Err(PotError::Parse { line, message: format!("non-finite value {cell:?}") });
    }
    Ok(v)
}

/// Reads a marginal. Line numbers in errors are 1-based.
pub fn parse_marginal(text: &str) -> Result<Array1<f64>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_value(line, k + 1)?);
    }
    if out.is_empty() {
        return Err(PotError::Parse { line: 0, message: "no values".into() });
    }
    Ok(Array1::from(out))
}

pub fn write_marginal(values: &Array1<f64>) -> String {
    let mut s = String::with_capacity(values.len() * 24);
    for v in values {
        let _ = writeln!(s, "{v:.16e}");
    }
    s
}

/// Reads a cost matrix. All rows must have the same number of cells.
pub fn parse_cost(text: &str) -> Result<Array2<f64>> {
    let mut rows = 0;
    let mut cols = None;
    let mut data = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for cell in line.split(',') {
            data.push(parse_value(cell, k + 1)?);
        }
        let width = data.len() - before;
        match cols {
            None => cols = Some(width),
            Some(w) if w != width => {
                return Err(PotError::Parse { line: k + 1, message: format!("expected {w} columns, found {width}") })
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or(PotError::Parse { line: 0, message: "no rows".into() })?;
    Array2::from_shape_vec((rows, cols), data).map_err(|e| PotError::Parse { line: 0, message: e.to_string() })
}

pub fn write_cost(cost: &Array2<f64>) -> String {
    let mut s = String::with_capacity(cost.len() * 24);
    for row in cost.rows() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                s.push(',');
            }
            let _ = write!(s, "{v:.16e}");
        }
        s.push('\n');
    }
    s
}

pub fn read_marginal_file(path: &Path) -> Result<Array1<f64>> {
    parse_marginal(&std::fs::read_to_string(path)?)
}

pub fn read_cost_file(path: &Path) -> Result<Array2<f64>> {
    parse_cost(&std::fs::read_to_string(path)?)
}

/// First line of every trace: the fully resolved run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigRecord {
    pub algo: String,
    pub n: usize,
    pub eps: f64,
    pub s: f64,
    pub max_iter: Option<u64>,
    /// Every constant the solver derives (γ, ε̃, A, Θ, κ, T, M, ...).
    pub constants: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_star: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Last line of a successful (or partially successful) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub algo: String,
    pub n: usize,
    pub eps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_star: Option<f64>,
    pub objective: f64,
    pub violation: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primal_gap: Option<f64>,
    pub iterations: usize,
    pub total_s: f64,
    /// `ok`, or the error kind that stopped the run.
    pub status: String,
    #[serde(default)]
    pub diagnostics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
}

/// One line of a trace file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum TraceLine {
    Config(ConfigRecord),
    Iter(IterationRecord),
    Summary(SummaryRecord),
    Error(ErrorRecord),
}

impl TraceLine {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace records always serialize")
    }
}

pub fn parse_trace_line(line: &str) -> Result<TraceLine> {
    serde_json::from_str(line).map_err(|e| PotError::Parse { line: 1, message: e.to_string() })
}

/// Parses a whole trace, skipping blank lines.
pub fn parse_trace(text: &str) -> Result<Vec<TraceLine>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            parse_trace_line(l).map_err(|e| match e {
                PotError::Parse { message, .. } => PotError::Parse { line: k + 1, message },
                other => other,
            })
        })
        .collect()
}

pub fn write_trace(lines: &[TraceLine]) -> String {
    let mut s = String::new();
    for l in lines {
        s.push_str(&l.to_json());
        s.push('\n');
    }
    s
}
