//! Persisted run artifacts: state and diagnostics CSV series, the JSON run
//! summary, and a gnuplot script referencing the CSVs. Floats are written in
//! Rust's shortest round-trip decimal form, so CSV bodies are byte-identical
//! across reruns of the same configuration.

use crate::diagnostics::DiagnosticsRecord;
use crate::integrator::{Sample, Trajectory};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug)]
pub struct OutputError {
    pub path: PathBuf,
    pub source: io::Error,
}

impl std::fmt::Display for OutputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path.display(), self.source)
    }
}

impl std::error::Error for OutputError {}

fn write_file(path: &Path, contents: &str) -> Result<(), OutputError> {
    fs::write(path, contents).map_err(|source| OutputError {
        path: path.to_path_buf(),
        source,
    })
}

/// Persisted description of one executed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_digest: String,
    pub scenario: String,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub files: Vec<String>,
    /// Scenario scalars: final energy, sup norms, verdicts, fit slopes.
    pub summary: BTreeMap<String, serde_json::Value>,
    /// "ok", or an explicit failure/budget note.
    pub status: String,
}

impl RunRecord {
    pub fn begin(digest: String, scenario: &str) -> RunRecord {
        RunRecord {
            config_digest: digest,
            scenario: scenario.to_string(),
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
            files: Vec::new(),
            summary: BTreeMap::new(),
            status: "ok".to_string(),
        }
    }

    pub fn put(&mut self, key: &str, value: impl Into<serde_json::Value>) {
        self.summary.insert(key.to_string(), value.into());
    }

    pub fn put_f64(&mut self, key: &str, value: f64) {
        // JSON has no infinities; degrade explicitly rather than panic.
        let v = serde_json::Number::from_f64(value)
            .map(serde_json::Value::Number)
            .unwrap_or_else(|| serde_json::Value::String(value.to_string()));
        self.summary.insert(key.to_string(), v);
    }

    pub fn finish(&mut self) {
        self.finished_unix_ms = now_ms();
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Evenly thin `len` rows down to at most `max_rows`, keeping first and last.
fn thinned_indices(len: usize, max_rows: usize) -> Vec<usize> {
    if len <= max_rows {
        return (0..len).collect();
    }
    let mut idx: Vec<usize> = (0..max_rows)
        .map(|i| i * (len - 1) / (max_rows - 1))
        .collect();
    idx.dedup();
    idx
}

/// States CSV with the fixed header `t,a_0,...,a_N`.
pub fn write_states_csv(
    path: &Path,
    samples: &[Sample],
    shells: usize,
    max_rows: usize,
) -> Result<(), OutputError> {
    let mut out = String::from("t");
    for j in 0..=shells {
        let _ = write!(out, ",a_{j}");
    }
    out.push('\n');
    for &i in &thinned_indices(samples.len(), max_rows) {
        let s = &samples[i];
        let _ = write!(out, "{}", s.t);
        for &v in s.coeffs.iter() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    write_file(path, &out)
}

/// Diagnostics CSV with the fixed column order t, E, sup_theta, H_s..., flux_J...
pub fn write_diagnostics_csv(
    path: &Path,
    rows: &[DiagnosticsRecord],
    sobolev_exponents: &[f64],
    flux_shells: &[usize],
    max_rows: usize,
) -> Result<(), OutputError> {
    let mut out = String::from("t,E,sup_theta");
    for s in sobolev_exponents {
        let _ = write!(out, ",H_{s}");
    }
    for j in flux_shells {
        let _ = write!(out, ",flux_{j}");
    }
    out.push('\n');
    for &i in &thinned_indices(rows.len(), max_rows) {
        let r = &rows[i];
        let _ = write!(out, "{},{},{}", r.t, r.energy, r.sup_theta);
        for v in &r.sobolev {
            let _ = write!(out, ",{v}");
        }
        for v in &r.flux {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    write_file(path, &out)
}

/// Two-column CSV for simple series (grid scans, envelope samples).
pub fn write_pairs_csv(
    path: &Path,
    header: &str,
    rows: &[(f64, f64)],
) -> Result<(), OutputError> {
    let mut out = String::from(header);
    out.push('\n');
    for (a, b) in rows {
        let _ = writeln!(out, "{a},{b}");
    }
    write_file(path, &out)
}

pub fn write_summary_json(path: &Path, record: &RunRecord) -> Result<(), OutputError> {
    let json = serde_json::to_string_pretty(record).expect("record serializes");
    write_file(path, &(json + "\n"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), OutputError> {
    let json = serde_json::to_string_pretty(value).expect("value serializes");
    write_file(path, &(json + "\n"))
}

/// A gnuplot script plotting the written CSVs; rendering stays external.
pub fn write_plot_script(
    path: &Path,
    diagnostics_csv: &str,
    states_csv: &str,
    shells: usize,
) -> Result<(), OutputError> {
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set key autotitle columnhead");
    let _ = writeln!(s, "set logscale y");
    let _ = writeln!(s, "set xlabel 't'");
    let _ = writeln!(s, "set term push");
    let _ = writeln!(s, "plot '{diagnostics_csv}' using 1:2 with lines title 'E', \\");
    let _ = writeln!(s, "     '{diagnostics_csv}' using 1:3 with lines title 'sup norm'");
    let _ = writeln!(s, "pause -1 'energy and sup norm; press enter'");
    let _ = writeln!(s, "plot for [j=2:{}] '{states_csv}' using 1:j with lines", shells + 2);
    let _ = writeln!(s, "pause -1 'shell amplitudes; press enter'");
    write_file(path, &s)
}

/// Convert the stored trajectory samples to diagnostics rows.
pub fn diagnostics_rows(
    traj: &Trajectory,
    params: &crate::model::ModelParams,
    sobolev_exponents: &[f64],
    flux_shells: &[usize],
) -> Result<Vec<DiagnosticsRecord>, crate::diagnostics::DiagnosticsError> {
    (0..traj.len())
        .map(|i| {
            DiagnosticsRecord::from_state(&traj.state_at(i), params, sobolev_exponents, flux_shells)
        })
        .collect()
}
