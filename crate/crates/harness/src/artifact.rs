//! Run artifacts: output directory management, the check/report model, and
//! deterministic serialization helpers.
//!
//! Every run directory receives `config.json` (the fully-resolved
//! configuration, written before any computation) and `summary.json` (final
//! matrices, residuals, check outcomes, wall time). CSV files are the
//! byte-stable surface: all floating-point values are written with Rust's
//! shortest-round-trip formatting, so identical config and seed reproduce
//! identical bytes. Wall time lives only in `summary.json`.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use robust_dp_core::mat::{DenseMatrix, SymMatrix};

use crate::config::{ExperimentConfig, ExperimentId};
use crate::HarnessError;

/// Outcome of one enabled check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

pub fn check(name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name: name.to_string(), passed, detail }
}

/// Everything a finished run reports back: where the artifact lives, how
/// each enabled check fared, and the experiment's summary record.
#[derive(Debug)]
pub struct ExperimentReport {
    pub experiment: ExperimentId,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub checks: Vec<CheckResult>,
    pub summary: Value,
    pub wall_seconds: f64,
}

impl ExperimentReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Human-readable result table for the terminal.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "experiment: {} (seed {})", self.experiment, self.seed);
        let _ = writeln!(out, "output: {}", self.output_dir.display());
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "  [{tag}] {} — {}", c.name, c.detail);
        }
        let passed = self.checks.iter().filter(|c| c.passed).count();
        let failed = self.checks.len() - passed;
        let _ = writeln!(out, "{passed} passed, {failed} failed ({:.2} s)", self.wall_seconds);
        out
    }
}

/// An open run directory.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(path: &Path) -> Result<Self, HarnessError> {
        std::fs::create_dir_all(path)?;
        Ok(Self { root: path.to_path_buf() })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    /// Echoes the fully-resolved configuration (request plus materialized
    /// parameters) so the run can be reproduced from the artifact alone.
    pub fn write_config(&self, cfg: &ExperimentConfig, params: &Value) -> Result<(), HarnessError> {
        let echo = json!({
            "experiment": cfg.experiment,
            "seed": cfg.seed,
            "output_dir": self.root,
            "params": params,
        });
        self.write_json("config.json", &echo)
    }

    pub fn write_summary(&self, report: &ExperimentReport) -> Result<(), HarnessError> {
        let body = json!({
            "experiment": report.experiment,
            "seed": report.seed,
            "checks": report.checks,
            "summary": report.summary,
            "wall_seconds": report.wall_seconds,
        });
        self.write_json("summary.json", &body)
    }

    pub fn write_json(&self, name: &str, value: &Value) -> Result<(), HarnessError> {
        let mut file = BufWriter::new(File::create(self.root.join(name))?);
        serde_json::to_writer_pretty(&mut file, value)?;
        file.write_all(b"\n")?;
        file.flush()?;
        Ok(())
    }

    pub fn create_file(&self, name: &str) -> io::Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.root.join(name))?))
    }

    /// Writes a CSV from a header and row-building closure; all floats must
    /// go through `{}` formatting for byte stability.
    pub fn write_csv<F>(&self, name: &str, header: &str, mut rows: F) -> Result<(), HarnessError>
    where
        F: FnMut(&mut dyn Write) -> io::Result<()>,
    {
        let mut file = self.create_file(name)?;
        writeln!(file, "{header}")?;
        rows(&mut file)?;
        file.flush()?;
        Ok(())
    }
}

/// Symmetric matrix as nested JSON arrays (row-major, full square).
pub fn sym_to_json(m: &SymMatrix) -> Value {
    let n = m.dim();
    Value::Array(
        (0..n)
            .map(|i| Value::Array((0..n).map(|j| json!(m.get(i, j))).collect()))
            .collect(),
    )
}

/// Dense matrix as nested JSON arrays (row-major).
pub fn mat_to_json(m: &DenseMatrix) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| json!(m[(i, j)])).collect()))
            .collect(),
    )
}

/// Worker pool for seed ensembles and system batches. `ROBUST_DP_THREADS`
/// caps the worker count; unset or invalid values fall back to the rayon
/// default. Work items must derive their randomness from indexed streams so
/// the schedule cannot influence results.
pub fn worker_pool() -> rayon::ThreadPool {
    let threads = std::env::var("ROBUST_DP_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("worker pool construction does not fail for valid thread counts")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_dir_round_trips_config_and_summary() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(&dir.path().join("a/b")).unwrap();
        let cfg = ExperimentConfig::new(ExperimentId::Custom);
        run.write_config(&cfg, &json!({"x": 1.5})).unwrap();
        let text = std::fs::read_to_string(run.path().join("config.json")).unwrap();
        let parsed: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed["experiment"], json!("custom"));
        assert_eq!(parsed["params"]["x"], json!(1.5));
    }

    #[test]
    fn csv_writer_emits_header_then_rows() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(dir.path()).unwrap();
        run.write_csv("t.csv", "a,b", |w| {
            writeln!(w, "{},{}", 1.25, 0.1f64)?;
            Ok(())
        })
        .unwrap();
        let text = std::fs::read_to_string(run.path().join("t.csv")).unwrap();
        assert_eq!(text, "a,b\n1.25,0.1\n");
    }
}
