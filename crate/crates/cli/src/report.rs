//! CSV output. Every file has a header row; reals are written with 17
//! significant digits so that values survive a text round-trip.

use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

pub const GRADCHECK_HEADER: &[&str] = &["instance", "kind", "max_relative_error"];
pub const DT_SWEEP_HEADER: &[&str] = &["dt", "mse", "wecs_abs_err", "diverged"];
pub const WECS_HEADER: &[&str] = &["integrator", "steps", "wecs"];
pub const CURVE_HEADER: &[&str] = &["step", "loss", "metric"];
pub const MEDIUM_HEADER: &[&str] = &["position", "input", "c", "gamma"];
pub const BENCH_HEADER: &[&str] = &[
    "n",
    "wave_forward_backward_seconds",
    "attention_forward_seconds",
    "ratio",
];
pub const SUMMARY_HEADER: &[&str] = &["key", "value"];
pub const RECOVERY_HEADER: &[&str] = &["position", "c_true", "c", "gamma_true", "gamma"];
pub const FIT_HEADER: &[&str] = &["position", "input", "target", "prediction"];

/// `d.ddddddddddddddddde±x`: 17 significant digits, `inf`/`-inf`/`NaN` for
/// non-finite values.
pub fn real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn opt_real(x: Option<f64>) -> String {
    x.map(real).unwrap_or_default()
}

/// A rectangular table with a fixed header.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvReport {
    header: &'static [&'static str],
    rows: Vec<Vec<String>>,
}

impl CsvReport {
    pub fn new(header: &'static [&'static str]) -> Self {
        Self {
            header,
            rows: Vec::new(),
        }
    }

    pub fn header(&self) -> &[&str] {
        self.header
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    /// # Panics
    /// If the row width differs from the header width.
    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width must match header");
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    /// Writes the table to `dir/name` and returns the path.
    pub fn write(&self, dir: &Path, name: &str) -> Result<PathBuf> {
        let path = dir.join(name);
        std::fs::write(&path, self.render()).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
