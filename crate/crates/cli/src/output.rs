//! CSV schemas shared by every subcommand.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::CliError;

/// One report index of one curve. `point_index` is −1 on dataset-average
/// rows; the sampler diagnostics are empty for exact methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub point_index: i64,
    pub k: usize,
    pub beta: f64,
    pub rate_nats: f64,
    pub distortion: f64,
    pub log_z_hat: f64,
    pub mean_accept: Option<f64>,
    pub ess: Option<f64>,
}

pub const CURVE_HEADER: [&str; 8] =
    ["point_index", "k", "beta", "rate_nats", "distortion", "log_z_hat", "mean_accept", "ess"];

/// One BDMC sandwich.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub beta_target: f64,
    pub lower: f64,
    pub upper: f64,
    pub gap: f64,
    pub n_pairs: usize,
}

pub const GAP_HEADER: [&str; 5] = ["beta_target", "lower", "upper", "gap", "n_pairs"];

pub fn write_rows<R: Serialize>(path: &Path, rows: &[R]) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Config(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

/// Reads a file written by [`write_rows`], rejecting any header other than
/// `header`.
pub fn read_rows<R: for<'de> Deserialize<'de>>(path: &Path, header: &[&str]) -> Result<Vec<R>, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let found: Vec<String> =
        r.headers().map_err(|e| e.to_string())?.iter().map(str::to_string).collect();
    if found != header {
        return Err(format!("{}: header {found:?}, expected {header:?}", path.display()));
    }
    r.deserialize().collect::<Result<Vec<R>, _>>().map_err(|e| format!("{}: {e}", path.display()))
}
