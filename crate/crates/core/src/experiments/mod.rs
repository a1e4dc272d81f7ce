//! Desk-scale experiments: catch-up on text, histogram risk, and consistency
//! of model selection. Every driver is deterministic given its seed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::predictors::PredictorError;
use crate::runner::RunError;

pub mod catchup;
pub mod consistency;
pub mod histsim;
pub mod sources;

pub use catchup::{run_catchup, CatchupConfig, CatchupRow};
pub use consistency::{run_consistency, BinarySource, ConsistencyConfig, ConsistencyTrace};
pub use histsim::{cross_check_redundancy, run_histsim, Estimator, HistsimConfig, HistsimOutput, RiskCurve};
pub use sources::{exact_step_kl, sample_source, SourceDensity};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Run(#[from] RunError),

    #[error(transparent)]
    Predictor(#[from] PredictorError),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    Config(String),

    #[error("invariant violated: {0}")]
    Invariant(String),
}

/// Sample sizes at which curves are reported.
///
/// With no stride the grid is ⌈1.2^j⌉ for j = 0, 1, …; otherwise every
/// multiple of `stride`. `n_max` is always included.
pub fn report_grid(n_max: u64, stride: Option<u64>) -> Vec<u64> {
    let mut grid = Vec::new();
    if n_max == 0 {
        return grid;
    }
    match stride {
        Some(s) if s > 0 => grid.extend((1..=n_max / s).map(|j| j * s)),
        _ => {
            let mut j = 0;
            loop {
                let n = 1.2f64.powi(j).ceil() as u64;
                if n > n_max {
                    break;
                }
                if grid.last() != Some(&n) {
                    grid.push(n);
                }
                j += 1;
            }
        }
    }
    if grid.last() != Some(&n_max) {
        grid.push(n_max);
    }
    grid
}

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `contents` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), ExperimentError> {
    let file_name = path
        .file_name()
        .ok_or_else(|| ExperimentError::Config(format!("output path {} has no file name", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp: PathBuf = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Serializes a header and rows as CSV.
pub fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.into_inner().map_err(|e| ExperimentError::Io(e.into_error()))
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), ExperimentError> {
    write_atomic(path, &csv_bytes(header, rows)?)
}

pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Mean and standard error of the mean; the error is 0 for one value.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs `f` on a dedicated pool of `workers` threads, or on the global pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, ExperimentError> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(ExperimentError::Config("workers must be at least 1".into())),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| ExperimentError::Config(format!("workers: {e}")))?;
            Ok(pool.install(f))
        }
    }
}
