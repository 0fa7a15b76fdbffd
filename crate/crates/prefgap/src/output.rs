//! Output directory resolution, CSV and JSON writers, run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::AppError;

pub const OUT_ENV: &str = "PREFGAP_OUT";
pub const DEFAULT_OUT: &str = "prefgap-out";

/// `--out` wins, then `$PREFGAP_OUT`, then `./prefgap-out`.
pub fn resolve_out(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_OUT),
    }
}

pub fn ensure_dir(dir: &Path) -> Result<(), AppError> {
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), AppError> {
    if let Some(p) = path.parent() {
        ensure_dir(p)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a header and raw rows, for tables whose columns are not a struct.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), AppError> {
    if let Some(p) = path.parent() {
        ensure_dir(p)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), AppError> {
    if let Some(p) = path.parent() {
        ensure_dir(p)?;
    }
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Formats a float so that it parses back to the same bits.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<C: Serialize> {
    pub experiment: String,
    pub config: C,
    pub seed: u64,
    pub rng: &'static str,
    pub tolerances: Tolerances,
    pub versions: Versions,
    /// Seconds since the Unix epoch; the only field that varies between runs.
    pub timestamp: u64,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Tolerances {
    pub optimizer_grad_tol: f64,
    pub estimator_tol: f64,
    pub open_class_margin: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { optimizer_grad_tol: 1e-8, estimator_tol: 1e-8, open_class_margin: prefgap_core::classes::EPS_OPEN }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub prefgap: &'static str,
    pub format: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Versions { prefgap: env!("CARGO_PKG_VERSION"), format: 1 }
    }
}

pub const RNG_NAME: &str = "ChaCha20 (rand_chacha), seed_from_u64(seed) with set_stream(stream)";

impl<C: Serialize> Manifest<C> {
    pub fn new(experiment: &str, config: C, seed: u64, artifacts: Vec<String>) -> Self {
        let timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Manifest {
            experiment: experiment.to_string(),
            config,
            seed,
            rng: RNG_NAME,
            tolerances: Tolerances::default(),
            versions: Versions::default(),
            timestamp,
            artifacts,
        }
    }
}
