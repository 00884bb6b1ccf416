//! Deterministic file outputs: CSV tables, rate-fit JSON, run manifests,
//! and the raw batch dump format.
//!
//! Floats are written with Rust's shortest-roundtrip formatting, so a rerun
//! of the same config produces byte-identical files.

use crate::error::Result;
use ewel_core::euler::TrajectoryBatch;
use ewel_core::weak_error::RateFit;
use serde::Serialize;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

/// One row of the sweep CSV; the schema is shared by the weak-error,
/// density and decomposition sweeps.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub model: String,
    pub h: f64,
    pub epsilon: Option<f64>,
    pub test_function: String,
    pub error: f64,
    pub stderr: f64,
    pub bias_bound: Option<f64>,
    pub flags: Vec<String>,
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut out = String::from("model,h,epsilon,test_function,error,stderr,bias_bound,flags\n");
    for r in rows {
        let eps = r.epsilon.map(|v| format!("{v}")).unwrap_or_default();
        let bias = r.bias_bound.map(|v| format!("{v}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.model,
            r.h,
            eps,
            r.test_function,
            r.error,
            r.stderr,
            bias,
            r.flags.join(";")
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a sweep CSV back (for `ewel plot <csv>`): `(h, error, stderr)`.
pub fn read_sweep_csv(path: &Path) -> Result<Vec<(f64, f64, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 6 {
            continue;
        }
        let h: f64 = cols[1].parse().unwrap_or(f64::NAN);
        let e: f64 = cols[4].parse().unwrap_or(f64::NAN);
        let se: f64 = cols[5].parse().unwrap_or(0.0);
        if h.is_finite() && e.is_finite() {
            rows.push((h, e, se));
        }
    }
    Ok(rows)
}

/// Scan CSV: `(epsilon, quantity, value)` rows.
pub fn write_scan_csv(path: &Path, rows: &[(f64, String, f64)]) -> Result<()> {
    let mut out = String::from("epsilon,quantity,value\n");
    for (eps, q, v) in rows {
        out.push_str(&format!("{eps},{q},{v}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parametrix CSV: one row per density evaluation.
#[derive(Clone, Debug)]
pub struct ParametrixRow {
    pub s: f64,
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub r_max: usize,
    pub value: f64,
    pub tail_estimate: f64,
    pub method: String,
}

pub fn write_parametrix_csv(path: &Path, rows: &[ParametrixRow]) -> Result<()> {
    let mut out = String::from("s,t,x,y,r_max,value,tail_estimate,method\n");
    for r in rows {
        let xs = r.x.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" ");
        let ys = r.y.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" ");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.s, r.t, xs, ys, r.r_max, r.value, r.tail_estimate, r.method
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Rate-fit JSON with the declared schema:
/// `{slope, slope_stderr, intercept, r2, points[]}`.
#[derive(Serialize)]
struct RateFitJson<'a> {
    slope: f64,
    slope_stderr: f64,
    intercept: f64,
    r2: f64,
    points: Vec<[f64; 3]>,
    excluded: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: &'a Option<String>,
}

pub fn write_rate_fit_json(path: &Path, fit: &RateFit, note: &Option<String>) -> Result<()> {
    let json = RateFitJson {
        slope: fit.slope,
        slope_stderr: fit.slope_stderr,
        intercept: fit.intercept,
        r2: fit.r_squared,
        points: fit.points.iter().map(|&(h, e, se)| [h, e, se]).collect(),
        excluded: fit.excluded,
        note,
    };
    let text = serde_json::to_string_pretty(&json).expect("fit serializes");
    std::fs::write(path, text + "\n")?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct JobRecord {
    pub id: String,
    pub seed: u64,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub tool_version: String,
    /// Wall-clock timestamps, present only when requested: the default is
    /// omitted so reruns are byte-identical.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub started_unix_ms: Option<u128>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finished_unix_ms: Option<u128>,
    pub jobs: Vec<JobRecord>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(config_hash: String) -> Self {
        Self {
            config_hash,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_ms: None,
            finished_unix_ms: None,
            jobs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(
            path.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
        );
        self.outputs.sort();
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Raw batch dump
// ---------------------------------------------------------------------------

const DUMP_MAGIC: &[u8; 4] = b"EWEL";
const DUMP_VERSION: u32 = 1;

/// Binary layout: magic "EWEL", version u32, M u64, N u64, d u32, seed u64,
/// then states row-major little-endian f64.
pub fn write_batch_dump(path: &Path, batch: &TrajectoryBatch) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(DUMP_MAGIC)?;
    f.write_all(&DUMP_VERSION.to_le_bytes())?;
    f.write_all(&(batch.m_paths as u64).to_le_bytes())?;
    f.write_all(&(batch.grid.n_steps as u64).to_le_bytes())?;
    f.write_all(&(batch.dim as u32).to_le_bytes())?;
    f.write_all(&batch.seed.to_le_bytes())?;
    for v in &batch.states {
        f.write_all(&v.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

/// Header and states of a batch dump.
pub struct BatchDump {
    pub m: u64,
    pub n: u64,
    pub dim: u32,
    pub seed: u64,
    pub states: Vec<f64>,
}

pub fn read_batch_dump(path: &Path) -> Result<BatchDump> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(crate::error::LabError::Config(format!(
            "{} is not a batch dump (bad magic)",
            path.display()
        )));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    f.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != DUMP_VERSION {
        return Err(crate::error::LabError::Config(format!(
            "unsupported dump version {version}"
        )));
    }
    f.read_exact(&mut b8)?;
    let m = u64::from_le_bytes(b8);
    f.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8);
    f.read_exact(&mut b4)?;
    let dim = u32::from_le_bytes(b4);
    f.read_exact(&mut b8)?;
    let seed = u64::from_le_bytes(b8);
    let count = (m * (n + 1) * dim as u64) as usize;
    let mut states = Vec::with_capacity(count);
    for _ in 0..count {
        f.read_exact(&mut b8)?;
        states.push(f64::from_le_bytes(b8));
    }
    Ok(BatchDump { m, n, dim, seed, states })
}

/// CSV summary per batch: seed, M, N, terminal mean/variance per coordinate.
pub fn write_batch_summary(path: &Path, batch: &TrajectoryBatch) -> Result<()> {
    let mut out = String::from("seed,m,n,coord,terminal_mean,terminal_variance\n");
    for k in 0..batch.dim {
        let mut mean = 0.0;
        let mut var = 0.0;
        for v in batch.terminal_coord(k) {
            mean += v;
            var += v * v;
        }
        mean /= batch.m_paths as f64;
        var = var / batch.m_paths as f64 - mean * mean;
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            batch.seed, batch.m_paths, batch.grid.n_steps, k, mean, var
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Joins an output directory and file name.
pub fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
