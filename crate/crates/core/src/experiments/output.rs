//! Stable on-disk formats.
//!
//! * `results.csv`: `axis_value,equalizer,ser,loss_final,steps,wall_ms,seed`,
//!   one row per (point, equalizer).
//! * `details.csv`: the same rows plus error counts and flags.
//! * trace files: `step,loss,ser`, one file per (point, equalizer).
//! * constellation files: `re,im`, one row per equalized symbol.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use super::runner::{ExperimentRecord, PointResult};
use crate::error::{Error, Result};

pub const RESULTS_HEADER: [&str; 7] = ["axis_value", "equalizer", "ser", "loss_final", "steps", "wall_ms", "seed"];
pub const TRACE_HEADER: [&str; 3] = ["step", "loss", "ser"];

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(csv_err)
}

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:e}")
    }
}

pub fn write_results_csv(rec: &ExperimentRecord, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(RESULTS_HEADER).map_err(csv_err)?;
    for p in &rec.points {
        w.write_record([num(p.axis_value), p.equalizer.clone(), num(p.ser), num(p.loss_final), p.steps.to_string(), p.wall_ms.to_string(), p.seed.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_details_csv(rec: &ExperimentRecord, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["axis_value", "equalizer", "kind", "ser", "errors", "symbols", "censored", "diverged", "unstable", "lr", "batch", "checksum"]).map_err(csv_err)?;
    for p in &rec.points {
        w.write_record([
            num(p.axis_value),
            p.equalizer.clone(),
            p.kind.clone(),
            num(p.ser),
            p.errors.to_string(),
            p.symbols.to_string(),
            p.censored.to_string(),
            p.diverged.to_string(),
            p.unstable.to_string(),
            p.lr.map(num).unwrap_or_default(),
            p.batch.to_string(),
            p.checksum.clone(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_csv(p: &PointResult, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(TRACE_HEADER).map_err(csv_err)?;
    for t in &p.trace {
        w.write_record([t.step.to_string(), num(t.loss), num(t.ser)]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// File-system friendly name for a (point, equalizer) pair.
pub fn artifact_stem(p: &PointResult) -> String {
    let label: String = p.equalizer.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect();
    format!("{label}_{}", p.axis_value)
}

/// Writes every non-empty trace into `dir`; returns the paths written.
pub fn write_traces(rec: &ExperimentRecord, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in rec.points.iter().filter(|p| !p.trace.is_empty()) {
        let path = dir.join(format!("trace_{}.csv", artifact_stem(p)));
        write_trace_csv(p, &path)?;
        out.push(path);
    }
    Ok(out)
}

/// Scatter table of equalized symbols.
pub fn export_constellation(x: &[Complex64], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["re", "im"]).map_err(csv_err)?;
    for v in x {
        w.write_record([format!("{:e}", v.re), format!("{:e}", v.im)]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_record_json(rec: &ExperimentRecord, path: &Path) -> Result<()> {
    let mut f = File::create(path)?;
    let s = serde_json::to_string_pretty(rec).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    f.write_all(s.as_bytes())?;
    Ok(())
}
