//! Files written by the drivers: CSV tables and JSON summaries.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use stefan_core::stefan::{SimConfig, TrajectorySample};

use crate::error::CliError;

/// Per-check line of a manifest.
#[derive(Debug, Clone, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Record of one driver invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<SimConfig>,
    pub version: String,
    pub wall_clock_seconds: f64,
    pub checks: Vec<CheckLine>,
}

pub fn out_dir(cfg: Option<&SimConfig>) -> Result<PathBuf, CliError> {
    let dir = PathBuf::from(
        cfg.and_then(|c| c.outdir.clone())
            .unwrap_or_else(|| "stefan-out".into()),
    );
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn num(v: f64) -> String {
    // shortest round-trip representation; deterministic across runs
    format!("{v:e}")
}

pub fn trajectory_header(k: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((0..=k).map(|q| format!("a{q}")));
    h.extend((1..=k).map(|q| format!("b{q}")));
    h.extend(["m0", "ma", "mb", "E", "E0", "D0", "sup_f", "l2_u", "eir"].map(String::from));
    h
}

pub fn trajectory_row(s: &TrajectorySample, k: usize) -> Vec<String> {
    let mut row = vec![num(s.t)];
    row.extend((0..=k).map(|q| num(s.f.a(q))));
    row.extend((1..=k).map(|q| num(s.f.b(q))));
    let c = &s.conserved;
    row.extend([c.m0, c.ma, c.mb, c.e, c.e0, c.d0, s.sup_f, s.l2_u, s.eir].map(num));
    row
}

pub fn write_trajectory(path: &Path, samples: &[TrajectorySample], k: usize) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(trajectory_header(k))?;
    for s in samples {
        w.write_record(trajectory_row(s, k))?;
    }
    w.flush()?;
    Ok(())
}

/// Write rows of numbers under `header`; rows may be ragged.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| num(*v)))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let h = trajectory_header(2);
        assert_eq!(h[..6], ["t", "a0", "a1", "a2", "b1", "b2"]);
        assert_eq!(h.last().map(String::as_str), Some("eir"));
        assert_eq!(h.len(), 1 + 3 + 2 + 9);
    }

    #[test]
    fn numbers_round_trip() {
        for v in [0.0, -1.5e-17, 3.426400123456789, f64::MIN_POSITIVE] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
    }
}
