//! Convergence curves and output overlays computed from trace CSV files.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rnnid::ident::{RunTrace, TraceRow};
use serde::{Deserialize, Serialize};

use crate::plot::{Figure, Series};
use crate::CliError;

/// Number of time bins in a convergence curve.
pub const CURVE_BINS: usize = 100;
/// Trailing trace rows shown in the output overlay.
pub const OVERLAY_ROWS: usize = 1000;

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>, CliError> {
    let f = File::open(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(RunTrace::read_csv(BufReader::new(f))?)
}

/// Mean of `ε²` over consecutive bins of rows, stamped with each bin's last time.
pub fn binned_mse(rows: &[TraceRow], bins: usize) -> Vec<(f64, f64)> {
    if rows.is_empty() {
        return Vec::new();
    }
    let size = rows.len().div_ceil(bins.max(1));
    rows.chunks(size)
        .map(|c| {
            let mse = c.iter().map(|r| r.eps * r.eps).sum::<f64>() / c.len() as f64;
            (c[c.len() - 1].t, mse)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Mean and range across runs of the binned MSE.
pub fn convergence_curve(traces: &[PathBuf]) -> Result<Vec<CurvePoint>, CliError> {
    let mut per_run = Vec::with_capacity(traces.len());
    for p in traces {
        per_run.push(binned_mse(&read_trace(p)?, CURVE_BINS));
    }
    let n_bins = per_run.iter().map(Vec::len).min().unwrap_or(0);
    Ok((0..n_bins)
        .map(|b| {
            let vals: Vec<f64> = per_run.iter().map(|r| r[b].1).collect();
            CurvePoint {
                t: per_run[0][b].0,
                mean: vals.iter().sum::<f64>() / vals.len() as f64,
                min: vals.iter().copied().fold(f64::INFINITY, f64::min),
                max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect())
}

pub fn write_curve(path: &Path, curve: &[CurvePoint]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for p in curve {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curve(path: &Path) -> Result<Vec<CurvePoint>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<CurvePoint>, _>>()?)
}

pub fn curve_series(label: &str, curve: &[CurvePoint], band: bool) -> Series {
    Series {
        label: label.to_string(),
        points: curve.iter().map(|p| (p.t, p.mean)).collect(),
        band: band.then(|| curve.iter().map(|p| (p.t, p.min, p.max)).collect()),
        dashed: false,
    }
}

pub fn convergence_figure(title: &str, series: Vec<Series>) -> Figure {
    Figure { title: title.to_string(), x_label: "time [s]".into(), y_label: "windowed MSE".into(), log_y: true, series }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlayPoint {
    pub t: f64,
    pub y: f64,
    pub y_hat: f64,
}

/// Measured and predicted output over the last rows of a trace.
pub fn output_overlay(rows: &[TraceRow]) -> Vec<OverlayPoint> {
    let start = rows.len().saturating_sub(OVERLAY_ROWS);
    rows[start..].iter().map(|r| OverlayPoint { t: r.t, y: r.y_hat + r.eps, y_hat: r.y_hat }).collect()
}

pub fn write_overlay(path: &Path, pts: &[OverlayPoint]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for p in pts {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn overlay_figure(path: &Path) -> Result<Figure, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let pts = r.deserialize().collect::<Result<Vec<OverlayPoint>, _>>()?;
    let mut predicted = Series::line("predicted", pts.iter().map(|p| (p.t, p.y_hat)).collect());
    predicted.dashed = true;
    Ok(Figure {
        title: "Measured and predicted output".into(),
        x_label: "time [s]".into(),
        y_label: "output".into(),
        log_y: false,
        series: vec![Series::line("measured", pts.iter().map(|p| (p.t, p.y)).collect()), predicted],
    })
}
