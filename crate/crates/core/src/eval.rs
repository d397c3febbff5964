//! Positioning error metrics and CSV/JSON exports.
//!
//! The headline figure is the mean Euclidean xy error in centimeters;
//! per-axis mean absolute errors are reported alongside.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::linalg::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalMeta {
    pub method: String,
    pub feature: String,
    pub dataset: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_sample_error_m: Vec<f64>,
    pub mae_cm: f64,
    pub per_axis_mae_cm: [f64; 2],
    /// `(error_cm, fraction of samples with error ≤ error_cm)` at every
    /// distinct error value, ascending.
    pub cdf: Vec<(f64, f64)>,
    pub meta: EvalMeta,
}

/// JSON run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub feature: String,
    pub dataset: String,
    pub mae_cm: f64,
    pub per_axis_mae_cm: [f64; 2],
    pub n: usize,
}

fn check_aligned(pred: &Matrix<f64>, labels: &Matrix<f64>) -> Result<()> {
    if pred.cols() != 2 || labels.cols() != 2 {
        return Err(Error::Shape {
            expected: 2,
            actual: if pred.cols() != 2 {
                pred.cols()
            } else {
                labels.cols()
            },
        });
    }
    if pred.rows() != labels.rows() {
        return Err(Error::Shape {
            expected: labels.rows(),
            actual: pred.rows(),
        });
    }
    Ok(())
}

pub fn evaluate(pred: &Matrix<f64>, labels: &Matrix<f64>) -> Result<EvalReport> {
    check_aligned(pred, labels)?;
    let n = pred.rows();
    if n == 0 {
        return Err(Error::Argument("nothing to evaluate".into()));
    }
    let mut axis = [0.0; 2];
    let errors: Vec<f64> = (0..n)
        .map(|i| {
            let dx = pred.get(i, 0) - labels.get(i, 0);
            let dy = pred.get(i, 1) - labels.get(i, 1);
            axis[0] += dx.abs();
            axis[1] += dy.abs();
            dx.hypot(dy)
        })
        .collect();
    let nf = n as f64;
    let mut sorted: Vec<f64> = errors.iter().map(|e| e * 100.0).collect();
    sorted.sort_by(f64::total_cmp);
    let mut cdf: Vec<(f64, f64)> = Vec::new();
    for (i, &e) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / nf;
        match cdf.last_mut() {
            Some(last) if last.0 == e => last.1 = frac,
            _ => cdf.push((e, frac)),
        }
    }
    Ok(EvalReport {
        mae_cm: 100.0 * errors.iter().sum::<f64>() / nf,
        per_axis_mae_cm: [100.0 * axis[0] / nf, 100.0 * axis[1] / nf],
        per_sample_error_m: errors,
        cdf,
        meta: EvalMeta::default(),
    })
}

impl EvalReport {
    pub fn with_meta(mut self, meta: EvalMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn summary(&self) -> Summary {
        Summary {
            method: self.meta.method.clone(),
            feature: self.meta.feature.clone(),
            dataset: self.meta.dataset.clone(),
            mae_cm: self.mae_cm,
            per_axis_mae_cm: self.per_axis_mae_cm,
            n: self.per_sample_error_m.len(),
        }
    }
}

fn write_text(path: &Path, text: String) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `error_cm,fraction`
pub fn export_cdf(report: &EvalReport, path: &Path) -> Result<()> {
    let mut out = String::from("error_cm,fraction\n");
    for (e, f) in &report.cdf {
        let _ = writeln!(out, "{e},{f}");
    }
    write_text(path, out)
}

/// `truth,estimate` for one axis (0 = x, 1 = y).
pub fn export_scatter(
    labels: &Matrix<f64>,
    pred: &Matrix<f64>,
    axis: usize,
    path: &Path,
) -> Result<()> {
    check_aligned(pred, labels)?;
    if axis > 1 {
        return Err(Error::Argument(format!(
            "axis {axis} is not 0 (x) or 1 (y)"
        )));
    }
    let mut out = String::from("truth,estimate\n");
    for i in 0..labels.rows() {
        let _ = writeln!(out, "{},{}", labels.get(i, axis), pred.get(i, axis));
    }
    write_text(path, out)
}

/// `x,y,dx,dy` with the arrow from truth to estimate, meters.
pub fn export_quiver(labels: &Matrix<f64>, pred: &Matrix<f64>, path: &Path) -> Result<()> {
    check_aligned(pred, labels)?;
    let mut out = String::from("x,y,dx,dy\n");
    for i in 0..labels.rows() {
        let (x, y) = (labels.get(i, 0), labels.get(i, 1));
        let _ = writeln!(out, "{x},{y},{},{}", pred.get(i, 0) - x, pred.get(i, 1) - y);
    }
    write_text(path, out)
}

pub fn write_summary(report: &EvalReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&report.summary())
        .map_err(|e| Error::Format(e.to_string()))?;
    write_text(path, text + "\n")
}

/// Mean error in cm of the samples at or above and below an SNR threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrSplit {
    pub mae_high_cm: Option<f64>,
    pub mae_low_cm: Option<f64>,
}

pub fn snr_split(report: &EvalReport, snr_db: &[f64], threshold_db: f64) -> Result<SnrSplit> {
    if snr_db.len() != report.per_sample_error_m.len() {
        return Err(Error::Shape {
            expected: report.per_sample_error_m.len(),
            actual: snr_db.len(),
        });
    }
    let (mut hi, mut lo) = ((0.0, 0usize), (0.0, 0usize));
    for (&e, &s) in report.per_sample_error_m.iter().zip(snr_db) {
        let g = if s >= threshold_db { &mut hi } else { &mut lo };
        g.0 += e;
        g.1 += 1;
    }
    let mean = |(s, n): (f64, usize)| (n > 0).then(|| 100.0 * s / n as f64);
    Ok(SnrSplit {
        mae_high_cm: mean(hi),
        mae_low_cm: mean(lo),
    })
}

/// Splits evaluated samples by the SNR of one antenna; `ds` must hold the
/// evaluated records in the same order.
pub fn snr_conditioned_error(
    report: &EvalReport,
    ds: &Dataset,
    antenna: usize,
    threshold_db: f64,
) -> Result<SnrSplit> {
    if antenna >= ds.antennas() {
        return Err(Error::Argument(format!(
            "antenna {antenna} out of range for {} antennas",
            ds.antennas()
        )));
    }
    let snr: Vec<f64> = ds.records().iter().map(|r| r.snr[antenna] as f64).collect();
    snr_split(report, &snr, threshold_db)
}
