//! Fingerprint features.
//!
//! Two extractions are provided:
//!
//! * **Smoothed CSI**: per antenna, the subcarrier amplitude profile is
//!   fitted with a degree-K polynomial by least squares and the fit is
//!   resampled at `D` points. The subcarrier axis is mapped to `[-1, 1]`
//!   before fitting; this is an exact reparameterization of a polynomial in
//!   the raw index that keeps the Vandermonde system well conditioned. The
//!   fit uses Householder QR and is precomputed once as a `D × S` linear
//!   operator.
//! * **Covariance matrix**: the rows are taken to the delay domain with an
//!   inverse DFT, `Z = Y·Yᴴ` is formed without `1/T` normalization, and the
//!   magnitudes of the upper triangle (diagonal included, row-major) are
//!   kept: `M(M+1)/2 = 136` values for 16 antennas.
//!
//! Either feature may be followed by the per-antenna SNR values in dB.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::linalg::{lstsq, Matrix};
use crate::wire::{self, Reader};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolySmoothConfig {
    pub degree: usize,
    pub n_samples: usize,
}

impl Default for PolySmoothConfig {
    fn default() -> Self {
        PolySmoothConfig {
            degree: 10,
            n_samples: 66,
        }
    }
}

fn unit_grid(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n)
        .map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64)
        .collect()
}

fn vandermonde(xs: &[f64], degree: usize) -> Matrix<f64> {
    let mut v = Matrix::zeros(xs.len(), degree + 1);
    for (i, &x) in xs.iter().enumerate() {
        let mut p = 1.0;
        for j in 0..=degree {
            v.set(i, j, p);
            p *= x;
        }
    }
    v
}

/// Precomputed least-squares smoother for rows of a fixed length.
#[derive(Debug, Clone)]
pub struct PolySmoother {
    cfg: PolySmoothConfig,
    len: usize,
    /// `(K+1) × S`: maps a row to its monomial coefficients on `[-1, 1]`.
    coef_op: Matrix<f64>,
    /// `D × S`: maps a row to the fitted curve at the output points.
    smooth_op: Matrix<f64>,
}

impl PolySmoother {
    pub fn new(cfg: PolySmoothConfig, len: usize) -> Result<Self> {
        let k1 = cfg.degree + 1;
        if cfg.n_samples < k1 || cfg.n_samples > len || len < k1 {
            return Err(Error::Argument(format!(
                "degree {} with {} output samples is invalid for rows of length {len}",
                cfg.degree, cfg.n_samples
            )));
        }
        let design = vandermonde(&unit_grid(len), cfg.degree);
        let mut identity = Matrix::zeros(len, len);
        for i in 0..len {
            identity.set(i, i, 1.0);
        }
        let coef_op = lstsq(&design, &identity)?;
        let eval = vandermonde(&unit_grid(cfg.n_samples), cfg.degree);
        let smooth_op = Matrix::matmul(&eval, false, &coef_op, false);
        Ok(PolySmoother {
            cfg,
            len,
            coef_op,
            smooth_op,
        })
    }

    pub fn config(&self) -> PolySmoothConfig {
        self.cfg
    }

    fn check(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.len {
            return Err(Error::Shape {
                expected: self.len,
                actual: row.len(),
            });
        }
        if let Some(i) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(i, "non-finite sample in smoothing input"));
        }
        Ok(())
    }

    /// Monomial coefficients `a_0..a_K` in the rescaled coordinate.
    pub fn coefficients(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check(row)?;
        Ok(self.coef_op.iter_rows().map(|op| dot(op, row)).collect())
    }

    pub fn smooth(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check(row)?;
        Ok(self.smooth_op.iter_rows().map(|op| dot(op, row)).collect())
    }

    /// Smooths every row of `rows` (`n × S`) into an `n × D` matrix.
    pub fn smooth_rows(&self, rows: &Matrix<f64>) -> Result<Matrix<f64>> {
        if rows.cols() != self.len {
            return Err(Error::Shape {
                expected: self.len,
                actual: rows.cols(),
            });
        }
        if let Some(i) = rows.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::data(
                i / self.len,
                "non-finite sample in smoothing input",
            ));
        }
        Ok(Matrix::matmul(rows, false, &self.smooth_op, true))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Least-squares polynomial smoothing of one amplitude row.
pub fn poly_smooth(row: &[f64], cfg: &PolySmoothConfig) -> Result<Vec<f64>> {
    PolySmoother::new(*cfg, row.len())?.smooth(row)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    SmoothedCsi,
    CovMatrix,
}

impl FeatureKind {
    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::SmoothedCsi => "smoothed-csi",
            FeatureKind::CovMatrix => "cov-matrix",
        }
    }
}

/// Feature rows with position labels, in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub features: Matrix<f64>,
    /// `N × 2`, meters.
    pub labels: Matrix<f64>,
    pub kind: FeatureKind,
    pub snr_included: bool,
    pub seq: Vec<u64>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.features.cols()
    }

    pub fn select(&self, indices: &[usize]) -> FeatureSet {
        FeatureSet {
            features: self.features.select_rows(indices),
            labels: self.labels.select_rows(indices),
            kind: self.kind,
            snr_included: self.snr_included,
            seq: indices.iter().map(|&i| self.seq[i]).collect(),
        }
    }

    /// Rows `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> FeatureSet {
        self.select(&(start..end).collect::<Vec<_>>())
    }

    /// True when `seq` is strictly increasing.
    pub fn is_trajectory_ordered(&self) -> bool {
        self.seq.windows(2).all(|w| w[0] < w[1])
    }
}

/// Width of a smoothed-CSI feature row.
pub fn smoothed_width(antennas: usize, cfg: &PolySmoothConfig, include_snr: bool) -> usize {
    antennas * cfg.n_samples + if include_snr { antennas } else { 0 }
}

/// Width of a covariance feature row.
pub fn covariance_width(antennas: usize, include_snr: bool) -> usize {
    antennas * (antennas + 1) / 2 + if include_snr { antennas } else { 0 }
}

fn labels_of(ds: &Dataset) -> Matrix<f64> {
    let mut labels = Matrix::zeros(ds.len(), 2);
    for (i, r) in ds.records().iter().enumerate() {
        labels.set(i, 0, r.position[0] as f64);
        labels.set(i, 1, r.position[1] as f64);
    }
    labels
}

const CHUNK_RECORDS: usize = 256;

/// Smoothed amplitude profile of every antenna, optionally followed by SNR.
pub fn extract_smoothed_csi(
    ds: &Dataset,
    cfg: &PolySmoothConfig,
    include_snr: bool,
) -> Result<FeatureSet> {
    let m = ds.antennas();
    let s = ds.subcarriers();
    let d = cfg.n_samples;
    let smoother = PolySmoother::new(*cfg, s)?;
    let width = smoothed_width(m, cfg, include_snr);
    let mut features = Matrix::zeros(ds.len(), width);
    for (chunk_idx, chunk) in ds.records().chunks(CHUNK_RECORDS).enumerate() {
        let mut amp = Matrix::zeros(chunk.len() * m, s);
        for (i, r) in chunk.iter().enumerate() {
            for a in 0..m {
                for (dst, c) in amp.row_mut(i * m + a).iter_mut().zip(r.csi.row(a)) {
                    *dst = (c.norm() as f64).max(0.0);
                }
            }
        }
        let smoothed = smoother.smooth_rows(&amp).map_err(|e| match e {
            Error::Data { index, reason } => {
                Error::data(chunk_idx * CHUNK_RECORDS + index / m, reason)
            }
            other => other,
        })?;
        for (i, r) in chunk.iter().enumerate() {
            let row = features.row_mut(chunk_idx * CHUNK_RECORDS + i);
            for a in 0..m {
                row[a * d..(a + 1) * d].copy_from_slice(smoothed.row(i * m + a));
            }
            if include_snr {
                for (dst, &v) in row[m * d..].iter_mut().zip(&r.snr) {
                    *dst = v as f64;
                }
            }
        }
    }
    Ok(FeatureSet {
        features,
        labels: labels_of(ds),
        kind: FeatureKind::SmoothedCsi,
        snr_included: include_snr,
        seq: ds.records().iter().map(|r| r.seq).collect(),
    })
}

/// Row-wise inverse DFT with `1/N` scaling (delay-domain response).
pub fn csi_to_time(rows: &[Complex64], subcarriers: usize) -> Vec<Complex64> {
    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(subcarriers);
    let mut out = rows.to_vec();
    let scale = 1.0 / subcarriers as f64;
    for row in out.chunks_exact_mut(subcarriers) {
        ifft.process(row);
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    out
}

/// `|Z[i][j]|` for `i ≤ j` where `Z = Y·Yᴴ`, `Y` being `antennas × t`.
pub fn covariance_upper_amplitudes(y: &[Complex64], antennas: usize) -> Vec<f64> {
    let t = if antennas == 0 { 0 } else { y.len() / antennas };
    let mut out = Vec::with_capacity(antennas * (antennas + 1) / 2);
    for i in 0..antennas {
        let yi = &y[i * t..(i + 1) * t];
        for j in i..antennas {
            let yj = &y[j * t..(j + 1) * t];
            let z: Complex64 = yi.iter().zip(yj).map(|(a, b)| a * b.conj()).sum();
            out.push(z.norm());
        }
    }
    out
}

/// Covariance-matrix features, optionally followed by SNR.
pub fn covariance_features(ds: &Dataset, include_snr: bool) -> Result<FeatureSet> {
    let m = ds.antennas();
    let s = ds.subcarriers();
    let width = covariance_width(m, include_snr);
    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(s);
    let scale = 1.0 / s as f64;
    let mut features = Matrix::zeros(ds.len(), width);
    let mut y = vec![Complex64::new(0.0, 0.0); m * s];
    for (n, r) in ds.records().iter().enumerate() {
        for (dst, c) in y.iter_mut().zip(r.csi.as_slice()) {
            *dst = Complex64::new(c.re as f64, c.im as f64);
        }
        for row in y.chunks_exact_mut(s) {
            ifft.process(row);
            for v in row.iter_mut() {
                *v *= scale;
            }
        }
        let tri = covariance_upper_amplitudes(&y, m);
        let out = features.row_mut(n);
        out[..tri.len()].copy_from_slice(&tri);
        if include_snr {
            for (dst, &v) in out[tri.len()..].iter_mut().zip(&r.snr) {
                *dst = v as f64;
            }
        }
    }
    Ok(FeatureSet {
        features,
        labels: labels_of(ds),
        kind: FeatureKind::CovMatrix,
        snr_included: include_snr,
        seq: ds.records().iter().map(|r| r.seq).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub position: [f64; 2],
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborReport {
    /// Closest first; ties go to the lower index.
    pub neighbors: Vec<Neighbor>,
    /// Largest pairwise distance between neighbor positions, meters.
    pub spread_m: f64,
}

/// The `k` rows nearest to row `query_index` in raw Euclidean feature
/// distance, excluding the query itself.
pub fn neighbor_check(train: &FeatureSet, query_index: usize, k: usize) -> Result<NeighborReport> {
    let n = train.len();
    if query_index >= n {
        return Err(Error::Argument(format!(
            "query index {query_index} out of range for {n} rows"
        )));
    }
    if k == 0 || k > n - 1 {
        return Err(Error::Argument(format!(
            "k = {k} must be in 1..={}",
            n.saturating_sub(1)
        )));
    }
    let q = train.features.row(query_index);
    let mut cand: Vec<(f64, usize)> = (0..n)
        .filter(|&i| i != query_index)
        .map(|i| {
            let d2: f64 = train
                .features
                .row(i)
                .iter()
                .zip(q)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (d2.sqrt(), i)
        })
        .collect();
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let neighbors: Vec<Neighbor> = cand[..k]
        .iter()
        .map(|&(distance, index)| Neighbor {
            index,
            position: [train.labels.get(index, 0), train.labels.get(index, 1)],
            distance,
        })
        .collect();
    let mut spread_m: f64 = 0.0;
    for a in &neighbors {
        for b in &neighbors {
            let d = ((a.position[0] - b.position[0]).powi(2)
                + (a.position[1] - b.position[1]).powi(2))
            .sqrt();
            spread_m = spread_m.max(d);
        }
    }
    Ok(NeighborReport {
        neighbors,
        spread_m,
    })
}

const MAGIC: &[u8; 4] = b"CSIF";
const VERSION: u32 = 1;

/// Native feature file:
///
/// ```text
/// "CSIF" | u32 version = 1 | u32 N | u32 F | u32 kind (0 smoothed, 1 cm)
/// | u32 snr_included
/// N × ( F × f64 features | f64 x | f64 y | u64 seq )
/// ```
pub fn save_features(fs: &FeatureSet, path: &Path) -> Result<()> {
    wire::write_file(path, |w| {
        w.bytes(MAGIC)?;
        w.u32(VERSION)?;
        w.u32(fs.len() as u32)?;
        w.u32(fs.width() as u32)?;
        w.u32(match fs.kind {
            FeatureKind::SmoothedCsi => 0,
            FeatureKind::CovMatrix => 1,
        })?;
        w.u32(fs.snr_included as u32)?;
        for i in 0..fs.len() {
            w.f64s(fs.features.row(i))?;
            w.f64s(fs.labels.row(i))?;
            w.u64(fs.seq[i])?;
        }
        Ok(())
    })
}

/// Reads the header only: `(N, F)`.
pub fn peek_feature_dims(path: &Path) -> Result<(usize, usize)> {
    let buf = wire::read_file(path)?;
    let mut rd = Reader::new(&buf);
    rd.expect_magic(MAGIC)?;
    rd.expect_version(VERSION)?;
    Ok((rd.u32()? as usize, rd.u32()? as usize))
}

pub fn load_features(path: &Path) -> Result<FeatureSet> {
    let buf = wire::read_file(path)?;
    let mut rd = Reader::new(&buf);
    rd.expect_magic(MAGIC)?;
    rd.expect_version(VERSION)?;
    let n = rd.u32()? as usize;
    let f = rd.u32()? as usize;
    let kind = match rd.u32()? {
        0 => FeatureKind::SmoothedCsi,
        1 => FeatureKind::CovMatrix,
        k => return Err(Error::Format(format!("unknown feature kind {k}"))),
    };
    let snr_included = rd.u32()? != 0;
    let row_bytes = (f + 2) * 8 + 8;
    if rd.remaining() < n * row_bytes {
        return Err(Error::Truncated {
            expected: n,
            found: rd.remaining() / row_bytes,
        });
    }
    let mut features = Matrix::zeros(n, f);
    let mut labels = Matrix::zeros(n, 2);
    let mut seq = Vec::with_capacity(n);
    for i in 0..n {
        let row = rd.f64s(f)?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::data(i, "non-finite feature"));
        }
        features.row_mut(i).copy_from_slice(&row);
        labels.set(i, 0, rd.f64()?);
        labels.set(i, 1, rd.f64()?);
        seq.push(rd.u64()?);
    }
    Ok(FeatureSet {
        features,
        labels,
        kind,
        snr_included,
        seq,
    })
}

/// CSV with header `seq,x,y,f0,…`.
pub fn save_features_csv(fs: &FeatureSet, path: &Path) -> Result<()> {
    let mut out = String::from("seq,x,y");
    for j in 0..fs.width() {
        let _ = write!(out, ",f{j}");
    }
    out.push('\n');
    for i in 0..fs.len() {
        let _ = write!(
            out,
            "{},{},{}",
            fs.seq[i],
            fs.labels.get(i, 0),
            fs.labels.get(i, 1)
        );
        for v in fs.features.row(i) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
