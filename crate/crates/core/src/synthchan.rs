//! Synthetic multipath channels for a 2×8 receive array.
//!
//! The transmitter moves on a 4 m × 2 m table. Each antenna sees the
//! line-of-sight path plus one specular bounce per point reflector; every
//! path contributes `g / d · exp(-j 2π f d / c)` at subcarrier frequency `f`
//! for total path length `d`. Reflector, array and SNR defaults are
//! modelling assumptions, not measured values.

use num_complex::{Complex32, Complex64};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{CsiMatrix, CsiRecord, Dataset, DatasetMeta, N_ANTENNAS, N_SUBCARRIERS};
use crate::rng::{self, domain};
use crate::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const TABLE_X_M: f64 = 4.0;
pub const TABLE_Y_M: f64 = 2.0;
/// Transmitter height above the floor reference, meters.
pub const TX_HEIGHT_M: f64 = 0.1;
/// Stored SNR when noise is disabled (the realized ratio is infinite).
pub const MAX_SNR_DB: f32 = 200.0;

pub type Point3 = [f64; 3];

fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: Point3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn cross(a: Point3, b: Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn scale(a: Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn unit(a: Point3) -> Point3 {
    scale(a, 1.0 / norm(a))
}

/// Planar antenna array. Element `(r, c)` has index `r·cols + c` and sits
/// at `origin + (c - (cols-1)/2)·spacing·u + (r - (rows-1)/2)·spacing·v`,
/// where `u` is the horizontal in-plane axis and `v = normal × u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    pub rows: usize,
    pub cols: usize,
    pub spacing_m: f64,
    pub origin_m: Point3,
    pub orientation: Point3,
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        ArrayGeometry {
            rows: 2,
            cols: 8,
            spacing_m: SPEED_OF_LIGHT / crate::dataset::DEFAULT_CARRIER_HZ / 2.0,
            origin_m: [2.0, 2.8, 0.6],
            orientation: [0.0, -1.0, 0.0],
        }
    }
}

impl ArrayGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.spacing_m > 0.0) {
            return Err(Error::Geometry(format!(
                "element spacing {} must be positive",
                self.spacing_m
            )));
        }
        if self.rows * self.cols != N_ANTENNAS {
            return Err(Error::Geometry(format!(
                "{}x{} array does not have {N_ANTENNAS} elements",
                self.rows, self.cols
            )));
        }
        if !(norm(self.orientation) > 0.0) {
            return Err(Error::Geometry("array normal has zero length".into()));
        }
        Ok(())
    }

    /// Element positions in antenna index order.
    pub fn elements(&self) -> Vec<Point3> {
        let n = unit(self.orientation);
        let up = [0.0, 0.0, 1.0];
        let u = if norm(cross(up, n)) > 1e-9 {
            unit(cross(up, n))
        } else {
            [1.0, 0.0, 0.0]
        };
        let v = cross(n, u);
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                let a = (c as f64 - (self.cols as f64 - 1.0) / 2.0) * self.spacing_m;
                let b = (r as f64 - (self.rows as f64 - 1.0) / 2.0) * self.spacing_m;
                out.push([
                    self.origin_m[0] + a * u[0] + b * v[0],
                    self.origin_m[1] + a * u[1] + b * v[1],
                    self.origin_m[2] + a * u[2] + b * v[2],
                ]);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub n_subcarriers: usize,
    pub n_paths: usize,
    pub reflector_positions: Vec<Point3>,
    pub reflection_loss_db: Vec<f64>,
    /// Nominal SNR in dB; `f64::INFINITY` disables noise.
    pub snr_db: f64,
    /// Per-antenna amplitude gain offsets, dB.
    pub antenna_gain_db: Vec<f64>,
}

/// Linear ramp from `+half_span_db` on antenna 0 to `-half_span_db` on the last.
pub fn gain_ramp_db(half_span_db: f64) -> Vec<f64> {
    (0..N_ANTENNAS)
        .map(|m| half_span_db - 2.0 * half_span_db * m as f64 / (N_ANTENNAS - 1) as f64)
        .collect()
}

impl Default for ChannelConfig {
    fn default() -> Self {
        let reflectors = vec![[-1.5, 1.2, 1.0], [5.0, -1.0, 0.8], [2.5, -2.5, 1.5]];
        ChannelConfig {
            carrier_hz: crate::dataset::DEFAULT_CARRIER_HZ,
            bandwidth_hz: crate::dataset::DEFAULT_BANDWIDTH_HZ,
            n_subcarriers: N_SUBCARRIERS,
            n_paths: reflectors.len(),
            reflection_loss_db: vec![3.0; reflectors.len()],
            reflector_positions: reflectors,
            snr_db: 20.0,
            antenna_gain_db: gain_ramp_db(6.0),
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths != self.reflector_positions.len()
            || self.n_paths != self.reflection_loss_db.len()
        {
            return Err(Error::Argument(format!(
                "n_paths = {} but {} reflector positions and {} losses given",
                self.n_paths,
                self.reflector_positions.len(),
                self.reflection_loss_db.len()
            )));
        }
        if !(self.bandwidth_hz > 0.0) || !(self.carrier_hz > 0.0) {
            return Err(Error::Argument(
                "carrier and bandwidth must be positive".into(),
            ));
        }
        if self.n_subcarriers == 0 {
            return Err(Error::Argument("need at least one subcarrier".into()));
        }
        if self.antenna_gain_db.len() != N_ANTENNAS {
            return Err(Error::Argument(format!(
                "{} antenna gains for {N_ANTENNAS} antennas",
                self.antenna_gain_db.len()
            )));
        }
        if self.snr_db.is_nan() {
            return Err(Error::Argument("snr_db is NaN".into()));
        }
        Ok(())
    }

    /// Absolute frequency of subcarrier `s`: equally spaced over
    /// carrier ± bandwidth/2, endpoints included.
    pub fn subcarrier_hz(&self, s: usize) -> f64 {
        if self.n_subcarriers == 1 {
            return self.carrier_hz;
        }
        self.carrier_hz - self.bandwidth_hz / 2.0
            + self.bandwidth_hz * s as f64 / (self.n_subcarriers - 1) as f64
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            carrier_hz: self.carrier_hz,
            bandwidth_hz: self.bandwidth_hz,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<[f64; 2]>,
    pub step_m: f64,
}

/// Folds a coordinate back into `[0, hi]`; returns whether it reflected.
fn reflect(v: f64, hi: f64) -> (f64, bool) {
    if v < 0.0 {
        ((-v).min(hi), true)
    } else if v > hi {
        ((2.0 * hi - v).max(0.0), true)
    } else {
        (v, false)
    }
}

/// Seeded random walk on the table: fixed step length, heading perturbed
/// by Gaussian increments (0.3 rad std), reflected at the table edges.
pub fn gen_trajectory(n_points: usize, step_m: f64, seed: u64) -> Result<Trajectory> {
    if n_points == 0 {
        return Err(Error::Argument(
            "trajectory needs at least one point".into(),
        ));
    }
    if !(step_m > 0.0) {
        return Err(Error::Argument(format!("step {step_m} must be positive")));
    }
    let mut rng = rng::stream(seed, domain::TRAJECTORY, 0);
    let mut x = rng.random_range(0.0..TABLE_X_M);
    let mut y = rng.random_range(0.0..TABLE_Y_M);
    let mut heading = rng.random_range(0.0..std::f64::consts::TAU);
    let mut points = Vec::with_capacity(n_points);
    points.push([x, y]);
    for _ in 1..n_points {
        let turn: f64 = StandardNormal.sample(&mut rng);
        heading += 0.3 * turn;
        let (nx, fx) = reflect(x + step_m * heading.cos(), TABLE_X_M);
        let (ny, fy) = reflect(y + step_m * heading.sin(), TABLE_Y_M);
        if fx {
            heading = std::f64::consts::PI - heading;
        }
        if fy {
            heading = -heading;
        }
        x = nx;
        y = ny;
        points.push([x, y]);
    }
    Ok(Trajectory { points, step_m })
}

/// Noise-free channel response between a transmitter and every antenna.
///
/// Path gains are linear amplitudes: 1 for line of sight, `10^(-loss/20)`
/// for a reflector, times `10^(gain_db[m]/20)` for antenna `m`.
pub fn steering_response(
    geom: &ArrayGeometry,
    cfg: &ChannelConfig,
    tx_pos: Point3,
) -> Result<Vec<Complex64>> {
    geom.validate()?;
    cfg.validate()?;
    let elements = geom.elements();
    let s_count = cfg.n_subcarriers;
    let freqs: Vec<f64> = (0..s_count).map(|s| cfg.subcarrier_hz(s)).collect();
    let reflector_gain: Vec<f64> = cfg
        .reflection_loss_db
        .iter()
        .map(|l| 10f64.powf(-l / 20.0))
        .collect();
    let mut out = vec![Complex64::new(0.0, 0.0); elements.len() * s_count];
    for (m, &ant) in elements.iter().enumerate() {
        let d_los = norm(sub(tx_pos, ant));
        if d_los < 1e-9 {
            return Err(Error::Geometry(format!(
                "transmitter coincides with antenna {m}"
            )));
        }
        let ant_gain = 10f64.powf(cfg.antenna_gain_db[m] / 20.0);
        let mut paths = vec![(ant_gain, d_los)];
        for (p, &refl) in cfg.reflector_positions.iter().enumerate() {
            let d = norm(sub(tx_pos, refl)) + norm(sub(refl, ant));
            paths.push((ant_gain * reflector_gain[p], d));
        }
        let row = &mut out[m * s_count..(m + 1) * s_count];
        for &(g, d) in &paths {
            let amp = g / d;
            for (h, &f) in row.iter_mut().zip(&freqs) {
                *h += Complex64::from_polar(amp, -std::f64::consts::TAU * f * d / SPEED_OF_LIGHT);
            }
        }
    }
    Ok(out)
}

/// One record per trajectory point with additive complex Gaussian noise.
///
/// The noise floor is common to all antennas of a record and set so the
/// array-average signal power, before antenna gain offsets, sits `snr_db`
/// above it. Antenna `m` therefore averages `snr_db + antenna_gain_db[m]`
/// up to its geometric power deviation. The stored SNR is the realized
/// ratio of signal power to injected noise power. Each record's noise is
/// drawn from a stream keyed by `(seed, seq)`.
pub fn synth_dataset(
    geom: &ArrayGeometry,
    cfg: &ChannelConfig,
    traj: &Trajectory,
    seed: u64,
) -> Result<Dataset> {
    geom.validate()?;
    cfg.validate()?;
    let m_count = N_ANTENNAS;
    let s_count = cfg.n_subcarriers;
    let gains: Vec<f64> = cfg
        .antenna_gain_db
        .iter()
        .map(|g| 10f64.powf(g / 10.0))
        .collect();
    let mut records = Vec::with_capacity(traj.points.len());
    for (seq, p) in traj.points.iter().enumerate() {
        let h = steering_response(geom, cfg, [p[0], p[1], TX_HEIGHT_M])?;
        let power: Vec<f64> = h
            .chunks_exact(s_count)
            .map(|row| row.iter().map(|c| c.norm_sqr()).sum::<f64>() / s_count as f64)
            .collect();
        let mut snr = vec![MAX_SNR_DB; m_count];
        let mut csi: Vec<Complex32> = h
            .iter()
            .map(|c| Complex32::new(c.re as f32, c.im as f32))
            .collect();
        if cfg.snr_db.is_finite() {
            let base_power =
                power.iter().zip(&gains).map(|(p, g)| p / g).sum::<f64>() / m_count as f64;
            let sigma = (base_power / 10f64.powf(cfg.snr_db / 10.0) / 2.0).sqrt();
            let mut rng = rng::stream(seed, domain::CHANNEL_NOISE, seq as u64);
            for m in 0..m_count {
                let mut noise_power = 0.0;
                for s in 0..s_count {
                    let nr: f64 = StandardNormal.sample(&mut rng);
                    let ni: f64 = StandardNormal.sample(&mut rng);
                    let n = Complex64::new(sigma * nr, sigma * ni);
                    noise_power += n.norm_sqr();
                    let v = h[m * s_count + s] + n;
                    csi[m * s_count + s] = Complex32::new(v.re as f32, v.im as f32);
                }
                noise_power /= s_count as f64;
                snr[m] = ((10.0 * (power[m] / noise_power).log10()) as f32).min(MAX_SNR_DB);
            }
        }
        records.push(CsiRecord {
            csi: CsiMatrix::from_vec(m_count, s_count, csi)?,
            position: [p[0] as f32, p[1] as f32],
            snr,
            seq: seq as u64,
        });
    }
    Ok(Dataset::new(m_count, s_count, records)?.with_meta(cfg.meta()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn los_only() -> ChannelConfig {
        ChannelConfig {
            n_paths: 0,
            reflector_positions: vec![],
            reflection_loss_db: vec![],
            antenna_gain_db: vec![0.0; N_ANTENNAS],
            ..ChannelConfig::default()
        }
    }

    #[test]
    fn single_point_trajectory_is_on_table() {
        let t = gen_trajectory(1, 0.01, 3).unwrap();
        assert_eq!(t.points.len(), 1);
        let [x, y] = t.points[0];
        assert!((0.0..=TABLE_X_M).contains(&x) && (0.0..=TABLE_Y_M).contains(&y));
    }

    #[test]
    fn trajectory_steps_are_bounded_and_seeded() {
        let t = gen_trajectory(1000, 0.01, 11).unwrap();
        for w in t.points.windows(2) {
            let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            assert!(d <= 0.02 + 1e-12, "step {d}");
        }
        for p in &t.points {
            assert!((0.0..=TABLE_X_M).contains(&p[0]) && (0.0..=TABLE_Y_M).contains(&p[1]));
        }
        assert_eq!(t, gen_trajectory(1000, 0.01, 11).unwrap());
        assert_ne!(t, gen_trajectory(1000, 0.01, 12).unwrap());
    }

    #[test]
    fn long_walk_reflects_inside_table() {
        let t = gen_trajectory(20_000, 0.3, 5).unwrap();
        assert!(t
            .points
            .iter()
            .all(|p| (0.0..=TABLE_X_M).contains(&p[0]) && (0.0..=TABLE_Y_M).contains(&p[1])));
    }

    #[test]
    fn trajectory_rejects_bad_args() {
        assert!(gen_trajectory(0, 0.1, 0).is_err());
        assert!(gen_trajectory(3, 0.0, 0).is_err());
    }

    #[test]
    fn default_geometry_is_half_wavelength_2x8() {
        let g = ArrayGeometry::default();
        let e = g.elements();
        assert_eq!(e.len(), 16);
        let d01 = norm(sub(e[1], e[0]));
        assert!((d01 - 0.1199).abs() < 1e-3);
        // rows differ vertically
        assert!((e[8][2] - e[0][2]).abs() > 0.1);
        let mut bad = g.clone();
        bad.spacing_m = 0.0;
        assert!(bad.validate().is_err());
        bad = g.clone();
        bad.rows = 3;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn single_path_amplitude_is_flat_across_band() {
        let geom = ArrayGeometry::default();
        let cfg = los_only();
        let h = steering_response(&geom, &cfg, [1.0, 1.0, TX_HEIGHT_M]).unwrap();
        let e = geom.elements();
        for m in 0..16 {
            let d = norm(sub([1.0, 1.0, TX_HEIGHT_M], e[m]));
            for s in 0..cfg.n_subcarriers {
                let a = h[m * cfg.n_subcarriers + s].norm();
                assert!((a - 1.0 / d).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn broadside_far_field_has_equal_phases() {
        let geom = ArrayGeometry::default();
        let cfg = los_only();
        let far = [geom.origin_m[0], geom.origin_m[1] - 1e5, geom.origin_m[2]];
        let h = steering_response(&geom, &cfg, far).unwrap();
        let s = cfg.n_subcarriers / 2;
        for c in 0..7 {
            let a = h[c * cfg.n_subcarriers + s];
            let b = h[(c + 1) * cfg.n_subcarriers + s];
            let dphi = (a * b.conj()).arg();
            assert!(dphi.abs() < 1e-3, "adjacent phase diff {dphi}");
        }
    }

    #[test]
    fn coincident_transmitter_is_rejected() {
        let geom = ArrayGeometry::default();
        let e0 = geom.elements()[0];
        assert!(matches!(
            steering_response(&geom, &los_only(), e0),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn two_ray_ripple_count_matches_excess_delay() {
        // One reflector on the far side of the transmitter along the x axis
        // so the excess path is exactly twice the tx-reflector distance.
        let geom = ArrayGeometry::default();
        let tx = [2.0, 1.0, TX_HEIGHT_M];
        let ant = geom.elements()[3];
        let excess = 75.0;
        // place the reflector on the ray from the antenna through tx
        let dir = unit(sub(tx, ant));
        let refl = [
            tx[0] + dir[0] * excess / 2.0,
            tx[1] + dir[1] * excess / 2.0,
            tx[2] + dir[2] * excess / 2.0,
        ];
        let cfg = ChannelConfig {
            n_paths: 1,
            reflector_positions: vec![refl],
            reflection_loss_db: vec![0.0],
            ..los_only()
        };
        let h = steering_response(&geom, &cfg, tx).unwrap();
        let s_count = cfg.n_subcarriers;
        let amp: Vec<f64> = h[3 * s_count..4 * s_count]
            .iter()
            .map(|c| c.norm())
            .collect();
        let peaks = (1..s_count - 1)
            .filter(|&s| amp[s] > amp[s - 1] && amp[s] >= amp[s + 1])
            .count();
        let predicted = cfg.bandwidth_hz * excess / SPEED_OF_LIGHT;
        assert!(
            (peaks as f64 - predicted).abs() <= 1.0,
            "{peaks} peaks, predicted {predicted}"
        );
    }

    #[test]
    fn path_gain_linearity() {
        let geom = ArrayGeometry::default();
        let cfg = ChannelConfig::default();
        let tx = [1.3, 0.4, TX_HEIGHT_M];
        let base = steering_response(&geom, &cfg, tx).unwrap();
        let boosted = ChannelConfig {
            antenna_gain_db: cfg
                .antenna_gain_db
                .iter()
                .map(|g| g + 20.0 * 2f64.log10())
                .collect(),
            ..cfg.clone()
        };
        let doubled = steering_response(&geom, &boosted, tx).unwrap();
        for (a, b) in base.iter().zip(&doubled) {
            assert!((b.norm() - 2.0 * a.norm()).abs() <= 1e-12 * a.norm().max(1.0));
        }
    }

    #[test]
    fn one_wavelength_along_los_is_a_full_turn() {
        let geom = ArrayGeometry::default();
        let cfg = ChannelConfig {
            n_subcarriers: 3,
            ..los_only()
        };
        let lambda = SPEED_OF_LIGHT / cfg.subcarrier_hz(1);
        let dir = unit([0.3, -1.0, 0.05]);
        let r = 1e4;
        let tx0 = [
            geom.origin_m[0] + r * dir[0],
            geom.origin_m[1] + r * dir[1],
            geom.origin_m[2] + r * dir[2],
        ];
        let tx1 = [
            tx0[0] + lambda * dir[0],
            tx0[1] + lambda * dir[1],
            tx0[2] + lambda * dir[2],
        ];
        let h0 = steering_response(&geom, &cfg, tx0).unwrap();
        let h1 = steering_response(&geom, &cfg, tx1).unwrap();
        for m in 0..16 {
            let dphi = (h0[m * 3 + 1] * h1[m * 3 + 1].conj()).arg();
            assert!(dphi.abs() < 1e-6, "antenna {m}: {dphi}");
        }
    }

    #[test]
    fn noiseless_synthesis_equals_steering_response() {
        let geom = ArrayGeometry::default();
        let cfg = ChannelConfig {
            snr_db: f64::INFINITY,
            n_subcarriers: 64,
            ..ChannelConfig::default()
        };
        let traj = gen_trajectory(5, 0.05, 1).unwrap();
        let ds = synth_dataset(&geom, &cfg, &traj, 1).unwrap();
        for (r, p) in ds.records().iter().zip(&traj.points) {
            let h = steering_response(&geom, &cfg, [p[0], p[1], TX_HEIGHT_M]).unwrap();
            for (a, b) in r.csi.as_slice().iter().zip(&h) {
                assert_eq!(*a, Complex32::new(b.re as f32, b.im as f32));
            }
            assert!(r.snr.iter().all(|&s| s == MAX_SNR_DB));
        }
    }

    #[test]
    fn synthesis_is_reproducible() {
        let geom = ArrayGeometry::default();
        let cfg = ChannelConfig {
            n_subcarriers: 32,
            ..ChannelConfig::default()
        };
        let traj = gen_trajectory(20, 0.05, 2).unwrap();
        let a = synth_dataset(&geom, &cfg, &traj, 5).unwrap();
        assert_eq!(a, synth_dataset(&geom, &cfg, &traj, 5).unwrap());
        assert_ne!(a, synth_dataset(&geom, &cfg, &traj, 6).unwrap());
    }

    #[test]
    fn realized_snr_tracks_nominal_plus_offset() {
        let geom = ArrayGeometry::default();
        let cfg = ChannelConfig {
            n_subcarriers: 128,
            ..ChannelConfig::default()
        };
        let traj = gen_trajectory(500, 0.1, 4).unwrap();
        let ds = synth_dataset(&geom, &cfg, &traj, 4).unwrap();
        for m in 0..16 {
            let mean: f64 =
                ds.records().iter().map(|r| r.snr[m] as f64).sum::<f64>() / ds.len() as f64;
            let want = cfg.snr_db + cfg.antenna_gain_db[m];
            assert!(
                (mean - want).abs() <= 1.0,
                "antenna {m}: mean {mean}, want {want}"
            );
        }
    }

    #[test]
    fn single_hot_antenna_is_ten_db_up() {
        let geom = ArrayGeometry::default();
        let mut gains = vec![0.0; 16];
        gains[0] = 10.0;
        let cfg = ChannelConfig {
            n_subcarriers: 128,
            antenna_gain_db: gains,
            ..ChannelConfig::default()
        };
        let traj = gen_trajectory(300, 0.1, 8).unwrap();
        let ds = synth_dataset(&geom, &cfg, &traj, 8).unwrap();
        let mean =
            |m: usize| ds.records().iter().map(|r| r.snr[m] as f64).sum::<f64>() / ds.len() as f64;
        let diff = mean(0) - mean(1);
        assert!((diff - 10.0).abs() < 1.0, "difference {diff}");
    }
}
