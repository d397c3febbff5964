//! Channel-state datasets: storage formats, the subcarrier shift repair,
//! trajectory-aware splitting and downsampling, and noise augmentation.
//!
//! A [`Dataset`] is an ordered list of [`CsiRecord`]s, one per measurement
//! along the transmitter trajectory. Records keep the wire precision
//! (`f32`) so that binary save/load is bit exact.
//!
//! # Native binary format
//!
//! Little-endian throughout:
//!
//! ```text
//! "CSID" | u32 version = 1 | u32 N | u32 M | u32 S
//! N × ( M·S × (f32 re, f32 im) row-major by antenna
//!       | f32 x | f32 y | M × f32 snr | u64 seq )
//! ```
//!
//! # CSV triplet
//!
//! A directory holding `csi.csv` (one row per record, `2·M·S` columns with
//! re/im interleaved), `pos.csv` (`x,y`) and `snr.csv` (`M` columns). No
//! header rows. `seq` is the row index.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex32;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::rng::{self, domain};
use crate::wire::{self, Reader};
use crate::{Error, Result};

pub const N_ANTENNAS: usize = 16;
pub const N_SUBCARRIERS: usize = 924;
pub const DEFAULT_CARRIER_HZ: f64 = 1.25e9;
pub const DEFAULT_BANDWIDTH_HZ: f64 = 20e6;

const MAGIC: &[u8; 4] = b"CSID";
const VERSION: u32 = 1;
const HEADER_BYTES: usize = 20;

/// Complex channel response, one row per antenna.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiMatrix {
    antennas: usize,
    subcarriers: usize,
    data: Vec<Complex32>,
}

impl CsiMatrix {
    pub fn zeros(antennas: usize, subcarriers: usize) -> Self {
        CsiMatrix {
            antennas,
            subcarriers,
            data: vec![Complex32::new(0.0, 0.0); antennas * subcarriers],
        }
    }

    pub fn from_vec(antennas: usize, subcarriers: usize, data: Vec<Complex32>) -> Result<Self> {
        if data.len() != antennas * subcarriers {
            return Err(Error::Shape {
                expected: antennas * subcarriers,
                actual: data.len(),
            });
        }
        Ok(CsiMatrix {
            antennas,
            subcarriers,
            data,
        })
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn row(&self, m: usize) -> &[Complex32] {
        &self.data[m * self.subcarriers..(m + 1) * self.subcarriers]
    }

    pub fn row_mut(&mut self, m: usize) -> &mut [Complex32] {
        &mut self.data[m * self.subcarriers..(m + 1) * self.subcarriers]
    }

    pub fn as_slice(&self) -> &[Complex32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex32] {
        &mut self.data
    }

    /// Root mean square of the entry magnitudes.
    pub fn rms(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        let p: f64 = self.data.iter().map(|c| c.norm_sqr() as f64).sum();
        (p / self.data.len() as f64).sqrt()
    }
}

/// One measurement: channel response, ground truth and per-antenna SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiRecord {
    pub csi: CsiMatrix,
    /// (x, y) in meters.
    pub position: [f32; 2],
    /// Per-antenna SNR in dB.
    pub snr: Vec<f32>,
    pub seq: u64,
}

impl CsiRecord {
    fn check_finite(&self, index: usize) -> Result<()> {
        if let Some(s) = self
            .csi
            .data
            .iter()
            .position(|c| !(c.re.is_finite() && c.im.is_finite()))
        {
            return Err(Error::data(
                index,
                format!(
                    "non-finite csi entry at antenna {}, subcarrier {}",
                    s / self.csi.subcarriers,
                    s % self.csi.subcarriers
                ),
            ));
        }
        if !self.position.iter().all(|v| v.is_finite()) {
            return Err(Error::data(index, "non-finite position"));
        }
        if let Some(m) = self.snr.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(index, format!("non-finite snr at antenna {m}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetMeta {
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
}

impl Default for DatasetMeta {
    fn default() -> Self {
        DatasetMeta {
            carrier_hz: DEFAULT_CARRIER_HZ,
            bandwidth_hz: DEFAULT_BANDWIDTH_HZ,
        }
    }
}

/// Records in trajectory order. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    antennas: usize,
    subcarriers: usize,
    records: Vec<CsiRecord>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn empty(antennas: usize, subcarriers: usize) -> Self {
        Dataset {
            antennas,
            subcarriers,
            records: Vec::new(),
            meta: DatasetMeta::default(),
        }
    }

    /// Validates shapes, finiteness and strictly increasing `seq`.
    pub fn new(antennas: usize, subcarriers: usize, records: Vec<CsiRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            if r.csi.antennas != antennas || r.csi.subcarriers != subcarriers {
                return Err(Error::data(
                    i,
                    format!(
                        "csi is {}x{}, dataset is {antennas}x{subcarriers}",
                        r.csi.antennas, r.csi.subcarriers
                    ),
                ));
            }
            if r.snr.len() != antennas {
                return Err(Error::data(
                    i,
                    format!("{} snr values for {antennas} antennas", r.snr.len()),
                ));
            }
            r.check_finite(i)?;
            if i > 0 && records[i - 1].seq >= r.seq {
                return Err(Error::Order(format!(
                    "seq {} at record {i} does not follow {}",
                    r.seq,
                    records[i - 1].seq
                )));
            }
        }
        Ok(Dataset {
            antennas,
            subcarriers,
            records,
            meta: DatasetMeta::default(),
        })
    }

    pub fn with_meta(mut self, meta: DatasetMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn records(&self) -> &[CsiRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<CsiRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Size in bytes of one record in the native binary format.
    pub fn record_bytes(&self) -> usize {
        record_bytes(self.antennas, self.subcarriers)
    }

    fn derived(&self, records: Vec<CsiRecord>) -> Dataset {
        Dataset {
            antennas: self.antennas,
            subcarriers: self.subcarriers,
            records,
            meta: self.meta,
        }
    }
}

fn record_bytes(m: usize, s: usize) -> usize {
    m * s * 8 + 8 + m * 4 + 8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    /// Single `CSID` file.
    Binary,
    /// Directory with `csi.csv`, `pos.csv`, `snr.csv`.
    CsvTriplet,
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset> {
    match format {
        DatasetFormat::Binary => load_binary(path),
        DatasetFormat::CsvTriplet => load_csv(path),
    }
}

/// Binary save/load is bit exact. The CSV triplet writes shortest
/// round-trip decimal forms, so it reloads exactly as well. Neither format
/// stores [`DatasetMeta`].
pub fn save_dataset(ds: &Dataset, path: &Path, format: DatasetFormat) -> Result<()> {
    match format {
        DatasetFormat::Binary => save_binary(ds, path),
        DatasetFormat::CsvTriplet => save_csv(ds, path),
    }
}

fn save_binary(ds: &Dataset, path: &Path) -> Result<()> {
    wire::write_file(path, |w| {
        w.bytes(MAGIC)?;
        w.u32(VERSION)?;
        w.u32(ds.len() as u32)?;
        w.u32(ds.antennas as u32)?;
        w.u32(ds.subcarriers as u32)?;
        for r in &ds.records {
            for c in &r.csi.data {
                w.f32(c.re)?;
                w.f32(c.im)?;
            }
            w.f32(r.position[0])?;
            w.f32(r.position[1])?;
            for &s in &r.snr {
                w.f32(s)?;
            }
            w.u64(r.seq)?;
        }
        Ok(())
    })
}

fn load_binary(path: &Path) -> Result<Dataset> {
    let buf = wire::read_file(path)?;
    let mut rd = Reader::new(&buf);
    rd.expect_magic(MAGIC)?;
    rd.expect_version(VERSION)?;
    let n = rd.u32()? as usize;
    let m = rd.u32()? as usize;
    let s = rd.u32()? as usize;
    debug_assert_eq!(buf.len() - rd.remaining(), HEADER_BYTES);
    let rb = record_bytes(m, s);
    if rd.remaining() < n * rb {
        return Err(Error::Truncated {
            expected: n,
            found: rd.remaining() / rb,
        });
    }
    if rd.remaining() > n * rb {
        return Err(Error::Format(format!(
            "{} trailing bytes after {n} records",
            rd.remaining() - n * rb
        )));
    }
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let mut data = Vec::with_capacity(m * s);
        for _ in 0..m * s {
            let re = rd.f32()?;
            let im = rd.f32()?;
            data.push(Complex32::new(re, im));
        }
        let position = [rd.f32()?, rd.f32()?];
        let snr = (0..m).map(|_| rd.f32()).collect::<Result<Vec<_>>>()?;
        let seq = rd.u64()?;
        let rec = CsiRecord {
            csi: CsiMatrix {
                antennas: m,
                subcarriers: s,
                data,
            },
            position,
            snr,
            seq,
        };
        rec.check_finite(i)?;
        records.push(rec);
    }
    Dataset::new(m, s, records)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn save_csv(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut csi = String::new();
    let mut pos = String::new();
    let mut snr = String::new();
    for r in &ds.records {
        let mut first = true;
        for c in &r.csi.data {
            if !first {
                csi.push(',');
            }
            first = false;
            let _ = write!(csi, "{},{}", c.re, c.im);
        }
        csi.push('\n');
        let _ = writeln!(pos, "{},{}", r.position[0], r.position[1]);
        let line: Vec<String> = r.snr.iter().map(|v| v.to_string()).collect();
        snr.push_str(&line.join(","));
        snr.push('\n');
    }
    write_text(&dir.join("csi.csv"), &csi)?;
    write_text(&dir.join("pos.csv"), &pos)?;
    write_text(&dir.join("snr.csv"), &snr)
}

fn read_csv_rows(path: &Path) -> Result<Vec<Vec<f32>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            line.split(',')
                .map(|tok| {
                    tok.trim()
                        .parse::<f32>()
                        .map_err(|_| Error::Format(format!("{name} row {i}: cannot parse {tok:?}")))
                })
                .collect()
        })
        .collect()
}

fn load_csv(dir: &Path) -> Result<Dataset> {
    let csi = read_csv_rows(&dir.join("csi.csv"))?;
    let pos = read_csv_rows(&dir.join("pos.csv"))?;
    let snr = read_csv_rows(&dir.join("snr.csv"))?;
    let n = csi.len();
    for other in [pos.len(), snr.len()] {
        if other != n {
            return Err(Error::Truncated {
                expected: n.max(other),
                found: n.min(other),
            });
        }
    }
    if n == 0 {
        return Ok(Dataset::empty(N_ANTENNAS, N_SUBCARRIERS));
    }
    let m = snr[0].len();
    if m == 0 || csi[0].len() % (2 * m) != 0 {
        return Err(Error::Format(format!(
            "csi.csv has {} columns, not a multiple of 2×{m} antennas",
            csi[0].len()
        )));
    }
    let s = csi[0].len() / (2 * m);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        if csi[i].len() != 2 * m * s || pos[i].len() < 2 || snr[i].len() != m {
            return Err(Error::data(i, "row has the wrong number of columns"));
        }
        let data = csi[i]
            .chunks_exact(2)
            .map(|p| Complex32::new(p[0], p[1]))
            .collect();
        let rec = CsiRecord {
            csi: CsiMatrix {
                antennas: m,
                subcarriers: s,
                data,
            },
            position: [pos[i][0], pos[i][1]],
            snr: snr[i].clone(),
            seq: i as u64,
        };
        rec.check_finite(i)?;
        records.push(rec);
    }
    Dataset::new(m, s, records)
}

/// Swaps the two halves of every antenna's subcarrier row. The stored
/// competition data has its spectrum halves exchanged; applying this twice
/// is the identity.
pub fn fix_subcarrier_shift(ds: &Dataset) -> Result<Dataset> {
    if ds.subcarriers % 2 != 0 {
        return Err(Error::Argument(format!(
            "subcarrier count {} is odd, halves are undefined",
            ds.subcarriers
        )));
    }
    let half = ds.subcarriers / 2;
    let records = ds
        .records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            for m in 0..ds.antennas {
                r.csi.row_mut(m).rotate_left(half);
            }
            r
        })
        .collect();
    Ok(ds.derived(records))
}

/// Keeps records 0, rate, 2·rate, …
pub fn downsample(ds: &Dataset, rate: usize) -> Result<Dataset> {
    if rate == 0 {
        return Err(Error::Argument("downsample rate must be at least 1".into()));
    }
    Ok(ds.derived(ds.records.iter().step_by(rate).cloned().collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SplitSpec {
    pub test_ratio: f64,
    pub val_ratio: f64,
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_ratio: 0.10,
            val_ratio: 0.10,
            shuffle: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Index partition behind [`split`], usable for anything indexed like the
/// dataset (for example feature rows).
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<[Vec<usize>; 3]> {
    let valid = |r: f64| (0.0..1.0).contains(&r);
    if !valid(spec.test_ratio) || !valid(spec.val_ratio) || spec.test_ratio + spec.val_ratio >= 1.0
    {
        return Err(Error::Argument(format!(
            "split ratios test={} val={} must lie in [0,1) and sum below 1",
            spec.test_ratio, spec.val_ratio
        )));
    }
    if n == 0 {
        return Err(Error::Argument("cannot split an empty dataset".into()));
    }
    let n_test = (n as f64 * spec.test_ratio).round() as usize;
    let n_val = (n as f64 * spec.val_ratio).round() as usize;
    if n_test + n_val >= n {
        return Err(Error::Argument(format!(
            "{n} records leave no training data after {n_test} test and {n_val} validation"
        )));
    }
    let n_train = n - n_test - n_val;
    // laid out as train | val | test, in trajectory order unless shuffled
    let mut order: Vec<usize> = (0..n).collect();
    if spec.shuffle {
        order.shuffle(&mut rng::stream(spec.seed, domain::SPLIT, 0));
    }
    let mut parts = [
        order[..n_train].to_vec(),
        order[n_train..n_train + n_val].to_vec(),
        order[n_train + n_val..].to_vec(),
    ];
    for p in parts.iter_mut() {
        p.sort_unstable();
    }
    Ok(parts)
}

/// Disjoint train/validation/test partition.
///
/// Shuffled splits draw a seeded random assignment; every part keeps
/// trajectory order internally. Unshuffled splits take the trajectory tail
/// as test and the block before it as validation.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<Split> {
    let [train, val, test] = split_indices(ds.len(), spec)?;
    let take = |idx: &[usize]| ds.derived(idx.iter().map(|&i| ds.records[i].clone()).collect());
    Ok(Split {
        train: take(&train),
        val: take(&val),
        test: take(&test),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AugmentConfig {
    /// Noisy copies per original record, on average.
    pub rate: f64,
    /// Complex noise std relative to the record's RMS channel magnitude.
    pub csi_noise_rel: f64,
    /// Position noise std per axis, meters.
    pub pos_noise_m: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rate: 1.0,
            csi_noise_rel: 0.02,
            pos_noise_m: 0.01,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate >= 0.0 && self.csi_noise_rel >= 0.0 && self.pos_noise_m >= 0.0) {
            return Err(Error::Argument(format!(
                "invalid augmentation settings {self:?}"
            )));
        }
        Ok(())
    }
}

/// Number of copies made of record `i` so that the total is round(rate·N).
fn copies_for(i: usize, rate: f64) -> usize {
    let upto = |k: usize| (k as f64 * rate).round() as usize;
    upto(i + 1) - upto(i)
}

/// Appends `round(rate·N)` noisy copies, each placed right after its
/// source. Output records are renumbered `seq = 0..` in list order so the
/// trajectory ordering invariant still holds.
pub fn augment(ds: &Dataset, cfg: &AugmentConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(ds.len() + (ds.len() as f64 * cfg.rate).round() as usize);
    for (i, src) in ds.records.iter().enumerate() {
        out.push(src.clone());
        let k = copies_for(i, cfg.rate);
        if k == 0 {
            continue;
        }
        let mut rng = rng::stream(cfg.seed, domain::AUGMENT, i as u64);
        let sigma = cfg.csi_noise_rel * src.csi.rms() / std::f64::consts::SQRT_2;
        for _ in 0..k {
            let mut copy = src.clone();
            if sigma > 0.0 {
                for c in copy.csi.data.iter_mut() {
                    let nr: f64 = StandardNormal.sample(&mut rng);
                    let ni: f64 = StandardNormal.sample(&mut rng);
                    c.re += (sigma * nr) as f32;
                    c.im += (sigma * ni) as f32;
                }
            }
            if cfg.pos_noise_m > 0.0 {
                for p in copy.position.iter_mut() {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    *p += (cfg.pos_noise_m * n) as f32;
                }
            }
            out.push(copy);
        }
    }
    for (j, r) in out.iter_mut().enumerate() {
        r.seq = j as u64;
    }
    Ok(ds.derived(out))
}
