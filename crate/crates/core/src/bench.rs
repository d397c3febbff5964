//! Experiment grid: {feature} × {method} × {full, small} on one dataset.
//!
//! A cell runs the whole pipeline from records to test error: optional
//! downsampling, split, augmentation of the training part, feature
//! extraction, training and evaluation against the held-out test part.
//! Every random choice is keyed by the cell seed, so rerunning a cell
//! reproduces its error exactly.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{augment, downsample, split, AugmentConfig, Dataset, SplitSpec};
use crate::eval::{evaluate, EvalMeta, EvalReport};
use crate::features::{
    covariance_features, extract_smoothed_csi, FeatureKind, FeatureSet, PolySmoothConfig,
};
use crate::linalg::Matrix;
use crate::nnet::{
    ensemble_predict, ensemble_train, rnn_ensemble_predict, rnn_ensemble_train, LstmConfig,
    MlpConfig,
};
use crate::synthchan::{gain_ramp_db, gen_trajectory, synth_dataset, ArrayGeometry, ChannelConfig};
use crate::trees::{fit_forest, fit_gbt, predict_trees, BoostConfig, ForestConfig};
use crate::{Error, Result};

/// Synthetic data for the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n_records: usize,
    pub step_m: f64,
    pub snr_db: f64,
    /// Half span of the linear per-antenna gain ramp, dB; 0 disables it.
    pub gain_ramp_db: f64,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            n_records: 5000,
            step_m: 0.02,
            snr_db: 20.0,
            gain_ramp_db: 6.0,
            seed: 0,
        }
    }
}

impl Scenario {
    /// Default geometry and three reflectors.
    pub fn build(&self) -> Result<Dataset> {
        let cfg = ChannelConfig {
            snr_db: self.snr_db,
            antenna_gain_db: gain_ramp_db(self.gain_ramp_db),
            ..ChannelConfig::default()
        };
        let traj = gen_trajectory(self.n_records, self.step_m, self.seed)?;
        synth_dataset(&ArrayGeometry::default(), &cfg, &traj, self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dnn,
    Rnn,
    Rf,
    Xgb,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Dnn, Method::Rnn, Method::Rf, Method::Xgb];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dnn => "dnn",
            Method::Rnn => "rnn",
            Method::Rf => "rf",
            Method::Xgb => "xgb",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Argument(format!(
                    "unknown method {s:?}; expected dnn, rnn, rf or xgb"
                ))
            })
    }

    /// Only the recurrent model needs trajectory order in its training data.
    pub fn needs_order(self) -> bool {
        self == Method::Rnn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Size {
    Full,
    Small,
}

impl Size {
    pub fn name(self) -> &'static str {
        match self {
            Size::Full => "full",
            Size::Small => "small",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub feature: FeatureKind,
    pub method: Method,
    pub size: Size,
    pub include_snr: bool,
    pub seed: u64,
}

/// Settings shared by every cell of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSettings {
    pub smooth: PolySmoothConfig,
    pub mlp: MlpConfig,
    /// Networks in the DNN median ensemble.
    pub ensemble: usize,
    /// Networks in the RNN median ensemble.
    pub rnn_ensemble: usize,
    /// Windows of 2 records by default; longer windows overfit the small
    /// sets in the synthetic scenario.
    pub lstm: LstmConfig,
    pub forest: ForestConfig,
    pub boost: BoostConfig,
    pub augment: AugmentConfig,
    pub test_ratio: f64,
    pub val_ratio: f64,
    pub small_rate: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            smooth: PolySmoothConfig::default(),
            mlp: MlpConfig::default(),
            ensemble: 10,
            rnn_ensemble: 10,
            lstm: LstmConfig {
                window: 2,
                ..LstmConfig::default()
            },
            forest: ForestConfig::default(),
            boost: BoostConfig::default(),
            augment: AugmentConfig::default(),
            test_ratio: 0.10,
            val_ratio: 0.10,
            small_rate: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub spec: CellSpec,
    pub mae_cm: f64,
    pub per_axis_mae_cm: [f64; 2],
    /// Error of always answering the mean training position.
    pub baseline_mae_cm: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub wall_time_s: f64,
}

/// Test part is the trajectory tail for small cells and for the recurrent
/// model, so those cells share one ordered test set; other full-size
/// cells use a seeded shuffled split.
pub fn split_for(spec: &CellSpec, settings: &BenchSettings) -> SplitSpec {
    SplitSpec {
        test_ratio: settings.test_ratio,
        val_ratio: settings.val_ratio,
        shuffle: spec.size == Size::Full && !spec.method.needs_order(),
        seed: spec.seed,
    }
}

pub fn extract(
    ds: &Dataset,
    kind: FeatureKind,
    smooth: &PolySmoothConfig,
    include_snr: bool,
) -> Result<FeatureSet> {
    match kind {
        FeatureKind::SmoothedCsi => extract_smoothed_csi(ds, smooth, include_snr),
        FeatureKind::CovMatrix => covariance_features(ds, include_snr),
    }
}

/// Features of one cell's training, validation and test parts.
pub struct CellData {
    pub train: FeatureSet,
    pub val: FeatureSet,
    pub test: FeatureSet,
}

pub fn prepare_cell(ds: &Dataset, spec: &CellSpec, settings: &BenchSettings) -> Result<CellData> {
    let ds = match spec.size {
        Size::Full => ds.clone(),
        Size::Small => downsample(ds, settings.small_rate)?,
    };
    let parts = split(&ds, &split_for(spec, settings))?;
    let aug = AugmentConfig {
        seed: spec.seed,
        ..settings.augment
    };
    let train = augment(&parts.train, &aug)?;
    let fx = |d: &Dataset| extract(d, spec.feature, &settings.smooth, spec.include_snr);
    Ok(CellData {
        train: fx(&train)?,
        val: fx(&parts.val)?,
        test: fx(&parts.test)?,
    })
}

/// Trains the cell's method and predicts the test positions.
pub fn fit_predict(
    data: &CellData,
    spec: &CellSpec,
    settings: &BenchSettings,
) -> Result<Matrix<f64>> {
    let x = &data.test.features;
    match spec.method {
        Method::Dnn => {
            let cfg = MlpConfig {
                seed: spec.seed,
                ..settings.mlp.clone()
            };
            let (models, _) = ensemble_train(&data.train, &data.val, &cfg, settings.ensemble)?;
            ensemble_predict(&models, x)
        }
        Method::Rnn => {
            let cfg = LstmConfig {
                seed: spec.seed,
                ..settings.lstm.clone()
            };
            let (models, _) =
                rnn_ensemble_train(&data.train, &data.val, &cfg, settings.rnn_ensemble)?;
            rnn_ensemble_predict(&models, x)
        }
        Method::Rf => {
            let cfg = ForestConfig {
                seed: spec.seed,
                ..settings.forest.clone()
            };
            predict_trees(&fit_forest(&data.train, &cfg)?, x)
        }
        Method::Xgb => {
            let cfg = BoostConfig {
                seed: spec.seed,
                ..settings.boost.clone()
            };
            predict_trees(&fit_gbt(&data.train, &cfg)?, x)
        }
    }
}

/// Error of predicting the mean training position for every test record.
pub fn mean_position_baseline(train: &FeatureSet, test: &FeatureSet) -> Result<EvalReport> {
    let n = train.labels.rows() as f64;
    let mean = train.labels.sum_rows();
    let pred = Matrix::from_vec(
        test.len(),
        2,
        (0..test.len())
            .flat_map(|_| [mean[0] / n, mean[1] / n])
            .collect(),
    )?;
    evaluate(&pred, &test.labels)
}

pub fn run_cell(ds: &Dataset, spec: &CellSpec, settings: &BenchSettings) -> Result<CellResult> {
    let start = Instant::now();
    let data = prepare_cell(ds, spec, settings)?;
    let pred = fit_predict(&data, spec, settings)?;
    let report = evaluate(&pred, &data.test.labels)?.with_meta(EvalMeta {
        method: spec.method.name().into(),
        feature: spec.feature.name().into(),
        dataset: spec.size.name().into(),
    });
    let baseline = mean_position_baseline(&data.train, &data.test)?;
    Ok(CellResult {
        spec: *spec,
        mae_cm: report.mae_cm,
        per_axis_mae_cm: report.per_axis_mae_cm,
        baseline_mae_cm: baseline.mae_cm,
        n_train: data.train.len(),
        n_test: data.test.len(),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Every combination of the given features, methods and sizes.
pub fn grid(
    features: &[FeatureKind],
    methods: &[Method],
    sizes: &[Size],
    include_snr: bool,
    seed: u64,
) -> Vec<CellSpec> {
    let mut out = Vec::new();
    for &size in sizes {
        for &feature in features {
            for &method in methods {
                out.push(CellSpec {
                    feature,
                    method,
                    size,
                    include_snr,
                    seed,
                });
            }
        }
    }
    out
}

/// MAE formatted as printed in bench tables.
pub fn format_mae(v: f64) -> String {
    format!("{v:.2}")
}

/// One row per cell.
pub fn markdown_table(results: &[CellResult]) -> String {
    let mut out = String::from(
        "| data | feature | snr | method | MAE (cm) | x MAE (cm) | y MAE (cm) | baseline (cm) | train | test | time (s) |\n\
         |---|---|---|---|---:|---:|---:|---:|---:|---:|---:|\n",
    );
    for r in results {
        let s = &r.spec;
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {:.1} |",
            s.size.name(),
            s.feature.name(),
            if s.include_snr { "yes" } else { "no" },
            s.method.name(),
            format_mae(r.mae_cm),
            format_mae(r.per_axis_mae_cm[0]),
            format_mae(r.per_axis_mae_cm[1]),
            format_mae(r.baseline_mae_cm),
            r.n_train,
            r.n_test,
            r.wall_time_s,
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (Dataset, BenchSettings) {
        let ds = Scenario {
            n_records: 120,
            step_m: 0.05,
            ..Scenario::default()
        }
        .build()
        .unwrap();
        let settings = BenchSettings {
            mlp: MlpConfig {
                hidden: vec![16, 8],
                batch_size: 32,
                max_epochs: 5,
                ..MlpConfig::default()
            },
            ensemble: 2,
            rnn_ensemble: 2,
            lstm: LstmConfig {
                cells: 4,
                window: 3,
                batch_size: 32,
                max_epochs: 3,
                ..LstmConfig::default()
            },
            forest: ForestConfig {
                n_trees: 3,
                ..ForestConfig::default()
            },
            boost: BoostConfig {
                n_rounds: 3,
                max_depth: 3,
                ..BoostConfig::default()
            },
            small_rate: 2,
            ..BenchSettings::default()
        };
        (ds, settings)
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
        assert!(Method::parse("svm").is_err());
    }

    #[test]
    fn split_policy() {
        let s = BenchSettings::default();
        let mut spec = CellSpec {
            feature: FeatureKind::SmoothedCsi,
            method: Method::Dnn,
            size: Size::Full,
            include_snr: false,
            seed: 1,
        };
        assert!(split_for(&spec, &s).shuffle);
        spec.method = Method::Rnn;
        assert!(!split_for(&spec, &s).shuffle);
        spec.method = Method::Xgb;
        spec.size = Size::Small;
        assert!(!split_for(&spec, &s).shuffle);
    }

    #[test]
    fn every_cell_runs_and_repeats() {
        let (ds, settings) = tiny();
        let specs = grid(
            &[FeatureKind::SmoothedCsi, FeatureKind::CovMatrix],
            &Method::ALL,
            &[Size::Full, Size::Small],
            false,
            3,
        );
        assert_eq!(specs.len(), 16);
        let results: Vec<CellResult> = specs
            .iter()
            .map(|s| run_cell(&ds, s, &settings).unwrap())
            .collect();
        for r in &results {
            assert!(r.mae_cm.is_finite() && r.baseline_mae_cm > 0.0, "{r:?}");
        }
        let again = run_cell(&ds, &specs[0], &settings).unwrap();
        assert_eq!(again.mae_cm, results[0].mae_cm);
        let table = markdown_table(&results);
        assert_eq!(table.lines().count(), 2 + 16);
        assert!(table.contains("| small | cov-matrix | no | xgb |"));
    }

    #[test]
    fn baseline_is_mean_position() {
        let mk = |pos: &[[f64; 2]]| FeatureSet {
            features: Matrix::zeros(pos.len(), 1),
            labels: Matrix::from_vec(pos.len(), 2, pos.iter().flatten().copied().collect())
                .unwrap(),
            kind: FeatureKind::CovMatrix,
            snr_included: false,
            seq: (0..pos.len() as u64).collect(),
        };
        let r = mean_position_baseline(&mk(&[[0.0, 0.0], [2.0, 0.0]]), &mk(&[[1.0, 0.3]])).unwrap();
        assert!((r.mae_cm - 30.0).abs() < 1e-9);
    }
}
