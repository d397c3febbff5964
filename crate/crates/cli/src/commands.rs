use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use csiloc::bench::{self, BenchSettings, CellSpec, Method, Scenario, Size};
use csiloc::dataset::{
    augment, downsample, fix_subcarrier_shift, load_dataset, save_dataset, split, AugmentConfig,
    Dataset, DatasetFormat, SplitSpec,
};
use csiloc::eval::{self, EvalMeta};
use csiloc::features::{load_features, save_features, FeatureKind, FeatureSet, PolySmoothConfig};
use csiloc::nnet::{self, NetModel, TrainReport};
use csiloc::trees::{self, TreeModel};

use crate::config::Config;
use crate::CliError;

const PROVENANCE: &str = "provenance.json";

const DNN_KEYS: &[&str] = &[
    "dnn.hidden",
    "dnn.dropout",
    "dnn.bn_l2",
    "dnn.batch_size",
    "dnn.patience",
    "dnn.max_epochs",
    "dnn.lr",
    "dnn.ensemble",
];
const RNN_KEYS: &[&str] = &[
    "rnn.cells",
    "rnn.window",
    "rnn.batch_size",
    "rnn.patience",
    "rnn.max_epochs",
    "rnn.lr",
    "rnn.ensemble",
];
const RF_KEYS: &[&str] = &[
    "rf.trees",
    "rf.max_depth",
    "rf.min_samples_leaf",
    "rf.feature_subsample",
    "rf.bootstrap",
];
const XGB_KEYS: &[&str] = &[
    "xgb.rounds",
    "xgb.eta",
    "xgb.max_depth",
    "xgb.lambda",
    "xgb.gamma",
    "xgb.min_child_weight",
];

#[derive(Serialize)]
struct Provenance<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a BTreeMap<String, String>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::data(e.to_string()))?;
    fs::write(path, text + "\n")
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn write_provenance(path: &Path, command: &str, cfg: &Config) -> Result<(), CliError> {
    write_json(
        path,
        &Provenance {
            tool: "csiloc",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config: cfg.effective(),
        },
    )
}

fn make_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))
}

fn dataset_format(cfg: &mut Config, key: &str) -> Result<DatasetFormat, CliError> {
    match cfg.get::<String>(key, "binary".into())?.as_str() {
        "binary" => Ok(DatasetFormat::Binary),
        "csv" => Ok(DatasetFormat::CsvTriplet),
        other => Err(CliError::usage(format!(
            "`{key}` must be binary or csv, got {other:?}"
        ))),
    }
}

fn feature_kind(s: &str) -> Result<FeatureKind, CliError> {
    match s {
        "smoothed-csi" | "csi" => Ok(FeatureKind::SmoothedCsi),
        "cm" | "cov-matrix" => Ok(FeatureKind::CovMatrix),
        other => Err(CliError::usage(format!(
            "unknown feature {other:?}; expected smoothed-csi or cm"
        ))),
    }
}

fn method(s: &str) -> Result<Method, CliError> {
    Method::parse(s).map_err(|e| CliError::usage(e.to_string()))
}

fn usize_list(s: &str, key: &str) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim().parse().map_err(|_| {
                CliError::usage(format!(
                    "`{key}` expects comma-separated integers, got {s:?}"
                ))
            })
        })
        .collect()
}

/// Method settings from `dnn.*`, `rnn.*`, `rf.*` and `xgb.*` keys. Only the
/// methods listed are read.
fn method_settings(cfg: &mut Config, methods: &[Method]) -> Result<BenchSettings, CliError> {
    let mut s = BenchSettings::default();
    for m in methods {
        match m {
            Method::Dnn => {
                let d = &mut s.mlp;
                let hidden = d
                    .hidden
                    .iter()
                    .map(|w| w.to_string())
                    .collect::<Vec<_>>()
                    .join(",");
                d.hidden = usize_list(&cfg.get("dnn.hidden", hidden)?, "dnn.hidden")?;
                d.dropout = cfg.get("dnn.dropout", d.dropout)?;
                d.bn_l2 = cfg.get("dnn.bn_l2", d.bn_l2)?;
                d.batch_size = cfg.get("dnn.batch_size", d.batch_size)?;
                d.patience = cfg.get("dnn.patience", d.patience)?;
                d.max_epochs = cfg.get("dnn.max_epochs", d.max_epochs)?;
                d.lr = cfg.get("dnn.lr", d.lr)?;
                s.ensemble = cfg.get("dnn.ensemble", s.ensemble)?;
                d.validate()?;
                if s.ensemble == 0 {
                    return Err(CliError::usage("`dnn.ensemble` must be at least 1"));
                }
            }
            Method::Rnn => {
                let r = &mut s.lstm;
                r.cells = cfg.get("rnn.cells", r.cells)?;
                r.window = cfg.get("rnn.window", r.window)?;
                r.batch_size = cfg.get("rnn.batch_size", r.batch_size)?;
                r.patience = cfg.get("rnn.patience", r.patience)?;
                r.max_epochs = cfg.get("rnn.max_epochs", r.max_epochs)?;
                r.lr = cfg.get("rnn.lr", r.lr)?;
                s.rnn_ensemble = cfg.get("rnn.ensemble", s.rnn_ensemble)?;
                r.validate()?;
                if s.rnn_ensemble == 0 {
                    return Err(CliError::usage("`rnn.ensemble` must be at least 1"));
                }
            }
            Method::Rf => {
                let f = &mut s.forest;
                f.n_trees = cfg.get("rf.trees", f.n_trees)?;
                f.max_depth = cfg.get("rf.max_depth", f.max_depth)?;
                f.min_samples_leaf = cfg.get("rf.min_samples_leaf", f.min_samples_leaf)?;
                f.feature_subsample = cfg.get("rf.feature_subsample", f.feature_subsample)?;
                f.bootstrap = cfg.get("rf.bootstrap", f.bootstrap)?;
                f.validate()?;
            }
            Method::Xgb => {
                let b = &mut s.boost;
                b.n_rounds = cfg.get("xgb.rounds", b.n_rounds)?;
                b.eta = cfg.get("xgb.eta", b.eta)?;
                b.max_depth = cfg.get("xgb.max_depth", b.max_depth)?;
                b.lambda = cfg.get("xgb.lambda", b.lambda)?;
                b.gamma = cfg.get("xgb.gamma", b.gamma)?;
                b.min_child_weight = cfg.get("xgb.min_child_weight", b.min_child_weight)?;
                b.validate()?;
            }
        }
    }
    Ok(s)
}

fn method_keys(m: Method) -> &'static [&'static str] {
    match m {
        Method::Dnn => DNN_KEYS,
        Method::Rnn => RNN_KEYS,
        Method::Rf => RF_KEYS,
        Method::Xgb => XGB_KEYS,
    }
}

fn smooth_config(cfg: &mut Config) -> Result<PolySmoothConfig, CliError> {
    let d = PolySmoothConfig::default();
    Ok(PolySmoothConfig {
        degree: cfg.get("smooth.degree", d.degree)?,
        n_samples: cfg.get("smooth.samples", d.n_samples)?,
    })
}

fn augment_config(cfg: &mut Config, seed: u64) -> Result<AugmentConfig, CliError> {
    let d = AugmentConfig::default();
    Ok(AugmentConfig {
        rate: cfg.get("augment.rate", d.rate)?,
        csi_noise_rel: cfg.get("augment.csi_noise_rel", d.csi_noise_rel)?,
        pos_noise_m: cfg.get("augment.pos_noise_m", d.pos_noise_m)?,
        seed,
    })
}

fn scenario(cfg: &mut Config, prefix: &str, seed: u64) -> Result<Scenario, CliError> {
    let d = Scenario::default();
    let n = cfg.get(&format!("{prefix}n"), d.n_records)?;
    if n == 0 {
        return Err(CliError::usage(format!("`{prefix}n` must be at least 1")));
    }
    Ok(Scenario {
        n_records: n,
        step_m: cfg.get(&format!("{prefix}step_m"), d.step_m)?,
        snr_db: cfg.get(&format!("{prefix}snr_db"), d.snr_db)?,
        gain_ramp_db: cfg.get(&format!("{prefix}gain_ramp_db"), d.gain_ramp_db)?,
        seed,
    })
}

pub fn synth(mut cfg: Config) -> Result<(), CliError> {
    cfg.check_keys(&[
        "n",
        "step_m",
        "snr_db",
        "gain_ramp_db",
        "seed",
        "out",
        "format",
    ])?;
    if !cfg.contains("n") {
        return Err(CliError::usage("missing required key `n`"));
    }
    let seed = cfg.get("seed", 0u64)?;
    let sc = scenario(&mut cfg, "", seed)?;
    let out = cfg.path("out")?;
    let format = dataset_format(&mut cfg, "format")?;
    let ds = sc.build()?;
    save_dataset(&ds, &out, format)?;
    let snr: Vec<f64> = ds
        .records()
        .iter()
        .flat_map(|r| r.snr.iter().map(|&s| s as f64))
        .collect();
    let mean = snr.iter().sum::<f64>() / snr.len() as f64;
    let (lo, hi) = snr
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| {
            (a.min(s), b.max(s))
        });
    println!("wrote {} records to {}", ds.len(), out.display());
    println!("realized SNR (dB): mean {mean:.2}, min {lo:.2}, max {hi:.2}");
    let mut prov = out.clone().into_os_string();
    prov.push(".provenance.json");
    write_provenance(Path::new(&prov), "synth", &cfg)
}

pub fn prep(mut cfg: Config) -> Result<(), CliError> {
    cfg.check_keys(&[
        "data",
        "data_format",
        "feature",
        "smooth.",
        "snr",
        "fix_shift",
        "downsample",
        "augment.",
        "split.",
        "seed",
        "out",
    ])?;
    let kind = feature_kind(&cfg.require::<String>("feature")?)?;
    if kind == FeatureKind::CovMatrix
        && (cfg.contains("smooth.degree") || cfg.contains("smooth.samples"))
    {
        return Err(CliError::usage(
            "smoothing settings do not apply to cm features",
        ));
    }
    let data = cfg.path("data")?;
    let format = dataset_format(&mut cfg, "data_format")?;
    let out = cfg.path("out")?;
    let seed = cfg.get("seed", 0u64)?;
    let smooth = match kind {
        FeatureKind::SmoothedCsi => Some(smooth_config(&mut cfg)?),
        FeatureKind::CovMatrix => None,
    };
    let include_snr = cfg.get("snr", false)?;
    let fix_shift = cfg.get("fix_shift", false)?;
    let rate = cfg.get("downsample", 1usize)?;
    let aug = augment_config(&mut cfg, seed)?;
    let d = SplitSpec::default();
    let spec = SplitSpec {
        test_ratio: cfg.get("split.test_ratio", d.test_ratio)?,
        val_ratio: cfg.get("split.val_ratio", d.val_ratio)?,
        shuffle: cfg.get("split.shuffle", d.shuffle)?,
        seed,
    };

    let mut ds: Dataset = load_dataset(&data, format)?;
    if fix_shift {
        ds = fix_subcarrier_shift(&ds)?;
    }
    let ds = downsample(&ds, rate)?;
    let parts = split(&ds, &spec)?;
    let train = augment(&parts.train, &aug)?;
    let fx = |d: &Dataset| -> Result<FeatureSet, CliError> {
        Ok(bench::extract(
            d,
            kind,
            &smooth.unwrap_or_default(),
            include_snr,
        )?)
    };
    make_dir(&out)?;
    let sets = [
        ("train", fx(&train)?),
        ("val", fx(&parts.val)?),
        ("test", fx(&parts.test)?),
    ];
    for (name, fs) in &sets {
        save_features(fs, &out.join(format!("{name}.csif")))?;
    }
    println!(
        "{} features, F = {}: train {}, val {}, test {} records in {}",
        kind.name(),
        sets[0].1.width(),
        sets[0].1.len(),
        sets[1].1.len(),
        sets[2].1.len(),
        out.display()
    );
    write_provenance(&out.join(PROVENANCE), "prep", &cfg)
}

/// `split.shuffle` recorded by `prep` in a feature directory, if known.
fn prep_shuffled(dir: &Path) -> Option<bool> {
    let text = fs::read_to_string(dir.join(PROVENANCE)).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    v["config"]["split.shuffle"].as_str()?.parse().ok()
}

#[derive(Serialize)]
struct TreeReport {
    method: &'static str,
    n_features: usize,
    wall_time_s: f64,
}

pub fn train(mut cfg: Config) -> Result<(), CliError> {
    let m = method(&cfg.require::<String>("method")?)?;
    let mut allowed = vec!["features", "method", "seed", "out"];
    allowed.extend_from_slice(method_keys(m));
    if let Err(e) = cfg.check_keys(&allowed) {
        return Err(CliError::usage(format!(
            "{} (method is {})",
            e.message,
            m.name()
        )));
    }
    let dir = cfg.path("features")?;
    let out = cfg.path("out")?;
    let seed = cfg.get("seed", 0u64)?;
    if m.needs_order() && prep_shuffled(&dir) == Some(true) {
        return Err(CliError::usage(
            "rnn trains on trajectory windows and needs an ordered split; rerun prep with split.shuffle = false",
        ));
    }
    let s = method_settings(&mut cfg, &[m])?;
    let train = load_features(&dir.join("train.csif"))?;
    let val_path = dir.join("val.csif");
    let val = if val_path.exists() {
        load_features(&val_path)?
    } else {
        train.slice(0, 0)
    };
    make_dir(&out)?;
    let start = std::time::Instant::now();
    match m {
        Method::Dnn | Method::Rnn => {
            let (model, reports): (NetModel, Vec<TrainReport>) = if m == Method::Rnn {
                let c = nnet::LstmConfig { seed, ..s.lstm };
                let (mut models, r) = nnet::rnn_ensemble_train(&train, &val, &c, s.rnn_ensemble)?;
                let model = if models.len() == 1 {
                    NetModel::Lstm(models.remove(0))
                } else {
                    NetModel::LstmEnsemble(models)
                };
                (model, r)
            } else {
                let c = nnet::MlpConfig { seed, ..s.mlp };
                let (mut models, r) = nnet::ensemble_train(&train, &val, &c, s.ensemble)?;
                let model = if models.len() == 1 {
                    NetModel::Mlp(models.remove(0))
                } else {
                    NetModel::Ensemble(models)
                };
                (model, r)
            };
            nnet::save_model(&model, &out.join("model.csim"))?;
            write_json(&out.join("report.json"), &reports)?;
            for (k, r) in reports.iter().enumerate() {
                println!(
                    "model {k}: stopped at epoch {}, best epoch {}, val loss {:.5}, {:.1} s",
                    r.stopped_epoch,
                    r.best_epoch,
                    r.val_loss
                        .get(r.best_epoch.saturating_sub(1))
                        .copied()
                        .unwrap_or(f64::NAN),
                    r.wall_time_s
                );
            }
        }
        Method::Rf | Method::Xgb => {
            let model: TreeModel = if m == Method::Rf {
                trees::fit_forest(&train, &trees::ForestConfig { seed, ..s.forest })?
            } else {
                trees::fit_gbt(&train, &trees::BoostConfig { seed, ..s.boost })?
            };
            trees::save_trees(&model, &out.join("model.csit"))?;
            write_json(
                &out.join("importance.json"),
                &trees::feature_importance(&model),
            )?;
            write_json(
                &out.join("report.json"),
                &TreeReport {
                    method: m.name(),
                    n_features: model.input_width(),
                    wall_time_s: start.elapsed().as_secs_f64(),
                },
            )?;
            println!(
                "{} trained in {:.1} s",
                m.name(),
                start.elapsed().as_secs_f64()
            );
        }
    }
    write_provenance(&out.join(PROVENANCE), "train", &cfg)
}

enum AnyModel {
    Net(NetModel),
    Trees(TreeModel),
}

impl AnyModel {
    fn load(path: &Path) -> Result<AnyModel, CliError> {
        let head = fs::read(path)
            .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
        match head.get(..4) {
            Some(b"CSIM") => Ok(AnyModel::Net(nnet::load_model(path)?)),
            Some(b"CSIT") => Ok(AnyModel::Trees(trees::load_trees(path)?)),
            _ => Err(CliError::data(format!(
                "{} is not a csiloc model file",
                path.display()
            ))),
        }
    }

    fn input_width(&self) -> usize {
        match self {
            AnyModel::Net(m) => m.input_width(),
            AnyModel::Trees(m) => m.input_width(),
        }
    }

    fn method(&self) -> &'static str {
        match self {
            AnyModel::Net(NetModel::Lstm(_) | NetModel::LstmEnsemble(_)) => "rnn",
            AnyModel::Net(_) => "dnn",
            AnyModel::Trees(TreeModel::Forest { .. }) => "rf",
            AnyModel::Trees(TreeModel::Boost { .. }) => "xgb",
        }
    }

    fn predict(
        &self,
        x: &csiloc::linalg::Matrix<f64>,
    ) -> Result<csiloc::linalg::Matrix<f64>, CliError> {
        Ok(match self {
            AnyModel::Net(m) => m.predict(x)?,
            AnyModel::Trees(m) => trees::predict_trees(m, x)?,
        })
    }
}

#[derive(Serialize)]
struct EvalSummary {
    #[serde(flatten)]
    summary: eval::Summary,
    #[serde(skip_serializing_if = "Option::is_none")]
    snr_split: Option<SnrSummary>,
}

#[derive(Serialize)]
struct SnrSummary {
    antenna: usize,
    threshold_db: f64,
    mae_high_cm: Option<f64>,
    mae_low_cm: Option<f64>,
}

pub fn eval(mut cfg: Config) -> Result<(), CliError> {
    cfg.check_keys(&[
        "model",
        "features",
        "out",
        "seed",
        "snr_threshold_db",
        "snr_antenna",
    ])?;
    let model_path = cfg.path("model")?;
    let feat_path = cfg.path("features")?;
    let out = cfg.path("out")?;
    let model = AnyModel::load(&model_path)?;
    let fs = load_features(&feat_path)?;
    if model.input_width() != fs.width() {
        return Err(CliError::data(format!(
            "model {} expects {} features but {} has {}",
            model_path.display(),
            model.input_width(),
            feat_path.display(),
            fs.width()
        )));
    }
    let pred = model.predict(&fs.features)?;
    let report = eval::evaluate(&pred, &fs.labels)?.with_meta(EvalMeta {
        method: model.method().into(),
        feature: fs.kind.name().into(),
        dataset: feat_path.display().to_string(),
    });
    let snr_split = if fs.snr_included {
        let antenna = cfg.get("snr_antenna", 0usize)?;
        let threshold_db = cfg.get("snr_threshold_db", 20.0f64)?;
        let n_ant = csiloc::dataset::N_ANTENNAS;
        if antenna >= n_ant {
            return Err(CliError::usage(format!(
                "`snr_antenna` must be below {n_ant}"
            )));
        }
        // SNR columns are the last N_ANTENNAS of the feature row
        let col = fs.width() - n_ant + antenna;
        let snr: Vec<f64> = (0..fs.len()).map(|i| fs.features.get(i, col)).collect();
        let s = eval::snr_split(&report, &snr, threshold_db)?;
        Some(SnrSummary {
            antenna,
            threshold_db,
            mae_high_cm: s.mae_high_cm,
            mae_low_cm: s.mae_low_cm,
        })
    } else {
        None
    };
    make_dir(&out)?;
    eval::export_cdf(&report, &out.join("cdf.csv"))?;
    eval::export_scatter(&fs.labels, &pred, 0, &out.join("scatter_x.csv"))?;
    eval::export_scatter(&fs.labels, &pred, 1, &out.join("scatter_y.csv"))?;
    eval::export_quiver(&fs.labels, &pred, &out.join("quiver.csv"))?;
    write_json(
        &out.join("summary.json"),
        &EvalSummary {
            summary: report.summary(),
            snr_split,
        },
    )?;
    println!(
        "MAE {} cm (x {} cm, y {} cm) over {} records",
        bench::format_mae(report.mae_cm),
        bench::format_mae(report.per_axis_mae_cm[0]),
        bench::format_mae(report.per_axis_mae_cm[1]),
        fs.len()
    );
    write_provenance(&out.join(PROVENANCE), "eval", &cfg)
}

pub fn bench(mut cfg: Config) -> Result<(), CliError> {
    let mut allowed = vec![
        "data",
        "data_format",
        "synth.",
        "features",
        "methods",
        "sizes",
        "snr",
        "seed",
        "out",
        "smooth.",
        "augment.",
        "split.test_ratio",
        "split.val_ratio",
        "small_rate",
    ];
    for m in Method::ALL {
        allowed.extend_from_slice(method_keys(m));
    }
    cfg.check_keys(&allowed)?;
    let seed = cfg.get("seed", 0u64)?;
    let out: Option<PathBuf> = cfg.opt_path("out");
    let kinds = cfg
        .list("features", "smoothed-csi,cm")
        .iter()
        .map(|s| feature_kind(s))
        .collect::<Result<Vec<_>, _>>()?;
    let methods = cfg
        .list("methods", "dnn,rnn,rf,xgb")
        .iter()
        .map(|s| method(s))
        .collect::<Result<Vec<_>, _>>()?;
    let sizes = cfg
        .list("sizes", "full,small")
        .iter()
        .map(|s| match s.as_str() {
            "full" => Ok(Size::Full),
            "small" => Ok(Size::Small),
            other => Err(CliError::usage(format!(
                "unknown size {other:?}; expected full or small"
            ))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let include_snr = cfg.get("snr", false)?;
    let mut settings = method_settings(&mut cfg, &methods)?;
    settings.smooth = smooth_config(&mut cfg)?;
    settings.augment = augment_config(&mut cfg, seed)?;
    settings.test_ratio = cfg.get("split.test_ratio", settings.test_ratio)?;
    settings.val_ratio = cfg.get("split.val_ratio", settings.val_ratio)?;
    settings.small_rate = cfg.get("small_rate", settings.small_rate)?;
    let ds = match cfg.opt_path("data") {
        Some(p) => {
            let format = dataset_format(&mut cfg, "data_format")?;
            load_dataset(&p, format)?
        }
        None => scenario(&mut cfg, "synth.", seed)?.build()?,
    };
    let specs: Vec<CellSpec> = bench::grid(&kinds, &methods, &sizes, include_snr, seed);
    let mut results = Vec::with_capacity(specs.len());
    for spec in &specs {
        let r = bench::run_cell(&ds, spec, &settings)?;
        eprintln!(
            "{} {} {}: MAE {} cm ({:.1} s)",
            spec.size.name(),
            spec.feature.name(),
            spec.method.name(),
            bench::format_mae(r.mae_cm),
            r.wall_time_s
        );
        results.push(r);
    }
    let table = bench::markdown_table(&results);
    print!("{table}");
    if let Some(dir) = out {
        make_dir(&dir)?;
        fs::write(dir.join("results.md"), &table).map_err(|e| CliError::data(e.to_string()))?;
        write_json(&dir.join("results.json"), &results)?;
        write_provenance(&dir.join(PROVENANCE), "bench", &cfg)?;
    }
    Ok(())
}
