use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use csiloc::features::peek_feature_dims;
use csiloc::trees::{load_trees, TreeModel};

fn csiloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csiloc"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = csiloc(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails_with(args: &[&str], code: i32) -> String {
    let out = csiloc(args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, n: usize) -> PathBuf {
    let data = dir.join("d.csid");
    ok(&[
        "synth",
        "--n",
        &n.to_string(),
        "--snr-db",
        "20",
        "--seed",
        "5",
        "--out",
        s(&data),
    ]);
    data
}

fn prep(data: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["prep", "--data", s(data), "--out", s(out)];
    args.extend_from_slice(extra);
    ok(&args);
}

const SMALL_DNN: &[&str] = &[
    "--set",
    "dnn.hidden=16,8",
    "--set",
    "dnn.max_epochs=3",
    "--set",
    "dnn.ensemble=1",
    "--set",
    "dnn.batch_size=32",
];

#[test]
fn synth_is_deterministic_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), 30);
    let first = std::fs::read(&a).unwrap();
    let out = ok(&[
        "synth",
        "--n",
        "30",
        "--snr-db",
        "20",
        "--seed",
        "5",
        "--out",
        s(&a),
    ]);
    assert!(out.contains("30 records"));
    assert!(out.contains("realized SNR"));
    assert_eq!(std::fs::read(&a).unwrap(), first);
    assert!(dir.path().join("d.csid.provenance.json").exists());

    fails_with(&["synth", "--n", "0", "--out", s(&a)], 2);
    let err = fails_with(
        &["synth", "--n", "3", "--out", s(&a), "--set", "bogus.key=1"],
        2,
    );
    assert!(err.contains("bogus.key"));
    fails_with(&["synth", "--out", s(&a)], 2);
}

#[test]
fn prep_widths_and_repeatability() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 40);
    let csi = dir.path().join("csi");
    prep(
        &data,
        &csi,
        &["--feature", "smoothed-csi", "--set", "snr=true"],
    );
    assert_eq!(
        peek_feature_dims(&csi.join("test.csif")).unwrap().1,
        16 * 66 + 16
    );
    let (n_train, _) = peek_feature_dims(&csi.join("train.csif")).unwrap();
    assert_eq!(
        n_train,
        2 * 32,
        "augmentation doubles the 32 training records"
    );

    let cm = dir.path().join("cm");
    prep(&data, &cm, &["--feature", "cm"]);
    assert_eq!(peek_feature_dims(&cm.join("val.csif")).unwrap().1, 136);
    let before = std::fs::read(cm.join("train.csif")).unwrap();
    // rerun from the recorded provenance
    ok(&["prep", "--config", s(&cm.join("provenance.json"))]);
    assert_eq!(std::fs::read(cm.join("train.csif")).unwrap(), before);

    let err = fails_with(
        &[
            "prep",
            "--data",
            s(&data),
            "--out",
            s(&cm),
            "--feature",
            "cm",
            "--set",
            "smooth.degree=4",
        ],
        2,
    );
    assert!(err.contains("cm"));
    fails_with(
        &[
            "prep",
            "--data",
            s(&data),
            "--out",
            s(&cm),
            "--feature",
            "wavelet",
        ],
        2,
    );
}

#[test]
fn train_and_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 60);
    let feats = dir.path().join("f");
    prep(&data, &feats, &["--feature", "cm"]);

    let dnn = dir.path().join("dnn");
    let mut args = vec![
        "train",
        "--features",
        s(&feats),
        "--method",
        "dnn",
        "--out",
        s(&dnn),
    ];
    args.extend_from_slice(SMALL_DNN);
    ok(&args);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dnn.join("report.json")).unwrap()).unwrap();
    assert!(report[0]["stopped_epoch"].as_u64().unwrap() <= 3);

    let ev = dir.path().join("ev");
    let model = dnn.join("model.csim");
    ok(&[
        "eval",
        "--model",
        s(&model),
        "--features",
        s(&feats.join("train.csif")),
        "--out",
        s(&ev),
    ]);
    for f in [
        "summary.json",
        "cdf.csv",
        "scatter_x.csv",
        "scatter_y.csv",
        "quiver.csv",
        "provenance.json",
    ] {
        assert!(ev.join(f).exists(), "{f} missing");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ev.join("summary.json")).unwrap()).unwrap();
    let mae = summary["mae_cm"].as_f64().unwrap();
    assert!(mae.is_finite());
    let quiver = std::fs::read_to_string(ev.join("quiver.csv")).unwrap();
    let errs: Vec<f64> = quiver
        .lines()
        .skip(1)
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|t| t.parse().unwrap()).collect();
            v[2].hypot(v[3])
        })
        .collect();
    let recomputed = 100.0 * errs.iter().sum::<f64>() / errs.len() as f64;
    assert!((recomputed - mae).abs() < 1e-6);
    assert_eq!(summary["n"].as_u64().unwrap() as usize, errs.len());

    // smoothed-CSI features do not fit a CM model
    let wide = dir.path().join("wide");
    prep(&data, &wide, &["--feature", "smoothed-csi"]);
    let err = fails_with(
        &[
            "eval",
            "--model",
            s(&model),
            "--features",
            s(&wide.join("test.csif")),
            "--out",
            s(&ev),
        ],
        3,
    );
    assert!(err.contains("136") && err.contains("1056"), "{err}");
}

#[test]
fn tree_models_hold_two_axes() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 40);
    let feats = dir.path().join("f");
    prep(&data, &feats, &["--feature", "cm"]);
    let out = dir.path().join("xgb");
    ok(&[
        "train",
        "--features",
        s(&feats),
        "--method",
        "xgb",
        "--out",
        s(&out),
        "--set",
        "xgb.rounds=5",
        "--set",
        "xgb.max_depth=3",
    ]);
    match load_trees(&out.join("model.csit")).unwrap() {
        TreeModel::Boost { axes, .. } => assert_eq!(axes.len(), 2),
        other => panic!("expected boosted trees, got {other:?}"),
    }
    assert!(out.join("importance.json").exists());
    let ev = dir.path().join("ev");
    ok(&[
        "eval",
        "--model",
        s(&out.join("model.csit")),
        "--features",
        s(&feats.join("test.csif")),
        "--out",
        s(&ev),
    ]);
}

#[test]
fn method_validation() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 40);
    let shuffled = dir.path().join("shuffled");
    prep(&data, &shuffled, &["--feature", "cm"]);
    let out = dir.path().join("m");
    fails_with(
        &[
            "train",
            "--features",
            s(&shuffled),
            "--method",
            "svm",
            "--out",
            s(&out),
        ],
        2,
    );
    let err = fails_with(
        &[
            "train",
            "--features",
            s(&shuffled),
            "--method",
            "rnn",
            "--out",
            s(&out),
        ],
        2,
    );
    assert!(err.contains("split.shuffle"), "{err}");
    // keys of another method are refused
    let err = fails_with(
        &[
            "train",
            "--features",
            s(&shuffled),
            "--method",
            "rf",
            "--out",
            s(&out),
            "--set",
            "dnn.lr=0.1",
        ],
        2,
    );
    assert!(err.contains("dnn.lr"));

    let ordered = dir.path().join("ordered");
    prep(
        &data,
        &ordered,
        &["--feature", "cm", "--set", "split.shuffle=false"],
    );
    ok(&[
        "train",
        "--features",
        s(&ordered),
        "--method",
        "rnn",
        "--out",
        s(&out),
        "--set",
        "rnn.cells=4",
        "--set",
        "rnn.window=2",
        "--set",
        "rnn.max_epochs=2",
    ]);
    assert!(out.join("model.csim").exists());
}

#[test]
fn training_divergence_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 40);
    let feats = dir.path().join("f");
    prep(&data, &feats, &["--feature", "cm"]);
    let out = dir.path().join("dnn");
    let mut args = vec![
        "train",
        "--features",
        s(&feats),
        "--method",
        "dnn",
        "--out",
        s(&out),
    ];
    args.extend_from_slice(SMALL_DNN);
    args.extend_from_slice(&["--set", "dnn.lr=1e30"]);
    fails_with(&args, 4);
}

#[test]
fn bench_cells_repeat_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bench.conf");
    std::fs::write(
        &conf,
        "# tiny grid\nsynth.n = 80\nfeatures = cm\nmethods = dnn,rf\nsizes = full\n\
         dnn.hidden = 16,8\ndnn.max_epochs = 3\ndnn.ensemble = 2\ndnn.batch_size = 32\nrf.trees = 3\n",
    )
    .unwrap();
    let out = dir.path().join("b");
    let first = ok(&[
        "bench",
        "--config",
        s(&conf),
        "--seed",
        "2",
        "--out",
        s(&out),
    ]);
    assert!(first.contains("| full | cov-matrix | no | dnn |"));
    assert!(first.contains("| full | cov-matrix | no | rf |"));
    assert!(out.join("results.md").exists() && out.join("results.json").exists());
    let again = ok(&["bench", "--config", s(&conf), "--seed", "2"]);
    let mae = |t: &str| -> Vec<String> {
        t.lines()
            .skip(2)
            .map(|l| l.split('|').nth(5).unwrap().trim().to_string())
            .collect()
    };
    assert_eq!(mae(&first), mae(&again));
}
