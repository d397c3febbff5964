mod common;

use common::*;
use csiloc::features::{FeatureKind, FeatureSet};
use csiloc::linalg::Matrix;
use csiloc::nnet::*;
use csiloc::{rng, Error};
use rand::Rng;

#[test]
fn mlp_gradients_frozen_batch_norm() {
    let e = mlp_grad_error(BnMode::Frozen, 0.0, None);
    assert!(e < FD_REL_TOL, "max rel err {e}");
}

#[test]
fn mlp_gradients_batch_statistics() {
    let e = mlp_grad_error(BnMode::Batch, 0.0, None);
    assert!(e < FD_REL_TOL, "max rel err {e}");
}

#[test]
fn mlp_gradients_with_fixed_dropout_mask() {
    let e = mlp_grad_error(BnMode::Batch, 0.3, Some(5));
    assert!(e < FD_REL_TOL, "max rel err {e}");
}

#[test]
fn lstm_gradients_match_finite_differences() {
    let e = lstm_grad_error(8, 4);
    assert!(e < FD_REL_TOL, "max rel err {e}");
    let e = lstm_grad_error(3, 1);
    assert!(e < FD_REL_TOL, "window 1: max rel err {e}");
}

#[test]
fn single_layer_gradient_closed_form() {
    let mut net = Mlp::<f64>::zeros(&[3, 2], 0.0, 0.0);
    {
        let (w, b) = net.layer_params_mut(0);
        w.copy_from_slice(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        b.copy_from_slice(&[0.1, -0.2]);
    }
    let x = Matrix::from_rows(&[vec![0.5, -1.0, 2.0]]).unwrap();
    let y = Matrix::from_rows(&[vec![0.3, 0.4]]).unwrap();
    let g = net.loss_grad(&x, &y, BnMode::Frozen, None);
    let yhat = [0.5 + 0.1, -1.0 - 0.2];
    // loss averages over both coordinates: dL/dW[j][c] = 2(ŷ_c − y_c)·x_j / 2
    for j in 0..3 {
        for c in 0..2 {
            let want = 2.0 * (yhat[c] - y.get(0, c)) * x.get(0, j) / 2.0;
            assert!((g.grad[j * 2 + c] - want).abs() < 1e-12);
        }
    }
    for c in 0..2 {
        assert!((g.grad[6 + c] - (yhat[c] - y.get(0, c))).abs() < 1e-12);
    }
}

#[test]
fn perfect_predictions_have_zero_loss_and_gradient() {
    let net = Mlp::<f64>::zeros(&[3, 4, 2], 0.0, 0.0);
    let x = random_matrix(5, 3, 7);
    let y = Matrix::zeros(5, 2);
    for bn in [BnMode::Batch, BnMode::Frozen] {
        let g = net.loss_grad(&x, &y, bn, None);
        assert_eq!(g.loss, 0.0);
        assert!(g.grad.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn inference_is_deterministic() {
    let mut r = rng::stream(1, 0, 0);
    let net = Mlp::<f32>::new(&[4, 8, 2], 0.5, 0.0, &mut r);
    let x = random_matrix(6, 4, 8).map(|v| v as f32);
    assert_eq!(net.predict(&x), net.predict(&x));
}

fn feature_set(features: Matrix<f64>, labels: Matrix<f64>) -> FeatureSet {
    let n = features.rows();
    FeatureSet {
        features,
        labels,
        kind: FeatureKind::SmoothedCsi,
        snr_included: false,
        seq: (0..n as u64).collect(),
    }
}

/// Labels are a smooth function of 6 random features.
fn toy_regression(n: usize, seed: u64) -> FeatureSet {
    let x = random_matrix(n, 6, seed);
    let mut y = Matrix::zeros(n, 2);
    for i in 0..n {
        let r = x.row(i);
        y.set(i, 0, 2.0 + r[0] + 0.5 * r[1] * r[2]);
        y.set(i, 1, 1.0 + (r[3] - r[4]).sin());
    }
    feature_set(x, y)
}

fn small_cfg(seed: u64) -> MlpConfig {
    MlpConfig {
        hidden: vec![32, 16],
        batch_size: 64,
        max_epochs: 60,
        lr: 3e-3,
        seed,
        ..MlpConfig::default()
    }
}

#[test]
fn zero_output_layer_predicts_label_mean() {
    let train = toy_regression(50, 1);
    let (mut model, _) = train_mlp(
        &train,
        &train.slice(0, 0),
        &MlpConfig {
            max_epochs: 1,
            ..small_cfg(1)
        },
    )
    .unwrap();
    let last = model.net.dims().len() - 2;
    let (w, b) = model.net.layer_params_mut(last);
    w.fill(0.0);
    b.fill(0.0);
    let pred = model.predict(&train.features).unwrap();
    let mean = model.label_norm.mean.clone();
    for r in pred.iter_rows() {
        assert!((r[0] - mean[0]).abs() < 1e-9 && (r[1] - mean[1]).abs() < 1e-9);
    }
    let expected = train.labels.sum_rows()[0] / 50.0;
    assert!((mean[0] - expected).abs() < 1e-12);
}

#[test]
fn memorizes_a_repeated_sample() {
    let x = Matrix::from_vec(32, 3, [0.2, -0.4, 1.0].repeat(32)).unwrap();
    let y = Matrix::from_vec(32, 2, [1.5, 0.7].repeat(32)).unwrap();
    let fs = feature_set(x, y);
    let cfg = MlpConfig {
        max_epochs: 50,
        bn_l2: 0.0,
        dropout: 0.0,
        ..small_cfg(2)
    };
    let (model, report) = train_mlp(&fs, &fs, &cfg).unwrap();
    assert!(report.train_loss.iter().any(|&l| l < 1e-6));
    let p = model.predict(&fs.features).unwrap();
    assert!((p.get(0, 0) - 1.5).abs() < 1e-4);
}

#[test]
fn training_learns_and_is_deterministic() {
    let train = toy_regression(600, 3);
    let val = toy_regression(150, 4);
    let (m1, r1) = train_mlp(&train, &val, &small_cfg(7)).unwrap();
    let (m2, r2) = train_mlp(&train, &val, &small_cfg(7)).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(r1.val_loss, r2.val_loss);
    assert!(r1.stopped_epoch <= 60);
    // returned snapshot is the best validation epoch
    let best = r1.val_loss[r1.best_epoch - 1];
    assert!(r1.val_loss.iter().all(|&v| v >= best));
    // normalized val loss well below the constant predictor's 1.0
    assert!(best < 0.3, "best val loss {best}");

    // mean feature vector maps inside the label bounding box
    let mean: Vec<f64> = train
        .features
        .sum_rows()
        .iter()
        .map(|s| s / 600.0)
        .collect();
    let p = m1.predict(&Matrix::from_rows(&[mean]).unwrap()).unwrap();
    for c in 0..2 {
        let col: Vec<f64> = train.labels.iter_rows().map(|r| r[c]).collect();
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(p.get(0, c) >= lo && p.get(0, c) <= hi);
    }
}

#[test]
fn divergence_is_reported() {
    let train = toy_regression(100, 5);
    let err = train_mlp(
        &train,
        &train,
        &MlpConfig {
            lr: 1e30,
            ..small_cfg(1)
        },
    )
    .unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }), "{err:?}");
}

#[test]
fn width_mismatch_is_rejected() {
    let a = toy_regression(20, 1);
    let b = feature_set(random_matrix(5, 3, 1), Matrix::zeros(5, 2));
    assert!(matches!(
        train_mlp(&a, &b, &small_cfg(1)),
        Err(Error::Shape { .. })
    ));
    let (m, _) = train_mlp(
        &a,
        &a,
        &MlpConfig {
            max_epochs: 1,
            ..small_cfg(1)
        },
    )
    .unwrap();
    assert!(m.predict(&b.features).is_err());
}

#[test]
fn ensemble_members_and_median() {
    let train = toy_regression(120, 6);
    let cfg = MlpConfig {
        max_epochs: 5,
        ..small_cfg(4)
    };
    let (single, _) = ensemble_train(&train, &train, &cfg, 1).unwrap();
    let (direct, _) = train_mlp(&train, &train, &cfg).unwrap();
    assert_eq!(single, vec![direct.clone()]);

    let (models, reports) = ensemble_train(&train, &train, &cfg, 3).unwrap();
    assert_eq!(reports.len(), 3);
    for i in 0..3 {
        assert_eq!(models[i].input_width(), 6);
        for j in i + 1..3 {
            assert_ne!(models[i].net.params(), models[j].net.params());
        }
    }
    let p = ensemble_predict(&models, &train.features).unwrap();
    let rev: Vec<MlpModel> = models.iter().rev().cloned().collect();
    assert_eq!(ensemble_predict(&rev, &train.features).unwrap(), p);
    let same = vec![direct.clone(), direct.clone(), direct.clone()];
    assert_eq!(
        ensemble_predict(&same, &train.features).unwrap(),
        direct.predict(&train.features).unwrap()
    );
    assert!(ensemble_train(&train, &train, &cfg, 0).is_err());
}

fn trajectory_set(n: usize, seed: u64) -> FeatureSet {
    let mut r = rng::stream(seed, 0, 0);
    let mut x = Matrix::zeros(n, 4);
    let mut y = Matrix::zeros(n, 2);
    for i in 0..n {
        let t = i as f64 / n as f64;
        let pos = [4.0 * t, 1.0 + (6.0 * t).sin()];
        y.row_mut(i).copy_from_slice(&pos);
        for j in 0..4 {
            x.set(
                i,
                j,
                pos[j % 2] * (j + 1) as f64 + 0.05 * r.random_range(-1.0..1.0),
            );
        }
    }
    feature_set(x, y)
}

fn rnn_cfg(seed: u64) -> LstmConfig {
    LstmConfig {
        cells: 16,
        window: 4,
        batch_size: 32,
        max_epochs: 30,
        lr: 5e-3,
        seed,
        ..LstmConfig::default()
    }
}

#[test]
fn rnn_trains_and_refuses_shuffled_input() {
    let fs = trajectory_set(200, 1);
    let train = fs.slice(0, 160);
    let val = fs.slice(160, 200);
    let (model, report) = train_rnn(&train, &val, &rnn_cfg(1)).unwrap();
    assert!(report.val_loss[report.best_epoch - 1] < report.val_loss[0]);
    let (again, _) = train_rnn(&train, &val, &rnn_cfg(1)).unwrap();
    assert_eq!(model, again);
    assert_eq!(model.predict(&val.features).unwrap().rows(), 40);

    let mut shuffled = train.clone();
    shuffled.seq.swap(3, 9);
    assert!(matches!(
        train_rnn(&shuffled, &val, &rnn_cfg(1)),
        Err(Error::Order(_))
    ));
}

#[test]
fn window_count_and_minimum_length() {
    assert_eq!(sliding_window_count(16, 16), 1);
    assert_eq!(sliding_window_count(100, 16), 85);
    let fs = trajectory_set(4, 2);
    let (_, report) = train_rnn(
        &fs,
        &fs,
        &LstmConfig {
            max_epochs: 2,
            ..rnn_cfg(1)
        },
    )
    .unwrap();
    assert_eq!(report.train_loss.len(), 2);
    let short = trajectory_set(3, 2);
    assert!(train_rnn(&short, &short, &rnn_cfg(1)).is_err());
}

#[test]
fn model_files_round_trip_predictions() {
    let train = toy_regression(80, 9);
    let (m, _) = train_mlp(
        &train,
        &train,
        &MlpConfig {
            max_epochs: 3,
            ..small_cfg(1)
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.csim");
    let model = NetModel::Mlp(m);
    save_model(&model, &p).unwrap();
    let back = load_model(&p).unwrap();
    assert_eq!(
        back.predict(&train.features).unwrap(),
        model.predict(&train.features).unwrap()
    );
}
