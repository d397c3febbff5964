//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use csiloc::features::{FeatureKind, FeatureSet};
use csiloc::linalg::Matrix;
use csiloc::nnet::{BnMode, Lstm, Mlp};
use csiloc::rng;
use rand::Rng;

pub const FD_EPS: f64 = 1e-4;
pub const FD_REL_TOL: f64 = 1e-4;
/// Denominator floor so that exactly-zero gradients compare by absolute
/// difference instead of dividing round-off by round-off.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

/// Central differences of `loss` with respect to every entry of `params`.
pub fn numeric_grad(params: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + FD_EPS;
            let up = loss(&p);
            p[i] = orig - FD_EPS;
            let down = loss(&p);
            p[i] = orig;
            (up - down) / (2.0 * FD_EPS)
        })
        .collect()
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
    let mut r = rng::stream(seed, 99, 0);
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| r.random_range(-1.5..1.5))
            .collect(),
    )
    .unwrap()
}

/// Largest relative error between analytic and numeric MLP gradients.
///
/// `dropout_seed` fixes the dropout masks so the loss is a deterministic
/// function of the parameters.
pub fn mlp_grad_error(bn: BnMode, dropout: f64, dropout_seed: Option<u64>) -> f64 {
    let mut r = rng::stream(11, 0, 0);
    let mut net = Mlp::<f64>::new(&[4, 6, 5, 2], dropout, 0.01, &mut r);
    // non-trivial scales, offsets and running statistics
    for p in net.params_mut().iter_mut() {
        *p += r.random_range(-0.2..0.2);
    }
    net.set_running_stats(
        vec![
            (0..6).map(|_| r.random_range(-0.5..0.5)).collect(),
            (0..5).map(|_| r.random_range(-0.5..0.5)).collect(),
        ],
        vec![
            (0..6).map(|_| r.random_range(0.5..2.0)).collect(),
            (0..5).map(|_| r.random_range(0.5..2.0)).collect(),
        ],
    )
    .unwrap();
    let x = random_matrix(7, 4, 1);
    let y = random_matrix(7, 2, 2);
    let mask_rng = || dropout_seed.map(|s| rng::stream(s, 0, 0));
    let analytic = net.loss_grad(&x, &y, bn, mask_rng().as_mut()).grad;
    let numeric = numeric_grad(&net.params().to_vec(), |p| {
        let mut n = net.clone();
        n.params_mut().copy_from_slice(p);
        n.loss_grad(&x, &y, bn, mask_rng().as_mut()).loss
    });
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| rel_err(*a, *n))
        .fold(0.0, f64::max)
}

/// Largest relative error between analytic (BPTT) and numeric LSTM gradients.
pub fn lstm_grad_error(cells: usize, window: usize) -> f64 {
    let mut r = rng::stream(12, 0, 0);
    let net = Lstm::<f64>::new(3, cells, 2, &mut r);
    let batch = 5;
    let x = random_matrix(window * batch, 3, 3);
    let y = random_matrix(batch, 2, 4);
    let (_, analytic) = net.loss_grad(&x, window, &y);
    let numeric = numeric_grad(&net.params().to_vec(), |p| {
        let mut n = net.clone();
        n.params_mut().copy_from_slice(p);
        n.loss_grad(&x, window, &y).0
    });
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| rel_err(*a, *n))
        .fold(0.0, f64::max)
}

// ---- tree oracles -------------------------------------------------------

/// `n` uniform feature rows with two smooth noisy targets.
pub fn regression_set(n: usize, f: usize, seed: u64) -> FeatureSet {
    let mut r = rng::stream(seed, 0, 0);
    let x: Matrix<f64> =
        Matrix::from_vec(n, f, (0..n * f).map(|_| r.random_range(0.0..1.0)).collect()).unwrap();
    let mut y = Matrix::zeros(n, 2);
    for i in 0..n {
        let row = x.row(i);
        y.set(
            i,
            0,
            4.0 * row[0] + 0.3 * (6.0 * row[1]).sin() + 0.05 * r.random_range(-1.0..1.0),
        );
        y.set(
            i,
            1,
            2.0 * row[1] * row[2 % f] + 0.05 * r.random_range(-1.0..1.0),
        );
    }
    FeatureSet {
        features: x,
        labels: y,
        kind: FeatureKind::SmoothedCsi,
        snr_included: false,
        seq: (0..n as u64).collect(),
    }
}

use csiloc::trees::{Boost, Node, Tree};

/// Every (feature, midpoint) candidate over `samples` with its gain as
/// computed by `score`, in (feature, threshold) order.
pub fn enumerate_splits(
    x: &Matrix<f64>,
    samples: &[usize],
    score: &dyn Fn(&[usize], &[usize]) -> f64,
) -> Vec<(usize, f64, f64)> {
    let mut out = Vec::new();
    for f in 0..x.cols() {
        let mut vals: Vec<f64> = samples.iter().map(|&s| x.get(s, f)).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let thr = w[0] + (w[1] - w[0]) / 2.0;
            let (l, r): (Vec<usize>, Vec<usize>) =
                samples.iter().partition(|&&s| x.get(s, f) < thr);
            out.push((f, thr, score(&l, &r)));
        }
    }
    out
}

fn sse(y: &[f64], idx: &[usize]) -> f64 {
    let m = idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64;
    idx.iter().map(|&i| (y[i] - m).powi(2)).sum()
}

/// Reduction in squared error from splitting a node.
pub fn variance_score(y: &[f64]) -> impl Fn(&[usize], &[usize]) -> f64 + '_ {
    move |l: &[usize], r: &[usize]| {
        let all: Vec<usize> = l.iter().chain(r).copied().collect();
        sse(y, &all) - sse(y, l) - sse(y, r)
    }
}

/// Second-order gain with unit hessians.
pub fn boost_score(g: &[f64], lambda: f64, gamma: f64) -> impl Fn(&[usize], &[usize]) -> f64 + '_ {
    move |l: &[usize], r: &[usize]| {
        let s = |idx: &[usize]| {
            let gs: f64 = idx.iter().map(|&i| g[i]).sum();
            gs * gs / (idx.len() as f64 + lambda)
        };
        let all: Vec<usize> = l.iter().chain(r).copied().collect();
        0.5 * (s(l) + s(r) - s(&all)) - gamma
    }
}

/// Checks every node of `tree` against exhaustive search over the samples
/// that reach it. Returns a description of the first disagreement.
pub fn check_tree_against_oracle(
    tree: &Tree,
    x: &Matrix<f64>,
    max_depth: usize,
    score: &dyn Fn(&[usize], &[usize]) -> f64,
    scale: f64,
) -> Result<usize, String> {
    let tol = 1e-9 * scale.max(1e-300);
    let mut checked = 0;
    let mut stack = vec![(0usize, (0..x.rows()).collect::<Vec<_>>(), 0usize)];
    while let Some((id, samples, depth)) = stack.pop() {
        let cands = enumerate_splits(x, &samples, score);
        let best = cands.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
        match &tree.nodes[id] {
            Node::Leaf { .. } => {
                if depth < max_depth && samples.len() >= 2 && best > tol {
                    return Err(format!("leaf at depth {depth} but a split gains {best}"));
                }
            }
            Node::Internal {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                let pos = cands
                    .iter()
                    .position(|c| c.0 == *feature && c.1 == *threshold)
                    .ok_or_else(|| format!("split ({feature}, {threshold}) is not a candidate"))?;
                if best <= tol {
                    // only round-off separates the candidates here
                } else if cands[pos].2 < best - tol {
                    return Err(format!("split gain {} below optimum {best}", cands[pos].2));
                } else if let Some(earlier) = cands[..pos].iter().find(|c| c.2 >= best - tol) {
                    return Err(format!(
                        "tie-break: ({}, {}) precedes the chosen split",
                        earlier.0, earlier.1
                    ));
                }
                let (l, r): (Vec<usize>, Vec<usize>) = samples
                    .iter()
                    .partition(|&&s| x.get(s, *feature) < *threshold);
                stack.push((*left, l, depth + 1));
                stack.push((*right, r, depth + 1));
                checked += 1;
            }
        }
    }
    Ok(checked)
}

/// Training objective `Σ ½(y − ŷ)² + Σ_k [γ T_k + ½ λ Σ (η w)²]` after
/// each boosting round, recomputed from the stored trees.
pub fn boost_objective_trace(b: &Boost, x: &Matrix<f64>, y: &[f64]) -> Vec<f64> {
    let mut pred = vec![b.base; y.len()];
    let mut omega = 0.0;
    let mut out = Vec::with_capacity(b.trees.len() + 1);
    let loss = |p: &[f64]| {
        p.iter()
            .zip(y)
            .map(|(a, t)| 0.5 * (t - a) * (t - a))
            .sum::<f64>()
    };
    out.push(loss(&pred));
    for t in &b.trees {
        for (i, p) in pred.iter_mut().enumerate() {
            *p += b.eta * t.predict_row(x.row(i));
        }
        let leaves: Vec<f64> = t.leaf_values().collect();
        omega += b.gamma * leaves.len() as f64
            + 0.5 * b.lambda * leaves.iter().map(|w| (b.eta * w).powi(2)).sum::<f64>();
        out.push(loss(&pred) + omega);
    }
    out
}

/// Random small regression problem: `N ≤ 16`, `F ≤ 4`; half the cases use
/// a coarse integer grid so that repeated feature values occur.
pub fn small_tree_case(case: u64) -> (Matrix<f64>, Vec<f64>) {
    let mut r = rng::stream(case, 98, 0);
    let n = r.random_range(2..=16);
    let f = r.random_range(1..=4);
    let coarse = case % 2 == 0;
    let x = Matrix::from_vec(
        n,
        f,
        (0..n * f)
            .map(|_| {
                if coarse {
                    r.random_range(0..5) as f64
                } else {
                    r.random_range(-1.0..1.0)
                }
            })
            .collect(),
    )
    .unwrap();
    let y = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
    (x, y)
}

/// Forest (one unbagged tree, all features) and first/third boosting round
/// splits against exhaustive search on `cases` random problems. Returns
/// the number of internal nodes checked.
pub fn run_tree_oracle_suite(cases: u64) -> Result<usize, String> {
    use csiloc::trees::{fit_boost_axis, fit_forest_axis, BoostConfig, ForestConfig};
    let mut checked = 0;
    for case in 0..cases {
        let (x, y) = small_tree_case(case);
        let depth = if case % 3 == 0 { 2 } else { 30 };
        let fcfg = ForestConfig {
            n_trees: 1,
            bootstrap: false,
            feature_subsample: 1.0,
            max_depth: depth,
            ..ForestConfig::default()
        };
        let forest = fit_forest_axis(&x, &y, &fcfg, 0).map_err(|e| e.to_string())?;
        let scale = y.iter().map(|v| v * v).sum::<f64>();
        checked +=
            check_tree_against_oracle(&forest.trees[0], &x, depth, &variance_score(&y), scale)
                .map_err(|e| format!("case {case} forest: {e}"))?;

        let bcfg = BoostConfig {
            n_rounds: 3,
            max_depth: depth,
            ..BoostConfig::default()
        };
        let boost = fit_boost_axis(&x, &y, &bcfg).map_err(|e| e.to_string())?;
        let mut pred = vec![boost.base; y.len()];
        for (round, tree) in boost.trees.iter().enumerate() {
            let g: Vec<f64> = pred.iter().zip(&y).map(|(p, t)| p - t).collect();
            let scale = g.iter().map(|v| v * v).sum::<f64>();
            checked += check_tree_against_oracle(
                tree,
                &x,
                depth,
                &boost_score(&g, bcfg.lambda, bcfg.gamma),
                scale,
            )
            .map_err(|e| format!("case {case} boost round {round}: {e}"))?;
            for (i, p) in pred.iter_mut().enumerate() {
                *p += boost.eta * tree.predict_row(x.row(i));
            }
        }
    }
    Ok(checked)
}
