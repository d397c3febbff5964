use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::train::{run_epochs, LoopSettings};
use super::{mse_grad, Adam, Standardizer, TrainReport};
use crate::features::FeatureSet;
use crate::linalg::{gemm, Matrix, Real};
use crate::rng::{self, domain, Rng};
use crate::{Error, Result};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
const PREDICT_CHUNK: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub bn_l2: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![1024, 512, 256, 128, 128],
            dropout: 0.001,
            bn_l2: 0.001,
            batch_size: 1024,
            patience: 5,
            max_epochs: 500,
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::Argument("hidden layer widths must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Argument(format!(
                "dropout {} not in [0, 1)",
                self.dropout
            )));
        }
        if self.bn_l2 < 0.0 || !(self.lr > 0.0) {
            return Err(Error::Argument("bn_l2 must be >= 0 and lr > 0".into()));
        }
        if self.patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Argument(
                "patience, batch_size and max_epochs must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// How batch normalization obtains its statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Statistics of the current batch (training).
    Batch,
    /// Running statistics (inference, and frozen gradient checks).
    Frozen,
}

/// Inverted-dropout multipliers: `0` with probability `p`, else `1/(1-p)`.
pub fn dropout_mask<T: Real>(n: usize, p: f64, rng: &mut Rng) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - p));
    (0..n)
        .map(|_| {
            if rng.random::<f64>() < p {
                T::zero()
            } else {
                keep
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
    gamma: usize,
    beta: usize,
}

fn layout(dims: &[usize]) -> (Vec<Dense>, usize) {
    let mut off = 0;
    let n_layers = dims.len() - 1;
    let mut out = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let (fi, fo) = (dims[l], dims[l + 1]);
        let w = off;
        let b = w + fi * fo;
        off = b + fo;
        let (gamma, beta) = if l + 1 < n_layers {
            let g = off;
            off += 2 * fo;
            (g, g + fo)
        } else {
            (off, off)
        };
        out.push(Dense {
            fan_in: fi,
            fan_out: fo,
            w,
            b,
            gamma,
            beta,
        });
    }
    (out, off)
}

/// Feed-forward network in standardized space.
///
/// Hidden layer: affine → batch norm → ReLU → dropout. Output layer: affine.
/// Parameters live in one flat vector; per layer the order is weights
/// (`fan_in × fan_out`, row-major), bias, and for hidden layers the batch
/// norm scale then offset.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    dims: Vec<usize>,
    params: Vec<T>,
    running_mean: Vec<Vec<T>>,
    running_var: Vec<Vec<T>>,
    pub dropout: f64,
    pub bn_l2: f64,
}

struct LayerCache<T> {
    h_in: Matrix<T>,
    xhat: Matrix<T>,
    inv_std: Vec<T>,
    pre: Matrix<T>,
    mask: Option<Vec<T>>,
}

/// Loss, flat gradient, and the batch statistics used by each hidden layer.
pub struct MlpGrad<T> {
    pub loss: f64,
    pub grad: Vec<T>,
    pub batch_stats: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Real> Mlp<T> {
    /// He-normal weights, zero biases, unit scale, zero offset.
    pub fn new(dims: &[usize], dropout: f64, bn_l2: f64, rng: &mut Rng) -> Self {
        let mut net = Self::zeros(dims, dropout, bn_l2);
        let (lay, _) = layout(dims);
        for d in &lay {
            let normal = Normal::new(0.0, (2.0 / d.fan_in as f64).sqrt()).unwrap();
            for p in &mut net.params[d.w..d.b] {
                *p = T::of(normal.sample(rng));
            }
            if d.gamma != d.beta {
                net.params[d.gamma..d.beta].fill(T::one());
            }
        }
        net
    }

    /// All parameters zero, running mean 0 and running variance 1.
    pub fn zeros(dims: &[usize], dropout: f64, bn_l2: f64) -> Self {
        assert!(dims.len() >= 2, "need input and output widths");
        let (_, n) = layout(dims);
        let hidden = &dims[1..dims.len() - 1];
        Mlp {
            dims: dims.to_vec(),
            params: vec![T::zero(); n],
            running_mean: hidden.iter().map(|&w| vec![T::zero(); w]).collect(),
            running_var: hidden.iter().map(|&w| vec![T::one(); w]).collect(),
            dropout,
            bn_l2,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_width(&self) -> usize {
        self.dims[0]
    }

    pub fn output_width(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn running_stats(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.running_mean, &self.running_var)
    }

    pub fn set_running_stats(&mut self, mean: Vec<Vec<T>>, var: Vec<Vec<T>>) -> Result<()> {
        let ok = mean.len() == self.running_mean.len()
            && var.len() == self.running_var.len()
            && mean
                .iter()
                .zip(&self.running_mean)
                .all(|(a, b)| a.len() == b.len())
            && var
                .iter()
                .zip(&self.running_var)
                .all(|(a, b)| a.len() == b.len());
        if !ok {
            return Err(Error::Format(
                "running statistics do not match layer widths".into(),
            ));
        }
        if var.iter().flatten().any(|&v| !(v > T::zero())) {
            return Err(Error::Format("running variance must be positive".into()));
        }
        self.running_mean = mean;
        self.running_var = var;
        Ok(())
    }

    /// Weights and bias of layer `l` (the output layer is the last).
    pub fn layer_params_mut(&mut self, l: usize) -> (&mut [T], &mut [T]) {
        let (lay, _) = layout(&self.dims);
        let d = lay[l];
        let (w, rest) = self.params[d.w..].split_at_mut(d.fan_in * d.fan_out);
        (w, &mut rest[..d.fan_out])
    }

    fn forward_impl(
        &self,
        x: &Matrix<T>,
        bn: BnMode,
        mut rng: Option<&mut Rng>,
    ) -> (
        Matrix<T>,
        Vec<LayerCache<T>>,
        Matrix<T>,
        Vec<(Vec<T>, Vec<T>)>,
    ) {
        assert_eq!(x.cols(), self.input_width(), "input width");
        let (lay, _) = layout(&self.dims);
        let n = x.rows();
        let nf = T::of(n.max(1) as f64);
        let eps = T::of(BN_EPS);
        let mut caches = Vec::with_capacity(lay.len() - 1);
        let mut stats = Vec::new();
        let mut h = x.clone();
        for (l, d) in lay[..lay.len() - 1].iter().enumerate() {
            let fo = d.fan_out;
            let mut z = Matrix::zeros(n, fo);
            gemm(
                h.as_slice(),
                n,
                d.fan_in,
                false,
                &self.params[d.w..d.b],
                d.fan_in,
                fo,
                false,
                T::zero(),
                z.as_mut_slice(),
            );
            z.add_row_vector(&self.params[d.b..d.b + fo]);
            let (mean, var) = match bn {
                BnMode::Batch => {
                    let mean: Vec<T> = z.sum_rows().into_iter().map(|s| s / nf).collect();
                    let mut var = vec![T::zero(); fo];
                    for row in z.iter_rows() {
                        for ((v, &zi), &m) in var.iter_mut().zip(row).zip(&mean) {
                            *v += (zi - m) * (zi - m);
                        }
                    }
                    var.iter_mut().for_each(|v| *v = *v / nf);
                    (mean, var)
                }
                BnMode::Frozen => (self.running_mean[l].clone(), self.running_var[l].clone()),
            };
            let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            let gamma = &self.params[d.gamma..d.gamma + fo];
            let beta = &self.params[d.beta..d.beta + fo];
            let mut xhat = z;
            let mut pre = Matrix::zeros(n, fo);
            let mut act = Matrix::zeros(n, fo);
            for r in 0..n {
                let xr = xhat.row_mut(r);
                let pr = pre.row_mut(r);
                for j in 0..fo {
                    xr[j] = (xr[j] - mean[j]) * inv_std[j];
                    pr[j] = gamma[j] * xr[j] + beta[j];
                }
                for (a, &p) in act.row_mut(r).iter_mut().zip(pre.row(r)) {
                    *a = if p > T::zero() { p } else { T::zero() };
                }
            }
            let mask = match rng.as_deref_mut() {
                Some(r) if self.dropout > 0.0 => {
                    let m = dropout_mask::<T>(n * fo, self.dropout, r);
                    for (a, &k) in act.as_mut_slice().iter_mut().zip(&m) {
                        *a *= k;
                    }
                    Some(m)
                }
                _ => None,
            };
            if bn == BnMode::Batch {
                stats.push((mean, var));
            }
            caches.push(LayerCache {
                h_in: h,
                xhat,
                inv_std,
                pre,
                mask,
            });
            h = act;
        }
        let d = lay[lay.len() - 1];
        let mut out = Matrix::zeros(n, d.fan_out);
        gemm(
            h.as_slice(),
            n,
            d.fan_in,
            false,
            &self.params[d.w..d.b],
            d.fan_in,
            d.fan_out,
            false,
            T::zero(),
            out.as_mut_slice(),
        );
        out.add_row_vector(&self.params[d.b..d.b + d.fan_out]);
        (out, caches, h, stats)
    }

    /// Forward pass; dropout is applied only when `rng` is given.
    pub fn forward(&self, x: &Matrix<T>, bn: BnMode, rng: Option<&mut Rng>) -> Matrix<T> {
        self.forward_impl(x, bn, rng).0
    }

    /// Inference: running statistics, no dropout.
    pub fn predict(&self, x: &Matrix<T>) -> Matrix<T> {
        self.forward(x, BnMode::Frozen, None)
    }

    /// Loss `mean((ŷ - y)²) + bn_l2 · Σ(γ² + β²)` and its gradient.
    pub fn loss_grad(
        &self,
        x: &Matrix<T>,
        y: &Matrix<T>,
        bn: BnMode,
        rng: Option<&mut Rng>,
    ) -> MlpGrad<T> {
        assert_eq!(x.rows(), y.rows(), "batch and labels differ in length");
        let (out, caches, h_last, batch_stats) = self.forward_impl(x, bn, rng);
        let (lay, n_params) = layout(&self.dims);
        let n = x.rows();
        let nf = T::of(n.max(1) as f64);
        let (mut loss, dout) = mse_grad(&out, y);
        let mut grad = vec![T::zero(); n_params];

        let d = lay[lay.len() - 1];
        gemm(
            h_last.as_slice(),
            n,
            d.fan_in,
            true,
            dout.as_slice(),
            n,
            d.fan_out,
            false,
            T::zero(),
            &mut grad[d.w..d.b],
        );
        grad[d.b..d.b + d.fan_out].copy_from_slice(&dout.sum_rows());
        let mut dh = Matrix::zeros(n, d.fan_in);
        gemm(
            dout.as_slice(),
            n,
            d.fan_out,
            false,
            &self.params[d.w..d.b],
            d.fan_in,
            d.fan_out,
            true,
            T::zero(),
            dh.as_mut_slice(),
        );

        let l2 = T::of(self.bn_l2);
        for l in (0..caches.len()).rev() {
            let d = lay[l];
            let c = &caches[l];
            let fo = d.fan_out;
            let gamma = &self.params[d.gamma..d.gamma + fo];
            let beta = &self.params[d.beta..d.beta + fo];
            let mut dgamma = vec![T::zero(); fo];
            let mut dbeta = vec![T::zero(); fo];
            // dh becomes d(pre) then d(xhat) in place
            for r in 0..n {
                let dr = dh.row_mut(r);
                let pr = c.pre.row(r);
                let xr = c.xhat.row(r);
                for j in 0..fo {
                    let mut g = if pr[j] > T::zero() { dr[j] } else { T::zero() };
                    if let Some(m) = &c.mask {
                        g *= m[r * fo + j];
                    }
                    dgamma[j] += g * xr[j];
                    dbeta[j] += g;
                    dr[j] = g * gamma[j];
                }
            }
            let mut dz = dh;
            if bn == BnMode::Batch {
                let mut sum_dx = vec![T::zero(); fo];
                let mut sum_dx_x = vec![T::zero(); fo];
                for r in 0..n {
                    for j in 0..fo {
                        let g = dz.get(r, j);
                        sum_dx[j] += g;
                        sum_dx_x[j] += g * c.xhat.get(r, j);
                    }
                }
                for r in 0..n {
                    let dr = dz.row_mut(r);
                    let xr = c.xhat.row(r);
                    for j in 0..fo {
                        dr[j] = c.inv_std[j] / nf * (nf * dr[j] - sum_dx[j] - xr[j] * sum_dx_x[j]);
                    }
                }
            } else {
                for r in 0..n {
                    for (g, &s) in dz.row_mut(r).iter_mut().zip(&c.inv_std) {
                        *g *= s;
                    }
                }
            }
            for j in 0..fo {
                loss += self.bn_l2 * (gamma[j] * gamma[j] + beta[j] * beta[j]).to_f64();
                grad[d.gamma + j] = dgamma[j] + T::of(2.0) * l2 * gamma[j];
                grad[d.beta + j] = dbeta[j] + T::of(2.0) * l2 * beta[j];
            }
            gemm(
                c.h_in.as_slice(),
                n,
                d.fan_in,
                true,
                dz.as_slice(),
                n,
                fo,
                false,
                T::zero(),
                &mut grad[d.w..d.b],
            );
            grad[d.b..d.b + fo].copy_from_slice(&dz.sum_rows());
            if l > 0 {
                let mut prev = Matrix::zeros(n, d.fan_in);
                gemm(
                    dz.as_slice(),
                    n,
                    fo,
                    false,
                    &self.params[d.w..d.b],
                    d.fan_in,
                    fo,
                    true,
                    T::zero(),
                    prev.as_mut_slice(),
                );
                dh = prev;
            } else {
                dh = Matrix::zeros(0, 0);
            }
        }
        MlpGrad {
            loss,
            grad,
            batch_stats,
        }
    }

    /// Exponential moving update of the running statistics from one batch.
    pub fn update_running(&mut self, stats: &[(Vec<T>, Vec<T>)], batch_len: usize) {
        let mom = T::of(BN_MOMENTUM);
        let unbias = T::of(batch_len as f64 / (batch_len.max(2) - 1) as f64);
        for (l, (mean, var)) in stats.iter().enumerate() {
            for j in 0..mean.len() {
                let rm = &mut self.running_mean[l][j];
                *rm = (T::one() - mom) * *rm + mom * mean[j];
                let rv = &mut self.running_var[l][j];
                *rv = (T::one() - mom) * *rv + mom * var[j] * unbias;
            }
        }
    }
}

/// Trained MLP with the normalization of its training split.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub net: Mlp<f32>,
    pub input_norm: Standardizer,
    pub label_norm: Standardizer,
}

impl MlpModel {
    pub fn input_width(&self) -> usize {
        self.net.input_width()
    }

    /// Positions in meters for every row of `x`.
    pub fn predict(&self, x: &Matrix<f64>) -> Result<Matrix<f64>> {
        if x.cols() != self.input_width() {
            return Err(Error::Shape {
                expected: self.input_width(),
                actual: x.cols(),
            });
        }
        let mut out = Matrix::zeros(x.rows(), self.net.output_width());
        for start in (0..x.rows()).step_by(PREDICT_CHUNK) {
            let end = (start + PREDICT_CHUNK).min(x.rows());
            let idx: Vec<usize> = (start..end).collect();
            let z = self
                .net
                .predict(&self.input_norm.apply(&x.select_rows(&idx)));
            let y = self.label_norm.invert(&z);
            for (i, r) in (start..end).enumerate() {
                out.row_mut(r).copy_from_slice(y.row(i));
            }
        }
        Ok(out)
    }
}

pub(crate) fn check_pair(train: &FeatureSet, val: &FeatureSet) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    if !val.is_empty() && val.width() != train.width() {
        return Err(Error::Shape {
            expected: train.width(),
            actual: val.width(),
        });
    }
    Ok(())
}

/// Mean squared error of `predict` over `x` in chunks.
pub(crate) fn chunked_mse(
    x: &Matrix<f32>,
    y: &Matrix<f32>,
    predict: impl Fn(&Matrix<f32>) -> Matrix<f32>,
) -> f64 {
    let mut total = 0.0;
    for start in (0..x.rows()).step_by(PREDICT_CHUNK) {
        let idx: Vec<usize> = (start..(start + PREDICT_CHUNK).min(x.rows())).collect();
        let (l, _) = mse_grad(&predict(&x.select_rows(&idx)), &y.select_rows(&idx));
        total += l * idx.len() as f64;
    }
    total / x.rows().max(1) as f64
}

/// Minibatch Adam with early stopping on the validation loss.
///
/// When `val` is empty the training loss in inference mode drives early
/// stopping instead.
pub fn train_mlp(
    train: &FeatureSet,
    val: &FeatureSet,
    cfg: &MlpConfig,
) -> Result<(MlpModel, TrainReport)> {
    cfg.validate()?;
    check_pair(train, val)?;
    let input_norm = Standardizer::fit(&train.features);
    let label_norm = Standardizer::fit(&train.labels);
    let xs: Matrix<f32> = input_norm.apply(&train.features);
    let ys: Matrix<f32> = label_norm.apply(&train.labels);
    let (xv, yv): (Matrix<f32>, Matrix<f32>) = if val.is_empty() {
        (xs.clone(), ys.clone())
    } else {
        (
            input_norm.apply(&val.features),
            label_norm.apply(&val.labels),
        )
    };
    let mut dims = vec![train.width()];
    dims.extend(&cfg.hidden);
    dims.push(2);
    let mut net = Mlp::<f32>::new(
        &dims,
        cfg.dropout,
        cfg.bn_l2,
        &mut rng::stream(cfg.seed, domain::INIT, 0),
    );
    let mut adam = Adam::new(net.params().len());
    let settings = LoopSettings {
        n_samples: train.len(),
        batch_size: cfg.batch_size,
        patience: cfg.patience,
        max_epochs: cfg.max_epochs,
        seed: cfg.seed,
        min_batch: 2,
    };
    let report = run_epochs(
        &mut net,
        &settings,
        |net, batch, drop_rng| {
            let xb = xs.select_rows(batch);
            let yb = ys.select_rows(batch);
            let g = net.loss_grad(&xb, &yb, BnMode::Batch, Some(drop_rng));
            if !g.loss.is_finite() {
                return g.loss;
            }
            net.update_running(&g.batch_stats, batch.len());
            adam.step(net.params_mut(), &g.grad, cfg.lr);
            g.loss
        },
        |net| chunked_mse(&xv, &yv, |x| net.predict(x)),
    )?;
    Ok((
        MlpModel {
            net,
            input_norm,
            label_norm,
        },
        report,
    ))
}

/// Trains `n_models` networks with seeds `seed + k`.
///
/// Member 0 sees the training set as given, so a single-member ensemble is
/// exactly [`train_mlp`]; members `k ≥ 1` train on a seeded bootstrap
/// resample of it.
pub fn ensemble_train(
    train: &FeatureSet,
    val: &FeatureSet,
    cfg: &MlpConfig,
    n_models: usize,
) -> Result<(Vec<MlpModel>, Vec<TrainReport>)> {
    if n_models == 0 {
        return Err(Error::Argument("ensemble needs at least one model".into()));
    }
    let mut models = Vec::with_capacity(n_models);
    let mut reports = Vec::with_capacity(n_models);
    for k in 0..n_models {
        let member_cfg = MlpConfig {
            seed: cfg.seed.wrapping_add(k as u64),
            ..cfg.clone()
        };
        let (m, r) = if k == 0 {
            train_mlp(train, val, &member_cfg)?
        } else {
            let mut brng = rng::stream(member_cfg.seed, domain::BOOTSTRAP, 0);
            let idx: Vec<usize> = (0..train.len())
                .map(|_| brng.random_range(0..train.len()))
                .collect();
            train_mlp(&train.select(&idx), val, &member_cfg)?
        };
        models.push(m);
        reports.push(r);
    }
    Ok((models, reports))
}

/// Median with the mean of the two middle values for even counts.
pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub(crate) fn median_combine(preds: &[Matrix<f64>]) -> Matrix<f64> {
    let (rows, cols) = (preds[0].rows(), preds[0].cols());
    let mut out = Matrix::zeros(rows, cols);
    let mut buf = vec![0.0; preds.len()];
    for r in 0..rows {
        for c in 0..cols {
            for (b, p) in buf.iter_mut().zip(preds) {
                *b = p.get(r, c);
            }
            out.set(r, c, median(&mut buf));
        }
    }
    out
}

/// Per-sample, per-coordinate median over the members' predictions.
pub fn ensemble_predict(models: &[MlpModel], x: &Matrix<f64>) -> Result<Matrix<f64>> {
    if models.is_empty() {
        return Err(Error::Argument("ensemble needs at least one model".into()));
    }
    let preds = models
        .iter()
        .map(|m| m.predict(x))
        .collect::<Result<Vec<_>>>()?;
    Ok(median_combine(&preds))
}
