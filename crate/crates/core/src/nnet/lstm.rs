use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::mlp::{check_pair, median_combine};
use super::train::{run_epochs, LoopSettings};
use super::{mse_grad, Adam, Standardizer, TrainReport};
use crate::features::FeatureSet;
use crate::linalg::{gemm, Matrix, Real};
use crate::rng::{self, domain, Rng};
use crate::{Error, Result};

const PREDICT_WINDOWS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub cells: usize,
    pub window: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for LstmConfig {
    fn default() -> Self {
        LstmConfig {
            cells: 128,
            window: 16,
            batch_size: 1024,
            patience: 5,
            max_epochs: 500,
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl LstmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cells == 0 || self.window == 0 {
            return Err(Error::Argument("cells and window must be >= 1".into()));
        }
        if self.patience == 0 || self.batch_size == 0 || self.max_epochs == 0 || !(self.lr > 0.0) {
            return Err(Error::Argument(
                "patience, batch_size, max_epochs and lr must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Single-layer LSTM with a dense head on the final hidden state.
///
/// Gate pre-activations are `x·W + h·U + b` with the `4H` columns ordered
/// input, forget, output, candidate. Flat parameter order: `W` (`F × 4H`),
/// `U` (`H × 4H`), `b` (`4H`), head weights (`H × out`), head bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm<T> {
    input: usize,
    cells: usize,
    output: usize,
    params: Vec<T>,
}

struct StepCache<T> {
    gates: Matrix<T>,
    c_prev: Matrix<T>,
    tanh_c: Matrix<T>,
    h_prev: Matrix<T>,
}

impl<T: Real> Lstm<T> {
    pub fn zeros(input: usize, cells: usize, output: usize) -> Self {
        let n = input * 4 * cells + cells * 4 * cells + 4 * cells + cells * output + output;
        Lstm {
            input,
            cells,
            output,
            params: vec![T::zero(); n],
        }
    }

    /// Scaled normal weights, zero biases except a forget-gate bias of 1.
    pub fn new(input: usize, cells: usize, output: usize, rng: &mut Rng) -> Self {
        let mut net = Self::zeros(input, cells, output);
        let fill = |slice: &mut [T], fan_in: usize, rng: &mut Rng| {
            let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).unwrap();
            slice
                .iter_mut()
                .for_each(|p| *p = T::of(normal.sample(rng)));
        };
        let (w, u, b, hw, _) = net.offsets();
        fill(&mut net.params[w..u], input, rng);
        fill(&mut net.params[u..b], cells, rng);
        net.params[b + cells..b + 2 * cells].fill(T::one());
        fill(&mut net.params[hw..hw + cells * output], cells, rng);
        net
    }

    fn offsets(&self) -> (usize, usize, usize, usize, usize) {
        let h4 = 4 * self.cells;
        let w = 0;
        let u = w + self.input * h4;
        let b = u + self.cells * h4;
        let hw = b + h4;
        let hb = hw + self.cells * self.output;
        (w, u, b, hw, hb)
    }

    pub fn input_width(&self) -> usize {
        self.input
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn output_width(&self) -> usize {
        self.output
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// Gate bias vector (`4H`, ordered i, f, o, g).
    pub fn gate_bias_mut(&mut self) -> &mut [T] {
        let (_, _, b, hw, _) = self.offsets();
        &mut self.params[b..hw]
    }

    pub fn head_bias_mut(&mut self) -> &mut [T] {
        let (.., hb) = self.offsets();
        &mut self.params[hb..]
    }

    /// `x` stacks `steps` time slices of `B` rows each, time-major
    /// (row `t·B + b`). Returns `B × out`.
    fn forward_impl(
        &self,
        x: &Matrix<T>,
        steps: usize,
    ) -> (Matrix<T>, Vec<StepCache<T>>, Matrix<T>) {
        assert_eq!(x.cols(), self.input, "input width");
        assert!(
            steps >= 1 && x.rows() % steps == 0,
            "rows must be a multiple of steps"
        );
        let bsz = x.rows() / steps;
        let hsz = self.cells;
        let h4 = 4 * hsz;
        let (w, u, b, hw, hb) = self.offsets();
        let mut xw = Matrix::zeros(x.rows(), h4);
        gemm(
            x.as_slice(),
            x.rows(),
            self.input,
            false,
            &self.params[w..u],
            self.input,
            h4,
            false,
            T::zero(),
            xw.as_mut_slice(),
        );
        let mut h = Matrix::zeros(bsz, hsz);
        let mut c = Matrix::zeros(bsz, hsz);
        let mut caches = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut gates = Matrix::from_vec(
                bsz,
                h4,
                xw.as_slice()[t * bsz * h4..(t + 1) * bsz * h4].to_vec(),
            )
            .unwrap();
            gemm(
                h.as_slice(),
                bsz,
                hsz,
                false,
                &self.params[u..b],
                hsz,
                h4,
                false,
                T::one(),
                gates.as_mut_slice(),
            );
            gates.add_row_vector(&self.params[b..hw]);
            let mut c_new = Matrix::zeros(bsz, hsz);
            let mut tanh_c = Matrix::zeros(bsz, hsz);
            let mut h_new = Matrix::zeros(bsz, hsz);
            for r in 0..bsz {
                let g = gates.row_mut(r);
                for v in &mut g[..3 * hsz] {
                    *v = sigmoid(*v);
                }
                for v in &mut g[3 * hsz..] {
                    *v = v.tanh();
                }
                let cp = c.row(r);
                for j in 0..hsz {
                    let (ig, fg, og, gg) = (g[j], g[hsz + j], g[2 * hsz + j], g[3 * hsz + j]);
                    let cn = fg * cp[j] + ig * gg;
                    let tc = cn.tanh();
                    c_new.set(r, j, cn);
                    tanh_c.set(r, j, tc);
                    h_new.set(r, j, og * tc);
                }
            }
            caches.push(StepCache {
                gates,
                c_prev: std::mem::replace(&mut c, c_new),
                tanh_c,
                h_prev: std::mem::replace(&mut h, h_new),
            });
        }
        let mut out = Matrix::zeros(bsz, self.output);
        gemm(
            h.as_slice(),
            bsz,
            hsz,
            false,
            &self.params[hw..hb],
            hsz,
            self.output,
            false,
            T::zero(),
            out.as_mut_slice(),
        );
        out.add_row_vector(&self.params[hb..]);
        (out, caches, h)
    }

    pub fn forward(&self, x: &Matrix<T>, steps: usize) -> Matrix<T> {
        self.forward_impl(x, steps).0
    }

    /// Mean squared error over the batch and its full BPTT gradient.
    pub fn loss_grad(&self, x: &Matrix<T>, steps: usize, y: &Matrix<T>) -> (f64, Vec<T>) {
        let (out, caches, h_last) = self.forward_impl(x, steps);
        assert_eq!(y.rows(), out.rows(), "batch and labels differ in length");
        let (loss, dout) = mse_grad(&out, y);
        let bsz = out.rows();
        let hsz = self.cells;
        let h4 = 4 * hsz;
        let (w, u, b, hw, hb) = self.offsets();
        let mut grad = vec![T::zero(); self.params.len()];
        gemm(
            h_last.as_slice(),
            bsz,
            hsz,
            true,
            dout.as_slice(),
            bsz,
            self.output,
            false,
            T::zero(),
            &mut grad[hw..hb],
        );
        grad[hb..].copy_from_slice(&dout.sum_rows());
        let mut dh = Matrix::zeros(bsz, hsz);
        gemm(
            dout.as_slice(),
            bsz,
            self.output,
            false,
            &self.params[hw..hb],
            hsz,
            self.output,
            true,
            T::zero(),
            dh.as_mut_slice(),
        );
        let mut dc = Matrix::<T>::zeros(bsz, hsz);
        let mut da_all = Matrix::zeros(x.rows(), h4);
        let one = T::one();
        for t in (0..steps).rev() {
            let sc = &caches[t];
            let da = &mut da_all.as_mut_slice()[t * bsz * h4..(t + 1) * bsz * h4];
            for r in 0..bsz {
                let g = sc.gates.row(r);
                let dar = &mut da[r * h4..(r + 1) * h4];
                for j in 0..hsz {
                    let (ig, fg, og, gg) = (g[j], g[hsz + j], g[2 * hsz + j], g[3 * hsz + j]);
                    let tc = sc.tanh_c.get(r, j);
                    let dhv = dh.get(r, j);
                    let d_o = dhv * tc;
                    let dcv = dc.get(r, j) + dhv * og * (one - tc * tc);
                    dar[j] = dcv * gg * ig * (one - ig);
                    dar[hsz + j] = dcv * sc.c_prev.get(r, j) * fg * (one - fg);
                    dar[2 * hsz + j] = d_o * og * (one - og);
                    dar[3 * hsz + j] = dcv * ig * (one - gg * gg);
                    dc.set(r, j, dcv * fg);
                }
            }
            gemm(
                sc.h_prev.as_slice(),
                bsz,
                hsz,
                true,
                da,
                bsz,
                h4,
                false,
                T::one(),
                &mut grad[u..b],
            );
            for r in 0..bsz {
                for (gb, &v) in grad[b..hw].iter_mut().zip(&da[r * h4..(r + 1) * h4]) {
                    *gb += v;
                }
            }
            if t > 0 {
                gemm(
                    da,
                    bsz,
                    h4,
                    false,
                    &self.params[u..b],
                    hsz,
                    h4,
                    true,
                    T::zero(),
                    dh.as_mut_slice(),
                );
            }
        }
        gemm(
            x.as_slice(),
            x.rows(),
            self.input,
            true,
            da_all.as_slice(),
            x.rows(),
            h4,
            false,
            T::zero(),
            &mut grad[w..u],
        );
        (loss, grad)
    }
}

/// Row indices of the window of length `window` ending at record `end`;
/// positions before the first record repeat record 0.
pub fn window_rows(end: usize, window: usize) -> impl Iterator<Item = usize> {
    (0..window).map(move |t| (end + t + 1).saturating_sub(window))
}

/// Number of full training windows in a trajectory of `n_records`.
pub fn sliding_window_count(n_records: usize, window: usize) -> usize {
    (n_records + 1).saturating_sub(window)
}

/// Time-major stack of the windows ending at `ends`.
fn stack_windows<T: Real>(x: &Matrix<T>, ends: &[usize], window: usize) -> Matrix<T> {
    let bsz = ends.len();
    let mut out = Matrix::zeros(window * bsz, x.cols());
    for (b, &end) in ends.iter().enumerate() {
        for (t, row) in window_rows(end, window).enumerate() {
            out.row_mut(t * bsz + b).copy_from_slice(x.row(row));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub net: Lstm<f32>,
    pub window: usize,
    pub input_norm: Standardizer,
    pub label_norm: Standardizer,
}

impl LstmModel {
    pub fn input_width(&self) -> usize {
        self.net.input_width()
    }

    /// Positions for rows of `x` taken as one trajectory in order; row `n`
    /// uses the window ending at `n`.
    pub fn predict(&self, x: &Matrix<f64>) -> Result<Matrix<f64>> {
        if x.cols() != self.input_width() {
            return Err(Error::Shape {
                expected: self.input_width(),
                actual: x.cols(),
            });
        }
        let z: Matrix<f32> = self.input_norm.apply(x);
        Ok(self
            .label_norm
            .invert(&predict_windows(&self.net, &z, self.window)))
    }
}

fn predict_windows(net: &Lstm<f32>, z: &Matrix<f32>, window: usize) -> Matrix<f32> {
    let mut out = Matrix::zeros(z.rows(), net.output_width());
    let ends: Vec<usize> = (0..z.rows()).collect();
    for chunk in ends.chunks(PREDICT_WINDOWS) {
        let y = net.forward(&stack_windows(z, chunk, window), window);
        for (i, &r) in chunk.iter().enumerate() {
            out.row_mut(r).copy_from_slice(y.row(i));
        }
    }
    out
}

/// Trains on every full sliding window of the training trajectory.
///
/// Both splits must be in trajectory order (strictly increasing `seq`).
pub fn train_rnn(
    train: &FeatureSet,
    val: &FeatureSet,
    cfg: &LstmConfig,
) -> Result<(LstmModel, TrainReport)> {
    cfg.validate()?;
    check_pair(train, val)?;
    for (name, fs) in [("training", train), ("validation", val)] {
        if !fs.is_trajectory_ordered() {
            return Err(Error::Order(format!(
                "{name} records are not in trajectory order; the recurrent model needs unshuffled data"
            )));
        }
    }
    if train.len() < cfg.window {
        return Err(Error::Argument(format!(
            "{} training records are fewer than the window of {}",
            train.len(),
            cfg.window
        )));
    }
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
    let mut net = Lstm::<f32>::new(
        train.width(),
        cfg.cells,
        2,
        &mut rng::stream(cfg.seed, domain::INIT, 0),
    );
    let mut adam = Adam::new(net.params().len());
    let window = cfg.window;
    let first_end = window - 1;
    let settings = LoopSettings {
        n_samples: sliding_window_count(train.len(), window),
        batch_size: cfg.batch_size,
        patience: cfg.patience,
        max_epochs: cfg.max_epochs,
        seed: cfg.seed,
        min_batch: 1,
    };
    let report = run_epochs(
        &mut net,
        &settings,
        |net, batch, _| {
            let ends: Vec<usize> = batch.iter().map(|&i| i + first_end).collect();
            let xb = stack_windows(&xs, &ends, window);
            let yb = ys.select_rows(&ends);
            let (loss, grad) = net.loss_grad(&xb, window, &yb);
            if loss.is_finite() {
                adam.step(net.params_mut(), &grad, cfg.lr);
            }
            loss
        },
        |net| mse_grad(&predict_windows(net, &xv, window), &yv).0,
    )?;
    Ok((
        LstmModel {
            net,
            window,
            input_norm,
            label_norm,
        },
        report,
    ))
}

/// Trains `n_models` recurrent networks with seeds `seed + k` on the same
/// ordered data; members differ in initialization and batch order only,
/// since resampling records would break the trajectory windows.
pub fn rnn_ensemble_train(
    train: &FeatureSet,
    val: &FeatureSet,
    cfg: &LstmConfig,
    n_models: usize,
) -> Result<(Vec<LstmModel>, Vec<TrainReport>)> {
    if n_models == 0 {
        return Err(Error::Argument("ensemble needs at least one model".into()));
    }
    (0..n_models)
        .map(|k| {
            let member = LstmConfig {
                seed: cfg.seed.wrapping_add(k as u64),
                ..cfg.clone()
            };
            train_rnn(train, val, &member)
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().unzip())
}

/// Per-sample, per-coordinate median over the members' predictions.
pub fn rnn_ensemble_predict(models: &[LstmModel], x: &Matrix<f64>) -> Result<Matrix<f64>> {
    if models.is_empty() {
        return Err(Error::Argument("ensemble needs at least one model".into()));
    }
    let preds = models
        .iter()
        .map(|m| m.predict(x))
        .collect::<Result<Vec<_>>>()?;
    Ok(median_combine(&preds))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_rows_pad_by_repetition() {
        assert_eq!(window_rows(1, 4).collect::<Vec<_>>(), vec![0, 0, 0, 1]);
        assert_eq!(window_rows(5, 3).collect::<Vec<_>>(), vec![3, 4, 5]);
        assert_eq!(window_rows(0, 1).collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn zero_weights_output_head_bias() {
        let mut net = Lstm::<f64>::zeros(3, 4, 2);
        net.head_bias_mut().copy_from_slice(&[0.7, -0.2]);
        let x = Matrix::from_vec(6, 3, (0..18).map(|v| v as f64).collect()).unwrap();
        let y = net.forward(&x, 3);
        assert_eq!(y.row(0), &[0.7, -0.2]);
        assert_eq!(y.row(1), &[0.7, -0.2]);
    }

    #[test]
    fn saturated_gates_keep_cell_at_zero() {
        let mut rng = rng::stream(1, 0, 0);
        let mut net = Lstm::<f64>::new(3, 4, 2, &mut rng);
        let (_, u, b, _, _) = net.offsets();
        // candidate path zeroed, input gate shut, forget gate open
        for r in 0..3 {
            for j in 12..16 {
                net.params[r * 16 + j] = 0.0;
            }
        }
        for r in 0..4 {
            for j in 12..16 {
                net.params[u + r * 16 + j] = 0.0;
            }
        }
        let bias = &mut net.params[b..b + 16];
        bias[..4].fill(-1e3);
        bias[4..8].fill(1e3);
        bias[12..].fill(0.0);
        let x = Matrix::from_vec(4, 3, (0..12).map(|v| v as f64 * 0.3).collect()).unwrap();
        let (_, caches, h) = net.forward_impl(&x, 4);
        for sc in &caches {
            assert!(sc.c_prev.as_slice().iter().all(|&c| c == 0.0));
        }
        assert!(h.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_matches_gate_equations() {
        let mut rng = rng::stream(2, 0, 0);
        let net = Lstm::<f64>::new(2, 3, 2, &mut rng);
        let x = [0.4, -1.3];
        let (w, u, b, hw, hb) = net.offsets();
        let _ = u;
        let p = net.params();
        let pre = |col: usize| x[0] * p[w + col] + x[1] * p[w + 12 + col] + p[b + col];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut h = [0.0; 3];
        for j in 0..3 {
            let (i, o, g) = (sig(pre(j)), sig(pre(6 + j)), pre(9 + j).tanh());
            h[j] = o * (i * g).tanh();
        }
        let want: Vec<f64> = (0..2)
            .map(|k| (0..3).map(|j| h[j] * p[hw + j * 2 + k]).sum::<f64>() + p[hb + k])
            .collect();
        let got = net.forward(&Matrix::from_vec(1, 2, x.to_vec()).unwrap(), 1);
        for (a, b) in got.row(0).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
