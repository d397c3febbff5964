//! Neural network regressors with hand-derived gradients.
//!
//! The networks work in standardized space: input features and position
//! labels are z-scored with statistics of the training split, and the loss
//! is the mean squared error over samples and both coordinates there.
//! Training runs in `f32`; every layer is generic over [`Real`] so the
//! gradient checks can run in `f64`.

mod adam;
mod io;
mod lstm;
mod mlp;
mod train;

pub use adam::Adam;
pub use io::{load_model, save_model, NetModel};
pub use lstm::{
    rnn_ensemble_predict, rnn_ensemble_train, sliding_window_count, train_rnn, window_rows, Lstm,
    LstmConfig, LstmModel,
};
pub use mlp::{
    dropout_mask, ensemble_predict, ensemble_train, train_mlp, BnMode, Mlp, MlpConfig, MlpGrad,
    MlpModel,
};
pub use train::{EarlyStopping, StopDecision, TrainReport};

use crate::linalg::{Matrix, Real};

/// Per-column affine normalization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population statistics per column; constant columns get `std = 1`.
    pub fn fit(x: &Matrix<f64>) -> Self {
        let n = x.rows().max(1) as f64;
        let mean: Vec<f64> = x.sum_rows().into_iter().map(|s| s / n).collect();
        let mut var = vec![0.0; x.cols()];
        for row in x.iter_rows() {
            for ((v, &xi), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (xi - m) * (xi - m);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn identity(width: usize) -> Self {
        Standardizer {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply<T: Real>(&self, x: &Matrix<f64>) -> Matrix<T> {
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            for (c, (o, &v)) in out.row_mut(r).iter_mut().zip(x.row(r)).enumerate() {
                *o = T::of((v - self.mean[c]) / self.std[c]);
            }
        }
        out
    }

    pub fn invert<T: Real>(&self, z: &Matrix<T>) -> Matrix<f64> {
        let mut out = Matrix::zeros(z.rows(), z.cols());
        for r in 0..z.rows() {
            for (c, (o, &v)) in out.row_mut(r).iter_mut().zip(z.row(r)).enumerate() {
                *o = v.to_f64() * self.std[c] + self.mean[c];
            }
        }
        out
    }
}

/// Mean over all entries of `(pred - target)^2` and its gradient.
pub(crate) fn mse_grad<T: Real>(pred: &Matrix<T>, target: &Matrix<T>) -> (f64, Matrix<T>) {
    let n = (pred.rows() * pred.cols()).max(1) as f64;
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    let mut loss = 0.0;
    let scale = T::of(2.0 / n);
    for ((g, &p), &t) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(pred.as_slice())
        .zip(target.as_slice())
    {
        let d = p - t;
        loss += d.to_f64() * d.to_f64();
        *g = scale * d;
    }
    (loss / n, grad)
}
