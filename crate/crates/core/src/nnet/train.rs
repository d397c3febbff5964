use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::{self, domain};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// 1-based epoch at which training ended.
    pub stopped_epoch: usize,
    /// 1-based epoch of the returned snapshot.
    pub best_epoch: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience counter on a validation loss sequence.
///
/// An epoch improves when its loss is strictly below the best so far.
/// Training stops once `patience` consecutive epochs fail to improve, so a
/// loss that is best at epoch `e` and worse afterwards stops at
/// `e + patience`.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    bad: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            bad: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.bad = 0;
            StopDecision::Improved
        } else {
            self.bad += 1;
            if self.bad >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

pub(crate) struct LoopSettings {
    pub n_samples: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Smaller batches are skipped (batch statistics need at least 2).
    pub min_batch: usize,
}

/// Shared epoch loop: seeded shuffling into minibatches, early stopping on
/// the validation loss, best-snapshot restore.
///
/// `step` trains on one batch of sample indices and returns its loss;
/// `val` evaluates the current model.
pub(crate) fn run_epochs<M: Clone>(
    model: &mut M,
    set: &LoopSettings,
    mut step: impl FnMut(&mut M, &[usize], &mut rng::Rng) -> f64,
    mut val: impl FnMut(&M) -> f64,
) -> Result<TrainReport> {
    let start = Instant::now();
    let mut stopper = EarlyStopping::new(set.patience);
    let mut best = model.clone();
    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        stopped_epoch: 0,
        best_epoch: 0,
        wall_time_s: 0.0,
    };
    let mut order: Vec<usize> = (0..set.n_samples).collect();
    for epoch in 1..=set.max_epochs {
        let mut shuffle_rng = rng::stream(set.seed, domain::BATCH, epoch as u64);
        order.shuffle(&mut shuffle_rng);
        let mut drop_rng = rng::stream(set.seed, domain::DROPOUT, epoch as u64);
        let mut total = 0.0;
        let mut count = 0usize;
        for batch in order.chunks(set.batch_size.max(1)) {
            if batch.len() < set.min_batch && set.n_samples >= set.min_batch {
                continue;
            }
            let loss = step(model, batch, &mut drop_rng);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            total += loss * batch.len() as f64;
            count += batch.len();
        }
        let vl = val(model);
        if !vl.is_finite() {
            return Err(Error::Divergence { epoch, loss: vl });
        }
        report.train_loss.push(total / count.max(1) as f64);
        report.val_loss.push(vl);
        report.stopped_epoch = epoch;
        match stopper.observe(epoch, vl) {
            StopDecision::Improved => best = model.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    report.best_epoch = stopper.best_epoch();
    *model = best;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}
