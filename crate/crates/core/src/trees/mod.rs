//! Random forest and second-order gradient-boosted regression trees.
//!
//! Both ensembles fit one model per position coordinate. Splits are exact:
//! every midpoint between consecutive distinct feature values is a
//! candidate, ties go to the lowest feature index and then the lowest
//! threshold, and a sample goes left when `x < threshold`.
//!
//! Boosting minimizes `Σ ½(y − ŷ)²` with `g = ŷ − y`, `h = 1`. The shrinkage
//! `eta` multiplies each new tree; leaves are stored unshrunk, so a
//! prediction is `base + eta · Σ f_k(x)`.

mod grow;
mod io;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::features::FeatureSet;
use crate::linalg::Matrix;
use crate::rng::{self, domain};
use crate::{Error, Result};

pub use io::{load_trees, save_trees};

use grow::{grow, Columns, GrowParams};

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        gain: f64,
    },
    Leaf {
        value: f64,
    },
}

/// Node arena in preorder; the root is node 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[feature] < threshold { left } else { right },
            }
        }
    }

    /// Longest root-to-leaf path in edges.
    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Internal { left, right, .. } => 1 + walk(t, left).max(walk(t, right)),
            }
        }
        walk(self, 0)
    }

    pub fn leaf_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { value } => Some(*value),
            _ => None,
        })
    }

    fn add_importance(&self, acc: &mut [f64]) {
        for n in &self.nodes {
            if let Node::Internal { feature, gain, .. } = n {
                acc[*feature] += gain;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub feature_subsample: f64,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 30,
            min_samples_leaf: 1,
            feature_subsample: 1.0 / 3.0,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(Error::Argument(
                "n_trees, max_depth and min_samples_leaf must be >= 1".into(),
            ));
        }
        if !(self.feature_subsample > 0.0 && self.feature_subsample <= 1.0) {
            return Err(Error::Argument(format!(
                "feature_subsample {} not in (0, 1]",
                self.feature_subsample
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub n_rounds: usize,
    pub eta: f64,
    pub max_depth: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            n_rounds: 800,
            eta: 0.3,
            max_depth: 30,
            lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 1.0,
            seed: 0,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rounds == 0 || self.max_depth == 0 {
            return Err(Error::Argument(
                "n_rounds and max_depth must be >= 1".into(),
            ));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::Argument(format!("eta {} not in (0, 1]", self.eta)));
        }
        if !(self.lambda >= 0.0 && self.gamma >= 0.0 && self.min_child_weight >= 0.0) {
            return Err(Error::Argument(
                "lambda, gamma and min_child_weight must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Forest for one coordinate: prediction is the mean over trees.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(x)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Boosted trees for one coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Boost {
    pub base: f64,
    pub eta: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub trees: Vec<Tree>,
}

impl Boost {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.base + self.eta * self.trees.iter().map(|t| t.predict_row(x)).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeModel {
    /// One forest per coordinate.
    Forest {
        n_features: usize,
        axes: Vec<Forest>,
    },
    /// One booster per coordinate.
    Boost { n_features: usize, axes: Vec<Boost> },
}

impl TreeModel {
    pub fn input_width(&self) -> usize {
        match self {
            TreeModel::Forest { n_features, .. } | TreeModel::Boost { n_features, .. } => {
                *n_features
            }
        }
    }

    fn trees(&self) -> Box<dyn Iterator<Item = &Tree> + '_> {
        match self {
            TreeModel::Forest { axes, .. } => Box::new(axes.iter().flat_map(|a| &a.trees)),
            TreeModel::Boost { axes, .. } => Box::new(axes.iter().flat_map(|a| &a.trees)),
        }
    }
}

fn check_fit_input(fs: &FeatureSet) -> Result<()> {
    if fs.len() < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 records to fit trees, got {}",
            fs.len()
        )));
    }
    if fs.len() > u32::MAX as usize {
        return Err(Error::Argument("too many records".into()));
    }
    Ok(())
}

fn column(m: &Matrix<f64>, c: usize) -> Vec<f64> {
    m.iter_rows().map(|r| r[c]).collect()
}

/// Fits a forest to one coordinate.
pub fn fit_forest_axis(
    x: &Matrix<f64>,
    y: &[f64],
    cfg: &ForestConfig,
    axis: usize,
) -> Result<Forest> {
    cfg.validate()?;
    let cols = Columns::from_rows(x);
    let n = x.rows();
    let f = x.cols();
    let k = ((cfg.feature_subsample * f as f64).round() as usize).clamp(1, f.max(1));
    let params = GrowParams {
        max_depth: cfg.max_depth,
        min_samples_leaf: cfg.min_samples_leaf,
        min_child_weight: 0.0,
        lambda: 0.0,
        gamma: 0.0,
        features_per_split: if k < f { Some(k) } else { None },
    };
    let h = vec![1.0; n];
    let mut trees = Vec::with_capacity(cfg.n_trees);
    for t in 0..cfg.n_trees {
        let stream_idx = (axis * cfg.n_trees + t) as u64;
        let samples: Vec<u32> = if cfg.bootstrap {
            let mut b = rng::stream(cfg.seed, domain::BOOTSTRAP, stream_idx);
            (0..n).map(|_| b.random_range(0..n) as u32).collect()
        } else {
            (0..n as u32).collect()
        };
        let mean = samples.iter().map(|&s| y[s as usize]).sum::<f64>() / n as f64;
        let g: Vec<f64> = y.iter().map(|v| mean - v).collect();
        let mut split_rng = rng::stream(cfg.seed, domain::TREE, stream_idx);
        let mut tree = grow(&cols, &g, &h, &samples, &params, Some(&mut split_rng));
        for node in &mut tree.nodes {
            if let Node::Leaf { value } = node {
                *value += mean;
            }
        }
        trees.push(tree);
    }
    Ok(Forest { trees })
}

pub fn fit_forest(fs: &FeatureSet, cfg: &ForestConfig) -> Result<TreeModel> {
    check_fit_input(fs)?;
    let axes = (0..2)
        .map(|a| fit_forest_axis(&fs.features, &column(&fs.labels, a), cfg, a))
        .collect::<Result<Vec<_>>>()?;
    Ok(TreeModel::Forest {
        n_features: fs.width(),
        axes,
    })
}

/// Boosts one coordinate.
pub fn fit_boost_axis(x: &Matrix<f64>, y: &[f64], cfg: &BoostConfig) -> Result<Boost> {
    cfg.validate()?;
    let n = x.rows();
    let cols = Columns::from_rows(x);
    let base = y.iter().sum::<f64>() / n.max(1) as f64;
    let params = GrowParams {
        max_depth: cfg.max_depth,
        min_samples_leaf: 1,
        min_child_weight: cfg.min_child_weight,
        lambda: cfg.lambda,
        gamma: cfg.gamma,
        features_per_split: None,
    };
    let samples: Vec<u32> = (0..n as u32).collect();
    let h = vec![1.0; n];
    let mut pred = vec![base; n];
    let mut g = vec![0.0; n];
    let mut trees = Vec::with_capacity(cfg.n_rounds);
    for _ in 0..cfg.n_rounds {
        for i in 0..n {
            g[i] = pred[i] - y[i];
        }
        let tree = grow(&cols, &g, &h, &samples, &params, None);
        for (i, p) in pred.iter_mut().enumerate() {
            *p += cfg.eta * tree.predict_row(x.row(i));
        }
        trees.push(tree);
    }
    Ok(Boost {
        base,
        eta: cfg.eta,
        lambda: cfg.lambda,
        gamma: cfg.gamma,
        trees,
    })
}

pub fn fit_gbt(fs: &FeatureSet, cfg: &BoostConfig) -> Result<TreeModel> {
    check_fit_input(fs)?;
    let axes = (0..2)
        .map(|a| fit_boost_axis(&fs.features, &column(&fs.labels, a), cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(TreeModel::Boost {
        n_features: fs.width(),
        axes,
    })
}

/// `N × 2` positions.
pub fn predict_trees(model: &TreeModel, x: &Matrix<f64>) -> Result<Matrix<f64>> {
    if x.cols() != model.input_width() {
        return Err(Error::Shape {
            expected: model.input_width(),
            actual: x.cols(),
        });
    }
    let mut out = Matrix::zeros(x.rows(), 2);
    for (i, row) in x.iter_rows().enumerate() {
        for a in 0..2 {
            let v = match model {
                TreeModel::Forest { axes, .. } => axes[a].predict_row(row),
                TreeModel::Boost { axes, .. } => axes[a].predict_row(row),
            };
            out.set(i, a, v);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    /// Total split gain per feature over all trees of both coordinates,
    /// normalized to sum 1 (all zero when nothing split).
    pub importance: Vec<f64>,
}

pub fn feature_importance(model: &TreeModel) -> ImportanceReport {
    let mut acc = vec![0.0; model.input_width()];
    for t in model.trees() {
        t.add_importance(&mut acc);
    }
    let total: f64 = acc.iter().sum();
    if total > 0.0 {
        acc.iter_mut().for_each(|v| *v /= total);
    }
    ImportanceReport { importance: acc }
}
