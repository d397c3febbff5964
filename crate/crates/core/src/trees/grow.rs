//! Exact greedy tree growth on presorted per-feature sample lists.
//!
//! One routine serves both ensembles. A split's gain is
//!
//! ```text
//! ½ [G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)] − γ
//! ```
//!
//! over gradient sums `G` and hessian sums `H`, and a leaf holds
//! `−G/(H+λ)`. Regression trees for the forest use `g = −(y − ȳ)`, `h = 1`,
//! `λ = γ = 0`, which makes the gain half the reduction in squared error
//! and the leaf the mean residual.

use rand::seq::index;

use super::{Node, Tree};
use crate::rng::Rng;

#[derive(Debug, Clone)]
pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub min_child_weight: f64,
    pub lambda: f64,
    pub gamma: f64,
    /// Features examined per split; `None` means all.
    pub features_per_split: Option<usize>,
}

/// Feature-major copy of the design matrix.
pub(crate) struct Columns {
    pub n_rows: usize,
    pub n_features: usize,
    data: Vec<f64>,
}

impl Columns {
    pub fn from_rows(x: &crate::linalg::Matrix<f64>) -> Self {
        let (n, f) = (x.rows(), x.cols());
        let mut data = vec![0.0; n * f];
        for i in 0..n {
            for (j, &v) in x.row(i).iter().enumerate() {
                data[j * n + i] = v;
            }
        }
        Columns {
            n_rows: n,
            n_features: f,
            data,
        }
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.n_rows..(j + 1) * self.n_rows]
    }
}

/// Midpoint strictly above `a` and at most `b` (for `a < b`).
pub(crate) fn midpoint(a: f64, b: f64) -> f64 {
    let t = a + (b - a) * 0.5;
    if t <= a {
        b
    } else {
        t
    }
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct Builder<'a> {
    cols: &'a Columns,
    g: &'a [f64],
    h: &'a [f64],
    p: &'a GrowParams,
    rng: Option<&'a mut Rng>,
    nodes: Vec<Node>,
    goes_left: Vec<bool>,
}

impl Builder<'_> {
    fn best_split(
        &mut self,
        sorted: &[Vec<u32>],
        g_sum: f64,
        h_sum: f64,
        tol: f64,
    ) -> Option<Split> {
        let p = self.p;
        let n_node = sorted[0].len();
        let lambda = p.lambda;
        let parent = g_sum * g_sum / (h_sum + lambda);
        let features: Vec<usize> = match (p.features_per_split, self.rng.as_deref_mut()) {
            (Some(k), Some(rng)) if k < self.cols.n_features => {
                let mut v = index::sample(rng, self.cols.n_features, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..self.cols.n_features).collect(),
        };
        let mut best: Option<Split> = None;
        for f in features {
            let col = self.cols.col(f);
            let list = &sorted[f];
            let (mut gl, mut hl) = (0.0, 0.0);
            for k in 0..n_node - 1 {
                let s = list[k] as usize;
                gl += self.g[s];
                hl += self.h[s];
                let (v, next) = (col[s], col[list[k + 1] as usize]);
                if next <= v {
                    continue;
                }
                let n_left = k + 1;
                if n_left < p.min_samples_leaf || n_node - n_left < p.min_samples_leaf {
                    continue;
                }
                let (gr, hr) = (g_sum - gl, h_sum - hl);
                if hl < p.min_child_weight || hr < p.min_child_weight {
                    continue;
                }
                let gain =
                    0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent) - p.gamma;
                if gain <= tol {
                    continue;
                }
                if best.as_ref().is_none_or(|b| gain > b.gain + tol) {
                    best = Some(Split {
                        feature: f,
                        threshold: midpoint(v, next),
                        gain,
                    });
                }
            }
        }
        best
    }

    fn build(&mut self, sorted: Vec<Vec<u32>>, depth: usize) -> usize {
        let members = &sorted[0];
        let (mut g_sum, mut h_sum, mut g2) = (0.0, 0.0, 0.0);
        for &s in members {
            let s = s as usize;
            g_sum += self.g[s];
            h_sum += self.h[s];
            g2 += self.g[s] * self.g[s];
        }
        let leaf = Node::Leaf {
            value: -g_sum / (h_sum + self.p.lambda),
        };
        let id = self.nodes.len();
        self.nodes.push(leaf);
        if depth >= self.p.max_depth || members.len() < 2 {
            return id;
        }
        // Round-off guard: gains within this band of zero (or of each
        // other) count as no improvement (or as ties).
        let tol = 1e-12 * g2;
        let Some(split) = self.best_split(&sorted, g_sum, h_sum, tol) else {
            return id;
        };
        let col = self.cols.col(split.feature);
        for &s in members {
            self.goes_left[s as usize] = col[s as usize] < split.threshold;
        }
        let mut left = Vec::with_capacity(sorted.len());
        let mut right = Vec::with_capacity(sorted.len());
        for list in sorted {
            let (l, r): (Vec<u32>, Vec<u32>) =
                list.into_iter().partition(|&s| self.goes_left[s as usize]);
            left.push(l);
            right.push(r);
        }
        let l = self.build(left, depth + 1);
        let r = self.build(right, depth + 1);
        self.nodes[id] = Node::Internal {
            feature: split.feature,
            threshold: split.threshold,
            left: l,
            right: r,
            gain: split.gain,
        };
        id
    }
}

/// Grows one tree over `samples` (row indices, repeats allowed).
pub(crate) fn grow(
    cols: &Columns,
    g: &[f64],
    h: &[f64],
    samples: &[u32],
    p: &GrowParams,
    rng: Option<&mut Rng>,
) -> Tree {
    let sorted: Vec<Vec<u32>> = (0..cols.n_features)
        .map(|f| {
            let col = cols.col(f);
            let mut v = samples.to_vec();
            // stable: repeated samples stay adjacent
            v.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
            v
        })
        .collect();
    let mut b = Builder {
        cols,
        g,
        h,
        p,
        rng,
        nodes: Vec::new(),
        goes_left: vec![false; cols.n_rows],
    };
    if samples.is_empty() {
        return Tree {
            nodes: vec![Node::Leaf { value: 0.0 }],
        };
    }
    b.build(sorted, 0);
    Tree { nodes: b.nodes }
}
