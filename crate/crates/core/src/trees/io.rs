//! `CSIT` model files.
//!
//! ```text
//! "CSIT" | u32 version = 1 | u32 kind (0 forest, 1 boost) | u32 F | u32 axes
//! per axis:  forest: u32 n_trees
//!            boost:  f64 base | f64 eta | f64 lambda | f64 gamma | u32 n_trees
//! per tree:  u32 n_nodes | nodes in preorder
//! node:      u8 0 (leaf) | f64 value
//!            u8 1 (split) | u32 feature | f64 threshold | f64 gain
//! ```
//!
//! In preorder the left child of a split immediately follows it, and the
//! right child follows the left subtree.

use std::io::Write;
use std::path::Path;

use super::{Boost, Forest, Node, Tree, TreeModel};
use crate::wire::{self, Reader, Writer};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"CSIT";
const VERSION: u32 = 1;

fn put_tree<W: Write>(w: &mut Writer<W>, t: &Tree) -> std::io::Result<()> {
    fn walk<W: Write>(w: &mut Writer<W>, t: &Tree, i: usize) -> std::io::Result<()> {
        match t.nodes[i] {
            Node::Leaf { value } => {
                w.u8(0)?;
                w.f64(value)
            }
            Node::Internal {
                feature,
                threshold,
                left,
                right,
                gain,
            } => {
                w.u8(1)?;
                w.u32(feature as u32)?;
                w.f64(threshold)?;
                w.f64(gain)?;
                walk(w, t, left)?;
                walk(w, t, right)
            }
        }
    }
    w.u32(t.nodes.len() as u32)?;
    walk(w, t, 0)
}

fn get_tree(rd: &mut Reader, n_features: usize) -> Result<Tree> {
    fn walk(
        rd: &mut Reader,
        nodes: &mut Vec<Node>,
        budget: usize,
        n_features: usize,
    ) -> Result<usize> {
        if nodes.len() >= budget {
            return Err(Error::Format("tree has more nodes than declared".into()));
        }
        let id = nodes.len();
        match rd.u8()? {
            0 => {
                let value = rd.f64()?;
                if !value.is_finite() {
                    return Err(Error::Format("non-finite leaf value".into()));
                }
                nodes.push(Node::Leaf { value });
            }
            1 => {
                let feature = rd.u32()? as usize;
                if feature >= n_features {
                    return Err(Error::Format(format!(
                        "split feature {feature} out of range"
                    )));
                }
                let threshold = rd.f64()?;
                let gain = rd.f64()?;
                nodes.push(Node::Leaf { value: 0.0 });
                let left = walk(rd, nodes, budget, n_features)?;
                let right = walk(rd, nodes, budget, n_features)?;
                nodes[id] = Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                    gain,
                };
            }
            tag => return Err(Error::Format(format!("unknown node tag {tag}"))),
        }
        Ok(id)
    }
    let n = rd.u32()? as usize;
    if n == 0 {
        return Err(Error::Format("empty tree".into()));
    }
    let mut nodes = Vec::with_capacity(n.min(1 << 20));
    walk(rd, &mut nodes, n, n_features)?;
    if nodes.len() != n {
        return Err(Error::Format("tree has fewer nodes than declared".into()));
    }
    Ok(Tree { nodes })
}

pub fn save_trees(model: &TreeModel, path: &Path) -> Result<()> {
    wire::write_file(path, |w| {
        w.bytes(MAGIC)?;
        w.u32(VERSION)?;
        match model {
            TreeModel::Forest { n_features, axes } => {
                w.u32(0)?;
                w.u32(*n_features as u32)?;
                w.u32(axes.len() as u32)?;
                for a in axes {
                    w.u32(a.trees.len() as u32)?;
                    a.trees.iter().try_for_each(|t| put_tree(w, t))?;
                }
            }
            TreeModel::Boost { n_features, axes } => {
                w.u32(1)?;
                w.u32(*n_features as u32)?;
                w.u32(axes.len() as u32)?;
                for a in axes {
                    w.f64(a.base)?;
                    w.f64(a.eta)?;
                    w.f64(a.lambda)?;
                    w.f64(a.gamma)?;
                    w.u32(a.trees.len() as u32)?;
                    a.trees.iter().try_for_each(|t| put_tree(w, t))?;
                }
            }
        }
        Ok(())
    })
}

pub fn load_trees(path: &Path) -> Result<TreeModel> {
    let buf = wire::read_file(path)?;
    let mut rd = Reader::new(&buf);
    rd.expect_magic(MAGIC)?;
    rd.expect_version(VERSION)?;
    let kind = rd.u32()?;
    let n_features = rd.u32()? as usize;
    let n_axes = rd.u32()? as usize;
    if n_axes != 2 {
        return Err(Error::Format(format!(
            "expected 2 coordinate models, found {n_axes}"
        )));
    }
    let model = match kind {
        0 => {
            let mut axes = Vec::new();
            for _ in 0..n_axes {
                let n = rd.u32()? as usize;
                if n == 0 {
                    return Err(Error::Format("forest without trees".into()));
                }
                let trees = (0..n)
                    .map(|_| get_tree(&mut rd, n_features))
                    .collect::<Result<_>>()?;
                axes.push(Forest { trees });
            }
            TreeModel::Forest { n_features, axes }
        }
        1 => {
            let mut axes = Vec::new();
            for _ in 0..n_axes {
                let base = rd.f64()?;
                let eta = rd.f64()?;
                let lambda = rd.f64()?;
                let gamma = rd.f64()?;
                let n = rd.u32()? as usize;
                let trees = (0..n)
                    .map(|_| get_tree(&mut rd, n_features))
                    .collect::<Result<_>>()?;
                axes.push(Boost {
                    base,
                    eta,
                    lambda,
                    gamma,
                    trees,
                });
            }
            TreeModel::Boost { n_features, axes }
        }
        k => return Err(Error::Format(format!("unknown tree model kind {k}"))),
    };
    if rd.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes", rd.remaining())));
    }
    Ok(model)
}
