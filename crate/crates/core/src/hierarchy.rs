//! Tilt trees: nested groupings of samples with one tilt per level.
//!
//! The innermost level tilts the samples of each leaf group. Every level
//! above tilts the values of its children, weighting each child by its
//! sample count relative to the parent:
//!
//! ```text
//! J(node) = (1/t_k) log( sum_c (n_c / n) exp(t_k J(c)) )
//! ```
//!
//! Two levels `[t, tau]` give the group/sample objective; three levels
//! `[m, t, tau]` give the super-group form. A zero tilt at any level is the
//! size-weighted arithmetic mean.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TermError};
use crate::tilt::{
    softmax_raw, tilted_value_raw, weighted_softmax, weighted_tilted_value, LossVector,
};

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(Vec<usize>),
    Inner { children: Vec<Node>, size: usize },
}

impl Node {
    fn size(&self) -> usize {
        match self {
            Node::Leaf(s) => s.len(),
            Node::Inner { size, .. } => *size,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TiltTree {
    levels: Vec<f64>,
    root: Node,
    num_samples: usize,
}

/// Per-sample weights of the tree gradient plus the outermost group weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierWeights {
    pub sample: Vec<f64>,
    /// Softmax weights of the root's children (empty for a single-level tree).
    pub group: Vec<f64>,
}

fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(TermError::input("a tilt tree needs at least one level"));
    }
    if let Some(t) = levels.iter().find(|t| !t.is_finite()) {
        return Err(TermError::input(format!("tilt {t} is not finite")));
    }
    Ok(())
}

/// Group `items` by their key at `depth`, ordered by first appearance.
fn build(levels: usize, depth: usize, items: Vec<usize>, paths: &[Vec<usize>]) -> Node {
    if depth + 1 == levels {
        return Node::Leaf(items);
    }
    let mut keys: Vec<usize> = Vec::new();
    let mut buckets: Vec<Vec<usize>> = Vec::new();
    for i in items {
        let k = paths[i][depth];
        match keys.iter().position(|&x| x == k) {
            Some(p) => buckets[p].push(i),
            None => {
                keys.push(k);
                buckets.push(vec![i]);
            }
        }
    }
    let children: Vec<Node> = buckets
        .into_iter()
        .map(|b| build(levels, depth + 1, b, paths))
        .collect();
    let size = children.iter().map(Node::size).sum();
    Node::Inner { children, size }
}

impl TiltTree {
    /// Sample-level tilting over `n` samples.
    pub fn flat(t: f64, n: usize) -> Result<Self> {
        check_levels(&[t])?;
        if n == 0 {
            return Err(TermError::input("tilt tree over zero samples"));
        }
        Ok(TiltTree {
            levels: vec![t],
            root: Node::Leaf((0..n).collect()),
            num_samples: n,
        })
    }

    /// Build from per-sample group paths (outermost label first). Every path
    /// must have exactly `levels.len() - 1` labels.
    pub fn new(levels: Vec<f64>, paths: &[Vec<usize>]) -> Result<Self> {
        check_levels(&levels)?;
        if paths.is_empty() {
            return Err(TermError::input("tilt tree over zero samples"));
        }
        let depth = levels.len() - 1;
        if let Some(i) = paths.iter().position(|p| p.len() != depth) {
            return Err(TermError::input(format!(
                "sample {i} has a group path of length {}, tree with {} levels needs {depth}",
                paths[i].len(),
                levels.len()
            )));
        }
        let root = build(levels.len(), 0, (0..paths.len()).collect(), paths);
        Ok(TiltTree {
            levels,
            root,
            num_samples: paths.len(),
        })
    }

    /// Two-level tree `[t, tau]` from explicit groups, which must partition `0..n`.
    pub fn two_level(t: f64, tau: f64, groups: Vec<Vec<usize>>) -> Result<Self> {
        check_levels(&[t, tau])?;
        let n: usize = groups.iter().map(Vec::len).sum();
        if n == 0 {
            return Err(TermError::input("tilt tree over zero samples"));
        }
        let mut seen = vec![false; n];
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(TermError::input(format!("group {g} is empty")));
            }
            for &i in members {
                if i >= n || seen[i] {
                    return Err(TermError::input(format!(
                        "groups do not partition 0..{n}: sample {i} repeated or out of range"
                    )));
                }
                seen[i] = true;
            }
        }
        let children: Vec<Node> = groups.into_iter().map(Node::Leaf).collect();
        Ok(TiltTree {
            levels: vec![t, tau],
            root: Node::Inner { children, size: n },
            num_samples: n,
        })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    /// Same structure, different tilts.
    pub fn with_levels(&self, levels: Vec<f64>) -> Result<Self> {
        check_levels(&levels)?;
        if levels.len() != self.levels.len() {
            return Err(TermError::input(format!(
                "tree has {} levels, got {} tilts",
                self.levels.len(),
                levels.len()
            )));
        }
        Ok(TiltTree {
            levels,
            root: self.root.clone(),
            num_samples: self.num_samples,
        })
    }

    /// Sample indices of every leaf group, in tree order.
    pub fn leaf_groups(&self) -> Vec<&[usize]> {
        fn walk<'a>(n: &'a Node, out: &mut Vec<&'a [usize]>) {
            match n {
                Node::Leaf(s) => out.push(s),
                Node::Inner { children, .. } => children.iter().for_each(|c| walk(c, out)),
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }

    fn check_losses(&self, losses: &[f64]) -> Result<()> {
        if losses.len() != self.num_samples {
            return Err(TermError::input(format!(
                "tree covers {} samples, got {} losses",
                self.num_samples,
                losses.len()
            )));
        }
        Ok(())
    }

    /// Tree objective with explicit per-level tilts (used by continuation).
    pub(crate) fn objective_with(&self, tilts: &[f64], losses: &[f64]) -> Result<f64> {
        self.check_losses(losses)?;
        Ok(node_value(&self.root, 0, tilts, losses))
    }

    pub(crate) fn weights_with(&self, tilts: &[f64], losses: &[f64]) -> Result<HierWeights> {
        self.check_losses(losses)?;
        let mut sample = vec![0.0; self.num_samples];
        let group = match &self.root {
            Node::Leaf(_) => Vec::new(),
            Node::Inner { children, size } => {
                child_weights(children, *size, tilts[0], tilts, losses)
            }
        };
        node_weights(&self.root, 0, 1.0, tilts, losses, &mut sample);
        Ok(HierWeights { sample, group })
    }
}

fn gather(idx: &[usize], losses: &[f64]) -> Vec<f64> {
    idx.iter().map(|&i| losses[i]).collect()
}

fn node_value(node: &Node, depth: usize, tilts: &[f64], losses: &[f64]) -> f64 {
    match node {
        Node::Leaf(idx) => tilted_value_raw(&gather(idx, losses), tilts[depth]),
        Node::Inner { children, size } => {
            let vals: Vec<f64> = children
                .iter()
                .map(|c| node_value(c, depth + 1, tilts, losses))
                .collect();
            let probs: Vec<f64> = children
                .iter()
                .map(|c| c.size() as f64 / *size as f64)
                .collect();
            weighted_tilted_value(&vals, &probs, tilts[depth])
        }
    }
}

fn child_weights(
    children: &[Node],
    size: usize,
    t: f64,
    tilts: &[f64],
    losses: &[f64],
) -> Vec<f64> {
    // children of the root live at depth 1
    let vals: Vec<f64> = children
        .iter()
        .map(|c| node_value(c, 1, tilts, losses))
        .collect();
    let probs: Vec<f64> = children
        .iter()
        .map(|c| c.size() as f64 / size as f64)
        .collect();
    weighted_softmax(&vals, &probs, t)
}

fn node_weights(
    node: &Node,
    depth: usize,
    mass: f64,
    tilts: &[f64],
    losses: &[f64],
    out: &mut [f64],
) {
    match node {
        Node::Leaf(idx) => {
            let w = softmax_raw(&gather(idx, losses), tilts[depth]);
            for (&i, wi) in idx.iter().zip(w) {
                out[i] = mass * wi;
            }
        }
        Node::Inner { children, size } => {
            let vals: Vec<f64> = children
                .iter()
                .map(|c| node_value(c, depth + 1, tilts, losses))
                .collect();
            let probs: Vec<f64> = children
                .iter()
                .map(|c| c.size() as f64 / *size as f64)
                .collect();
            let w = weighted_softmax(&vals, &probs, tilts[depth]);
            for (c, wc) in children.iter().zip(w) {
                node_weights(c, depth + 1, mass * wc, tilts, losses, out);
            }
        }
    }
}

/// Hierarchical tilted objective of a loss vector.
pub fn tree_tilted_objective(tree: &TiltTree, losses: &LossVector) -> Result<f64> {
    tree.objective_with(tree.levels(), losses.as_slice())
}

/// Per-sample gradient weights `w_g * w_{x|g}` (recursively for deeper trees).
pub fn tree_tilted_weights(tree: &TiltTree, losses: &LossVector) -> Result<HierWeights> {
    tree.weights_with(tree.levels(), losses.as_slice())
}
