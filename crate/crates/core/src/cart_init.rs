//! Greedy axis-aligned induction (CART) and random complete trees.
//!
//! Both produce [`ObliqueTree`]s: an axis split `x_j < τ` is stored as the
//! hyperplane `w = e_j`, `w0 = -τ`, so either can seed TAO directly.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, RadioClass};
use crate::error::{Error, Result};
use crate::exact::ExactSum;
use crate::tree::{DecisionNode, Node, ObliqueTree};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisSplit {
    pub feature: usize,
    pub threshold: f64,
}

impl AxisSplit {
    pub fn to_node(self, dim: usize, left: usize, right: usize) -> DecisionNode {
        let mut w = vec![0.0; dim];
        w[self.feature] = 1.0;
        DecisionNode {
            w,
            w0: -self.threshold,
            left,
            right,
        }
    }
}

/// Cost-weighted class totals of a set of samples.
fn class_weights(ds: &Dataset, idx: &[usize]) -> [f64; 2] {
    let mut acc = [ExactSum::new(), ExactSum::new()];
    for &i in idx {
        let s = &ds.samples()[i];
        acc[s.y.index()].add(s.c);
    }
    [acc[0].value(), acc[1].value()]
}

/// Cost-weighted majority; ties go to Zigbee.
fn majority(w: [f64; 2]) -> RadioClass {
    if w[1] > w[0] {
        RadioClass::Lora
    } else {
        RadioClass::Zigbee
    }
}

/// Total weight times Gini impurity: `2 w0 w1 / (w0 + w1)`.
fn weighted_gini(w: [f64; 2]) -> f64 {
    let t = w[0] + w[1];
    if t > 0.0 {
        2.0 * w[0] * w[1] / t
    } else {
        0.0
    }
}

/// Best split of `idx` by weighted Gini, or `None` if no admissible split lowers impurity.
///
/// Candidates are midpoints between consecutive distinct values; ties keep the
/// lowest feature index, then the lowest threshold.
pub fn best_split(ds: &Dataset, idx: &[usize], min_leaf_weight: f64) -> Option<AxisSplit> {
    let parent = class_weights(ds, idx);
    let parent_impurity = weighted_gini(parent);
    let mut best: Option<(f64, AxisSplit)> = None;
    let samples = ds.samples();
    let mut order = idx.to_vec();
    for j in 0..ds.dim() {
        order.sort_by(|&a, &b| samples[a].x[j].total_cmp(&samples[b].x[j]));
        let mut left = [0.0f64; 2];
        for k in 0..order.len() - 1 {
            let s = &samples[order[k]];
            left[s.y.index()] += s.c;
            let (lo, hi) = (s.x[j], samples[order[k + 1]].x[j]);
            if lo == hi {
                continue;
            }
            let right = [parent[0] - left[0], parent[1] - left[1]];
            if left[0] + left[1] < min_leaf_weight || right[0] + right[1] < min_leaf_weight {
                continue;
            }
            let g = weighted_gini(left) + weighted_gini(right);
            if best.is_none_or(|(bg, _)| g < bg) {
                let mut tau = lo + (hi - lo) / 2.0;
                if tau <= lo {
                    tau = hi;
                }
                best = Some((
                    g,
                    AxisSplit {
                        feature: j,
                        threshold: tau,
                    },
                ));
            }
        }
    }
    match best {
        Some((g, split)) if g < parent_impurity * (1.0 - 1e-12) => Some(split),
        _ => None,
    }
}

/// Grows a cost-weighted CART tree of depth at most `max_depth`.
///
/// Node ids are assigned breadth-first. Stops at depth `max_depth`, on pure
/// nodes, or when no split leaves both children with at least
/// `min_leaf_weight` total cost.
pub fn grow(ds: &Dataset, max_depth: usize, min_leaf_weight: f64) -> Result<ObliqueTree> {
    if ds.len() < 2 {
        return Err(Error::Data("CART needs at least two samples".into()));
    }
    let dim = ds.dim();
    let mut nodes: Vec<Node> = vec![Node::Leaf(RadioClass::Zigbee)];
    let mut queue = VecDeque::from([(0usize, (0..ds.len()).collect::<Vec<_>>(), 0usize)]);
    while let Some((id, idx, depth)) = queue.pop_front() {
        let w = class_weights(ds, &idx);
        let pure = w[0] == 0.0 || w[1] == 0.0;
        let split = if depth >= max_depth || pure || idx.len() < 2 {
            None
        } else {
            best_split(ds, &idx, min_leaf_weight)
        };
        match split {
            None => nodes[id] = Node::Leaf(majority(w)),
            Some(sp) => {
                let (l, r) = (nodes.len(), nodes.len() + 1);
                nodes.push(Node::Leaf(RadioClass::Zigbee));
                nodes.push(Node::Leaf(RadioClass::Zigbee));
                let (li, ri): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| ds.samples()[i].x[sp.feature] < sp.threshold);
                nodes[id] = Node::Decision(sp.to_node(dim, l, r));
                queue.push_back((l, li, depth + 1));
                queue.push_back((r, ri, depth + 1));
            }
        }
    }
    ObliqueTree::new(nodes, 0, 0.0, ds.scaler().cloned())
}

/// Complete tree of depth `depth` in heap order (children of `i` are `2i+1`, `2i+2`).
///
/// Weights and biases are i.i.d. uniform on [-1, 1]; leaves alternate
/// Zigbee, LoRa, Zigbee, ... from left to right.
pub fn random_complete(dim: usize, depth: usize, seed: u64) -> Result<ObliqueTree> {
    if depth == 0 {
        return Err(Error::Config("random complete tree needs depth >= 1".into()));
    }
    if depth > 20 {
        return Err(Error::Config(format!("depth {depth} is too large for a complete tree")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_dec = (1usize << depth) - 1;
    let n_leaf = 1usize << depth;
    let mut nodes = Vec::with_capacity(n_dec + n_leaf);
    for i in 0..n_dec {
        let w = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let w0 = rng.random_range(-1.0..=1.0);
        nodes.push(Node::Decision(DecisionNode {
            w,
            w0,
            left: 2 * i + 1,
            right: 2 * i + 2,
        }));
    }
    for k in 0..n_leaf {
        nodes.push(Node::Leaf(RadioClass::from_index(k % 2).expect("0 or 1")));
    }
    ObliqueTree::new(nodes, 0, 0.0, None)
}
