//! Oblique decision trees: arena storage, routing, pruning and persistence.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, RadioClass, Scaler};
use crate::error::{Error, Result};
use crate::exact::ExactSum;

pub type NodeId = usize;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Internal node sending `x` left iff `w·x + w0 < 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionNode {
    pub w: Vec<f64>,
    pub w0: f64,
    pub left: NodeId,
    pub right: NodeId,
}

impl DecisionNode {
    pub fn value(&self, x: &[f64]) -> f64 {
        linear_value(&self.w, self.w0, x)
    }

    /// Child reached by `x`; a value of exactly zero goes right.
    pub fn route(&self, x: &[f64]) -> Result<NodeId> {
        if x.len() != self.w.len() {
            return Err(Error::Dimension {
                expected: self.w.len(),
                got: x.len(),
            });
        }
        Ok(self.child(x))
    }

    #[inline]
    pub(crate) fn child(&self, x: &[f64]) -> NodeId {
        if self.value(x) < 0.0 {
            self.left
        } else {
            self.right
        }
    }

    pub fn is_zero(&self) -> bool {
        self.w.iter().all(|&v| v == 0.0)
    }

    pub fn l1(&self) -> f64 {
        crate::exact::exact_sum(self.w.iter().map(|v| v.abs()))
    }
}

/// `Σ w_j x_j + w0`, accumulated left to right over the nonzero weights.
///
/// This is the one evaluation order used everywhere a hyperplane is
/// evaluated, including the emitted IF/ELSE programs, so routing decisions
/// agree bit for bit.
#[inline]
pub fn linear_value(w: &[f64], w0: f64, x: &[f64]) -> f64 {
    let mut acc: Option<f64> = None;
    for (a, v) in w.iter().zip(x) {
        if *a != 0.0 {
            let t = a * v;
            acc = Some(match acc {
                Some(s) => s + t,
                None => t,
            });
        }
    }
    match acc {
        Some(s) => s + w0,
        None => w0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Decision(DecisionNode),
    Leaf(RadioClass),
}

impl Node {
    pub fn as_decision(&self) -> Option<&DecisionNode> {
        match self {
            Node::Decision(d) => Some(d),
            Node::Leaf(_) => None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf(_))
    }
}

/// A validated oblique tree. Node ids index the arena and are stable across save/load.
#[derive(Debug, Clone, PartialEq)]
pub struct ObliqueTree {
    nodes: Vec<Node>,
    root: NodeId,
    lambda: f64,
    scaler: Option<Scaler>,
}

impl ObliqueTree {
    pub fn new(nodes: Vec<Node>, root: NodeId, lambda: f64, scaler: Option<Scaler>) -> Result<Self> {
        let tree = ObliqueTree {
            nodes,
            root,
            lambda,
            scaler,
        };
        tree.validate()?;
        Ok(tree)
    }

    pub fn leaf(label: RadioClass) -> Self {
        ObliqueTree {
            nodes: vec![Node::Leaf(label)],
            root: 0,
            lambda: 0.0,
            scaler: None,
        }
    }

    /// Checks the proper-binary-tree invariants in O(#nodes).
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        if self.root >= n {
            return Err(Error::Structure(format!("root {} out of range ({n} nodes)", self.root)));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Structure(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        let mut dim = self.scaler.as_ref().map(Scaler::dim);
        let mut parents = vec![0u32; n];
        for (id, node) in self.nodes.iter().enumerate() {
            if let Node::Decision(d) = node {
                match dim {
                    Some(k) if k != d.w.len() => {
                        return Err(Error::Structure(format!("node {id} has {} weights, expected {k}", d.w.len())))
                    }
                    _ => dim = Some(d.w.len()),
                }
                if d.w.iter().any(|v| !v.is_finite()) || !d.w0.is_finite() {
                    return Err(Error::Structure(format!("node {id} has non-finite parameters")));
                }
                for c in [d.left, d.right] {
                    if c >= n {
                        return Err(Error::Structure(format!("node {id} has dangling child {c}")));
                    }
                    parents[c] += 1;
                }
            }
        }
        if parents[self.root] != 0 {
            return Err(Error::Structure("root has a parent".into()));
        }
        if let Some(id) = (0..n).find(|&i| i != self.root && parents[i] != 1) {
            return Err(Error::Structure(format!("node {id} has {} parents", parents[id])));
        }
        // With every non-root node having one parent, unreachable nodes are exactly the cycles.
        let mut seen = vec![false; n];
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            seen[id] = true;
            if let Node::Decision(d) = &self.nodes[id] {
                stack.push(d.left);
                stack.push(d.right);
            }
        }
        if let Some(id) = seen.iter().position(|s| !s) {
            return Err(Error::Structure(format!("node {id} is unreachable from the root")));
        }
        if let Some(sc) = &self.scaler {
            sc.validate()?;
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub(crate) fn node_mut(&mut self, id: NodeId) -> &mut Node {
        &mut self.nodes[id]
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn set_lambda(&mut self, lambda: f64) {
        self.lambda = lambda;
    }

    pub fn scaler(&self) -> Option<&Scaler> {
        self.scaler.as_ref()
    }

    pub fn set_scaler(&mut self, scaler: Option<Scaler>) -> Result<()> {
        if let (Some(sc), Some(k)) = (&scaler, self.weight_dim()) {
            if sc.dim() != k {
                return Err(Error::Dimension {
                    expected: k,
                    got: sc.dim(),
                });
            }
        }
        self.scaler = scaler;
        Ok(())
    }

    /// Feature dimensionality, if the tree has any hyperplane or scaler to tell.
    pub fn dim(&self) -> Option<usize> {
        self.scaler.as_ref().map(Scaler::dim).or_else(|| self.weight_dim())
    }

    fn weight_dim(&self) -> Option<usize> {
        self.nodes.iter().find_map(|n| n.as_decision().map(|d| d.w.len()))
    }

    pub fn decision_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).filter(|&i| !self.nodes[i].is_leaf())
    }

    pub fn leaf_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_leaf())
    }

    pub fn num_leaves(&self) -> usize {
        self.leaf_ids().count()
    }

    pub fn num_decisions(&self) -> usize {
        self.nodes.len() - self.num_leaves()
    }

    /// Distance from the root of every node, indexed by id.
    pub fn node_depths(&self) -> Vec<usize> {
        let mut depth = vec![0; self.nodes.len()];
        let mut queue = VecDeque::from([self.root]);
        while let Some(id) = queue.pop_front() {
            if let Node::Decision(d) = &self.nodes[id] {
                depth[d.left] = depth[id] + 1;
                depth[d.right] = depth[id] + 1;
                queue.push_back(d.left);
                queue.push_back(d.right);
            }
        }
        depth
    }

    /// Longest root-to-leaf path, in edges.
    pub fn depth(&self) -> usize {
        self.node_depths().into_iter().max().unwrap_or(0)
    }

    /// `Σ_i ‖w_i‖₁` over decision nodes, summed exactly.
    pub fn l1_norm(&self) -> f64 {
        let mut acc = ExactSum::new();
        for n in &self.nodes {
            if let Node::Decision(d) = n {
                acc.extend(d.w.iter().map(|v| v.abs()));
            }
        }
        acc.value()
    }

    /// Leaf reached from `start` by a model-space input.
    #[inline]
    pub fn leaf_from(&self, start: NodeId, z: &[f64]) -> NodeId {
        let mut id = start;
        while let Node::Decision(d) = &self.nodes[id] {
            id = d.child(z);
        }
        id
    }

    pub fn label_of(&self, leaf: NodeId) -> RadioClass {
        match self.nodes[leaf] {
            Node::Leaf(l) => l,
            Node::Decision(_) => panic!("node {leaf} is not a leaf"),
        }
    }

    /// Prediction for features already in model space (standardized when the tree has a scaler).
    #[inline]
    pub fn predict_model(&self, z: &[f64]) -> RadioClass {
        self.label_of(self.leaf_from(self.root, z))
    }

    /// Prediction for raw sensor features.
    ///
    /// When the tree carries a scaler, each hyperplane is evaluated in its
    /// folded raw-feature form (see [`ObliqueTree::raw_hyperplane`]), the same
    /// coefficients an exported program uses.
    pub fn predict(&self, x: &[f64]) -> Result<RadioClass> {
        if let Some(k) = self.dim() {
            if x.len() != k {
                return Err(Error::Dimension { expected: k, got: x.len() });
            }
        }
        let mut id = self.root;
        loop {
            match &self.nodes[id] {
                Node::Leaf(l) => return Ok(*l),
                Node::Decision(d) => {
                    let (a, b) = self.raw_hyperplane(d);
                    id = if linear_value(&a, b, x) < 0.0 { d.left } else { d.right };
                }
            }
        }
    }

    /// Hyperplane of `d` expressed on raw features.
    ///
    /// With a scaler, `a_j = w_j / σ_j` and `b = w0 - Σ a_j μ_j`; without one
    /// the node's own parameters are returned.
    pub fn raw_hyperplane(&self, d: &DecisionNode) -> (Vec<f64>, f64) {
        match &self.scaler {
            None => (d.w.clone(), d.w0),
            Some(sc) => {
                let a: Vec<f64> = d.w.iter().zip(&sc.std).map(|(w, s)| if *w == 0.0 { 0.0 } else { w / s }).collect();
                let mut shift = ExactSum::new();
                shift.add(d.w0);
                shift.extend(a.iter().zip(&sc.mean).filter(|(a, _)| **a != 0.0).map(|(a, m)| -(a * m)));
                (a, shift.value())
            }
        }
    }

    /// Prediction for sample `i` of `ds`, choosing the route that matches how `ds` stores features.
    pub fn predict_in(&self, ds: &Dataset, i: usize) -> Result<RadioClass> {
        match ds.scaler() {
            sc if sc == self.scaler.as_ref() => {
                let x = &ds.samples()[i].x;
                if let Some(k) = self.dim() {
                    if x.len() != k {
                        return Err(Error::Dimension { expected: k, got: x.len() });
                    }
                }
                Ok(self.predict_model(x))
            }
            _ => self.predict(&ds.raw_x(i)),
        }
    }

    /// Removes every decision node whose weight vector is all zeros.
    ///
    /// Such a node sends every input to one child (left iff `w0 < 0`), so it is
    /// replaced by that child and the other subtree is dropped. Surviving nodes
    /// keep their relative id order; a tree without zero hyperplanes is returned
    /// unchanged.
    pub fn prune(&self) -> ObliqueTree {
        let resolve = |mut id: NodeId| loop {
            match &self.nodes[id] {
                Node::Decision(d) if d.is_zero() => id = if d.w0 < 0.0 { d.left } else { d.right },
                _ => return id,
            }
        };
        let root = resolve(self.root);
        let mut keep = vec![false; self.nodes.len()];
        let mut rewired = self.nodes.clone();
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            keep[id] = true;
            if let Node::Decision(d) = &mut rewired[id] {
                d.left = resolve(d.left);
                d.right = resolve(d.right);
                stack.push(d.left);
                stack.push(d.right);
            }
        }
        let mut remap = vec![usize::MAX; self.nodes.len()];
        let mut next = 0;
        for (old, k) in keep.iter().enumerate() {
            if *k {
                remap[old] = next;
                next += 1;
            }
        }
        let nodes = rewired
            .into_iter()
            .enumerate()
            .filter(|(old, _)| keep[*old])
            .map(|(_, mut n)| {
                if let Node::Decision(d) = &mut n {
                    d.left = remap[d.left];
                    d.right = remap[d.right];
                }
                n
            })
            .collect();
        ObliqueTree {
            nodes,
            root: remap[root],
            lambda: self.lambda,
            scaler: self.scaler.clone(),
        }
    }

    /// Weight-independent skeleton: leaves print as `Z`/`L`, decision nodes as `(left,right)`.
    pub fn structural_signature(&self) -> String {
        fn walk(t: &ObliqueTree, id: NodeId, out: &mut String) {
            match &t.nodes[id] {
                Node::Leaf(l) => out.push(l.letter()),
                Node::Decision(d) => {
                    out.push('(');
                    walk(t, d.left, out);
                    out.push(',');
                    walk(t, d.right, out);
                    out.push(')');
                }
            }
        }
        let mut s = String::new();
        walk(self, self.root, &mut s);
        s
    }

    fn to_file(&self) -> ModelFile {
        ModelFile {
            version: MODEL_FORMAT_VERSION,
            depth: self.depth(),
            lambda: self.lambda,
            scaler: self.scaler.clone(),
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(id, n)| match n {
                    Node::Decision(d) => NodeRecord {
                        id,
                        kind: NodeKind::Decision,
                        w: Some(d.w.clone()),
                        w0: Some(d.w0),
                        left: Some(d.left),
                        right: Some(d.right),
                        label: None,
                    },
                    Node::Leaf(l) => NodeRecord {
                        id,
                        kind: NodeKind::Leaf,
                        w: None,
                        w0: None,
                        left: None,
                        right: None,
                        label: Some(*l),
                    },
                })
                .collect(),
            root: self.root,
        }
    }

    /// Canonical JSON text of the model file.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_file()).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        if file.version != MODEL_FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported format version {} (expected {MODEL_FORMAT_VERSION})",
                file.version
            )));
        }
        let n = file.nodes.len();
        let mut slots: Vec<Option<Node>> = vec![None; n];
        for rec in file.nodes {
            if rec.id >= n || slots[rec.id].is_some() {
                return Err(Error::Schema(format!("node ids must be unique and in 0..{n}, got {}", rec.id)));
            }
            let node = match rec.kind {
                NodeKind::Decision => match (rec.w, rec.w0, rec.left, rec.right, rec.label) {
                    (Some(w), Some(w0), Some(left), Some(right), None) => Node::Decision(DecisionNode { w, w0, left, right }),
                    _ => {
                        return Err(Error::Schema(format!(
                            "decision node {} needs w, w0, left, right and no label",
                            rec.id
                        )))
                    }
                },
                NodeKind::Leaf => match (rec.w, rec.w0, rec.left, rec.right, rec.label) {
                    (None, None, None, None, Some(l)) => Node::Leaf(l),
                    _ => return Err(Error::Schema(format!("leaf {} needs a label and nothing else", rec.id))),
                },
            };
            slots[rec.id] = Some(node);
        }
        let nodes: Vec<Node> = slots.into_iter().map(|s| s.expect("every slot filled")).collect();
        let tree = ObliqueTree::new(nodes, file.root, file.lambda, file.scaler)?;
        if tree.depth() != file.depth {
            return Err(Error::Schema(format!(
                "depth field {} disagrees with tree depth {}",
                file.depth,
                tree.depth()
            )));
        }
        Ok(tree)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        crate::sha256_hex(self.to_json().as_bytes())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    depth: usize,
    lambda: f64,
    scaler: Option<Scaler>,
    nodes: Vec<NodeRecord>,
    root: NodeId,
}

#[derive(Serialize, Deserialize, Clone, Copy)]
#[serde(rename_all = "lowercase")]
enum NodeKind {
    Decision,
    Leaf,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    id: NodeId,
    kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    left: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    right: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<RadioClass>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::RadioClass::{Lora, Zigbee};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stump(w: Vec<f64>, w0: f64, left: RadioClass, right: RadioClass) -> ObliqueTree {
        ObliqueTree::new(
            vec![
                Node::Decision(DecisionNode { w, w0, left: 1, right: 2 }),
                Node::Leaf(left),
                Node::Leaf(right),
            ],
            0,
            0.0,
            None,
        )
        .unwrap()
    }

    /// Random tree of the given depth; `zero_rate` of the hyperplanes are zeroed.
    pub(crate) fn random_tree(rng: &mut ChaCha8Rng, depth: usize, zero_rate: f64) -> ObliqueTree {
        fn grow(rng: &mut ChaCha8Rng, nodes: &mut Vec<Node>, depth: usize, zero_rate: f64) -> NodeId {
            let id = nodes.len();
            if depth == 0 || rng.random_bool(0.15) {
                nodes.push(Node::Leaf(RadioClass::from_index(rng.random_range(0..2)).unwrap()));
                return id;
            }
            let zero = rng.random_bool(zero_rate);
            let w = (0..4).map(|_| if zero { 0.0 } else { rng.random_range(-1.0..1.0) }).collect();
            nodes.push(Node::Decision(DecisionNode {
                w,
                w0: rng.random_range(-1.0..1.0),
                left: 0,
                right: 0,
            }));
            let l = grow(rng, nodes, depth - 1, zero_rate);
            let r = grow(rng, nodes, depth - 1, zero_rate);
            if let Node::Decision(d) = &mut nodes[id] {
                d.left = l;
                d.right = r;
            }
            id
        }
        let mut nodes = Vec::new();
        grow(rng, &mut nodes, depth, zero_rate);
        ObliqueTree::new(nodes, 0, 0.0, None).unwrap()
    }

    /// Independent traversal: evaluates each hyperplane with a plain dot product.
    fn manual_predict(t: &ObliqueTree, x: &[f64]) -> RadioClass {
        let mut id = t.root();
        loop {
            match t.node(id) {
                Node::Leaf(l) => return *l,
                Node::Decision(d) => {
                    let g: f64 = d.w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + d.w0;
                    id = if g < 0.0 { d.left } else { d.right };
                }
            }
        }
    }

    fn random_x(rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..4).map(|_| rng.random_range(-3.0..3.0)).collect()
    }

    #[test]
    fn route_sparse_node_one_goes_right() {
        let node = DecisionNode {
            w: vec![1.415681867042, 0.0, 0.0, 0.0],
            w0: 0.143560158843,
            left: 1,
            right: 2,
        };
        let x = [1.0, -120.0, 0.3, 4.0];
        assert!((node.value(&x) - 1.559242025885).abs() < 1e-12);
        assert_eq!(node.route(&x).unwrap(), 2);
        assert!(node.route(&[1.0]).is_err());
    }

    #[test]
    fn route_constant_and_tie() {
        let node = DecisionNode {
            w: vec![0.0; 4],
            w0: -1.0,
            left: 1,
            right: 2,
        };
        assert_eq!(node.route(&[5.0, -3.0, 0.0, 9.0]).unwrap(), 1);
        let tie = DecisionNode {
            w: vec![1.0, 0.0, 0.0, 0.0],
            w0: -2.0,
            left: 1,
            right: 2,
        };
        assert_eq!(tie.route(&[2.0, 0.0, 0.0, 0.0]).unwrap(), 2);
    }

    #[test]
    fn predict_small_trees() {
        let leaf = ObliqueTree::leaf(Lora);
        assert_eq!(leaf.predict(&[1.0, 2.0, 3.0, 4.0]).unwrap(), Lora);
        let t = stump(vec![1.0, 0.0, 0.0, 0.0], -2.0, Zigbee, Lora);
        assert_eq!(t.predict(&[1.0, -90.0, 0.5, 1.0]).unwrap(), Zigbee);
        assert_eq!(t.predict(&[3.0, -90.0, 0.5, 1.0]).unwrap(), Lora);
        assert!(t.predict(&[3.0]).is_err());
    }

    #[test]
    fn predict_matches_manual_traversal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let t = random_tree(&mut rng, 4, 0.0);
            for _ in 0..100 {
                let x = random_x(&mut rng);
                assert_eq!(t.predict(&x).unwrap(), manual_predict(&t, &x));
            }
        }
    }

    #[test]
    fn positive_rescaling_preserves_routes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let w: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w0 = rng.random_range(-1.0..1.0);
            let a = DecisionNode {
                w: w.clone(),
                w0,
                left: 1,
                right: 2,
            };
            let b = DecisionNode {
                w: w.iter().map(|v| 2.0 * v).collect(),
                w0: 2.0 * w0,
                left: 1,
                right: 2,
            };
            let x = random_x(&mut rng);
            assert_eq!(a.route(&x).unwrap(), b.route(&x).unwrap());
        }
    }

    #[test]
    fn validation_rejects_bad_structure() {
        let dangling = vec![
            Node::Decision(DecisionNode {
                w: vec![1.0],
                w0: 0.0,
                left: 1,
                right: 5,
            }),
            Node::Leaf(Zigbee),
        ];
        assert!(matches!(ObliqueTree::new(dangling, 0, 0.0, None), Err(Error::Structure(_))));
        let shared = vec![
            Node::Decision(DecisionNode {
                w: vec![1.0],
                w0: 0.0,
                left: 1,
                right: 1,
            }),
            Node::Leaf(Zigbee),
        ];
        assert!(ObliqueTree::new(shared, 0, 0.0, None).is_err());
        let cycle = vec![
            Node::Leaf(Zigbee),
            Node::Decision(DecisionNode {
                w: vec![1.0],
                w0: 0.0,
                left: 2,
                right: 3,
            }),
            Node::Decision(DecisionNode {
                w: vec![1.0],
                w0: 0.0,
                left: 1,
                right: 4,
            }),
            Node::Leaf(Lora),
            Node::Leaf(Lora),
        ];
        assert!(ObliqueTree::new(cycle, 0, 0.0, None).is_err());
    }

    #[test]
    fn prune_always_left_root() {
        let t = stump(vec![0.0; 4], -1.0, Zigbee, Lora);
        let p = t.prune();
        assert_eq!(p.nodes(), &[Node::Leaf(Zigbee)]);
        assert_eq!(p.structural_signature(), "Z");
    }

    #[test]
    fn prune_without_zero_nodes_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_tree(&mut rng, 4, 0.0);
        assert_eq!(t.prune(), t);
    }

    #[test]
    fn prune_preserves_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let t = random_tree(&mut rng, 5, 0.35);
            let p = t.prune();
            p.validate().unwrap();
            assert!(p.decision_ids().all(|i| !p.node(i).as_decision().unwrap().is_zero()));
            for _ in 0..500 {
                let x = random_x(&mut rng);
                assert_eq!(t.predict(&x).unwrap(), p.predict(&x).unwrap());
            }
        }
    }

    #[test]
    fn signature_ignores_weights() {
        assert_eq!(ObliqueTree::leaf(Zigbee).structural_signature(), "Z");
        let a = stump(vec![1.0, 2.0, 0.0, 0.0], 0.5, Zigbee, Lora);
        let b = stump(vec![1.1, 1.9, 0.1, 0.0], 0.4, Zigbee, Lora);
        assert_eq!(a.structural_signature(), "(Z,L)");
        assert_eq!(a.structural_signature(), b.structural_signature());
    }

    #[test]
    fn json_round_trip_is_canonical() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut t = random_tree(&mut rng, 3, 0.0);
        t.set_lambda(0.01);
        t.set_scaler(Some(Scaler {
            mean: vec![2.0, -100.0, 0.7, 1.4],
            std: vec![1.0, 9.0, 0.2, 0.5],
        }))
        .unwrap();
        let text = t.to_json();
        let back = ObliqueTree::from_json(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_json(), text);
        for _ in 0..200 {
            let x = random_x(&mut rng);
            assert_eq!(back.predict(&x).unwrap(), t.predict(&x).unwrap());
        }
    }

    #[test]
    fn json_errors() {
        let text = stump(vec![1.0], 0.0, Zigbee, Lora).to_json();
        assert!(matches!(ObliqueTree::from_json(&text[..text.len() / 2]), Err(Error::Schema(_))));
        let v2 = text.replace("\"version\": 1", "\"version\": 2");
        let err = ObliqueTree::from_json(&v2).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn folded_prediction_tracks_scaled_prediction() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let sc = Scaler {
            mean: vec![3.0, -105.0, 0.6, 2.0],
            std: vec![1.2, 8.0, 0.25, 0.9],
        };
        let mut t = random_tree(&mut rng, 3, 0.0);
        t.set_scaler(Some(sc.clone())).unwrap();
        let mut disagreements = 0;
        for _ in 0..2000 {
            let x: Vec<f64> = (0..4).map(|j| sc.mean[j] + sc.std[j] * rng.random_range(-3.0..3.0)).collect();
            if t.predict(&x).unwrap() != t.predict_model(&sc.transform(&x)) {
                disagreements += 1;
            }
        }
        // Only rounding-level boundary cases may differ.
        assert_eq!(disagreements, 0);
    }
}
