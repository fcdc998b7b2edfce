//! Tree alternating optimization of the cost-weighted objective
//! `E(Θ) = Σ_n c_n 1[T(x_n) ≠ y_n] + λ Σ_{i ∈ decisions} ‖w_i‖₁`.
//!
//! A pass visits depth levels from the deepest up to the root. Nodes of one
//! level have disjoint reach sets, so their reduced problems are independent:
//! leaves take the cost-weighted majority of the samples reaching them, and
//! decision nodes fit an L1 logistic surrogate on their care set and keep the
//! result only if it strictly lowers the penalized weighted 0/1 loss. All
//! losses are summed exactly, which makes each accepted update a strict
//! decrease of `E` in exact arithmetic and the computed history nonincreasing
//! with zero tolerance.

use serde::{Deserialize, Serialize};

use crate::cart_init;
use crate::dataset::{Dataset, RadioClass};
use crate::error::{Error, Result};
use crate::exact::ExactSum;
use crate::metrics;
use crate::solver::{self, LabeledPoint, LinearModel, SolverConfig, WeightedBinaryProblem};
use crate::tree::{Node, NodeId, ObliqueTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    Random,
    Cart,
    BestOfBoth,
}

/// Which initial tree a trained model came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitChoice {
    Random,
    Cart,
    Warm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaoConfig {
    pub depth: usize,
    pub lambda: f64,
    pub max_passes: usize,
    /// Stop when a pass lowers the objective by less than this fraction.
    pub pass_tol: f64,
    pub init_policy: InitPolicy,
    pub seed: u64,
    pub solver_max_iter: usize,
    pub solver_tol: f64,
    /// Minimum total cost per child for CART initialization splits.
    pub cart_min_leaf_weight: f64,
    /// Optimize the nodes of a level concurrently (needs the `parallel` feature).
    pub parallel: bool,
    /// Record the objective after every single node update.
    pub trace_nodes: bool,
}

impl Default for TaoConfig {
    fn default() -> Self {
        TaoConfig {
            depth: 4,
            lambda: 0.0,
            max_passes: 20,
            pass_tol: 1e-6,
            init_policy: InitPolicy::BestOfBoth,
            seed: 0,
            solver_max_iter: SolverConfig::default().max_iter,
            solver_tol: SolverConfig::default().tol,
            cart_min_leaf_weight: 0.0,
            parallel: true,
            trace_nodes: false,
        }
    }
}

impl TaoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("depth must be >= 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.max_passes == 0 {
            return Err(Error::Config("max_passes must be >= 1".into()));
        }
        if !(self.pass_tol >= 0.0) || self.solver_max_iter == 0 || !(self.solver_tol > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        Ok(())
    }

    fn solver(&self) -> SolverConfig {
        SolverConfig {
            max_iter: self.solver_max_iter,
            tol: self.solver_tol,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub tree: ObliqueTree,
    /// Objective before the first pass, after every pass, and after pruning when that lowers it.
    pub history: Vec<f64>,
    /// Objective after every node update, when `trace_nodes` was set.
    pub node_trace: Vec<f64>,
    pub init: InitChoice,
    /// The last pass accepted no update, so the tree is a fixed point of TAO.
    pub converged: bool,
}

impl TrainOutcome {
    pub fn objective(&self) -> f64 {
        *self.history.last().expect("history is never empty")
    }
}

/// The objective `E` with λ-weighted L1 penalty, summed exactly.
///
/// `ds` may be stored raw or standardized; predictions follow [`ObliqueTree::predict_in`].
pub fn objective(tree: &ObliqueTree, ds: &Dataset, lambda: f64) -> Result<f64> {
    let mut acc = ExactSum::new();
    for (i, s) in ds.samples().iter().enumerate() {
        if tree.predict_in(ds, i)? != s.y {
            acc.add(s.c);
        }
    }
    add_penalty(&mut acc, tree, lambda);
    Ok(acc.value())
}

fn add_penalty(acc: &mut ExactSum, tree: &ObliqueTree, lambda: f64) {
    for n in tree.nodes() {
        if let Node::Decision(d) = n {
            acc.extend(d.w.iter().map(|v| lambda * v.abs()));
        }
    }
}

/// Objective for a dataset already in the tree's model space.
fn model_objective(tree: &ObliqueTree, ds: &Dataset, lambda: f64) -> f64 {
    let mut acc = ExactSum::new();
    for s in ds.samples() {
        if tree.predict_model(&s.x) != s.y {
            acc.add(s.c);
        }
    }
    add_penalty(&mut acc, tree, lambda);
    acc.value()
}

/// Indices of the samples reaching each node, indexed by node id.
pub fn reach_sets(tree: &ObliqueTree, ds: &Dataset) -> Vec<Vec<usize>> {
    let mut reach = vec![Vec::new(); tree.nodes().len()];
    for (n, s) in ds.samples().iter().enumerate() {
        let mut id = tree.root();
        loop {
            reach[id].push(n);
            match tree.node(id) {
                Node::Leaf(_) => break,
                Node::Decision(d) => id = if d.value(&s.x) < 0.0 { d.left } else { d.right },
            }
        }
    }
    reach
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CareEntry {
    /// Sample index in the dataset.
    pub index: usize,
    pub side: Side,
    pub weight: f64,
}

/// The reduced problem of one decision node: samples whose best child is unambiguous.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CareSet {
    pub entries: Vec<CareEntry>,
}

impl CareSet {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn problem<'a>(&self, ds: &'a Dataset, lambda: f64) -> WeightedBinaryProblem<'a> {
        WeightedBinaryProblem {
            points: self
                .entries
                .iter()
                .map(|e| LabeledPoint {
                    x: &ds.samples()[e.index].x,
                    target: match e.side {
                        Side::Left => -1.0,
                        Side::Right => 1.0,
                    },
                    weight: e.weight,
                })
                .collect(),
            lambda,
        }
    }
}

/// Builds the care set of decision node `id` from the samples in `reach`.
///
/// Each sample is sent down both child subtrees; if exactly one classifies it
/// correctly it becomes an entry for that side with weight `c_n`.
pub fn build_care_set(tree: &ObliqueTree, ds: &Dataset, id: NodeId, reach: &[usize]) -> CareSet {
    let Node::Decision(d) = tree.node(id) else {
        return CareSet::default();
    };
    let mut entries = Vec::new();
    for &n in reach {
        let s = &ds.samples()[n];
        let left_ok = tree.label_of(tree.leaf_from(d.left, &s.x)) == s.y;
        let right_ok = tree.label_of(tree.leaf_from(d.right, &s.x)) == s.y;
        if left_ok != right_ok {
            entries.push(CareEntry {
                index: n,
                side: if left_ok { Side::Left } else { Side::Right },
                weight: s.c,
            });
        }
    }
    CareSet { entries }
}

/// New `(w, w0)` for decision node `id`, or `None` to keep the current parameters.
///
/// The surrogate solution is accepted only if it strictly lowers the care
/// set's weighted 0/1 loss plus `λ‖w‖₁`.
pub fn optimize_decision_node(
    tree: &ObliqueTree,
    ds: &Dataset,
    id: NodeId,
    care: &CareSet,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<Option<LinearModel>> {
    let Node::Decision(d) = tree.node(id) else {
        return Err(Error::Structure(format!("node {id} is not a decision node")));
    };
    if care.is_empty() {
        return Ok(None);
    }
    let problem = care.problem(ds, lambda);
    let current = LinearModel { w: d.w.clone(), w0: d.w0 };
    let candidate = solver::solve(&problem, &current, cfg)?;
    if solver::penalized_01_loss(&candidate, &problem) < solver::penalized_01_loss(&current, &problem) {
        Ok(Some(candidate))
    } else {
        Ok(None)
    }
}

/// Cost-weighted majority label of the samples in `reach`; ties and empty sets keep `current`.
pub fn optimize_leaf(ds: &Dataset, reach: &[usize], current: RadioClass) -> RadioClass {
    let mut w = [ExactSum::new(), ExactSum::new()];
    for &n in reach {
        let s = &ds.samples()[n];
        w[s.y.index()].add(s.c);
    }
    let other = current.other();
    if w[other.index()].value() > w[current.index()].value() {
        other
    } else {
        current
    }
}

enum Update {
    Leaf(RadioClass),
    Decision(LinearModel),
}

fn node_update(tree: &ObliqueTree, ds: &Dataset, id: NodeId, reach: &[usize], lambda: f64, cfg: &SolverConfig) -> Result<Option<Update>> {
    if reach.is_empty() {
        return Ok(None);
    }
    match tree.node(id) {
        Node::Leaf(cur) => {
            let best = optimize_leaf(ds, reach, *cur);
            Ok((best != *cur).then_some(Update::Leaf(best)))
        }
        Node::Decision(_) => {
            let care = build_care_set(tree, ds, id, reach);
            Ok(optimize_decision_node(tree, ds, id, &care, lambda, cfg)?.map(Update::Decision))
        }
    }
}

fn apply(tree: &mut ObliqueTree, id: NodeId, update: Update) {
    match (tree.node_mut(id), update) {
        (Node::Leaf(l), Update::Leaf(new)) => *l = new,
        (Node::Decision(d), Update::Decision(m)) => {
            d.w = m.w;
            d.w0 = m.w0;
        }
        _ => unreachable!("update kind matches node kind"),
    }
}

fn check_dataset(ds: &Dataset) -> Result<()> {
    if ds.len() < 2 {
        return Err(Error::Data("training needs at least two samples".into()));
    }
    let n = ds.class_counts();
    if n[0] == 0 || n[1] == 0 {
        return Err(Error::Data("training data contains a single class".into()));
    }
    Ok(())
}

/// Runs TAO passes on `tree` in place. The tree must be in `ds`'s model space.
fn optimize(tree: &mut ObliqueTree, ds: &Dataset, cfg: &TaoConfig) -> Result<(Vec<f64>, Vec<f64>, bool)> {
    let lambda = cfg.lambda;
    let scfg = cfg.solver();
    let check_nodes = cfg.trace_nodes || cfg!(debug_assertions);
    let mut obj = model_objective(tree, ds, lambda);
    let mut history = vec![obj];
    let mut node_trace = Vec::new();
    let mut converged = false;

    for _ in 0..cfg.max_passes {
        let start = obj;
        let mut changed = false;
        let depths = tree.node_depths();
        let max_depth = depths.iter().copied().max().unwrap_or(0);
        for level in (0..=max_depth).rev() {
            let ids: Vec<NodeId> = (0..depths.len()).filter(|&i| depths[i] == level).collect();
            // Reach sets of this level depend only on shallower nodes.
            let reach = reach_sets(tree, ds);
            if cfg.parallel && crate::par::ENABLED {
                let snapshot: &ObliqueTree = tree;
                let updates = crate::par::try_map(&ids, true, |&id| node_update(snapshot, ds, id, &reach[id], lambda, &scfg))?;
                for (id, up) in ids.iter().zip(updates) {
                    if let Some(up) = up {
                        apply(tree, *id, up);
                        changed = true;
                        if check_nodes {
                            obj = checked_step(tree, ds, lambda, obj, &mut node_trace, cfg.trace_nodes);
                        }
                    }
                }
            } else {
                for &id in &ids {
                    if let Some(up) = node_update(tree, ds, id, &reach[id], lambda, &scfg)? {
                        apply(tree, id, up);
                        changed = true;
                        if check_nodes {
                            obj = checked_step(tree, ds, lambda, obj, &mut node_trace, cfg.trace_nodes);
                        }
                    }
                }
            }
        }
        let end = model_objective(tree, ds, lambda);
        assert!(end <= start, "TAO pass increased the objective: {start} -> {end}");
        obj = end;
        history.push(end);
        if !changed {
            converged = true;
            break;
        }
        if start - end < cfg.pass_tol * start {
            break;
        }
    }
    Ok((history, node_trace, converged))
}

fn checked_step(tree: &ObliqueTree, ds: &Dataset, lambda: f64, prev: f64, trace: &mut Vec<f64>, record: bool) -> f64 {
    let now = model_objective(tree, ds, lambda);
    debug_assert!(now <= prev, "node update increased the objective: {prev} -> {now}");
    if record {
        trace.push(now);
    }
    now
}

/// Continues TAO from `tree` on `ds` (warm start), then prunes.
pub fn train_from(tree: &ObliqueTree, ds: &Dataset, cfg: &TaoConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dataset(ds)?;
    if tree.scaler() != ds.scaler() {
        return Err(Error::Config("warm-start tree and dataset use different feature scalers".into()));
    }
    if let Some(k) = tree.dim() {
        if k != ds.dim() {
            return Err(Error::Dimension {
                expected: k,
                got: ds.dim(),
            });
        }
    }
    let mut t = tree.clone();
    t.set_lambda(cfg.lambda);
    let (mut history, node_trace, converged) = optimize(&mut t, ds, cfg)?;
    let pruned = t.prune();
    // Pruning drops subtrees behind zero hyperplanes; their weights leave the penalty.
    let after = model_objective(&pruned, ds, cfg.lambda);
    let last = *history.last().expect("history is never empty");
    assert!(after <= last, "pruning increased the objective: {last} -> {after}");
    if after < last {
        history.push(after);
    }
    Ok(TrainOutcome {
        tree: pruned,
        history,
        node_trace,
        init: InitChoice::Warm,
        converged,
    })
}

/// Reruns TAO from a converged tree. A fixed point comes back unchanged.
pub fn rerun_fixed_point(tree: &ObliqueTree, ds: &Dataset, cfg: &TaoConfig) -> Result<TrainOutcome> {
    train_from(tree, ds, cfg)
}

pub fn initial_tree(ds: &Dataset, cfg: &TaoConfig, choice: InitChoice) -> Result<ObliqueTree> {
    let mut t = match choice {
        InitChoice::Random => {
            let mut t = cart_init::random_complete(ds.dim(), cfg.depth, cfg.seed)?;
            t.set_scaler(ds.scaler().cloned())?;
            t
        }
        InitChoice::Cart | InitChoice::Warm => cart_init::grow(ds, cfg.depth, cfg.cart_min_leaf_weight)?,
    };
    t.set_lambda(cfg.lambda);
    Ok(t)
}

/// Trains from the configured initialization. `BestOfBoth` compares by training objective.
pub fn train(ds: &Dataset, cfg: &TaoConfig) -> Result<TrainOutcome> {
    train_with_validation(ds, None, cfg)
}

/// Trains from the configured initialization.
///
/// With `BestOfBoth`, both initializations are trained to completion and the
/// one with the higher validation CWA is kept (lower training objective when
/// no validation set is given; CART on exact ties).
pub fn train_with_validation(ds: &Dataset, val: Option<&Dataset>, cfg: &TaoConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dataset(ds)?;
    let run = |choice: InitChoice| -> Result<TrainOutcome> {
        let init = initial_tree(ds, cfg, choice)?;
        let mut out = train_from(&init, ds, cfg)?;
        out.init = choice;
        Ok(out)
    };
    match cfg.init_policy {
        InitPolicy::Random => run(InitChoice::Random),
        InitPolicy::Cart => run(InitChoice::Cart),
        InitPolicy::BestOfBoth => {
            let cart = run(InitChoice::Cart)?;
            let random = run(InitChoice::Random)?;
            let random_wins = match val {
                Some(v) => {
                    let (c, r) = (metrics::cwa(&cart.tree, v)?, metrics::cwa(&random.tree, v)?);
                    r > c || (r == c && random.objective() < cart.objective())
                }
                None => random.objective() < cart.objective(),
            };
            Ok(if random_wins { random } else { cart })
        }
    }
}

/// Geometric λ grid `{0} ∪ {10^k : k = -4..=2}`.
pub fn default_lambda_grid() -> Vec<f64> {
    std::iter::once(0.0).chain((-4..=2).map(|k| 10f64.powi(k))).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaResult {
    pub lambda: f64,
    pub train_cwa: f64,
    pub val_cwa: f64,
    pub leaves: usize,
    pub nonzero_weights: usize,
    pub init: InitChoice,
}

#[derive(Debug, Clone)]
pub struct LambdaSweep {
    pub table: Vec<LambdaResult>,
    pub best: usize,
    pub outcome: TrainOutcome,
}

/// Trains once per λ and keeps the highest validation CWA (larger λ on ties).
pub fn sweep_lambda(train_ds: &Dataset, val: &Dataset, cfg: &TaoConfig, grid: &[f64]) -> Result<LambdaSweep> {
    if grid.is_empty() {
        return Err(Error::Config("empty lambda grid".into()));
    }
    let mut table = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, TrainOutcome)> = None;
    for (k, &lambda) in grid.iter().enumerate() {
        let c = TaoConfig { lambda, ..cfg.clone() };
        let out = train_with_validation(train_ds, Some(val), &c)?;
        let row = LambdaResult {
            lambda,
            train_cwa: metrics::cwa(&out.tree, train_ds)?,
            val_cwa: metrics::cwa(&out.tree, val)?,
            leaves: out.tree.num_leaves(),
            nonzero_weights: out
                .tree
                .nodes()
                .iter()
                .filter_map(Node::as_decision)
                .map(|d| d.w.iter().filter(|v| **v != 0.0).count())
                .sum(),
            init: out.init,
        };
        let better = match &best {
            None => true,
            Some((b, _)) => {
                let prev: &LambdaResult = &table[*b];
                row.val_cwa > prev.val_cwa || (row.val_cwa == prev.val_cwa && row.lambda >= prev.lambda)
            }
        };
        table.push(row);
        if better {
            best = Some((k, out));
        }
    }
    let (best, outcome) = best.expect("grid is nonempty");
    Ok(LambdaSweep { table, best, outcome })
}
