//! Structural stability of trees retrained on growing, nested training sets.
//!
//! The smallest subset is trained from the configured initialization; each
//! larger subset warm-starts from the previous tree. Skeletons are compared
//! with [`ObliqueTree::structural_signature`], weights with cosine similarity
//! of nodes sharing an id.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics;
use crate::tao::{self, TaoConfig, TrainOutcome};
use crate::tree::{NodeId, ObliqueTree};
use crate::FEATURE_NAMES;

#[derive(Debug, Clone)]
pub struct Stage {
    pub fraction: f64,
    pub n_train: usize,
    /// Cost-weighted test error, percent (`100 - CWA`).
    pub test_error_pct: f64,
    pub objective: f64,
    pub converged: bool,
    pub signature: String,
    pub tree: ObliqueTree,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairComparison {
    pub a: usize,
    pub b: usize,
    pub skeleton_equal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Similarity {
    pub a: usize,
    pub b: usize,
    pub node: NodeId,
    pub cosine: f64,
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub stages: Vec<Stage>,
    pub pairs: Vec<PairComparison>,
    pub similarities: Vec<Similarity>,
}

impl StabilityReport {
    pub fn fractions(&self) -> Vec<f64> {
        self.stages.iter().map(|s| s.fraction).collect()
    }

    /// Every stage has the skeleton of the first.
    pub fn signature_preserved(&self) -> bool {
        self.stages.windows(2).all(|w| w[0].signature == w[1].signature)
    }

    pub fn error_nonincreasing(&self) -> bool {
        self.stages.windows(2).all(|w| w[1].test_error_pct <= w[0].test_error_pct)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| (dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Indices of the first `round(f N)` elements of a seeded permutation, in dataset order.
fn nested_subsets(n: usize, fractions: &[f64], seed: u64) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    fractions
        .iter()
        .map(|f| {
            let k = ((f * n as f64).round() as usize).clamp(1, n);
            let mut idx = perm[..k].to_vec();
            idx.sort_unstable();
            idx
        })
        .collect()
}

/// Trains on nested subsets of `train` and evaluates each tree on `test`.
///
/// Both datasets must share one feature space (same scaler or none).
pub fn stability_run(train: &Dataset, test: &Dataset, fractions: &[f64], cfg: &TaoConfig, seed: u64) -> Result<StabilityReport> {
    if fractions.is_empty() {
        return Err(Error::Config("no subset fractions given".into()));
    }
    if fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Error::Config("fractions must lie in (0, 1]".into()));
    }
    if fractions.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("fractions must be nondecreasing".into()));
    }
    if *fractions.last().unwrap() != 1.0 {
        return Err(Error::Config("the last fraction must be 1".into()));
    }
    if train.scaler() != test.scaler() {
        return Err(Error::Config("train and test sets use different feature scalers".into()));
    }

    let subsets = nested_subsets(train.len(), fractions, seed);
    let mut stages: Vec<Stage> = Vec::with_capacity(fractions.len());
    let mut prev: Option<TrainOutcome> = None;
    for (&fraction, idx) in fractions.iter().zip(&subsets) {
        let ds = train.subset(idx)?;
        let counts = ds.class_counts();
        if counts[0] == 0 || counts[1] == 0 {
            return Err(Error::Data(format!("the {fraction} subset ({} samples) lacks one class", ds.len())));
        }
        let out = match &prev {
            None => tao::train(&ds, cfg)?,
            Some(p) => tao::train_from(&p.tree, &ds, cfg)?,
        };
        if let (Some(p), Some(last)) = (&prev, stages.last()) {
            if last.fraction == fraction && p.converged {
                assert_eq!(
                    out.tree.structural_signature(),
                    last.signature,
                    "rerun from a fixed point changed the skeleton"
                );
                assert_eq!(out.objective(), last.objective, "rerun from a fixed point changed the objective");
            }
        }
        stages.push(Stage {
            fraction,
            n_train: ds.len(),
            test_error_pct: 100.0 - metrics::cwa(&out.tree, test)?,
            objective: out.objective(),
            converged: out.converged,
            signature: out.tree.structural_signature(),
            tree: out.tree.clone(),
        });
        prev = Some(out);
    }

    let mut pairs = Vec::new();
    let mut similarities = Vec::new();
    for a in 0..stages.len() {
        for b in a + 1..stages.len() {
            pairs.push(PairComparison {
                a,
                b,
                skeleton_equal: stages[a].signature == stages[b].signature,
            });
            let (ta, tb) = (&stages[a].tree, &stages[b].tree);
            for id in ta.decision_ids() {
                if id >= tb.nodes().len() {
                    continue;
                }
                if let (Some(da), Some(db)) = (ta.node(id).as_decision(), tb.node(id).as_decision()) {
                    if let Some(c) = cosine(&da.w, &db.w) {
                        similarities.push(Similarity { a, b, node: id, cosine: c });
                    }
                }
            }
        }
    }
    Ok(StabilityReport {
        stages,
        pairs,
        similarities,
    })
}

pub const STABILITY_HEADER: [&str; 7] = [
    "fraction",
    "n_train",
    "test_error_pct",
    "objective",
    "converged",
    "signature",
    "same_skeleton_as_previous",
];

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

pub fn write_stability_csv<W: Write>(r: &StabilityReport, w: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    wtr.write_record(STABILITY_HEADER).map_err(csv_err)?;
    for (i, s) in r.stages.iter().enumerate() {
        let same = if i == 0 {
            String::new()
        } else {
            (r.stages[i - 1].signature == s.signature).to_string()
        };
        wtr.write_record([
            s.fraction.to_string(),
            s.n_train.to_string(),
            s.test_error_pct.to_string(),
            s.objective.to_string(),
            s.converged.to_string(),
            s.signature.clone(),
            same,
        ])
        .map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| Error::Format(e.to_string()))
}

pub fn write_similarity_csv<W: Write>(r: &StabilityReport, w: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    wtr.write_record(["fraction_a", "fraction_b", "node", "cosine"]).map_err(csv_err)?;
    for s in &r.similarities {
        wtr.write_record([
            r.stages[s.a].fraction.to_string(),
            r.stages[s.b].fraction.to_string(),
            s.node.to_string(),
            s.cosine.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| Error::Format(e.to_string()))
}

/// Decision rules of every stage as an aligned text table, model-space weights.
pub fn rules_table(r: &StabilityReport) -> String {
    let mut rows = vec![{
        let mut h = vec!["node".to_string(), "fraction".to_string()];
        h.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
        h.push("constant".into());
        h
    }];
    for s in &r.stages {
        for id in s.tree.decision_ids() {
            let d = s.tree.node(id).as_decision().expect("decision id");
            let mut row = vec![id.to_string(), format!("{:.0}%", s.fraction * 100.0)];
            row.extend(d.w.iter().map(|v| format!("{v:.4}")));
            row.push(format!("{:.4}", d.w0));
            rows.push(row);
        }
    }
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row.iter().enumerate().map(|(c, v)| format!("{v:>w$}", w = widths[c])).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{label_traces, TiePolicy};
    use crate::simulator::{generate, ScenarioConfig};
    use crate::tao::InitPolicy;

    fn data(seed: u64) -> (Dataset, Dataset) {
        let cfg = ScenarioConfig {
            n_packets: 60,
            ..ScenarioConfig::default()
        }
        .with_seed(seed);
        let ds = label_traces(&generate(&cfg).unwrap(), TiePolicy::Drop).unwrap();
        let [train, _, test] = ds
            .split([0.7, 0.0, 0.3], seed)
            .unwrap_or_else(|_| ds.split([0.7, 0.1, 0.2], seed).unwrap());
        let train = train.standardize().unwrap();
        let test = test.apply_scaler(train.scaler().unwrap().clone()).unwrap();
        (train, test)
    }

    fn cfg() -> TaoConfig {
        TaoConfig {
            depth: 2,
            lambda: 0.01,
            init_policy: InitPolicy::Cart,
            max_passes: 200,
            pass_tol: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn cosine_bounds() {
        assert_eq!(cosine(&[1.0, 0.0], &[2.0, 0.0]), Some(1.0));
        assert_eq!(cosine(&[1.0, 0.0], &[-1.0, 0.0]), Some(-1.0));
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), None);
    }

    #[test]
    fn subsets_are_nested() {
        let s = nested_subsets(100, &[0.5, 0.75, 1.0], 3);
        assert_eq!(s.iter().map(Vec::len).collect::<Vec<_>>(), vec![50, 75, 100]);
        assert!(s[0].iter().all(|i| s[1].contains(i)));
        assert!(s[1].iter().all(|i| s[2].contains(i)));
    }

    #[test]
    fn repeated_full_fraction_is_a_fixed_point() {
        let (train, test) = data(5);
        let r = stability_run(&train, &test, &[1.0, 1.0], &cfg(), 1).unwrap();
        assert!(r.stages[0].converged);
        assert_eq!(r.stages[0].signature, r.stages[1].signature);
        assert_eq!(r.stages[0].objective, r.stages[1].objective);
    }

    #[test]
    fn deterministic_and_complete() {
        let (train, test) = data(6);
        let a = stability_run(&train, &test, &[0.5, 0.75, 1.0], &cfg(), 2).unwrap();
        let b = stability_run(&train, &test, &[0.5, 0.75, 1.0], &cfg(), 2).unwrap();
        assert_eq!(a.fractions(), vec![0.5, 0.75, 1.0]);
        assert_eq!(a.pairs, b.pairs);
        assert_eq!(a.similarities, b.similarities);
        assert_eq!(a.pairs.len(), 3);
        for p in &a.pairs {
            let (ta, tb) = (&a.stages[p.a].tree, &a.stages[p.b].tree);
            let shared = ta
                .decision_ids()
                .filter(|&id| id < tb.nodes().len() && tb.node(id).as_decision().is_some())
                .count();
            assert_eq!(a.similarities.iter().filter(|s| s.a == p.a && s.b == p.b).count(), shared);
        }
        assert!(a.similarities.iter().all(|s| (-1.0..=1.0).contains(&s.cosine)));
        let mut out = Vec::new();
        write_stability_csv(&a, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 4);
        assert!(rules_table(&a).lines().count() >= 1);
    }

    #[test]
    fn bad_fractions() {
        let (train, test) = data(7);
        assert!(stability_run(&train, &test, &[0.5, 0.75], &cfg(), 0).is_err());
        assert!(stability_run(&train, &test, &[0.75, 0.5, 1.0], &cfg(), 0).is_err());
        assert!(stability_run(&train, &test, &[0.0005, 1.0], &cfg(), 0).is_err());
    }
}
