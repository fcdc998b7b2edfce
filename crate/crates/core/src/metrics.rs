//! Cost-weighted accuracy, high/low-cost error decomposition and k-fold evaluation.

use std::io::Write;

use serde::Serialize;

use crate::dataset::{Dataset, RadioClass};
use crate::error::{Error, Result};
use crate::exact::ExactSum;
use crate::tree::ObliqueTree;

/// Default boundary between low- and high-cost errors, bps.
pub const HIGH_COST_THRESHOLD_BPS: f64 = 200.0;

/// Anything that labels dataset samples.
pub trait Predictor: Sync {
    fn predict_sample(&self, ds: &Dataset, i: usize) -> Result<RadioClass>;

    /// `(depth, leaves)` for tree-shaped models.
    fn shape(&self) -> Option<(usize, usize)> {
        None
    }
}

impl Predictor for ObliqueTree {
    fn predict_sample(&self, ds: &Dataset, i: usize) -> Result<RadioClass> {
        self.predict_in(ds, i)
    }

    fn shape(&self) -> Option<(usize, usize)> {
        Some((self.depth(), self.num_leaves()))
    }
}

/// Predicts one fixed class everywhere.
#[derive(Debug, Clone, Copy)]
pub struct Constant(pub RadioClass);

impl Predictor for Constant {
    fn predict_sample(&self, _: &Dataset, _: usize) -> Result<RadioClass> {
        Ok(self.0)
    }
}

impl Constant {
    /// The class with the larger total cost in `ds` (Zigbee on ties).
    pub fn cost_majority(ds: &Dataset) -> Self {
        let w = ds.class_costs();
        Constant(if w[1] > w[0] { RadioClass::Lora } else { RadioClass::Zigbee })
    }

    /// The class with more samples in `ds` (Zigbee on ties).
    pub fn count_majority(ds: &Dataset) -> Self {
        let n = ds.class_counts();
        Constant(if n[1] > n[0] { RadioClass::Lora } else { RadioClass::Zigbee })
    }
}

fn correct_flags<P: Predictor + ?Sized>(model: &P, ds: &Dataset) -> Result<Vec<bool>> {
    (0..ds.len())
        .map(|i| Ok(model.predict_sample(ds, i)? == ds.samples()[i].y))
        .collect()
}

/// Total cost of misclassified samples.
pub fn misclassified_cost<P: Predictor + ?Sized>(model: &P, ds: &Dataset) -> Result<f64> {
    let flags = correct_flags(model, ds)?;
    Ok(crate::exact::exact_sum(
        ds.samples().iter().zip(flags).filter(|(_, ok)| !ok).map(|(s, _)| s.c),
    ))
}

/// Cost-weighted accuracy in percent: `100 Σ c_n 1[correct] / Σ c_n`.
pub fn cwa<P: Predictor + ?Sized>(model: &P, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let flags = correct_flags(model, ds)?;
    let mut hit = ExactSum::new();
    for (s, ok) in ds.samples().iter().zip(flags) {
        if ok {
            hit.add(s.c);
        }
    }
    // Ratio first: hit <= total then keeps the result within [0, 100].
    Ok(100.0 * (hit.value() / ds.total_cost()))
}

/// Plain accuracy in percent.
pub fn accuracy<P: Predictor + ?Sized>(model: &P, ds: &Dataset) -> Result<f64> {
    let flags = correct_flags(model, ds)?;
    Ok(100.0 * (flags.iter().filter(|f| **f).count() as f64 / ds.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorBreakdown {
    pub n_high: usize,
    pub n_low: usize,
    pub loss_high: f64,
    pub loss_low: f64,
    pub threshold: f64,
}

impl ErrorBreakdown {
    pub fn total_loss(&self) -> f64 {
        crate::exact::exact_sum([self.loss_high, self.loss_low])
    }

    /// Share of the error count that is high-cost, in [0, 1]; 0 without errors.
    pub fn high_count_share(&self) -> f64 {
        let n = self.n_high + self.n_low;
        if n == 0 {
            0.0
        } else {
            self.n_high as f64 / n as f64
        }
    }

    /// Share of the misclassified cost that is high-cost, in [0, 1]; 0 without errors.
    pub fn high_loss_share(&self) -> f64 {
        let t = self.total_loss();
        if t == 0.0 {
            0.0
        } else {
            self.loss_high / t
        }
    }
}

/// Splits the misclassified samples at `threshold`: cost `<= threshold` is low, above is high.
pub fn error_breakdown<P: Predictor + ?Sized>(model: &P, ds: &Dataset, threshold: f64) -> Result<ErrorBreakdown> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let flags = correct_flags(model, ds)?;
    let (mut n_high, mut n_low) = (0, 0);
    let (mut high, mut low) = (ExactSum::new(), ExactSum::new());
    for (s, ok) in ds.samples().iter().zip(flags) {
        if ok {
            continue;
        }
        if s.c > threshold {
            n_high += 1;
            high.add(s.c);
        } else {
            n_low += 1;
            low.add(s.c);
        }
    }
    Ok(ErrorBreakdown {
        n_high,
        n_low,
        loss_high: high.value(),
        loss_low: low.value(),
        threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample (n - 1) standard deviation; 0 for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_cwa: f64,
    pub test_cwa: f64,
    pub depth: Option<usize>,
    pub leaves: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KFoldReport {
    pub folds: Vec<FoldResult>,
    pub train: MeanStd,
    pub test: MeanStd,
    pub depth_mean: Option<f64>,
    pub leaves_mean: Option<f64>,
}

/// Stratified k-fold cross-validation of `trainer`, scored by CWA.
///
/// Folds are independent and run concurrently when `parallel` is set.
pub fn kfold_cwa<M, F>(ds: &Dataset, k: usize, seed: u64, parallel: bool, trainer: F) -> Result<KFoldReport>
where
    M: Predictor,
    F: Fn(&Dataset) -> Result<M> + Sync + Send,
{
    let folds = ds.stratified_folds(k, seed)?;
    let fold_ids: Vec<usize> = (0..k).collect();
    let results = crate::par::try_map(&fold_ids, parallel, |&f| -> Result<FoldResult> {
        let test_idx = &folds[f];
        let mut in_test = vec![false; ds.len()];
        for &i in test_idx {
            in_test[i] = true;
        }
        let train_idx: Vec<usize> = (0..ds.len()).filter(|&i| !in_test[i]).collect();
        let train = ds.subset(&train_idx)?;
        let test = ds.subset(test_idx)?;
        let model = trainer(&train)?;
        let shape = model.shape();
        Ok(FoldResult {
            fold: f,
            train_cwa: cwa(&model, &train)?,
            test_cwa: cwa(&model, &test)?,
            depth: shape.map(|s| s.0),
            leaves: shape.map(|s| s.1),
        })
    })?;
    let train = MeanStd::of(&results.iter().map(|r| r.train_cwa).collect::<Vec<_>>());
    let test = MeanStd::of(&results.iter().map(|r| r.test_cwa).collect::<Vec<_>>());
    let mean_of = |get: fn(&FoldResult) -> Option<usize>| -> Option<f64> {
        let v: Option<Vec<f64>> = results.iter().map(|r| get(r).map(|x| x as f64)).collect();
        v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };
    Ok(KFoldReport {
        depth_mean: mean_of(|r| r.depth),
        leaves_mean: mean_of(|r| r.leaves),
        folds: results,
        train,
        test,
    })
}

pub const METRICS_HEADER: [&str; 7] = ["model", "location", "split", "cwa_mean", "cwa_std", "depth_mean", "leaves_mean"];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub model: String,
    pub location: String,
    pub split: String,
    pub cwa: MeanStd,
    pub depth_mean: Option<f64>,
    pub leaves_mean: Option<f64>,
}

/// Writes `model,location,split,cwa_mean,cwa_std,depth_mean,leaves_mean` rows.
pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], mut w: W) -> Result<()> {
    let io = |e: std::io::Error| Error::Format(e.to_string());
    writeln!(w, "{}", METRICS_HEADER.join(",")).map_err(io)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.model,
            r.location,
            r.split,
            r.cwa.mean,
            r.cwa.std,
            opt(r.depth_mean),
            opt(r.leaves_mean)
        )
        .map_err(io)?;
    }
    Ok(())
}

impl KFoldReport {
    /// One row per fold (test CWA) followed by a single `test` summary row.
    pub fn to_rows(&self, model: &str, location: &str) -> Vec<MetricsRow> {
        let mut rows: Vec<MetricsRow> = self
            .folds
            .iter()
            .map(|f| MetricsRow {
                model: model.to_string(),
                location: location.to_string(),
                split: format!("fold{}", f.fold),
                cwa: MeanStd {
                    mean: f.test_cwa,
                    std: 0.0,
                },
                depth_mean: f.depth.map(|d| d as f64),
                leaves_mean: f.leaves.map(|l| l as f64),
            })
            .collect();
        rows.push(MetricsRow {
            model: model.to_string(),
            location: location.to_string(),
            split: "test".to_string(),
            cwa: self.test,
            depth_mean: self.depth_mean,
            leaves_mean: self.leaves_mean,
        });
        rows
    }
}
