//! Samples, CSV ingestion, trace labelling, standardization and splitting.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::FEATURE_NAMES;

pub const DATASET_HEADER: [&str; 6] = ["hn", "rssi", "prr", "rnp", "label", "cost"];
pub const TRACE_HEADER: [&str; 8] = ["node_id", "t", "tp_zigbee", "tp_lora", "hn", "rssi", "prr", "rnp"];

/// The radio with the higher throughput. Encoded Zigbee = 0, LoRa = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RadioClass {
    Zigbee = 0,
    Lora = 1,
}

impl RadioClass {
    pub const ALL: [RadioClass; 2] = [RadioClass::Zigbee, RadioClass::Lora];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(RadioClass::Zigbee),
            1 => Some(RadioClass::Lora),
            _ => None,
        }
    }

    pub fn other(self) -> Self {
        match self {
            RadioClass::Zigbee => RadioClass::Lora,
            RadioClass::Lora => RadioClass::Zigbee,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RadioClass::Zigbee => "zigbee",
            RadioClass::Lora => "lora",
        }
    }

    /// Single-letter tag used in structural signatures.
    pub fn letter(self) -> char {
        match self {
            RadioClass::Zigbee => 'Z',
            RadioClass::Lora => 'L',
        }
    }
}

impl std::str::FromStr for RadioClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "zigbee" | "0" => Ok(RadioClass::Zigbee),
            "lora" | "1" => Ok(RadioClass::Lora),
            other => Err(Error::Format(format!("unknown label {other:?}"))),
        }
    }
}

/// The four radio observables of one scheduled transmission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Zigbee hop count to the gateway.
    pub hn: f64,
    /// End-to-end LoRa RSSI, dBm.
    pub rssi: f64,
    /// Zigbee end-to-end packet reception ratio.
    pub prr: f64,
    /// Zigbee required number of packets.
    pub rnp: f64,
}

impl FeatureVector {
    pub fn new(hn: f64, rssi: f64, prr: f64, rnp: f64) -> Result<Self> {
        let fv = FeatureVector { hn, rssi, prr, rnp };
        fv.validate()?;
        Ok(fv)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in FEATURE_NAMES.iter().zip(self.to_array()) {
            if !v.is_finite() {
                return Err(Error::Data(format!("feature {name} is not finite ({v})")));
            }
        }
        if self.hn < 1.0 {
            return Err(Error::Data(format!("hn must be >= 1, got {}", self.hn)));
        }
        if !(0.0..=1.0).contains(&self.prr) {
            return Err(Error::Data(format!("prr must lie in [0, 1], got {}", self.prr)));
        }
        if self.rnp < 1.0 {
            return Err(Error::Data(format!("rnp must be >= 1, got {}", self.rnp)));
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.hn, self.rssi, self.prr, self.rnp]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: RadioClass,
    /// Misclassification cost, bps. Always > 0.
    pub c: f64,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: RadioClass, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Data(format!("cost must be finite and > 0, got {c}")));
        }
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite feature value {v}")));
        }
        Ok(Sample { x, y, c })
    }
}

/// Per-feature affine standardization `z = (x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len() {
            return Err(Error::Dimension {
                expected: self.mean.len(),
                got: self.std.len(),
            });
        }
        if self.mean.iter().any(|m| !m.is_finite()) || self.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Data("scaler needs finite means and positive finite stddevs".into()));
        }
        Ok(())
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(self.mean.iter().zip(&self.std)).map(|(v, (m, s))| v * s + m).collect()
    }
}

/// An ordered collection of samples sharing one feature dimensionality.
///
/// When `scaler` is set the stored features are standardized; the scaler maps
/// them back to raw sensor units.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    dim: usize,
    scaler: Option<Scaler>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let dim = samples.first().ok_or(Error::EmptyDataset)?.x.len();
        Self::with_scaler(samples, dim, None)
    }

    fn with_scaler(samples: Vec<Sample>, dim: usize, scaler: Option<Scaler>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for (i, s) in samples.iter().enumerate() {
            if s.x.len() != dim {
                return Err(Error::Row {
                    row: i + 1,
                    msg: format!("expected {dim} features, got {}", s.x.len()),
                });
            }
        }
        if let Some(sc) = &scaler {
            sc.validate()?;
            if sc.dim() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: sc.dim(),
                });
            }
        }
        Ok(Dataset { samples, dim, scaler })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scaler(&self) -> Option<&Scaler> {
        self.scaler.as_ref()
    }

    /// Features of sample `i` in raw sensor units.
    pub fn raw_x(&self, i: usize) -> Vec<f64> {
        match &self.scaler {
            Some(sc) => sc.inverse(&self.samples[i].x),
            None => self.samples[i].x.clone(),
        }
    }

    /// Sum of costs per class, indexed by [`RadioClass::index`].
    pub fn class_costs(&self) -> [f64; 2] {
        let mut acc = [crate::exact::ExactSum::new(), crate::exact::ExactSum::new()];
        for s in &self.samples {
            acc[s.y.index()].add(s.c);
        }
        [acc[0].value(), acc[1].value()]
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut n = [0; 2];
        for s in &self.samples {
            n[s.y.index()] += 1;
        }
        n
    }

    pub fn total_cost(&self) -> f64 {
        crate::exact::exact_sum(self.samples.iter().map(|s| s.c))
    }

    /// New dataset holding the samples at `indices`, in that order, with the same scaler.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        Self::with_scaler(samples, self.dim, self.scaler.clone())
    }

    /// Same features and labels with every cost replaced by `cost`.
    pub fn with_uniform_costs(&self, cost: f64) -> Result<Dataset> {
        let samples = self
            .samples
            .iter()
            .map(|s| Sample::new(s.x.clone(), s.y, cost))
            .collect::<Result<Vec<_>>>()?;
        Self::with_scaler(samples, self.dim, self.scaler.clone())
    }

    /// Z-scores every feature column with population statistics and stores the scaler.
    pub fn standardize(&self) -> Result<Dataset> {
        if self.scaler.is_some() {
            return Err(Error::Config("dataset is already standardized".into()));
        }
        let n = self.samples.len() as f64;
        let mut mean = vec![0.0; self.dim];
        let mut std = vec![0.0; self.dim];
        for j in 0..self.dim {
            let m = crate::exact::exact_sum(self.samples.iter().map(|s| s.x[j])) / n;
            let var = crate::exact::exact_sum(self.samples.iter().map(|s| (s.x[j] - m).powi(2))) / n;
            let sd = var.sqrt();
            if !(sd > 0.0) {
                return Err(Error::Data(format!("feature {} is constant; cannot standardize", feature_name(j))));
            }
            mean[j] = m;
            std[j] = sd;
        }
        let scaler = Scaler { mean, std };
        self.apply_scaler(scaler)
    }

    /// Applies an existing scaler (e.g. one stored in a model) to raw features.
    pub fn apply_scaler(&self, scaler: Scaler) -> Result<Dataset> {
        if self.scaler.is_some() {
            return Err(Error::Config("dataset is already standardized".into()));
        }
        scaler.validate()?;
        if scaler.dim() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: scaler.dim(),
            });
        }
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                x: scaler.transform(&s.x),
                y: s.y,
                c: s.c,
            })
            .collect();
        Self::with_scaler(samples, self.dim, Some(scaler))
    }

    /// Raw-feature copy (inverse of [`Dataset::standardize`]).
    pub fn unscaled(&self) -> Dataset {
        let samples = (0..self.len())
            .map(|i| Sample {
                x: self.raw_x(i),
                y: self.samples[i].y,
                c: self.samples[i].c,
            })
            .collect();
        Dataset {
            samples,
            dim: self.dim,
            scaler: None,
        }
    }

    /// Stratified train/validation/test split.
    ///
    /// Per class, a seeded shuffle is cut at `round`ed fraction boundaries.
    /// Each part keeps the original sample order.
    pub fn split(&self, fractions: [f64; 3], seed: u64) -> Result<[Dataset; 3]> {
        let parts = self.stratified_parts(&fractions, seed)?;
        let [a, b, c]: [Dataset; 3] = parts.try_into().expect("three parts");
        Ok([a, b, c])
    }

    /// Stratified two-way split into (rest, held out), same cutting rule as [`Dataset::split`].
    pub fn holdout(&self, fraction: f64, seed: u64) -> Result<[Dataset; 2]> {
        let parts = self.stratified_parts(&[1.0 - fraction, fraction], seed)?;
        let [a, b]: [Dataset; 2] = parts.try_into().expect("two parts");
        Ok([a, b])
    }

    fn stratified_parts(&self, fractions: &[f64], seed: u64) -> Result<Vec<Dataset>> {
        if fractions.iter().any(|f| !(*f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must be positive and sum to 1, got {fractions:?}"
            )));
        }
        let mut parts: Vec<Vec<usize>> = vec![Vec::new(); fractions.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for class in RadioClass::ALL {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.samples[i].y == class).collect();
            if idx.is_empty() {
                continue;
            }
            idx.shuffle(&mut rng);
            let n = idx.len();
            let mut bounds = vec![0];
            for f in &fractions[..fractions.len() - 1] {
                let last = *bounds.last().unwrap();
                bounds.push(last + ((f * n as f64).round() as usize).min(n - last));
            }
            bounds.push(n);
            for (p, part) in parts.iter_mut().enumerate() {
                if bounds[p] == bounds[p + 1] {
                    return Err(Error::Data(format!(
                        "class {} has too few samples ({n}) for split {fractions:?}",
                        class.name()
                    )));
                }
                part.extend_from_slice(&idx[bounds[p]..bounds[p + 1]]);
            }
        }
        parts
            .into_iter()
            .map(|mut part| {
                part.sort_unstable();
                self.subset(&part)
            })
            .collect()
    }

    /// Stratified `k`-fold assignment: returns the test indices of each fold.
    pub fn stratified_folds(&self, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
        if k < 2 {
            return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
        }
        let mut folds = vec![Vec::new(); k];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut offset = 0;
        for class in RadioClass::ALL {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.samples[i].y == class).collect();
            if idx.is_empty() {
                continue;
            }
            if idx.len() < k {
                return Err(Error::Data(format!(
                    "class {} has {} samples, fewer than k = {k}",
                    class.name(),
                    idx.len()
                )));
            }
            idx.shuffle(&mut rng);
            for (r, i) in idx.into_iter().enumerate() {
                folds[(r + offset) % k].push(i);
            }
            offset += 1;
        }
        for f in &mut folds {
            f.sort_unstable();
        }
        Ok(folds)
    }

    /// Writes the `hn,rssi,prr,rnp,label,cost` CSV with raw features.
    ///
    /// Values use the shortest decimal form that parses back to the same bits.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(BufWriter::new(f)).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        if self.dim != 4 {
            return Err(Error::Dimension {
                expected: 4,
                got: self.dim,
            });
        }
        let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        wtr.write_record(DATASET_HEADER).map_err(csv_err)?;
        for i in 0..self.len() {
            let s = &self.samples[i];
            let x = self.raw_x(i);
            let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            rec.push(s.y.name().to_string());
            rec.push(s.c.to_string());
            wtr.write_record(&rec).map_err(csv_err)?;
        }
        wtr.flush().map_err(|e| Error::Format(e.to_string()))?;
        Ok(())
    }
}

/// Reads a `hn,rssi,prr,rnp,label,cost` CSV. No scaling is applied.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(f))
}

pub fn read_dataset<R: Read>(r: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r);
    check_header(&mut rdr, &DATASET_HEADER)?;
    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Row { row, msg: e.to_string() })?;
        let num = |j: usize| parse_finite(&rec[j], DATASET_HEADER[j], row);
        let fv = FeatureVector::new(num(0)?, num(1)?, num(2)?, num(3)?).map_err(|e| Error::Row { row, msg: e.to_string() })?;
        let y: RadioClass = rec[4].parse().map_err(|e: Error| Error::Row { row, msg: e.to_string() })?;
        let c = num(5)?;
        if c <= 0.0 {
            return Err(Error::Row {
                row,
                msg: format!("cost must be > 0, got {c}"),
            });
        }
        samples.push(Sample {
            x: fv.to_array().to_vec(),
            y,
            c,
        });
    }
    Dataset::new(samples)
}

/// One scheduled transmission with both radios' outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub node_id: u32,
    /// Seconds since trace start.
    pub t: f64,
    pub tp_zigbee: f64,
    pub tp_lora: f64,
    pub x: FeatureVector,
}

impl TraceRecord {
    /// Throughput of the given radio, bps.
    pub fn throughput(&self, radio: RadioClass) -> f64 {
        match radio {
            RadioClass::Zigbee => self.tp_zigbee,
            RadioClass::Lora => self.tp_lora,
        }
    }

    pub fn best(&self) -> f64 {
        self.tp_zigbee.max(self.tp_lora)
    }
}

/// What to do with records whose radios achieved identical throughput.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TiePolicy {
    /// Zero-cost records carry no information for a cost-weighted loss.
    #[default]
    Drop,
    /// Fail on the first tie.
    Reject,
}

/// Labels each record with its faster radio and costs it at the throughput gap.
pub fn label_traces(traces: &[TraceRecord], tie_policy: TiePolicy) -> Result<Dataset> {
    if traces.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut samples = Vec::with_capacity(traces.len());
    for (i, tr) in traces.iter().enumerate() {
        let c = (tr.tp_zigbee - tr.tp_lora).abs();
        if c == 0.0 {
            match tie_policy {
                TiePolicy::Drop => continue,
                TiePolicy::Reject => {
                    return Err(Error::Row {
                        row: i + 1,
                        msg: "both radios achieved identical throughput".into(),
                    })
                }
            }
        }
        let y = if tr.tp_zigbee > tr.tp_lora {
            RadioClass::Zigbee
        } else {
            RadioClass::Lora
        };
        samples.push(Sample::new(tr.x.to_array().to_vec(), y, c).map_err(|e| Error::Row {
            row: i + 1,
            msg: e.to_string(),
        })?);
    }
    if samples.is_empty() {
        return Err(Error::Data("every trace record is a throughput tie; nothing to label".into()));
    }
    Dataset::new(samples)
}

pub fn load_traces(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_traces(BufReader::new(f))
}

pub fn read_traces<R: Read>(r: R) -> Result<Vec<TraceRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r);
    check_header(&mut rdr, &TRACE_HEADER)?;
    let mut out: Vec<TraceRecord> = Vec::new();
    let mut last_t: std::collections::HashMap<u32, f64> = Default::default();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Row { row, msg: e.to_string() })?;
        let node_id: u32 = rec[0].parse().map_err(|_| Error::Row {
            row,
            msg: format!("node_id {:?} is not a non-negative integer", &rec[0]),
        })?;
        let num = |j: usize| parse_finite(&rec[j], TRACE_HEADER[j], row);
        let t = num(1)?;
        let (tp_zigbee, tp_lora) = (num(2)?, num(3)?);
        if tp_zigbee < 0.0 || tp_lora < 0.0 {
            return Err(Error::Row {
                row,
                msg: "throughputs must be >= 0".into(),
            });
        }
        if let Some(prev) = last_t.insert(node_id, t) {
            if t < prev {
                return Err(Error::Row {
                    row,
                    msg: format!("time {t} precedes earlier record {prev} of node {node_id}"),
                });
            }
        }
        let x = FeatureVector::new(num(4)?, num(5)?, num(6)?, num(7)?).map_err(|e| Error::Row { row, msg: e.to_string() })?;
        out.push(TraceRecord {
            node_id,
            t,
            tp_zigbee,
            tp_lora,
            x,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

pub fn write_traces<W: Write>(traces: &[TraceRecord], w: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    wtr.write_record(TRACE_HEADER).map_err(csv_err)?;
    for tr in traces {
        let [hn, rssi, prr, rnp] = tr.x.to_array();
        wtr.write_record([
            tr.node_id.to_string(),
            tr.t.to_string(),
            tr.tp_zigbee.to_string(),
            tr.tp_lora.to_string(),
            hn.to_string(),
            rssi.to_string(),
            prr.to_string(),
            rnp.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

pub fn save_traces(traces: &[TraceRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_traces(traces, BufWriter::new(f))
}

fn feature_name(j: usize) -> String {
    FEATURE_NAMES.get(j).map(|s| s.to_string()).unwrap_or_else(|| format!("x{j}"))
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, want: &[&str]) -> Result<()> {
    let got = rdr.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
    let got: Vec<&str> = got.iter().collect();
    for name in want {
        if !got.contains(name) {
            return Err(Error::Format(format!("missing column {name:?}")));
        }
    }
    if let Some(extra) = got.iter().find(|g| !want.contains(g)) {
        return Err(Error::Format(format!("unexpected column {extra:?}")));
    }
    if got != want {
        return Err(Error::Format(format!("columns must appear in order {}", want.join(","))));
    }
    Ok(())
}

fn parse_finite(field: &str, column: &str, row: usize) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| Error::Row {
        row,
        msg: format!("column {column}: {field:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Row {
            row,
            msg: format!("column {column}: non-finite value {field}"),
        });
    }
    Ok(v)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}
