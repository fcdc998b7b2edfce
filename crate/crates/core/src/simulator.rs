//! Synthetic dual-radio traces and selector replay.
//!
//! Each node sits at a fixed distance from the gateway. Zigbee reaches it over
//! `ceil(d / hop_range)` hops through a bursty (Gilbert-Elliott) path whose
//! delivery ratio the node only observes through a sliding window of beacons.
//! LoRa reaches it in one hop at a rate tier chosen by the received signal
//! strength. Per-packet throughputs of both radios are recorded together with
//! the noisy features a selector would see.
//!
//! A shared uplink queue models the packet generation interval: packets wait
//! behind each other (Lindley recursion), and a packet that waited may carry
//! stale PRR/RNP features. Channel draws do not depend on the interval, so
//! sweeps compare intervals on common random numbers.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureVector, RadioClass, TraceRecord};
use crate::error::{Error, Result};
use crate::exact::exact_sum;
use crate::tree::ObliqueTree;

pub const SCENARIO_VERSION: u32 = 1;
pub const CDF_HEADER: [&str; 3] = ["selector", "percentile", "throughput_bps"];
pub const SWEEP_HEADER: [&str; 4] = ["interval_s", "selector", "performance_ratio", "mean_latency_ms"];

/// The frozen default scenario, as shipped.
pub const DEFAULT_SCENARIO_JSON: &str = include_str!("../scenarios/default.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZigbeeParams {
    /// Single-hop throughput with perfect delivery, bps.
    pub capacity_bps: f64,
    /// Throughput falls as `hn^-hop_exponent`.
    pub hop_exponent: f64,
    /// Delivery ratio of one hop in the good state.
    pub prr_per_hop: f64,
    /// Per-packet probability of entering a loss burst.
    pub burst_enter: f64,
    /// Per-packet probability of leaving a loss burst.
    pub burst_exit: f64,
    /// Path delivery ratio multiplier during a burst.
    pub burst_prr_factor: f64,
    /// Lognormal sigma of the throughput jitter.
    pub jitter_sigma: f64,
    /// Beacons per packet interval used for the PRR/RNP estimate.
    pub beacons_per_packet: usize,
    /// Packets covered by the sliding estimate.
    pub beacon_window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateTier {
    pub min_rssi_dbm: f64,
    pub rate_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoraParams {
    pub rssi_at_ref_dbm: f64,
    pub ref_distance_m: f64,
    pub path_loss_exponent: f64,
    /// Per-node static shadowing sigma, dB.
    pub node_shadowing_db: f64,
    /// Per-packet shadowing sigma, dB.
    pub shadowing_db: f64,
    /// Measurement noise on the reported RSSI, dB.
    pub rssi_noise_db: f64,
    /// Rate tiers, strongest first; the last tier catches everything below.
    pub tiers: Vec<RateTier>,
    pub jitter_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueueParams {
    pub enabled: bool,
    /// Service time of one transmission attempt at the shared uplink, s.
    pub service_s: f64,
    /// Probability that an attempt must be repeated.
    pub retry_prob: f64,
    pub max_retries: usize,
    /// Arrival offset jitter as a fraction of the per-node slot, in [0, 1).
    pub arrival_jitter: f64,
    /// Waiting time scale of feature staleness, s.
    pub staleness_tau_s: f64,
    /// How many packets old a stale PRR/RNP reading is.
    pub stale_lag: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    pub seed: u64,
    pub distances_m: Vec<f64>,
    pub packet_interval_s: f64,
    pub n_packets: usize,
    pub payload_bytes: usize,
    pub gray_region_m: [f64; 2],
    pub hop_range_m: f64,
    pub zigbee: ZigbeeParams,
    pub lora: LoraParams,
    pub queue: QueueParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig::from_json(DEFAULT_SCENARIO_JSON).expect("bundled default scenario is valid")
    }
}

impl ScenarioConfig {
    pub fn n_nodes(&self) -> usize {
        self.distances_m.len()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ScenarioConfig { seed, ..self.clone() }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| Error::Schema(format!("scenario: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("scenario: {m}")));
        if self.version != SCENARIO_VERSION {
            return bad(&format!("unsupported version {}", self.version));
        }
        if self.distances_m.is_empty() || self.distances_m.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return bad("distances must be positive");
        }
        if !(self.packet_interval_s.is_finite() && self.packet_interval_s > 0.0) {
            return bad("packet interval must be positive");
        }
        if self.n_packets == 0 || self.payload_bytes == 0 {
            return bad("n_packets and payload_bytes must be positive");
        }
        let [lo, hi] = self.gray_region_m;
        if !(lo < hi) {
            return bad("gray region must satisfy lo < hi");
        }
        if !(self.hop_range_m > 0.0) {
            return bad("hop range must be positive");
        }
        let z = &self.zigbee;
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !(z.capacity_bps > 0.0)
            || !(z.hop_exponent >= 0.0)
            || !(z.prr_per_hop > 0.0 && z.prr_per_hop <= 1.0)
            || !unit(z.burst_enter)
            || !unit(z.burst_exit)
            || !(z.burst_prr_factor > 0.0 && z.burst_prr_factor <= 1.0)
            || !(z.jitter_sigma >= 0.0)
            || z.beacons_per_packet == 0
            || z.beacon_window == 0
        {
            return bad("invalid zigbee parameters");
        }
        let l = &self.lora;
        if l.tiers.is_empty()
            || l.tiers.iter().any(|t| !(t.rate_bps > 0.0) || t.min_rssi_dbm.is_nan())
            || l.tiers.windows(2).any(|w| !(w[0].min_rssi_dbm > w[1].min_rssi_dbm))
            || !(l.ref_distance_m > 0.0)
            || !(l.node_shadowing_db >= 0.0 && l.shadowing_db >= 0.0 && l.rssi_noise_db >= 0.0 && l.jitter_sigma >= 0.0)
        {
            return bad("invalid lora parameters");
        }
        let q = &self.queue;
        if !(q.service_s > 0.0)
            || !(0.0..1.0).contains(&q.retry_prob)
            || !(0.0..1.0).contains(&q.arrival_jitter)
            || !(q.staleness_tau_s > 0.0)
        {
            return bad("invalid queue parameters");
        }
        Ok(())
    }

    pub fn hops(&self, distance_m: f64) -> u32 {
        ((distance_m / self.hop_range_m).ceil() as u32).max(1)
    }

    pub fn in_gray_region(&self, distance_m: f64) -> bool {
        let [lo, hi] = self.gray_region_m;
        (lo..=hi).contains(&distance_m)
    }

    fn lora_rate(&self, rssi: f64) -> f64 {
        let tiers = &self.lora.tiers;
        tiers
            .iter()
            .find(|t| rssi >= t.min_rssi_dbm)
            .unwrap_or(&tiers[tiers.len() - 1])
            .rate_bps
    }
}

const CHANNEL_STREAM: u64 = 1 << 32;
const QUEUE_STREAM: u64 = 2 << 32;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn lognormal_factor(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 1.0;
    }
    let z: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(rng);
    (sigma * z - 0.5 * sigma * sigma).exp()
}

/// One packet of one node before the queue touches its features.
#[derive(Debug, Clone)]
struct ChannelSample {
    tp_zigbee: f64,
    tp_lora: f64,
    hn: f64,
    rssi: f64,
    prr: f64,
    rnp: f64,
}

fn node_channel(cfg: &ScenarioConfig, node: usize) -> Vec<ChannelSample> {
    let mut rng = stream(cfg.seed, CHANNEL_STREAM + node as u64);
    let d = cfg.distances_m[node];
    let hn = cfg.hops(d);
    let z = &cfg.zigbee;
    let l = &cfg.lora;
    let good_prr = z.prr_per_hop.powi(hn as i32);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let node_shadow = l.node_shadowing_db * unit.sample(&mut rng);
    let mean_rssi = l.rssi_at_ref_dbm - 10.0 * l.path_loss_exponent * (d / l.ref_distance_m).log10() + node_shadow;

    let mut bad = false;
    // Per packet interval: (beacons delivered, beacon attempts spent).
    let mut window: std::collections::VecDeque<(usize, usize)> = Default::default();
    let mut out = Vec::with_capacity(cfg.n_packets);
    for _ in 0..cfg.n_packets {
        bad = if bad {
            !rng.random_bool(z.burst_exit)
        } else {
            rng.random_bool(z.burst_enter)
        };
        let prr = if bad { good_prr * z.burst_prr_factor } else { good_prr };

        let mut delivered = 0;
        let mut attempts = 0;
        for _ in 0..z.beacons_per_packet {
            attempts += 1;
            if rng.random_bool(prr) {
                delivered += 1;
            }
        }
        window.push_back((delivered, attempts));
        if window.len() > z.beacon_window {
            window.pop_front();
        }
        let (dsum, asum) = window.iter().fold((0, 0), |(a, b), &(x, y)| (a + x, b + y));
        let prr_obs = dsum as f64 / asum as f64;
        let rnp_obs = asum as f64 / dsum.max(1) as f64;

        let tp_zigbee = z.capacity_bps * prr / (hn as f64).powf(z.hop_exponent) * lognormal_factor(&mut rng, z.jitter_sigma);

        let rssi_true = mean_rssi + l.shadowing_db * unit.sample(&mut rng);
        let rssi_obs = rssi_true + l.rssi_noise_db * unit.sample(&mut rng);
        let tp_lora = cfg.lora_rate(rssi_true) * lognormal_factor(&mut rng, l.jitter_sigma);

        out.push(ChannelSample {
            tp_zigbee,
            tp_lora,
            hn: hn as f64,
            rssi: rssi_obs,
            prr: prr_obs,
            rnp: rnp_obs,
        });
    }
    out
}

/// A generated trace plus the queue outcome of every record.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub interval_s: f64,
    pub traces: Vec<TraceRecord>,
    /// Queue wait plus service of each record, s.
    pub latency_s: Vec<f64>,
    /// Whether the record's PRR/RNP features are stale.
    pub stale: Vec<bool>,
}

impl Simulation {
    pub fn mean_latency_ms(&self) -> f64 {
        1000.0 * exact_sum(self.latency_s.iter().copied()) / self.latency_s.len() as f64
    }

    pub fn stale_fraction(&self) -> f64 {
        self.stale.iter().filter(|s| **s).count() as f64 / self.stale.len() as f64
    }
}

/// Generates the trace of `cfg` at its own packet interval.
pub fn generate(cfg: &ScenarioConfig) -> Result<Vec<TraceRecord>> {
    Ok(simulate(cfg, cfg.packet_interval_s)?.traces)
}

/// Generates the trace of `cfg` with every node sending once per `interval_s`.
pub fn simulate(cfg: &ScenarioConfig, interval_s: f64) -> Result<Simulation> {
    cfg.validate()?;
    if !(interval_s.is_finite() && interval_s > 0.0) {
        return Err(Error::Config(format!("interval must be positive, got {interval_s}")));
    }
    let n = cfg.n_nodes();
    let channels: Vec<Vec<ChannelSample>> = (0..n).map(|j| node_channel(cfg, j)).collect();
    let q = &cfg.queue;
    let mut rng = stream(cfg.seed, QUEUE_STREAM);

    let mut traces = Vec::with_capacity(n * cfg.n_packets);
    let mut latency_s = Vec::with_capacity(n * cfg.n_packets);
    let mut stale = Vec::with_capacity(n * cfg.n_packets);
    let mut wait = 0.0f64;
    let mut prev_arrival = 0.0f64;
    let mut prev_service = 0.0f64;
    for k in 0..cfg.n_packets {
        for (j, ch) in channels.iter().enumerate() {
            // Draws happen in a fixed order whatever the interval.
            let u: f64 = rng.random();
            let mut attempts = 1;
            while attempts <= q.max_retries && rng.random_bool(q.retry_prob) {
                attempts += 1;
            }
            let v: f64 = rng.random();

            // Node j owns the j-th slot of each period; the jitter keeps slot order.
            let t = interval_s * (k as f64 + (j as f64 + q.arrival_jitter * u) / n as f64);
            let service = q.service_s * attempts as f64;
            if q.enabled {
                if k + j > 0 {
                    wait = (wait + prev_service - (t - prev_arrival)).max(0.0);
                }
            } else {
                wait = 0.0;
            }
            prev_arrival = t;
            prev_service = service;

            let p_stale = if wait > 0.0 { 1.0 - (-wait / q.staleness_tau_s).exp() } else { 0.0 };
            let is_stale = v < p_stale;
            let src = if is_stale { &ch[k.saturating_sub(q.stale_lag)] } else { &ch[k] };
            let s = &ch[k];
            let x = FeatureVector::new(s.hn, s.rssi, src.prr, src.rnp)?;
            traces.push(TraceRecord {
                node_id: j as u32,
                t,
                tp_zigbee: s.tp_zigbee,
                tp_lora: s.tp_lora,
                x,
            });
            latency_s.push(wait + service);
            stale.push(is_stale);
        }
    }
    Ok(Simulation {
        interval_s,
        traces,
        latency_s,
        stale,
    })
}

/// Radio selection policy replayed against a trace.
#[derive(Debug, Clone)]
pub enum Selector {
    AlwaysZigbee,
    AlwaysLora,
    /// Picks the faster radio with hindsight.
    Oracle,
    Tree(Box<ObliqueTree>),
    /// Zigbee up to and including this many hops, LoRa beyond.
    Threshold(u32),
}

impl Selector {
    pub fn name(&self) -> String {
        match self {
            Selector::AlwaysZigbee => "always_zigbee".into(),
            Selector::AlwaysLora => "always_lora".into(),
            Selector::Oracle => "oracle".into(),
            Selector::Tree(_) => "tree".into(),
            Selector::Threshold(h) => format!("threshold_hn{h}"),
        }
    }

    fn check(&self) -> Result<()> {
        if let Selector::Tree(t) = self {
            if let Some(k) = t.dim() {
                if k != crate::FEATURE_NAMES.len() {
                    return Err(Error::Dimension {
                        expected: crate::FEATURE_NAMES.len(),
                        got: k,
                    });
                }
            }
        }
        Ok(())
    }

    /// Chooses a radio from the record's features (the oracle reads throughputs).
    pub fn select(&self, r: &TraceRecord) -> Result<RadioClass> {
        Ok(match self {
            Selector::AlwaysZigbee => RadioClass::Zigbee,
            Selector::AlwaysLora => RadioClass::Lora,
            Selector::Oracle => {
                if r.tp_lora > r.tp_zigbee {
                    RadioClass::Lora
                } else {
                    RadioClass::Zigbee
                }
            }
            Selector::Tree(t) => t.predict(&r.x.to_array())?,
            Selector::Threshold(h) => {
                if r.x.hn <= *h as f64 {
                    RadioClass::Zigbee
                } else {
                    RadioClass::Lora
                }
            }
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplayResult {
    pub selector: String,
    pub selected: Vec<RadioClass>,
    pub achieved_bps: Vec<f64>,
    pub mean_bps: f64,
    pub oracle_mean_bps: f64,
    pub zigbee_mean_bps: f64,
    pub lora_mean_bps: f64,
    /// Mean achieved over mean oracle throughput.
    pub performance_ratio: f64,
    pub oracle_gap_bps: f64,
    /// Relative gain over the better single radio, percent.
    pub gain_vs_best_single_pct: f64,
    /// Relative gain over the worse single radio, percent.
    pub gain_vs_worst_single_pct: f64,
}

impl ReplayResult {
    /// Nearest-rank percentiles 0, 5, ..., 100 of the achieved throughput.
    pub fn cdf(&self) -> Vec<(u32, f64)> {
        let mut v = self.achieved_bps.clone();
        v.sort_by(f64::total_cmp);
        (0..=20)
            .map(|i| {
                let p = i * 5;
                let rank = ((p as f64 / 100.0) * v.len() as f64).ceil() as usize;
                (p, v[rank.clamp(1, v.len()) - 1])
            })
            .collect()
    }
}

fn mean(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    exact_sum(v) / n as f64
}

pub fn replay(traces: &[TraceRecord], selector: &Selector) -> Result<ReplayResult> {
    if traces.is_empty() {
        return Err(Error::EmptyDataset);
    }
    selector.check()?;
    let n = traces.len();
    let selected = traces.iter().map(|r| selector.select(r)).collect::<Result<Vec<_>>>()?;
    let achieved_bps: Vec<f64> = traces.iter().zip(&selected).map(|(r, s)| r.throughput(*s)).collect();
    let mean_bps = mean(achieved_bps.iter().copied(), n);
    let oracle_mean_bps = mean(traces.iter().map(TraceRecord::best), n);
    let zigbee_mean_bps = mean(traces.iter().map(|r| r.tp_zigbee), n);
    let lora_mean_bps = mean(traces.iter().map(|r| r.tp_lora), n);
    if !(oracle_mean_bps > 0.0) {
        return Err(Error::Data("trace has zero throughput on both radios throughout".into()));
    }
    let best = zigbee_mean_bps.max(lora_mean_bps);
    let worst = zigbee_mean_bps.min(lora_mean_bps);
    let gain = |base: f64| {
        if base > 0.0 {
            100.0 * (mean_bps - base) / base
        } else {
            f64::INFINITY
        }
    };
    Ok(ReplayResult {
        selector: selector.name(),
        selected,
        achieved_bps,
        mean_bps,
        oracle_mean_bps,
        zigbee_mean_bps,
        lora_mean_bps,
        performance_ratio: mean_bps / oracle_mean_bps,
        oracle_gap_bps: oracle_mean_bps - mean_bps,
        gain_vs_best_single_pct: gain(best),
        gain_vs_worst_single_pct: gain(worst),
    })
}

pub fn write_cdf_csv<W: Write>(results: &[ReplayResult], w: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    wtr.write_record(CDF_HEADER).map_err(|e| Error::Format(e.to_string()))?;
    for r in results {
        for (p, v) in r.cdf() {
            wtr.write_record([r.selector.clone(), p.to_string(), v.to_string()])
                .map_err(|e| Error::Format(e.to_string()))?;
        }
    }
    wtr.flush().map_err(|e| Error::Format(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub interval_s: f64,
    pub selector: String,
    pub performance_ratio: f64,
    pub mean_latency_ms: f64,
}

/// Replays every selector on traces regenerated at each interval.
pub fn interval_sweep(cfg: &ScenarioConfig, intervals: &[f64], selectors: &[Selector], parallel: bool) -> Result<Vec<SweepRow>> {
    if let Some(bad) = intervals.iter().find(|i| !(i.is_finite() && **i > 0.0)) {
        return Err(Error::Config(format!("intervals must be positive, got {bad}")));
    }
    for s in selectors {
        s.check()?;
    }
    let per_interval = crate::par::try_map(intervals, parallel, |&interval| -> Result<Vec<SweepRow>> {
        let sim = simulate(cfg, interval)?;
        let latency = sim.mean_latency_ms();
        selectors
            .iter()
            .map(|s| {
                Ok(SweepRow {
                    interval_s: interval,
                    selector: s.name(),
                    performance_ratio: replay(&sim.traces, s)?.performance_ratio,
                    mean_latency_ms: latency,
                })
            })
            .collect()
    })?;
    Ok(per_interval.into_iter().flatten().collect())
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    wtr.write_record(SWEEP_HEADER).map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        wtr.write_record([
            r.interval_s.to_string(),
            r.selector.clone(),
            r.performance_ratio.to_string(),
            r.mean_latency_ms.to_string(),
        ])
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    wtr.flush().map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{label_traces, write_traces, TiePolicy};

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            n_packets: 80,
            ..ScenarioConfig::default()
        }
    }

    fn csv_bytes(t: &[TraceRecord]) -> Vec<u8> {
        let mut out = Vec::new();
        write_traces(t, &mut out).unwrap();
        out
    }

    #[test]
    fn default_file_round_trips() {
        let cfg = ScenarioConfig::default();
        assert_eq!(ScenarioConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(cfg.to_json(), DEFAULT_SCENARIO_JSON);
    }

    #[test]
    fn invalid_scenarios_are_rejected() {
        let c = ScenarioConfig {
            gray_region_m: [1200.0, 500.0],
            ..ScenarioConfig::default()
        };
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::default();
        c.distances_m[0] = 0.0;
        assert!(c.validate().is_err());
        let c = ScenarioConfig {
            packet_interval_s: 0.0,
            ..ScenarioConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(ScenarioConfig::from_json("{\"version\": 1}").is_err());
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = small();
        assert_eq!(csv_bytes(&generate(&cfg).unwrap()), csv_bytes(&generate(&cfg).unwrap()));
        assert_ne!(
            csv_bytes(&generate(&cfg).unwrap()),
            csv_bytes(&generate(&cfg.with_seed(cfg.seed + 1)).unwrap())
        );
    }

    #[test]
    fn hop_count_lowers_zigbee_throughput() {
        let cfg = ScenarioConfig {
            distances_m: vec![250.0, 1150.0],
            n_packets: 1000,
            ..ScenarioConfig::default()
        };
        let t = generate(&cfg).unwrap();
        let m = |node: u32| {
            let v: Vec<f64> = t.iter().filter(|r| r.node_id == node).map(|r| r.tp_zigbee).collect();
            assert_eq!(v.len(), 1000);
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert_eq!(cfg.hops(250.0), 1);
        assert_eq!(cfg.hops(1150.0), 4);
        assert!(m(0) > m(1));
    }

    #[test]
    fn near_ties_concentrate_in_the_gray_region() {
        let cfg = ScenarioConfig::default();
        let reps = 10_000usize.div_ceil(cfg.n_packets * cfg.n_nodes()) as u64;
        let (mut gray, mut other) = ((0usize, 0usize), (0usize, 0usize));
        for s in 0..reps {
            for r in generate(&cfg.with_seed(cfg.seed + s)).unwrap() {
                let close = (r.tp_zigbee - r.tp_lora).abs() <= 200.0;
                let bucket = if cfg.in_gray_region(cfg.distances_m[r.node_id as usize]) {
                    &mut gray
                } else {
                    &mut other
                };
                bucket.0 += close as usize;
                bucket.1 += 1;
            }
        }
        assert!(gray.1 + other.1 >= 10_000);
        assert!(gray.0 as f64 / gray.1 as f64 > other.0 as f64 / other.1 as f64);
    }

    #[test]
    fn labels_cost_the_throughput_gap() {
        let t = generate(&small()).unwrap();
        let ds = label_traces(&t, TiePolicy::Drop).unwrap();
        let gaps: Vec<f64> = t.iter().map(|r| (r.tp_zigbee - r.tp_lora).abs()).filter(|c| *c > 0.0).collect();
        assert_eq!(gaps.len(), ds.len());
        for (s, c) in ds.samples().iter().zip(gaps) {
            assert_eq!(s.c, c);
        }
    }

    #[test]
    fn replay_bounds() {
        let t = generate(&small()).unwrap();
        let oracle = replay(&t, &Selector::Oracle).unwrap();
        assert_eq!(oracle.performance_ratio, 1.0);
        for s in [
            Selector::AlwaysZigbee,
            Selector::AlwaysLora,
            Selector::Threshold(3),
            Selector::Tree(Box::new(ObliqueTree::leaf(RadioClass::Lora))),
        ] {
            let r = replay(&t, &s).unwrap();
            assert!(r.achieved_bps.iter().zip(&oracle.achieved_bps).all(|(a, o)| a <= o));
            assert!(r.performance_ratio > 0.0 && r.performance_ratio <= 1.0);
        }
        let lora = replay(&t, &Selector::AlwaysLora).unwrap();
        assert_eq!(
            lora.gain_vs_best_single_pct.min(lora.gain_vs_worst_single_pct),
            lora.gain_vs_best_single_pct
        );
        let cdf = oracle.cdf();
        assert_eq!(cdf.len(), 21);
        assert!(cdf.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn always_zigbee_matches_oracle_when_zigbee_dominates() {
        let mut t = generate(&small()).unwrap();
        for r in &mut t {
            r.tp_zigbee = r.tp_lora + 1.0;
        }
        let z = replay(&t, &Selector::AlwaysZigbee).unwrap();
        assert_eq!(z.achieved_bps, replay(&t, &Selector::Oracle).unwrap().achieved_bps);
        assert_eq!(z.performance_ratio, 1.0);
    }

    #[test]
    fn wrong_dimension_tree_is_rejected() {
        let t = generate(&small()).unwrap();
        let tree = crate::cart_init::random_complete(3, 1, 0).unwrap();
        assert!(matches!(replay(&t, &Selector::Tree(Box::new(tree))), Err(Error::Dimension { .. })));
    }

    #[test]
    fn long_interval_reduces_to_no_queue() {
        let cfg = small();
        let slow = simulate(&cfg, 60.0).unwrap();
        assert_eq!(slow.stale_fraction(), 0.0);
        let mut no_queue = cfg.clone();
        no_queue.queue.enabled = false;
        let base = generate(&no_queue).unwrap();
        let tree = Selector::Tree(Box::new(crate::cart_init::random_complete(4, 3, 4).unwrap()));
        let a = replay(&slow.traces, &tree).unwrap().performance_ratio;
        let b = replay(&base, &tree).unwrap().performance_ratio;
        assert!((a - b).abs() <= 1e-9);
    }

    #[test]
    fn sweep_shape_and_latency_trend() {
        let cfg = small();
        let intervals = [5.0, 3.0, 2.0, 1.5, 1.4, 1.3];
        let sels = [Selector::Oracle, Selector::AlwaysZigbee, Selector::Threshold(3)];
        let rows = interval_sweep(&cfg, &intervals, &sels, true).unwrap();
        assert_eq!(rows.len(), 6 * 3);
        assert!(rows.iter().filter(|r| r.selector == "oracle").all(|r| r.performance_ratio == 1.0));
        let lat: Vec<f64> = rows.iter().filter(|r| r.selector == "oracle").map(|r| r.mean_latency_ms).collect();
        // Intervals are listed in decreasing order.
        assert!(lat.windows(2).all(|w| w[0] <= w[1]), "{lat:?}");
        assert_eq!(rows, interval_sweep(&cfg, &intervals, &sels, false).unwrap());
        let mut out = Vec::new();
        write_sweep_csv(&rows, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 19);
    }
}
