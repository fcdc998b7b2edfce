//! Per-sample cost-sensitive oblique decision trees.
//!
//! Trees are trained with tree alternating optimization (TAO): a fixed tree
//! structure is refined node by node, deepest level first, and every accepted
//! update strictly lowers the cost-weighted 0/1 loss plus an L1 penalty on the
//! decision hyperplanes. Around the trainer sit the pieces needed to use it
//! for dual-radio (Zigbee / LoRa) link selection: CSV ingestion, a greedy CART
//! baseline, cost-weighted metrics, a synthetic trace simulator with a replay
//! harness, a structural stability experiment and an IF/ELSE exporter.
//!
//! With the default `parallel` feature, nodes of one depth level, cross
//! validation folds and simulator sweeps run on the rayon pool. Without it the
//! same code runs sequentially and produces bit-identical results.

// `!(x > 0.0)` is how NaN gets rejected alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cart_init;
pub mod dataset;
pub mod error;
pub mod exact;
pub mod export;
pub mod metrics;
pub mod par;
pub mod simulator;
pub mod solver;
pub mod stability;
pub mod tao;
pub mod tree;

pub use dataset::{Dataset, FeatureVector, RadioClass, Sample, Scaler, TraceRecord};
pub use error::{Error, Result};
pub use tao::{InitPolicy, TaoConfig, TrainOutcome};
pub use tree::ObliqueTree;

/// Names of the four radio features, in column order.
pub const FEATURE_NAMES: [&str; 4] = ["hn", "rssi", "prr", "rnp"];

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
