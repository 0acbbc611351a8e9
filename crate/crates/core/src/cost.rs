//! Alpha-beta communication costs for the standard collectives and for the
//! two-phase broadcast + allreduce top-k exchange, with closed-form
//! collective selection.
//!
//! All logarithms are base 2. Payload sizes are in bytes and `beta` is
//! seconds per byte, derived once from a bandwidth given in bits per second.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::compress::CompressionRatio;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    /// Per-message latency in seconds.
    pub alpha: f64,
    /// Link bandwidth in bits per second.
    pub bandwidth: f64,
}

impl NetParams {
    pub fn new(alpha: f64, bandwidth: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidNetwork(format!("alpha must be >= 0, got {alpha}")));
        }
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::InvalidNetwork(format!("bandwidth must be > 0, got {bandwidth}")));
        }
        Ok(NetParams { alpha, bandwidth })
    }

    pub fn from_ms_gbps(alpha_ms: f64, bandwidth_gbps: f64) -> Result<Self> {
        NetParams::new(alpha_ms * 1e-3, bandwidth_gbps * 1e9)
    }

    /// Seconds per byte.
    pub fn beta(&self) -> f64 {
        8.0 / self.bandwidth
    }

    pub fn alpha_ms(&self) -> f64 {
        self.alpha * 1e3
    }

    pub fn bandwidth_gbps(&self) -> f64 {
        self.bandwidth / 1e9
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MessageSpec {
    /// Dense gradient payload in bytes.
    pub bytes: f64,
    pub cr: CompressionRatio,
    pub workers: usize,
}

impl MessageSpec {
    pub fn new(bytes: f64, cr: CompressionRatio, workers: usize) -> Result<Self> {
        if !(bytes.is_finite() && bytes >= 4.0) {
            return Err(Error::InvalidMessage(format!("payload must be >= 4 bytes, got {bytes}")));
        }
        if workers == 0 {
            return Err(Error::InvalidMessage("worker count must be >= 1".into()));
        }
        Ok(MessageSpec { bytes, cr, workers })
    }

    pub fn with_cr(&self, cr: CompressionRatio) -> Self {
        MessageSpec { cr, ..*self }
    }

    /// Bytes of values (and, separately, of indices) after compression: `M*c`.
    pub fn compressed_bytes(&self) -> f64 {
        self.bytes * self.cr.get()
    }

    fn n(&self) -> f64 {
        self.workers as f64
    }

    fn log_n(&self) -> f64 {
        (self.workers as f64).log2()
    }
}

/// Predicted communication time, in seconds, for every modeled collective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub ps: f64,
    pub ring_ar: f64,
    pub tree_ar: f64,
    pub broadcast: f64,
    pub allgather_dense: f64,
    pub ag_compressed: f64,
    pub art_ring: f64,
    pub art_tree: f64,
}

impl CostBreakdown {
    pub fn of(&self, collective: Collective) -> f64 {
        match collective {
            Collective::Ag => self.ag_compressed,
            Collective::ArtRing => self.art_ring,
            Collective::ArtTree => self.art_tree,
        }
    }
}

/// Collectives available for compressed aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Collective {
    #[serde(rename = "AG")]
    Ag,
    #[serde(rename = "ART_RING")]
    ArtRing,
    #[serde(rename = "ART_TREE")]
    ArtTree,
}

impl Collective {
    pub const ALL: [Collective; 3] = [Collective::Ag, Collective::ArtRing, Collective::ArtTree];

    pub fn as_str(self) -> &'static str {
        match self {
            Collective::Ag => "AG",
            Collective::ArtRing => "ART_RING",
            Collective::ArtTree => "ART_TREE",
        }
    }
}

impl fmt::Display for Collective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Collective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "AG" => Ok(Collective::Ag),
            "ART_RING" => Ok(Collective::ArtRing),
            "ART_TREE" => Ok(Collective::ArtTree),
            _ => Err(Error::Config(format!("unknown collective {s:?}"))),
        }
    }
}

/// Allreduce algorithm; affects only the charged time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReduceAlgo {
    Ring,
    Tree,
}

impl ReduceAlgo {
    pub fn as_str(self) -> &'static str {
        match self {
            ReduceAlgo::Ring => "ring",
            ReduceAlgo::Tree => "tree",
        }
    }
}

pub fn ps_cost(net: &NetParams, bytes: f64, workers: usize) -> f64 {
    let n = workers as f64;
    2.0 * net.alpha + 2.0 * (n - 1.0) * bytes * net.beta()
}

pub fn ring_allreduce_cost(net: &NetParams, bytes: f64, workers: usize) -> f64 {
    let n = workers as f64;
    2.0 * (n - 1.0) * net.alpha + 2.0 * ((n - 1.0) / n) * bytes * net.beta()
}

pub fn tree_allreduce_cost(net: &NetParams, bytes: f64, workers: usize) -> f64 {
    let log_n = (workers as f64).log2();
    2.0 * net.alpha * log_n + 2.0 * log_n * bytes * net.beta()
}

pub fn allreduce_cost(net: &NetParams, bytes: f64, workers: usize, algo: ReduceAlgo) -> f64 {
    match algo {
        ReduceAlgo::Ring => ring_allreduce_cost(net, bytes, workers),
        ReduceAlgo::Tree => tree_allreduce_cost(net, bytes, workers),
    }
}

pub fn broadcast_cost(net: &NetParams, bytes: f64, workers: usize) -> f64 {
    let log_n = (workers as f64).log2();
    net.alpha * log_n + log_n * bytes * net.beta()
}

/// Allgather where each worker contributes `bytes`.
pub fn allgather_cost(net: &NetParams, bytes: f64, workers: usize) -> f64 {
    let n = workers as f64;
    net.alpha * n.log2() + (n - 1.0) * bytes * net.beta()
}

pub fn cost_primitives(net: &NetParams, msg: &MessageSpec) -> CostBreakdown {
    let m = msg.bytes;
    let n = msg.workers;
    CostBreakdown {
        ps: ps_cost(net, m, n),
        ring_ar: ring_allreduce_cost(net, m, n),
        tree_ar: tree_allreduce_cost(net, m, n),
        broadcast: broadcast_cost(net, m, n),
        allgather_dense: allgather_cost(net, m, n),
        ag_compressed: cost_ag_compressed(net, msg),
        art_ring: cost_art_ring(net, msg),
        art_tree: cost_art_tree(net, msg),
    }
}

/// Allgather of `2Mc` bytes (values plus indices) per worker.
pub fn cost_ag_compressed(net: &NetParams, msg: &MessageSpec) -> f64 {
    net.alpha * msg.log_n() + 2.0 * msg.compressed_bytes() * net.beta() * (msg.n() - 1.0)
}

/// Index broadcast followed by a ring allreduce of `Mc` value bytes.
pub fn cost_art_ring(net: &NetParams, msg: &MessageSpec) -> f64 {
    let n = msg.n();
    let log_n = msg.log_n();
    net.alpha * (2.0 * (n - 1.0) + log_n)
        + msg.compressed_bytes() * net.beta() * (2.0 * (n - 1.0) / n + log_n)
}

/// Index broadcast followed by a tree allreduce of `Mc` value bytes.
pub fn cost_art_tree(net: &NetParams, msg: &MessageSpec) -> f64 {
    let log_n = msg.log_n();
    3.0 * net.alpha * log_n + 3.0 * msg.compressed_bytes() * net.beta() * log_n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Selection {
    pub collective: Collective,
    pub costs: CostBreakdown,
}

impl Selection {
    pub fn time(&self) -> f64 {
        self.costs.of(self.collective)
    }
}

/// Cheapest of AG, ART-Ring and ART-Tree. Exact ties resolve in that order.
pub fn select_collective(net: &NetParams, msg: &MessageSpec) -> Result<Selection> {
    if msg.workers < 2 {
        return Err(Error::SingleWorker);
    }
    let costs = cost_primitives(net, msg);
    let mut best = Collective::Ag;
    for c in [Collective::ArtRing, Collective::ArtTree] {
        if costs.of(c) < costs.of(best) {
            best = c;
        }
    }
    Ok(Selection { collective: best, costs })
}

/// The three pairwise comparisons that have closed-form latency/bandwidth tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pair {
    RingOverTree,
    RingOverAg,
    TreeOverAg,
}

impl Pair {
    pub const ALL: [Pair; 3] = [Pair::RingOverTree, Pair::RingOverAg, Pair::TreeOverAg];

    pub fn preferred(self) -> Collective {
        match self {
            Pair::RingOverTree | Pair::RingOverAg => Collective::ArtRing,
            Pair::TreeOverAg => Collective::ArtTree,
        }
    }

    pub fn other(self) -> Collective {
        match self {
            Pair::RingOverTree => Collective::ArtTree,
            Pair::RingOverAg | Pair::TreeOverAg => Collective::Ag,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Pair::RingOverTree => "ART_RING/ART_TREE",
            Pair::RingOverAg => "ART_RING/AG",
            Pair::TreeOverAg => "ART_TREE/AG",
        }
    }

    /// The condition written as `alpha * lhs < beta * Mc * rhs`.
    fn sides(self, workers: usize) -> (f64, f64) {
        let n = workers as f64;
        let log_n = n.log2();
        match self {
            Pair::RingOverTree => (n - 1.0 - log_n, log_n - (n - 1.0) / n),
            Pair::RingOverAg => (1.0, 1.0 - 1.0 / n - log_n / (2.0 * (n - 1.0))),
            Pair::TreeOverAg => (log_n, (n - 1.0) - 1.5 * log_n),
        }
    }

    /// Coefficient `K` in `alpha/beta < K * Mc`, or `None` when the
    /// latency-side factor vanishes (ring over tree at N = 2).
    pub fn threshold_coefficient(self, workers: usize) -> Option<f64> {
        let (lhs, rhs) = self.sides(workers);
        if lhs > 0.0 {
            Some(rhs / lhs)
        } else {
            None
        }
    }
}

/// Closed-form test: does `pair.preferred()` beat `pair.other()`?
pub fn closed_form_prefers(pair: Pair, net: &NetParams, msg: &MessageSpec) -> Result<bool> {
    if msg.workers < 2 {
        return Err(Error::SingleWorker);
    }
    let mc = msg.compressed_bytes();
    Ok(match pair.threshold_coefficient(msg.workers) {
        Some(k) => net.alpha / net.beta() < k * mc,
        None => {
            let (lhs, rhs) = pair.sides(msg.workers);
            net.alpha * lhs < net.beta() * mc * rhs
        }
    })
}

/// Crossover of a pairwise comparison in compression-ratio space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Crossover {
    /// The preferred collective wins for every `c > value`; `value == 0`
    /// means it wins at every ratio.
    At(f64),
    /// No crossover inside `(0, 1]`.
    None,
}

/// Compression ratio at which `pair`'s inequality turns into an equality.
pub fn crossover_cr(net: &NetParams, bytes: f64, workers: usize, pair: Pair) -> Result<Crossover> {
    if workers < 2 {
        return Err(Error::SingleWorker);
    }
    if !(bytes.is_finite() && bytes > 0.0) {
        return Err(Error::InvalidMessage(format!("payload must be > 0 bytes, got {bytes}")));
    }
    let (lhs, rhs) = pair.sides(workers);
    if rhs <= 0.0 {
        return Ok(Crossover::None);
    }
    if lhs <= 0.0 || net.alpha == 0.0 {
        return Ok(Crossover::At(0.0));
    }
    let c = (net.alpha / net.beta()) / (bytes * (rhs / lhs));
    if c <= 1.0 {
        Ok(Crossover::At(c))
    } else {
        Ok(Crossover::None)
    }
}
