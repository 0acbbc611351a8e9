//! Allreduce-compatible top-k aggregation.
//!
//! One worker's top-k index set is broadcast, every worker gathers its own
//! error-fed values at those positions, and the values are averaged with an
//! allreduce. The broadcasting worker is picked round-robin (STAR) or as the
//! worker whose compressed gradient has the largest squared norm (VAR). The
//! allgather-based exchange used by conventional top-k compressors lives here
//! too so both paths share the same bookkeeping.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::collectives::{Cluster, ReduceOp};
use crate::compress::{compression_gain, error_feedback, residual_update, topk_exact, CompressionRatio, Compressor};
use crate::cost::ReduceAlgo;
use crate::error::{Error, Result};
use crate::grad::{DenseGrad, ResidualStore, SparseGrad, WIRE_BYTES};
use crate::netsched::{Category, SimClock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    Star,
    Var,
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMode::Star => "STAR",
            SelectionMode::Var => "VAR",
        })
    }
}

impl FromStr for SelectionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "star" => Ok(SelectionMode::Star),
            "var" => Ok(SelectionMode::Var),
            _ => Err(Error::Config(format!("unknown selection mode {s:?}"))),
        }
    }
}

/// Maps element counts to wire bytes.
///
/// With a model-size override, each of the G local elements stands for
/// `model_bytes / G` bytes so that desk-scale models are charged as if they
/// had the overridden size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireSizing {
    grad_len: usize,
    model_bytes: f64,
}

impl WireSizing {
    pub fn new(grad_len: usize, model_bytes: Option<f64>) -> Self {
        WireSizing {
            grad_len,
            model_bytes: model_bytes.unwrap_or((grad_len * WIRE_BYTES) as f64),
        }
    }

    pub fn model_bytes(&self) -> f64 {
        self.model_bytes
    }

    pub fn grad_len(&self) -> usize {
        self.grad_len
    }

    /// Bytes for `elems` gradient values (or indices).
    pub fn bytes_for(&self, elems: usize) -> f64 {
        if elems == self.grad_len {
            self.model_bytes
        } else {
            self.model_bytes * elems as f64 / self.grad_len as f64
        }
    }

    /// Element count of the modeled model.
    pub fn modeled_len(&self) -> f64 {
        self.model_bytes / WIRE_BYTES as f64
    }
}

pub fn select_star(step: u64, workers: usize) -> usize {
    (step % workers.max(1) as u64) as usize
}

/// First rank holding the maximum value.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (r, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = r;
        }
    }
    best
}

/// Allgathers each worker's compressed squared norm (4 bytes per worker
/// slot, N slots) and returns the rank of the largest.
pub fn select_var(cluster: &Cluster, clock: &mut SimClock, local: &[SparseGrad]) -> Result<usize> {
    let n = cluster.workers();
    let payloads: Vec<Vec<f64>> = (0..n)
        .map(|r| {
            let mut var = vec![0.0; n];
            var[r] = local[r].norm_sq();
            var
        })
        .collect();
    let views = cluster.allgather(clock, &payloads, (WIRE_BYTES * n) as f64)?;
    // Every worker sees the same gathered arrays; read rank r's slot from rank r.
    let var: Vec<f64> = (0..n).map(|r| views[0][r][r]).collect();
    Ok(argmax_lowest(&var))
}

/// Per-run record of which rank broadcast its indices at each step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelectionLog {
    entries: Vec<(u64, usize)>,
    counts: Vec<u64>,
}

impl SelectionLog {
    pub fn new(workers: usize) -> Self {
        SelectionLog { entries: Vec::new(), counts: vec![0; workers] }
    }

    pub fn record(&mut self, step: u64, rank: usize) {
        if rank >= self.counts.len() {
            self.counts.resize(rank + 1, 0);
        }
        self.counts[rank] += 1;
        self.entries.push((step, rank));
    }

    pub fn entries(&self) -> &[(u64, usize)] {
        &self.entries
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "rank"]).map_err(csv_err)?;
        for (step, rank) in &self.entries {
            w.write_record([step.to_string(), rank.to_string()]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArtopkParams {
    pub cr: CompressionRatio,
    pub mode: SelectionMode,
    pub algo: ReduceAlgo,
    pub op: ReduceOp,
    pub error_feedback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgParams {
    pub cr: CompressionRatio,
    pub compressor: Compressor,
    pub op: ReduceOp,
    pub error_feedback: bool,
}

/// Result of one aggregation step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// The aggregated gradient as held by each worker.
    pub aggregates: Vec<Vec<f64>>,
    /// Rank whose indices were broadcast (AR-Top-k only).
    pub selected_rank: Option<usize>,
    /// Broadcast index set (AR-Top-k) or union of kept indices (allgather).
    pub indices: Vec<usize>,
    /// Elements each worker compressed to (max over workers).
    pub kept: usize,
    /// Simulated seconds charged to `Sync` by this step.
    pub sync_seconds: f64,
    /// Mean over workers of `||g_c||^2 / ||g_e||^2`, skipping zero gradients.
    pub gain: Option<f64>,
}

fn error_fed(g_o: &[DenseGrad], residuals: &ResidualStore, enabled: bool) -> Result<Vec<DenseGrad>> {
    if residuals.workers() != g_o.len() {
        return Err(Error::LengthMismatch { expected: residuals.workers(), got: g_o.len() });
    }
    g_o.iter()
        .enumerate()
        .map(|(r, g)| if enabled { error_feedback(g, residuals.get(r)) } else { Ok(g.clone()) })
        .collect()
}

fn check_shapes(cluster: &Cluster, g_o: &[DenseGrad]) -> Result<usize> {
    if g_o.len() != cluster.workers() {
        return Err(Error::LengthMismatch { expected: cluster.workers(), got: g_o.len() });
    }
    let len = g_o[0].len();
    if let Some(bad) = g_o.iter().find(|g| g.len() != len) {
        return Err(Error::LengthMismatch { expected: len, got: bad.len() });
    }
    Ok(len)
}

fn mean_gain(g_e: &[DenseGrad], g_c: &[SparseGrad]) -> Option<f64> {
    let gains: Vec<f64> = g_e.iter().zip(g_c).filter_map(|(e, c)| compression_gain(e, c).ok()).collect();
    if gains.is_empty() {
        None
    } else {
        Some(gains.iter().sum::<f64>() / gains.len() as f64)
    }
}

/// One AR-Top-k aggregation round at `step`.
pub fn artopk_step(
    cluster: &Cluster,
    clock: &mut SimClock,
    sizing: &WireSizing,
    step: u64,
    g_o: &[DenseGrad],
    residuals: &mut ResidualStore,
    params: &ArtopkParams,
) -> Result<StepOutcome> {
    let len = check_shapes(cluster, g_o)?;
    let start = clock.total(Category::Sync);
    let n = cluster.workers();

    let g_e = error_fed(g_o, residuals, params.error_feedback)?;
    let local: Vec<SparseGrad> = g_e.iter().map(|g| topk_exact(g, params.cr)).collect::<Result<_>>()?;
    let gain = mean_gain(&g_e, &local);

    let chosen = match params.mode {
        SelectionMode::Star => select_star(step, n),
        SelectionMode::Var => select_var(cluster, clock, &local)?,
    };

    let k = local[chosen].nnz();
    let received = cluster.broadcast(clock, chosen, local[chosen].indices(), sizing.bytes_for(k))?;

    let mut own_values = Vec::with_capacity(n);
    for r in 0..n {
        let gathered = SparseGrad::gather(g_e[r].values(), received[r].clone());
        if params.error_feedback {
            residuals.set(r, residual_update(&g_e[r], &gathered)?)?;
        }
        own_values.push(gathered.values().to_vec());
    }

    let reduced = cluster.allreduce(clock, &own_values, params.op, params.algo, sizing.bytes_for(k))?;
    let indices = received[0].clone();
    let aggregates = reduced
        .iter()
        .map(|vals| {
            let mut dense = vec![0.0; len];
            for (&i, &v) in indices.iter().zip(vals) {
                dense[i] = v;
            }
            dense
        })
        .collect();

    Ok(StepOutcome {
        aggregates,
        selected_rank: Some(chosen),
        indices,
        kept: k,
        sync_seconds: clock.total(Category::Sync) - start,
        gain,
    })
}

/// One allgather round: every worker compresses its own error-fed gradient
/// and all (index, value) pairs are exchanged. Payloads are padded to the
/// largest worker's count, as a fixed-size allgather would.
pub fn ag_step(
    cluster: &Cluster,
    clock: &mut SimClock,
    sizing: &WireSizing,
    g_o: &[DenseGrad],
    residuals: &mut ResidualStore,
    params: &AgParams,
) -> Result<StepOutcome> {
    let len = check_shapes(cluster, g_o)?;
    let start = clock.total(Category::Sync);
    let n = cluster.workers();

    let g_e = error_fed(g_o, residuals, params.error_feedback)?;
    let local: Vec<SparseGrad> =
        g_e.iter().map(|g| params.compressor.compress(g, params.cr)).collect::<Result<_>>()?;
    let gain = mean_gain(&g_e, &local);
    if params.error_feedback {
        for r in 0..n {
            residuals.set(r, residual_update(&g_e[r], &local[r])?)?;
        }
    }

    let kept = local.iter().map(SparseGrad::nnz).max().unwrap_or(0);
    let payloads: Vec<Vec<Option<(usize, f64)>>> = local
        .iter()
        .map(|s| {
            let mut p: Vec<_> = s.indices().iter().copied().zip(s.values().iter().copied()).map(Some).collect();
            p.resize(kept, None);
            p
        })
        .collect();
    let views = cluster.allgather(clock, &payloads, 2.0 * sizing.bytes_for(kept))?;

    let gathered = &views[0];
    let mut acc = vec![0.0; len];
    let mut touched = vec![false; len];
    for contribution in gathered {
        for &(i, v) in contribution.iter().flatten() {
            acc[i] += v;
            touched[i] = true;
        }
    }
    if params.op == ReduceOp::Avg {
        let nf = n as f64;
        acc.iter_mut().for_each(|a| *a /= nf);
    }
    let indices = (0..len).filter(|&i| touched[i]).collect();

    Ok(StepOutcome {
        aggregates: vec![acc; n],
        selected_rank: None,
        indices,
        kept,
        sync_seconds: clock.total(Category::Sync) - start,
        gain,
    })
}
