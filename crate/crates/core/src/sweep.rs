//! Cost-model predictions against the bundled measurement fixtures.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::artopk::csv_err;
use crate::compress::CompressionRatio;
use crate::cost::{cost_primitives, ring_allreduce_cost, select_collective, Collective, MessageSpec, NetParams};
use crate::error::{Error, Result};

pub const RING_AR_FIXTURE: &str = include_str!("../fixtures/ring_ar_validation.csv");
pub const GRID_FIXTURE: &str = include_str!("../fixtures/collective_grid.csv");

fn read_fixture<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(csv_err))
        .collect()
}

fn rel_err(predicted: f64, measured: f64) -> f64 {
    (predicted - measured) / measured
}

#[derive(Debug, Clone, Deserialize)]
struct RingArRow {
    params: f64,
    model_bytes: f64,
    alpha_ms: f64,
    bandwidth_gbps: f64,
    workers: usize,
    measured_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RingArCell {
    pub params: f64,
    pub model_bytes: f64,
    pub alpha_ms: f64,
    pub bandwidth_gbps: f64,
    pub workers: usize,
    pub measured_ms: f64,
    pub predicted_ms: f64,
    pub rel_err: f64,
}

pub fn ring_ar_validation() -> Result<Vec<RingArCell>> {
    let rows: Vec<RingArRow> = read_fixture(RING_AR_FIXTURE)?;
    rows.into_iter()
        .map(|r| {
            let net = NetParams::from_ms_gbps(r.alpha_ms, r.bandwidth_gbps)?;
            let predicted_ms = ring_allreduce_cost(&net, r.model_bytes, r.workers) * 1e3;
            Ok(RingArCell {
                params: r.params,
                model_bytes: r.model_bytes,
                alpha_ms: r.alpha_ms,
                bandwidth_gbps: r.bandwidth_gbps,
                workers: r.workers,
                measured_ms: r.measured_ms,
                predicted_ms,
                rel_err: rel_err(predicted_ms, r.measured_ms),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Deserialize)]
pub struct GridRow {
    pub model: String,
    pub alpha_ms: f64,
    pub bandwidth_gbps: f64,
    pub workers: usize,
    pub cr: f64,
    pub ag_ms: f64,
    pub art_ring_ms: f64,
    pub art_tree_ms: f64,
    pub winner: Collective,
}

impl GridRow {
    fn measured(&self) -> [f64; 3] {
        [self.ag_ms, self.art_ring_ms, self.art_tree_ms]
    }
}

pub fn grid_rows() -> Result<Vec<GridRow>> {
    read_fixture(GRID_FIXTURE)
}

/// Model size implied by a measured compressed-allgather time:
/// `t = alpha*log2(N) + 2*c*M*beta*(N-1)` solved for `M`.
pub fn back_derive_bytes(row: &GridRow) -> Result<f64> {
    let net = NetParams::from_ms_gbps(row.alpha_ms, row.bandwidth_gbps)?;
    let n = row.workers as f64;
    let wire = row.ag_ms / 1e3 - net.alpha * n.log2();
    let bytes = wire / (2.0 * row.cr * net.beta() * (n - 1.0));
    if !(bytes.is_finite() && bytes > 0.0) {
        return Err(Error::InvalidMessage(format!("cannot derive model size for {}", row.model)));
    }
    Ok(bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub model: String,
    pub alpha_ms: f64,
    pub bandwidth_gbps: f64,
    pub workers: usize,
    pub cr: f64,
    pub model_bytes: f64,
    pub ag_ms: f64,
    pub ag_pred_ms: f64,
    pub ag_rel_err: f64,
    pub art_ring_ms: f64,
    pub art_ring_pred_ms: f64,
    pub art_ring_rel_err: f64,
    pub art_tree_ms: f64,
    pub art_tree_pred_ms: f64,
    pub art_tree_rel_err: f64,
    pub measured_winner: Collective,
    pub predicted_winner: Collective,
    /// Gap between the two fastest measured collectives, relative to the fastest.
    pub measured_margin: f64,
}

impl GridCell {
    pub fn rel_errs(&self) -> [f64; 3] {
        [self.ag_rel_err, self.art_ring_rel_err, self.art_tree_rel_err]
    }
}

/// Each model's size is taken from its highest-bandwidth row at c = 0.1.
pub fn collective_grid() -> Result<Vec<GridCell>> {
    let rows = grid_rows()?;
    let mut out = Vec::with_capacity(rows.len());
    for row in &rows {
        let anchor = rows
            .iter()
            .filter(|r| r.model == row.model && r.cr == 0.1)
            .max_by(|a, b| a.bandwidth_gbps.total_cmp(&b.bandwidth_gbps))
            .ok_or_else(|| Error::InvalidMessage(format!("no c=0.1 row for {}", row.model)))?;
        let bytes = back_derive_bytes(anchor)?;
        let net = NetParams::from_ms_gbps(row.alpha_ms, row.bandwidth_gbps)?;
        let msg = MessageSpec::new(bytes, CompressionRatio::new(row.cr)?, row.workers)?;
        let costs = cost_primitives(&net, &msg);
        let pred = Collective::ALL.map(|c| costs.of(c) * 1e3);
        let measured = row.measured();
        let mut sorted = measured;
        sorted.sort_by(f64::total_cmp);
        out.push(GridCell {
            model: row.model.clone(),
            alpha_ms: row.alpha_ms,
            bandwidth_gbps: row.bandwidth_gbps,
            workers: row.workers,
            cr: row.cr,
            model_bytes: bytes,
            ag_ms: measured[0],
            ag_pred_ms: pred[0],
            ag_rel_err: rel_err(pred[0], measured[0]),
            art_ring_ms: measured[1],
            art_ring_pred_ms: pred[1],
            art_ring_rel_err: rel_err(pred[1], measured[1]),
            art_tree_ms: measured[2],
            art_tree_pred_ms: pred[2],
            art_tree_rel_err: rel_err(pred[2], measured[2]),
            measured_winner: row.winner,
            predicted_winner: select_collective(&net, &msg)?.collective,
            measured_margin: (sorted[1] - sorted[0]) / sorted[0],
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepTable {
    RingArValidation,
    CollectiveGrid,
}

impl SweepTable {
    pub const NAMES: [&'static str; 2] = ["ring-ar-validation", "collective-grid"];
}

impl FromStr for SweepTable {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ring-ar-validation" => Ok(SweepTable::RingArValidation),
            "collective-grid" => Ok(SweepTable::CollectiveGrid),
            _ => Err(Error::Config(format!("unknown table {s:?}; options: {}", Self::NAMES.join(", ")))),
        }
    }
}

impl fmt::Display for SweepTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepTable::RingArValidation => Self::NAMES[0],
            SweepTable::CollectiveGrid => Self::NAMES[1],
        })
    }
}

fn write_rows<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the sweep CSV and returns the number of rows.
pub fn write_sweep<W: Write>(table: SweepTable, out: W) -> Result<usize> {
    match table {
        SweepTable::RingArValidation => {
            let rows = ring_ar_validation()?;
            write_rows(&rows, out)?;
            Ok(rows.len())
        }
        SweepTable::CollectiveGrid => {
            let rows = collective_grid()?;
            write_rows(&rows, out)?;
            Ok(rows.len())
        }
    }
}
