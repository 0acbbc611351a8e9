//! In-process collectives over N logical workers.
//!
//! Each collective computes its result once on the coordinator, hands every
//! worker its own copy, and charges the alpha-beta time for the given
//! payload size to the `Sync` category of the clock.

use serde::{Deserialize, Serialize};

use crate::cost::{allgather_cost, allreduce_cost, broadcast_cost, NetParams, ReduceAlgo};
use crate::error::{Error, Result};
use crate::netsched::{Category, SimClock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReduceOp {
    Sum,
    Avg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    workers: usize,
    net: NetParams,
}

impl Cluster {
    pub fn new(workers: usize, net: NetParams) -> Result<Self> {
        if workers == 0 {
            return Err(Error::InvalidMessage("cluster needs at least one worker".into()));
        }
        Ok(Cluster { workers, net })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn net(&self) -> NetParams {
        self.net
    }

    pub fn set_net(&mut self, net: NetParams) {
        self.net = net;
    }

    fn expect_workers(&self, got: usize) -> Result<()> {
        if got != self.workers {
            return Err(Error::LengthMismatch { expected: self.workers, got });
        }
        Ok(())
    }

    /// Every worker receives `[payload_0, ..., payload_{N-1}]`.
    /// `bytes` is the wire size of one worker's payload.
    pub fn allgather<T: Clone>(
        &self,
        clock: &mut SimClock,
        payloads: &[Vec<T>],
        bytes: f64,
    ) -> Result<Vec<Vec<Vec<T>>>> {
        self.expect_workers(payloads.len())?;
        let len = payloads[0].len();
        if payloads.iter().any(|p| p.len() != len) {
            return Err(Error::UnequalPayloads);
        }
        clock.charge(Category::Sync, allgather_cost(&self.net, bytes, self.workers))?;
        Ok(vec![payloads.to_vec(); self.workers])
    }

    pub fn broadcast<T: Clone>(
        &self,
        clock: &mut SimClock,
        src: usize,
        payload: &[T],
        bytes: f64,
    ) -> Result<Vec<Vec<T>>> {
        if src >= self.workers {
            return Err(Error::BadRank { rank: src, workers: self.workers });
        }
        clock.charge(Category::Sync, broadcast_cost(&self.net, bytes, self.workers))?;
        Ok(vec![payload.to_vec(); self.workers])
    }

    /// Elementwise reduction, summed in ascending rank order. The numeric
    /// result does not depend on `algo`; only the charged time does.
    pub fn allreduce(
        &self,
        clock: &mut SimClock,
        vectors: &[Vec<f64>],
        op: ReduceOp,
        algo: ReduceAlgo,
        bytes: f64,
    ) -> Result<Vec<Vec<f64>>> {
        self.expect_workers(vectors.len())?;
        let reduced = reduce(vectors, op)?;
        clock.charge(Category::Sync, allreduce_cost(&self.net, bytes, self.workers, algo))?;
        Ok(vec![reduced; self.workers])
    }
}

/// Rank-ordered elementwise sum (or mean) of equal-length vectors.
pub fn reduce(vectors: &[Vec<f64>], op: ReduceOp) -> Result<Vec<f64>> {
    let first = vectors.first().ok_or(Error::NoLayers)?;
    let mut acc = first.clone();
    for v in &vectors[1..] {
        if v.len() != acc.len() {
            return Err(Error::LengthMismatch { expected: acc.len(), got: v.len() });
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    if op == ReduceOp::Avg {
        let n = vectors.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cluster(n: usize) -> Cluster {
        Cluster::new(n, NetParams::from_ms_gbps(1.0, 10.0).unwrap()).unwrap()
    }

    #[test]
    fn allgather_delivers_everything() {
        let c = cluster(3);
        let mut clock = SimClock::new();
        let out = c.allgather(&mut clock, &[vec!['a'], vec!['b'], vec!['c']], 4.0).unwrap();
        for view in &out {
            assert_eq!(view, &vec![vec!['a'], vec!['b'], vec!['c']]);
        }
        assert_eq!(clock.total(Category::Sync), allgather_cost(&c.net(), 4.0, 3));
        assert_eq!(c.allgather(&mut clock, &[vec![1], vec![2, 3], vec![4]], 4.0).unwrap_err(), Error::UnequalPayloads);
    }

    #[test]
    fn variance_exchange_charge() {
        let c = cluster(8);
        let mut clock = SimClock::new();
        let payloads = vec![vec![0.0f64; 8]; 8];
        c.allgather(&mut clock, &payloads, 4.0 * 8.0).unwrap();
        let net = c.net();
        let expect = net.alpha * 3.0 + 7.0 * 32.0 * net.beta();
        assert_eq!(clock.total(Category::Sync), expect);
    }

    #[test]
    fn single_worker_is_free() {
        let c = cluster(1);
        let mut clock = SimClock::new();
        assert_eq!(c.allgather(&mut clock, &[vec![7u8]], 1e6).unwrap(), vec![vec![vec![7u8]]]);
        c.broadcast(&mut clock, 0, &[1u32], 1e6).unwrap();
        c.allreduce(&mut clock, &[vec![1.0]], ReduceOp::Sum, ReduceAlgo::Ring, 1e6).unwrap();
        assert_eq!(clock.now(), 0.0);
    }

    #[test]
    fn broadcast_copies_source() {
        let c = cluster(4);
        let mut clock = SimClock::new();
        let out = c.broadcast(&mut clock, 2, &[9u32, 8], 8.0).unwrap();
        assert!(out.iter().all(|v| v == &vec![9u32, 8]));
        assert_eq!(clock.total(Category::Sync), broadcast_cost(&c.net(), 8.0, 4));
        assert!(matches!(c.broadcast(&mut clock, 4, &[1u32], 4.0), Err(Error::BadRank { rank: 4, .. })));
    }

    #[test]
    fn allreduce_sum_avg_and_algos() {
        let c = cluster(2);
        let v = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let mut ring_clock = SimClock::new();
        let sum = c.allreduce(&mut ring_clock, &v, ReduceOp::Sum, ReduceAlgo::Ring, 16.0).unwrap();
        assert_eq!(sum, vec![vec![4.0, 6.0]; 2]);
        let mut tree_clock = SimClock::new();
        let avg = c.allreduce(&mut tree_clock, &v, ReduceOp::Avg, ReduceAlgo::Tree, 16.0).unwrap();
        assert_eq!(avg, vec![vec![2.0, 3.0]; 2]);
        let net = c.net();
        assert_eq!(ring_clock.total(Category::Sync), allreduce_cost(&net, 16.0, 2, ReduceAlgo::Ring));
        assert_eq!(tree_clock.total(Category::Sync), allreduce_cost(&net, 16.0, 2, ReduceAlgo::Tree));
        assert_ne!(ring_clock.now(), tree_clock.now());
        let bad = vec![vec![1.0], vec![1.0, 2.0]];
        assert!(c.allreduce(&mut ring_clock, &bad, ReduceOp::Sum, ReduceAlgo::Ring, 8.0).is_err());
    }
}
