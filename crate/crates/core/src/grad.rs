//! Flat gradient buffers, sparse (index, value) gradients, and per-worker
//! model and residual state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Bytes on the wire per transmitted value or index.
pub const WIRE_BYTES: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpan {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// A fused gradient buffer of length G with the layer partition it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    values: Vec<f64>,
    layers: Vec<LayerSpan>,
}

impl DenseGrad {
    /// Wraps a flat vector as a single layer named `L0`.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::ZeroLength);
        }
        check_finite(&values)?;
        let len = values.len();
        Ok(DenseGrad {
            values,
            layers: vec![LayerSpan { name: "L0".into(), offset: 0, len }],
        })
    }

    /// Builds a buffer with an explicit layer map. The map must tile `[0, G)`.
    pub fn with_layers(values: Vec<f64>, layers: Vec<LayerSpan>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::ZeroLength);
        }
        if layers.is_empty() {
            return Err(Error::NoLayers);
        }
        let mut next = 0;
        for (i, l) in layers.iter().enumerate() {
            if l.offset != next || l.len == 0 {
                return Err(Error::EmptyLayer(i));
            }
            next += l.len;
        }
        if next != values.len() {
            return Err(Error::LengthMismatch { expected: values.len(), got: next });
        }
        check_finite(&values)?;
        Ok(DenseGrad { values, layers })
    }

    /// Reuses `self`'s layer map for a new value vector of the same length.
    pub fn like(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::LengthMismatch { expected: self.values.len(), got: values.len() });
        }
        check_finite(&values)?;
        Ok(DenseGrad { values, layers: self.layers.clone() })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layers(&self) -> &[LayerSpan] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Concatenates per-layer gradients into one fused buffer.
pub fn flatten(layer_grads: &[Vec<f64>]) -> Result<DenseGrad> {
    if layer_grads.is_empty() {
        return Err(Error::NoLayers);
    }
    let mut values = Vec::with_capacity(layer_grads.iter().map(Vec::len).sum());
    let mut layers = Vec::with_capacity(layer_grads.len());
    for (i, g) in layer_grads.iter().enumerate() {
        if g.is_empty() {
            return Err(Error::EmptyLayer(i));
        }
        layers.push(LayerSpan { name: format!("L{i}"), offset: values.len(), len: g.len() });
        values.extend_from_slice(g);
    }
    DenseGrad::with_layers(values, layers)
}

/// Compressed gradient: ascending unique indices with their values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGrad {
    indices: Vec<usize>,
    values: Vec<f64>,
    total_len: usize,
}

impl SparseGrad {
    pub fn new(indices: Vec<usize>, values: Vec<f64>, total_len: usize) -> Result<Self> {
        if total_len == 0 {
            return Err(Error::ZeroLength);
        }
        if indices.len() != values.len() {
            return Err(Error::LengthMismatch { expected: indices.len(), got: values.len() });
        }
        if indices.is_empty() {
            return Err(Error::EmptySparse);
        }
        for (pos, w) in indices.windows(2).enumerate() {
            if w[0] >= w[1] {
                return Err(Error::UnsortedIndices(pos + 1));
            }
        }
        if let Some(&last) = indices.last() {
            if last >= total_len {
                return Err(Error::IndexOutOfRange { index: last, len: total_len });
            }
        }
        check_finite(&values)?;
        Ok(SparseGrad { indices, values, total_len })
    }

    /// Gathers `dense` at `indices` (already validated ascending and in range).
    pub(crate) fn gather(dense: &[f64], indices: Vec<usize>) -> Self {
        let values = indices.iter().map(|&i| dense[i]).collect();
        SparseGrad { indices, values, total_len: dense.len() }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total_len(&self) -> usize {
        self.total_len
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Scatters a sparse gradient into a zero vector of length G.
pub fn densify(s: &SparseGrad) -> Result<DenseGrad> {
    let mut out = vec![0.0; s.total_len];
    for (&i, &v) in s.indices.iter().zip(&s.values) {
        if i >= s.total_len {
            return Err(Error::IndexOutOfRange { index: i, len: s.total_len });
        }
        out[i] = v;
    }
    DenseGrad::from_values(out)
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

/// Parameters, step counter and generator state of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub params: Vec<f64>,
    pub step: u64,
    pub rng: ChaCha8Rng,
}

impl ModelState {
    pub fn new(params: Vec<f64>, seed: u64) -> Self {
        ModelState { params, step: 0, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn advance(&mut self) {
        self.step += 1;
    }
}

/// Error-feedback residuals, one vector of length G per logical worker.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualStore {
    residuals: Vec<Vec<f64>>,
}

impl ResidualStore {
    pub fn zeros(workers: usize, len: usize) -> Self {
        ResidualStore { residuals: vec![vec![0.0; len]; workers] }
    }

    pub fn workers(&self) -> usize {
        self.residuals.len()
    }

    pub fn get(&self, worker: usize) -> &[f64] {
        &self.residuals[worker]
    }

    pub fn set(&mut self, worker: usize, residual: Vec<f64>) -> Result<()> {
        let slot = self
            .residuals
            .get_mut(worker)
            .ok_or(Error::BadRank { rank: worker, workers: 0 })?;
        if slot.len() != residual.len() {
            return Err(Error::LengthMismatch { expected: slot.len(), got: residual.len() });
        }
        *slot = residual;
        Ok(())
    }

    pub fn reset(&mut self) {
        for r in &mut self.residuals {
            r.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}
