//! Top-k family compressors, error feedback and the compression-gain statistic.

use std::cmp::Ordering;
use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{DenseGrad, SparseGrad};

/// Default bisection rounds for [`topk_threshold`].
pub const DEFAULT_THRESHOLD_ROUNDS: u32 = 25;

/// Fraction `c` of gradient elements kept, `0 < c <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct CompressionRatio(f64);

impl CompressionRatio {
    pub const FULL: CompressionRatio = CompressionRatio(1.0);

    pub fn new(c: f64) -> Result<Self> {
        if c.is_finite() && c > 0.0 && c <= 1.0 {
            Ok(CompressionRatio(c))
        } else {
            Err(Error::InvalidRatio(c))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// `ceil(c * len)`, at least 1 and at most `len`.
    ///
    /// Products within 1e-9 of an integer are snapped first so that e.g.
    /// `0.1 * 30` gives 3 rather than 4.
    pub fn k(self, len: usize) -> usize {
        let x = self.0 * len as f64;
        let r = x.round();
        let kf = if (x - r).abs() <= 1e-9 * r.max(1.0) { r } else { x.ceil() };
        (kf as usize).clamp(1, len.max(1))
    }
}

impl TryFrom<f64> for CompressionRatio {
    type Error = Error;
    fn try_from(c: f64) -> Result<Self> {
        CompressionRatio::new(c)
    }
}

impl From<CompressionRatio> for f64 {
    fn from(c: CompressionRatio) -> f64 {
        c.0
    }
}

impl fmt::Display for CompressionRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Which top-k variant a worker applies to its error-fed gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Compressor {
    Exact,
    Layerwise,
    Threshold { rounds: u32 },
}

impl Compressor {
    pub fn compress(self, g: &DenseGrad, c: CompressionRatio) -> Result<SparseGrad> {
        match self {
            Compressor::Exact => topk_exact(g, c),
            Compressor::Layerwise => topk_layerwise(g, c),
            Compressor::Threshold { rounds } => topk_threshold(g, c, rounds),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Compressor::Exact => "exact",
            Compressor::Layerwise => "layerwise",
            Compressor::Threshold { .. } => "threshold",
        }
    }
}

// Larger magnitude first; equal magnitudes keep the lower index first.
fn by_magnitude(values: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b))
}

fn select_top(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, by_magnitude(values));
        idx.truncate(k);
    }
    idx.sort_unstable();
    idx
}

/// Keeps the `ceil(c*G)` largest-magnitude entries over the whole buffer.
pub fn topk_exact(g: &DenseGrad, c: CompressionRatio) -> Result<SparseGrad> {
    if g.is_empty() {
        return Err(Error::ZeroLength);
    }
    let k = c.k(g.len());
    Ok(SparseGrad::gather(g.values(), select_top(g.values(), k)))
}

/// Applies top-k independently within each layer, `k_l = ceil(c * len_l)`.
pub fn topk_layerwise(g: &DenseGrad, c: CompressionRatio) -> Result<SparseGrad> {
    if g.is_empty() {
        return Err(Error::ZeroLength);
    }
    let mut indices = Vec::new();
    for layer in g.layers() {
        let slice = &g.values()[layer.offset..layer.offset + layer.len];
        let k = c.k(layer.len);
        indices.extend(select_top(slice, k).into_iter().map(|i| i + layer.offset));
    }
    Ok(SparseGrad::gather(g.values(), indices))
}

/// Bisection on a magnitude threshold in `[0, max|g|]` so that the number of
/// entries with `|g_i| >= t` approaches `ceil(c*G)`. Stops early on an exact
/// hit; otherwise returns the selection at the last midpoint tried.
pub fn topk_threshold(g: &DenseGrad, c: CompressionRatio, rounds: u32) -> Result<SparseGrad> {
    if g.is_empty() {
        return Err(Error::ZeroLength);
    }
    if rounds == 0 {
        return Err(Error::Config("threshold rounds must be >= 1".into()));
    }
    let values = g.values();
    let k = c.k(values.len());
    if k == values.len() {
        return Ok(SparseGrad::gather(values, (0..values.len()).collect()));
    }
    let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (mut lo, mut hi) = (0.0f64, max);
    let mut t = 0.0;
    for _ in 0..rounds {
        t = 0.5 * (lo + hi);
        let count = values.iter().filter(|v| v.abs() >= t).count();
        match count.cmp(&k) {
            Ordering::Equal => break,
            Ordering::Greater => lo = t,
            Ordering::Less => hi = t,
        }
    }
    let indices = (0..values.len()).filter(|&i| values[i].abs() >= t).collect();
    Ok(SparseGrad::gather(values, indices))
}

/// `g_e = g_o + residual`.
pub fn error_feedback(g_o: &DenseGrad, residual: &[f64]) -> Result<DenseGrad> {
    if residual.len() != g_o.len() {
        return Err(Error::LengthMismatch { expected: g_o.len(), got: residual.len() });
    }
    let values = g_o.values().iter().zip(residual).map(|(a, b)| a + b).collect();
    g_o.like(values)
}

/// `residual = g_e - densify(g_c)`. Zero at kept positions for subset compressors.
pub fn residual_update(g_e: &DenseGrad, g_c: &SparseGrad) -> Result<Vec<f64>> {
    if g_c.total_len() != g_e.len() {
        return Err(Error::LengthMismatch { expected: g_e.len(), got: g_c.total_len() });
    }
    if g_c.nnz() == 0 {
        return Err(Error::EmptySparse);
    }
    let mut residual = g_e.values().to_vec();
    for (&i, &v) in g_c.indices().iter().zip(g_c.values()) {
        residual[i] -= v;
    }
    Ok(residual)
}

/// Per-step gain `||g_c||^2 / ||g_e||^2`.
pub fn compression_gain(g_e: &DenseGrad, g_c: &SparseGrad) -> Result<f64> {
    let denom = g_e.norm_sq();
    if denom <= 0.0 || !denom.is_finite() {
        return Err(Error::DegenerateGradient);
    }
    Ok(g_c.norm_sq() / denom)
}

/// Rolling mean of recent per-step gains.
#[derive(Debug, Clone, PartialEq)]
pub struct GainTracker {
    window: usize,
    samples: VecDeque<f64>,
}

impl GainTracker {
    pub const DEFAULT_WINDOW: usize = 50;

    pub fn new(window: usize) -> Self {
        let window = window.max(1);
        GainTracker { window, samples: VecDeque::with_capacity(window) }
    }

    pub fn push(&mut self, gain: f64) {
        if self.samples.len() == self.window {
            self.samples.pop_front();
        }
        self.samples.push_back(gain);
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn last(&self) -> Option<f64> {
        self.samples.back().copied()
    }

    pub fn mean(&self) -> Option<f64> {
        if self.samples.is_empty() {
            None
        } else {
            Some(self.samples.iter().sum::<f64>() / self.samples.len() as f64)
        }
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }
}

impl Default for GainTracker {
    fn default() -> Self {
        GainTracker::new(Self::DEFAULT_WINDOW)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::{densify, flatten};

    fn cr(c: f64) -> CompressionRatio {
        CompressionRatio::new(c).unwrap()
    }

    fn dg(v: &[f64]) -> DenseGrad {
        DenseGrad::from_values(v.to_vec()).unwrap()
    }

    #[test]
    fn ratio_bounds_and_k() {
        assert!(CompressionRatio::new(0.0).is_err());
        assert!(CompressionRatio::new(1.5).is_err());
        assert!(CompressionRatio::new(f64::NAN).is_err());
        assert_eq!(cr(0.4).k(5), 2);
        assert_eq!(cr(0.1).k(30), 3);
        assert_eq!(cr(0.001).k(10), 1);
        assert_eq!(cr(1.0 / 3.0).k(3), 1);
        assert_eq!(cr(1.0).k(7), 7);
    }

    #[test]
    fn exact_keeps_largest_magnitudes() {
        let s = topk_exact(&dg(&[3.0, -7.0, 1.0, 0.0, 5.0]), cr(0.4)).unwrap();
        assert_eq!(s.indices(), &[1, 4]);
        assert_eq!(s.values(), &[-7.0, 5.0]);
    }

    #[test]
    fn exact_full_ratio_is_identity() {
        let g = dg(&[3.0, -7.0]);
        let s = topk_exact(&g, CompressionRatio::FULL).unwrap();
        assert_eq!(densify(&s).unwrap(), g);
        assert!(residual_update(&g, &s).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exact_ties_keep_lower_index() {
        let s = topk_exact(&dg(&[1.0, -2.0, 2.0, 2.0]), cr(0.5)).unwrap();
        assert_eq!(s.indices(), &[1, 2]);
    }

    #[test]
    fn layerwise_selects_per_layer() {
        let g = flatten(&[vec![9.0, 1.0], vec![2.0, 8.0]]).unwrap();
        let s = topk_layerwise(&g, cr(0.5)).unwrap();
        assert_eq!(s.indices(), &[0, 3]);
        assert_eq!(s.values(), &[9.0, 8.0]);
        let one = dg(&[3.0, -7.0, 1.0, 0.0, 5.0]);
        assert_eq!(topk_layerwise(&one, cr(0.4)).unwrap(), topk_exact(&one, cr(0.4)).unwrap());
        assert_eq!(densify(&topk_layerwise(&g, CompressionRatio::FULL).unwrap()).unwrap().values(), g.values());
    }

    #[test]
    fn threshold_single_round_is_half_max() {
        let g = dg(&[10.0, 6.0, 5.0, 4.9, -9.0, 1.0]);
        let s = topk_threshold(&g, cr(0.2), 1).unwrap();
        assert_eq!(s.indices(), &[0, 1, 2, 4]);
    }

    #[test]
    fn threshold_converges_to_exact() {
        let g = dg(&[3.0, -7.0, 1.0, 0.5, 5.0, -2.5, 0.25, 6.0]);
        for c in [0.125, 0.25, 0.5, 0.75] {
            assert_eq!(topk_threshold(&g, cr(c), 25).unwrap(), topk_exact(&g, cr(c)).unwrap());
        }
        let with_zero = dg(&[0.0, 1.0, -2.0]);
        assert_eq!(densify(&topk_threshold(&with_zero, CompressionRatio::FULL, 25).unwrap()).unwrap(), with_zero);
        assert!(topk_threshold(&with_zero, cr(0.5), 0).is_err());
    }

    #[test]
    fn error_feedback_adds_residual() {
        assert_eq!(error_feedback(&dg(&[1.0, 0.0]), &[1.0, 0.0]).unwrap().values(), &[2.0, 0.0]);
        assert_eq!(error_feedback(&dg(&[1.0, 2.0]), &[0.0, 0.0]).unwrap().values(), &[1.0, 2.0]);
        assert_eq!(error_feedback(&dg(&[1.0, 2.0]), &[-1.0, -2.0]).unwrap().values(), &[0.0, 0.0]);
        assert!(error_feedback(&dg(&[1.0]), &[0.0, 0.0]).is_err());
    }

    #[test]
    fn residual_is_exact_subtraction() {
        let g_e = dg(&[3.0, -7.0, 1.0, 0.0, 5.0]);
        let g_c = SparseGrad::new(vec![1, 4], vec![-7.0, 5.0], 5).unwrap();
        assert_eq!(residual_update(&g_e, &g_c).unwrap(), vec![3.0, 0.0, 1.0, 0.0, 0.0]);
        let short = SparseGrad::new(vec![0], vec![1.0], 4).unwrap();
        assert!(residual_update(&g_e, &short).is_err());
    }

    #[test]
    fn gain_values() {
        let g_e = dg(&[3.0, -7.0, 1.0, 0.0, 5.0]);
        let g_c = topk_exact(&g_e, cr(0.4)).unwrap();
        let gain = compression_gain(&g_e, &g_c).unwrap();
        assert!((gain - 74.0 / 84.0).abs() < 1e-15);
        assert_eq!(compression_gain(&g_e, &topk_exact(&g_e, CompressionRatio::FULL).unwrap()).unwrap(), 1.0);
        let zero = dg(&[0.0, 0.0]);
        let zc = topk_exact(&zero, cr(0.5)).unwrap();
        assert_eq!(compression_gain(&zero, &zc).unwrap_err(), Error::DegenerateGradient);
    }

    #[test]
    fn tracker_rolls() {
        let mut t = GainTracker::new(2);
        assert_eq!(t.mean(), None);
        t.push(1.0);
        t.push(0.5);
        t.push(0.25);
        assert_eq!(t.len(), 2);
        assert_eq!(t.mean(), Some(0.375));
        assert_eq!(t.last(), Some(0.25));
    }
}
