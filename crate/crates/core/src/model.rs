//! Small hand-differentiated classifiers: softmax regression and a
//! one-hidden-layer tanh MLP, both trained with mean cross-entropy.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{DenseGrad, LayerSpan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SoftmaxRegression,
    #[serde(rename = "mlp_1hidden", alias = "mlp")]
    Mlp,
}

/// Borrowed view of one labelled example.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub x: &'a [f64],
    pub y: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmallModel {
    pub kind: ModelKind,
    pub features: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl SmallModel {
    pub fn new(kind: ModelKind, features: usize, hidden: usize, classes: usize) -> Result<Self> {
        if features == 0 || classes < 2 || (kind == ModelKind::Mlp && hidden == 0) {
            return Err(Error::Config(format!(
                "invalid model dims: features={features} hidden={hidden} classes={classes}"
            )));
        }
        Ok(SmallModel { kind, features, hidden, classes })
    }

    pub fn layers(&self) -> Vec<LayerSpan> {
        let shapes: Vec<(&str, usize)> = match self.kind {
            ModelKind::SoftmaxRegression => {
                vec![("weight", self.classes * self.features), ("bias", self.classes)]
            }
            ModelKind::Mlp => vec![
                ("hidden.weight", self.hidden * self.features),
                ("hidden.bias", self.hidden),
                ("out.weight", self.classes * self.hidden),
                ("out.bias", self.classes),
            ],
        };
        let mut offset = 0;
        shapes
            .into_iter()
            .map(|(name, len)| {
                let span = LayerSpan { name: name.to_string(), offset, len };
                offset += len;
                span
            })
            .collect()
    }

    pub fn param_len(&self) -> usize {
        self.layers().iter().map(|l| l.len).sum()
    }

    /// Zeros for softmax regression; scaled Gaussian weights for the MLP.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut params = vec![0.0; self.param_len()];
        if self.kind == ModelKind::Mlp {
            let layers = self.layers();
            for (layer, fan_in) in [(&layers[0], self.features), (&layers[2], self.hidden)] {
                let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("valid std");
                for p in &mut params[layer.offset..layer.offset + layer.len] {
                    *p = normal.sample(rng);
                }
            }
        }
        params
    }

    fn logits(&self, params: &[f64], x: &[f64], hidden_out: Option<&mut Vec<f64>>) -> Vec<f64> {
        match self.kind {
            ModelKind::SoftmaxRegression => affine(params, 0, self.classes, x),
            ModelKind::Mlp => {
                let h: Vec<f64> = affine(params, 0, self.hidden, x).into_iter().map(f64::tanh).collect();
                let out = affine(params, self.hidden * (self.features + 1), self.classes, &h);
                if let Some(slot) = hidden_out {
                    *slot = h;
                }
                out
            }
        }
    }

    pub fn predict(&self, params: &[f64], x: &[f64]) -> usize {
        let logits = self.logits(params, x, None);
        crate::artopk::argmax_lowest(&logits)
    }

    /// Mean cross-entropy over `batch` and its exact gradient.
    pub fn compute_grad(&self, params: &[f64], batch: &[Example<'_>]) -> Result<(f64, DenseGrad)> {
        if batch.is_empty() {
            return Err(Error::Config("empty minibatch".into()));
        }
        if params.len() != self.param_len() {
            return Err(Error::LengthMismatch { expected: self.param_len(), got: params.len() });
        }
        let mut grad = vec![0.0; params.len()];
        let mut loss = 0.0;
        let mut hidden = Vec::new();
        for ex in batch {
            if ex.x.len() != self.features || ex.y >= self.classes {
                return Err(Error::Config(format!(
                    "example shape mismatch: {} features, label {}",
                    ex.x.len(),
                    ex.y
                )));
            }
            let logits = self.logits(params, ex.x, Some(&mut hidden));
            let (probs, log_z) = softmax(&logits);
            loss += log_z - logits[ex.y];
            let mut delta = probs;
            delta[ex.y] -= 1.0;
            match self.kind {
                ModelKind::SoftmaxRegression => accumulate_affine(&mut grad, 0, &delta, ex.x),
                ModelKind::Mlp => {
                    let out_off = self.hidden * (self.features + 1);
                    accumulate_affine(&mut grad, out_off, &delta, &hidden);
                    // back through out.weight and tanh
                    let mut dh = vec![0.0; self.hidden];
                    for (c, d) in delta.iter().enumerate() {
                        let row = &params[out_off + c * self.hidden..out_off + (c + 1) * self.hidden];
                        for (j, w) in row.iter().enumerate() {
                            dh[j] += d * w;
                        }
                    }
                    for (j, h) in hidden.iter().enumerate() {
                        dh[j] *= 1.0 - h * h;
                    }
                    accumulate_affine(&mut grad, 0, &dh, ex.x);
                }
            }
        }
        let scale = 1.0 / batch.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        let loss = loss * scale;
        if !loss.is_finite() {
            return Err(Error::NonFinite(0));
        }
        Ok((loss, DenseGrad::with_layers(grad, self.layers())?))
    }

    pub fn accuracy<'a, I>(&self, params: &[f64], examples: I) -> f64
    where
        I: IntoIterator<Item = Example<'a>>,
    {
        let (mut hit, mut total) = (0usize, 0usize);
        for ex in examples {
            total += 1;
            if self.predict(params, ex.x) == ex.y {
                hit += 1;
            }
        }
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    }
}

// rows x inputs weight block at `offset`, followed by `rows` biases
fn affine(params: &[f64], offset: usize, rows: usize, x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    let bias = offset + rows * cols;
    (0..rows)
        .map(|r| {
            let w = &params[offset + r * cols..offset + (r + 1) * cols];
            w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + params[bias + r]
        })
        .collect()
}

fn accumulate_affine(grad: &mut [f64], offset: usize, delta: &[f64], x: &[f64]) {
    let cols = x.len();
    let bias = offset + delta.len() * cols;
    for (r, d) in delta.iter().enumerate() {
        for (c, xv) in x.iter().enumerate() {
            grad[offset + r * cols + c] += d * xv;
        }
        grad[bias + r] += d;
    }
}

fn softmax(logits: &[f64]) -> (Vec<f64>, f64) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    (exps.iter().map(|e| e / sum).collect(), max + sum.ln())
}

/// Plain SGD (optionally with heavy-ball momentum) on one replica.
pub fn sgd_update(params: &mut [f64], aggregated: &[f64], eta: f64, velocity: Option<(&mut [f64], f64)>) -> Result<()> {
    if params.len() != aggregated.len() {
        return Err(Error::LengthMismatch { expected: params.len(), got: aggregated.len() });
    }
    match velocity {
        Some((v, mu)) => {
            for ((w, g), m) in params.iter_mut().zip(aggregated).zip(v.iter_mut()) {
                *m = mu * *m + g;
                *w -= eta * *m;
            }
        }
        None => {
            for (w, g) in params.iter_mut().zip(aggregated) {
                *w -= eta * g;
            }
        }
    }
    Ok(())
}
