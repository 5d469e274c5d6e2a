//! Layer primitives with hand-written backward passes.
//!
//! Backward functions accumulate parameter gradients into a gradient value of
//! the same type (`grad.w`, `grad.b`, ...) and return the input gradient.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{param_set, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `[out, in]`
    pub w: Tensor,
    /// `[out]`
    pub b: Tensor,
}
param_set!(Linear { w, b });

impl Linear {
    pub fn new<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Linear {
            w: Tensor::uniform(&[fan_out, fan_in], bound, rng),
            b: Tensor::uniform(&[fan_out], bound, rng),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: Tensor::zeros(&[fan_out, fan_in]),
            b: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Linear {
            w: self.w.zeros_like(),
            b: self.b.zeros_like(),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.shape[1]
    }

    pub fn fan_out(&self) -> usize {
        self.w.shape[0]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let n_in = self.fan_in();
        debug_assert_eq!(x.len(), n_in);
        self.w
            .data
            .chunks_exact(n_in)
            .zip(&self.b.data)
            .map(|(row, b)| b + dot(row, x))
            .collect()
    }

    /// Forward over a sparse input given as parallel index/value slices.
    pub fn forward_sparse(&self, indices: &[usize], values: &[f64]) -> Vec<f64> {
        let n_in = self.fan_in();
        self.w
            .data
            .chunks_exact(n_in)
            .zip(&self.b.data)
            .map(|(row, b)| {
                let mut acc = *b;
                for (&i, &v) in indices.iter().zip(values) {
                    acc += row[i] * v;
                }
                acc
            })
            .collect()
    }

    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear) -> Vec<f64> {
        self.accumulate_grad(x, dy, grad);
        self.input_grad(dy)
    }

    pub fn accumulate_grad(&self, x: &[f64], dy: &[f64], grad: &mut Linear) {
        let n_in = self.fan_in();
        for ((grow, gb), &d) in grad
            .w
            .data
            .chunks_exact_mut(n_in)
            .zip(grad.b.data.iter_mut())
            .zip(dy)
        {
            *gb += d;
            if d != 0.0 {
                for (g, xi) in grow.iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
        }
    }

    pub fn accumulate_grad_sparse(
        &self,
        indices: &[usize],
        values: &[f64],
        dy: &[f64],
        grad: &mut Linear,
    ) {
        let n_in = self.fan_in();
        for ((grow, gb), &d) in grad
            .w
            .data
            .chunks_exact_mut(n_in)
            .zip(grad.b.data.iter_mut())
            .zip(dy)
        {
            *gb += d;
            if d != 0.0 {
                for (&i, &v) in indices.iter().zip(values) {
                    grow[i] += d * v;
                }
            }
        }
    }

    pub fn input_grad(&self, dy: &[f64]) -> Vec<f64> {
        let n_in = self.fan_in();
        let mut dx = vec![0.0; n_in];
        for (row, &d) in self.w.data.chunks_exact(n_in).zip(dy) {
            if d != 0.0 {
                axpy(d, row, &mut dx);
            }
        }
        dx
    }

    /// Row-wise forward over `x` holding `rows` stacked input vectors.
    pub fn forward_rows(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let n_in = self.fan_in();
        let mut out = Vec::with_capacity(rows * self.fan_out());
        for r in 0..rows {
            out.extend(self.forward(&x[r * n_in..(r + 1) * n_in]));
        }
        out
    }

    pub fn backward_rows(&self, x: &[f64], dy: &[f64], rows: usize, grad: &mut Linear) -> Vec<f64> {
        let n_in = self.fan_in();
        let n_out = self.fan_out();
        let mut dx = Vec::with_capacity(rows * n_in);
        for r in 0..rows {
            dx.extend(self.backward(
                &x[r * n_in..(r + 1) * n_in],
                &dy[r * n_out..(r + 1) * n_out],
                grad,
            ));
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}
param_set!(LayerNorm { gamma, beta });

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: f64,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Tensor::filled(&[dim], 1.0),
            beta: Tensor::zeros(&[dim]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        LayerNorm {
            gamma: self.gamma.zeros_like(),
            beta: self.beta.zeros_like(),
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, LayerNormCache) {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let xhat: Vec<f64> = x.iter().map(|v| (v - mean) * inv_std).collect();
        let y = xhat
            .iter()
            .zip(&self.gamma.data)
            .zip(&self.beta.data)
            .map(|((h, g), b)| h * g + b)
            .collect();
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &[f64], grad: &mut LayerNorm) -> Vec<f64> {
        let n = dy.len() as f64;
        let mut dxhat = Vec::with_capacity(dy.len());
        for (i, &d) in dy.iter().enumerate() {
            grad.gamma.data[i] += d * cache.xhat[i];
            grad.beta.data[i] += d;
            dxhat.push(d * self.gamma.data[i]);
        }
        let mean_d = dxhat.iter().sum::<f64>() / n;
        let mean_dx = dxhat
            .iter()
            .zip(&cache.xhat)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n;
        dxhat
            .iter()
            .zip(&cache.xhat)
            .map(|(d, h)| cache.inv_std * (d - mean_d - h * mean_dx))
            .collect()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Gradient through ReLU given the pre-activation; zero at exactly 0.
pub fn relu_backward(pre: &[f64], dy: &[f64]) -> Vec<f64> {
    pre.iter()
        .zip(dy)
        .map(|(&p, &d)| if p > 0.0 { d } else { 0.0 })
        .collect()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// In-place softmax over `x`; entries with `mask[i] == false` get weight 0.
pub fn masked_softmax(x: &mut [f64], mask: &[bool]) {
    let max = x
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (v, &m) in x.iter_mut().zip(mask) {
        if m {
            *v = (*v - max).exp();
            sum += *v;
        } else {
            *v = 0.0;
        }
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// Inverted-dropout scale factors: 0 with probability `p`, else `1/(1-p)`.
pub fn dropout_mask<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Vec<f64> {
    if p <= 0.0 {
        return vec![1.0; n];
    }
    let keep = 1.0 / (1.0 - p);
    (0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

pub fn apply_mask(x: &[f64], mask: Option<&[f64]>) -> Vec<f64> {
    match mask {
        Some(m) => x.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => x.to_vec(),
    }
}
