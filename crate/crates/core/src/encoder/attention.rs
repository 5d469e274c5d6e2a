//! Multi-head scaled dot-product self-attention over one sequence.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{dot, masked_softmax, Linear};
use crate::tensor::{visit_prefixed, visit_prefixed_mut, ParamSet, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

impl ParamSet for MultiHeadAttention {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor)) {
        visit_prefixed("q", &self.q, f);
        visit_prefixed("k", &self.k, f);
        visit_prefixed("v", &self.v, f);
        visit_prefixed("o", &self.o, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        visit_prefixed_mut("q", &mut self.q, f);
        visit_prefixed_mut("k", &mut self.k, f);
        visit_prefixed_mut("v", &mut self.v, f);
        visit_prefixed_mut("o", &mut self.o, f);
    }
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Vec<f64>,
    n: usize,
    n_query: usize,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `[heads, n_query, n]`
    pub probs: Vec<f64>,
    context: Vec<f64>,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(dim: usize, heads: usize, rng: &mut R) -> Self {
        assert!(heads > 0 && dim.is_multiple_of(heads), "dim {dim} not divisible by {heads} heads");
        MultiHeadAttention {
            heads,
            q: Linear::new(dim, dim, rng),
            k: Linear::new(dim, dim, rng),
            v: Linear::new(dim, dim, rng),
            o: Linear::new(dim, dim, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        MultiHeadAttention {
            heads: self.heads,
            q: self.q.zeros_like(),
            k: self.k.zeros_like(),
            v: self.v.zeros_like(),
            o: self.o.zeros_like(),
        }
    }

    pub fn dim(&self) -> usize {
        self.q.fan_in()
    }

    /// Attends from the first `n_query` positions of `x` (`n × dim`, row-major)
    /// to every unmasked position. Returns `n_query × dim` outputs.
    pub fn forward(&self, x: &[f64], n: usize, mask: &[bool], n_query: usize) -> (Vec<f64>, AttentionCache) {
        let d = self.dim();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.q.forward_rows(&x[..n_query * d], n_query);
        let k = self.k.forward_rows(x, n);
        let v = self.v.forward_rows(x, n);

        let mut probs = vec![0.0; self.heads * n_query * n];
        let mut context = vec![0.0; n_query * d];
        for h in 0..self.heads {
            let off = h * dh;
            for i in 0..n_query {
                let qi = &q[i * d + off..i * d + off + dh];
                let row = &mut probs[(h * n_query + i) * n..(h * n_query + i + 1) * n];
                for j in 0..n {
                    row[j] = scale * dot(qi, &k[j * d + off..j * d + off + dh]);
                }
                masked_softmax(row, mask);
                let ctx = &mut context[i * d + off..i * d + off + dh];
                for j in 0..n {
                    let p = row[j];
                    if p != 0.0 {
                        for (c, vv) in ctx.iter_mut().zip(&v[j * d + off..j * d + off + dh]) {
                            *c += p * vv;
                        }
                    }
                }
            }
        }
        let y = self.o.forward_rows(&context, n_query);
        (
            y,
            AttentionCache {
                x: x.to_vec(),
                n,
                n_query,
                q,
                k,
                v,
                probs,
                context,
            },
        )
    }

    /// Returns the gradient with respect to `x` (`n × dim`).
    pub fn backward(&self, cache: &AttentionCache, dy: &[f64], grad: &mut MultiHeadAttention) -> Vec<f64> {
        let d = self.dim();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (n, nq) = (cache.n, cache.n_query);

        let dcontext = self.o.backward_rows(&cache.context, dy, nq, &mut grad.o);
        let mut dq = vec![0.0; nq * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut dp = vec![0.0; n];
        for h in 0..self.heads {
            let off = h * dh;
            for i in 0..nq {
                let p = &cache.probs[(h * nq + i) * n..(h * nq + i + 1) * n];
                let dc = &dcontext[i * d + off..i * d + off + dh];
                for j in 0..n {
                    let vj = &cache.v[j * d + off..j * d + off + dh];
                    dp[j] = dot(dc, vj);
                    if p[j] != 0.0 {
                        for (g, c) in dv[j * d + off..j * d + off + dh].iter_mut().zip(dc) {
                            *g += p[j] * c;
                        }
                    }
                }
                let weighted: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                let qi = &cache.q[i * d + off..i * d + off + dh];
                for j in 0..n {
                    let ds = p[j] * (dp[j] - weighted) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = &cache.k[j * d + off..j * d + off + dh];
                    for t in 0..dh {
                        dq[i * d + off + t] += ds * kj[t];
                        dk[j * d + off + t] += ds * qi[t];
                    }
                }
            }
        }

        let mut dx = self.k.backward_rows(&cache.x, &dk, n, &mut grad.k);
        let dxv = self.v.backward_rows(&cache.x, &dv, n, &mut grad.v);
        let dxq = self.q.backward_rows(&cache.x[..nq * d], &dq, nq, &mut grad.q);
        for (a, b) in dx.iter_mut().zip(&dxv) {
            *a += b;
        }
        for (a, b) in dx.iter_mut().zip(&dxq) {
            *a += b;
        }
        dx
    }
}
