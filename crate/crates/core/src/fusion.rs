//! Classification heads over the sentence representation `h` (size `d`) and
//! the TF-IDF vector (size `k`).
//!
//! * Gated head: `t = relu(W_t x + b_t)` (128-d), scalar gate
//!   `g = sigmoid(w_g · h + b_g)`, joint vector `[h; g·t]`, then
//!   linear → layer norm → ReLU → dropout → linear → 2 logits.
//! * Concat head: `[h; relu(W_p pos + b_p); relu(W_t x + b_t)]` (`d + 192`),
//!   then linear → layer norm → dropout → linear.
//!
//! All backward passes are analytic and accumulate into a gradient value of
//! the same parameter type.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexical::SparseVector;
use crate::nn::{self, sigmoid, LayerNorm, LayerNormCache, Linear};
use crate::posfeat::{self, PosCache, PosDistribution, POS_PROJ_DIM};
use crate::tensor::{visit_prefixed, visit_prefixed_mut, ParamSet, Tensor};

pub const TFIDF_PROJ_DIM: usize = 128;
pub const HEAD_HIDDEN: usize = 512;

pub type Logits = [f64; 2];

/// How the TF-IDF branch enters the gated head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// Learned scalar gate on the projected TF-IDF vector.
    Gated,
    /// TF-IDF projection concatenated as is (`g ≡ 1`, no gate parameters).
    Ungated,
    /// No TF-IDF branch; the head sees `h` alone.
    EncoderOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub encoder_dim: usize,
    pub tfidf_dim: usize,
    pub proj_dim: usize,
    pub hidden: usize,
    pub dropout: f64,
}

impl HeadConfig {
    pub fn new(encoder_dim: usize, tfidf_dim: usize) -> Self {
        HeadConfig {
            encoder_dim,
            tfidf_dim,
            proj_dim: TFIDF_PROJ_DIM,
            hidden: HEAD_HIDDEN,
            dropout: 0.1,
        }
    }
}

/// linear → layer norm → [ReLU] → dropout → linear
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierStack {
    pub fc1: Linear,
    pub ln: LayerNorm,
    pub fc2: Linear,
}

impl ParamSet for ClassifierStack {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor)) {
        visit_prefixed("fc1", &self.fc1, f);
        visit_prefixed("ln", &self.ln, f);
        visit_prefixed("fc2", &self.fc2, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        visit_prefixed_mut("fc1", &mut self.fc1, f);
        visit_prefixed_mut("ln", &mut self.ln, f);
        visit_prefixed_mut("fc2", &mut self.fc2, f);
    }
}

#[derive(Debug, Clone)]
pub struct StackCache {
    input: Vec<f64>,
    ln: LayerNormCache,
    /// Layer-norm output, before the optional ReLU.
    pub normed: Vec<f64>,
    dropout: Option<Vec<f64>>,
    dropped: Vec<f64>,
    relu: bool,
}

impl ClassifierStack {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        ClassifierStack {
            fc1: Linear::new(input, hidden, rng),
            ln: LayerNorm::new(hidden),
            fc2: Linear::new(hidden, 2, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ClassifierStack {
            fc1: self.fc1.zeros_like(),
            ln: self.ln.zeros_like(),
            fc2: self.fc2.zeros_like(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.fc1.fan_in()
    }

    pub fn hidden_dim(&self) -> usize {
        self.fc1.fan_out()
    }
}

/// Runs the classifier stack. `dropout_mask` (train mode) holds inverted
/// dropout scale factors for the hidden layer; `None` is eval mode.
pub fn classify(
    joint: &[f64],
    stack: &ClassifierStack,
    relu: bool,
    dropout_mask: Option<Vec<f64>>,
) -> Result<(Logits, StackCache)> {
    check_dim("classifier input", stack.input_dim(), joint.len())?;
    let a1 = stack.fc1.forward(joint);
    let (normed, ln) = stack.ln.forward(&a1);
    let act = if relu { nn::relu(&normed) } else { normed.clone() };
    let dropped = nn::apply_mask(&act, dropout_mask.as_deref());
    let out = stack.fc2.forward(&dropped);
    Ok((
        [out[0], out[1]],
        StackCache {
            input: joint.to_vec(),
            ln,
            normed,
            dropout: dropout_mask,
            dropped,
            relu,
        },
    ))
}

fn classify_backward(stack: &ClassifierStack, cache: &StackCache, dlogits: &Logits, grad: &mut ClassifierStack) -> Vec<f64> {
    let ddropped = stack.fc2.backward(&cache.dropped, dlogits, &mut grad.fc2);
    let dact = nn::apply_mask(&ddropped, cache.dropout.as_deref());
    let dnormed = if cache.relu {
        nn::relu_backward(&cache.normed, &dact)
    } else {
        dact
    };
    let da1 = stack.ln.backward(&cache.ln, &dnormed, &mut grad.ln);
    stack.fc1.backward(&cache.input, &da1, &mut grad.fc1)
}

fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { what, expected, got });
    }
    Ok(())
}

/// `relu(W x + b)` over the non-zero entries of `x`. Returns the
/// pre-activation alongside the output.
pub fn project_tfidf(sparse: &SparseVector, params: &Linear) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim("tfidf vector", params.fan_in(), sparse.dim)?;
    let pre = params.forward_sparse(&sparse.indices, &sparse.values);
    Ok((nn::relu(&pre), pre))
}

/// Largest f64 below 1.
const GATE_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// `sigmoid(w_g · h + b_g)`; `params` is a `1 × d` linear layer. The result
/// is clamped to the open interval, since f64 rounding saturates the
/// sigmoid to exactly 0 or 1 for large pre-activations.
pub fn gate(h_bert: &[f64], params: &Linear) -> Result<f64> {
    check_dim("gate input", params.fan_in(), h_bert.len())?;
    Ok(sigmoid(params.forward(h_bert)[0]).clamp(f64::MIN_POSITIVE, GATE_MAX))
}

/// Returns `(h_joint, ĥ)` where `ĥ = g · h̃` and `h_joint = [h; ĥ]`.
pub fn fuse_gated(h_bert: &[f64], h_tilde: &[f64], g: f64) -> (Vec<f64>, Vec<f64>) {
    let hat: Vec<f64> = h_tilde.iter().map(|v| g * v).collect();
    let mut joint = Vec::with_capacity(h_bert.len() + hat.len());
    joint.extend_from_slice(h_bert);
    joint.extend_from_slice(&hat);
    (joint, hat)
}

pub fn fuse_concat(h_cls: &[f64], pos64: &[f64], tfidf128: &[f64]) -> Result<Vec<f64>> {
    check_dim("pos projection", POS_PROJ_DIM, pos64.len())?;
    check_dim("tfidf projection", TFIDF_PROJ_DIM, tfidf128.len())?;
    let mut out = Vec::with_capacity(h_cls.len() + pos64.len() + tfidf128.len());
    out.extend_from_slice(h_cls);
    out.extend_from_slice(pos64);
    out.extend_from_slice(tfidf128);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatedFusionParams {
    pub mode: FusionMode,
    pub tfidf_proj: Option<Linear>,
    pub gate: Option<Linear>,
    pub stack: ClassifierStack,
}

impl ParamSet for GatedFusionParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor)) {
        if let Some(p) = &self.tfidf_proj {
            visit_prefixed("tfidf_proj", p, f);
        }
        if let Some(p) = &self.gate {
            visit_prefixed("gate", p, f);
        }
        visit_prefixed("stack", &self.stack, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        if let Some(p) = &mut self.tfidf_proj {
            visit_prefixed_mut("tfidf_proj", p, f);
        }
        if let Some(p) = &mut self.gate {
            visit_prefixed_mut("gate", p, f);
        }
        visit_prefixed_mut("stack", &mut self.stack, f);
    }
}

impl GatedFusionParams {
    pub fn new<R: Rng + ?Sized>(config: &HeadConfig, mode: FusionMode, rng: &mut R) -> Self {
        let d = config.encoder_dim;
        let tfidf_proj = (mode != FusionMode::EncoderOnly)
            .then(|| Linear::new(config.tfidf_dim, config.proj_dim, rng));
        let gate = (mode == FusionMode::Gated).then(|| {
            let mut g = Linear::new(d, 1, rng);
            g.b.fill(0.0);
            g
        });
        let joint = if mode == FusionMode::EncoderOnly {
            d
        } else {
            d + config.proj_dim
        };
        GatedFusionParams {
            mode,
            tfidf_proj,
            gate,
            stack: ClassifierStack::new(joint, config.hidden, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        GatedFusionParams {
            mode: self.mode,
            tfidf_proj: self.tfidf_proj.as_ref().map(Linear::zeros_like),
            gate: self.gate.as_ref().map(Linear::zeros_like),
            stack: self.stack.zeros_like(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcatHeadParams {
    pub pos_proj: Linear,
    pub tfidf_proj: Linear,
    pub stack: ClassifierStack,
}

impl ParamSet for ConcatHeadParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor)) {
        visit_prefixed("pos_proj", &self.pos_proj, f);
        visit_prefixed("tfidf_proj", &self.tfidf_proj, f);
        visit_prefixed("stack", &self.stack, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        visit_prefixed_mut("pos_proj", &mut self.pos_proj, f);
        visit_prefixed_mut("tfidf_proj", &mut self.tfidf_proj, f);
        visit_prefixed_mut("stack", &mut self.stack, f);
    }
}

impl ConcatHeadParams {
    pub fn new<R: Rng + ?Sized>(config: &HeadConfig, rng: &mut R) -> Self {
        ConcatHeadParams {
            pos_proj: posfeat::init_pos_projection(rng),
            tfidf_proj: Linear::new(config.tfidf_dim, config.proj_dim, rng),
            stack: ClassifierStack::new(
                config.encoder_dim + POS_PROJ_DIM + config.proj_dim,
                config.hidden,
                rng,
            ),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ConcatHeadParams {
            pos_proj: self.pos_proj.zeros_like(),
            tfidf_proj: self.tfidf_proj.zeros_like(),
            stack: self.stack.zeros_like(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeadParams {
    Gated(GatedFusionParams),
    Concat(ConcatHeadParams),
}

impl ParamSet for HeadParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor)) {
        match self {
            HeadParams::Gated(p) => p.visit(f),
            HeadParams::Concat(p) => p.visit(f),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        match self {
            HeadParams::Gated(p) => p.visit_mut(f),
            HeadParams::Concat(p) => p.visit_mut(f),
        }
    }
}

/// Per-sentence inputs to a head.
#[derive(Debug, Clone, Copy)]
pub struct HeadInput<'a> {
    pub h: &'a [f64],
    pub tfidf: &'a SparseVector,
    pub pos: Option<&'a PosDistribution>,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    h_len: usize,
    tfidf_indices: Vec<usize>,
    tfidf_values: Vec<f64>,
    tfidf_pre: Vec<f64>,
    tfidf_out: Vec<f64>,
    /// Gate value when a gate was applied (learned or forced).
    pub gate: Option<f64>,
    gate_forced: bool,
    pos: Option<(PosDistribution, PosCache)>,
    pub stack: StackCache,
}

impl HeadParams {
    pub fn zeros_like(&self) -> Self {
        match self {
            HeadParams::Gated(p) => HeadParams::Gated(p.zeros_like()),
            HeadParams::Concat(p) => HeadParams::Concat(p.zeros_like()),
        }
    }

    pub fn tfidf_dim(&self) -> Option<usize> {
        match self {
            HeadParams::Gated(p) => p.tfidf_proj.as_ref().map(Linear::fan_in),
            HeadParams::Concat(p) => Some(p.tfidf_proj.fan_in()),
        }
    }

    pub fn stack(&self) -> &ClassifierStack {
        match self {
            HeadParams::Gated(p) => &p.stack,
            HeadParams::Concat(p) => &p.stack,
        }
    }

    pub fn forward(&self, input: HeadInput<'_>, dropout_mask: Option<Vec<f64>>) -> Result<(Logits, HeadCache)> {
        self.forward_with_gate(input, dropout_mask, None)
    }

    /// Like `forward`, but a gated head uses `gate_override` instead of the
    /// learned gate when given.
    pub fn forward_with_gate(
        &self,
        input: HeadInput<'_>,
        dropout_mask: Option<Vec<f64>>,
        gate_override: Option<f64>,
    ) -> Result<(Logits, HeadCache)> {
        let mut cache = HeadCache {
            h_len: input.h.len(),
            tfidf_indices: Vec::new(),
            tfidf_values: Vec::new(),
            tfidf_pre: Vec::new(),
            tfidf_out: Vec::new(),
            gate: None,
            gate_forced: gate_override.is_some(),
            pos: None,
            stack: StackCache {
                input: Vec::new(),
                ln: LayerNormCache {
                    xhat: Vec::new(),
                    inv_std: 0.0,
                },
                normed: Vec::new(),
                dropout: None,
                dropped: Vec::new(),
                relu: false,
            },
        };
        let record_tfidf = |proj: &Linear, cache: &mut HeadCache| -> Result<Vec<f64>> {
            let (out, pre) = project_tfidf(input.tfidf, proj)?;
            cache.tfidf_indices = input.tfidf.indices.clone();
            cache.tfidf_values = input.tfidf.values.clone();
            cache.tfidf_pre = pre;
            cache.tfidf_out = out.clone();
            Ok(out)
        };

        let (joint, relu, stack) = match self {
            HeadParams::Gated(p) => {
                let joint = match (p.mode, &p.tfidf_proj) {
                    (FusionMode::EncoderOnly, _) | (_, None) => input.h.to_vec(),
                    (mode, Some(proj)) => {
                        let t = record_tfidf(proj, &mut cache)?;
                        let g = match (gate_override, mode, &p.gate) {
                            (Some(g), _, _) => g,
                            (None, FusionMode::Gated, Some(w)) => gate(input.h, w)?,
                            _ => 1.0,
                        };
                        if mode == FusionMode::Gated || gate_override.is_some() {
                            cache.gate = Some(g);
                        }
                        fuse_gated(input.h, &t, g).0
                    }
                };
                (joint, true, &p.stack)
            }
            HeadParams::Concat(p) => {
                let pos = input
                    .pos
                    .ok_or_else(|| Error::InvalidConfig("concat head needs a POS distribution".into()))?;
                let (pos64, pos_cache) = posfeat::project_pos(pos, &p.pos_proj);
                cache.pos = Some((*pos, pos_cache));
                let t = record_tfidf(&p.tfidf_proj, &mut cache)?;
                (fuse_concat(input.h, &pos64, &t)?, false, &p.stack)
            }
        };
        let (logits, stack_cache) = classify(&joint, stack, relu, dropout_mask)?;
        cache.stack = stack_cache;
        Ok((logits, cache))
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dh`.
    pub fn backward(&self, cache: &HeadCache, dlogits: &Logits, grad: &mut HeadParams) -> Result<Vec<f64>> {
        let d = cache.h_len;
        match (self, grad) {
            (HeadParams::Gated(p), HeadParams::Gated(gp)) => {
                let djoint = classify_backward(&p.stack, &cache.stack, dlogits, &mut gp.stack);
                let mut dh = djoint[..d].to_vec();
                if let (Some(proj), Some(gproj)) = (&p.tfidf_proj, &mut gp.tfidf_proj) {
                    let dhat = &djoint[d..];
                    let g = cache.gate.unwrap_or(1.0);
                    let dt: Vec<f64> = dhat.iter().map(|v| g * v).collect();
                    let dpre = nn::relu_backward(&cache.tfidf_pre, &dt);
                    proj.accumulate_grad_sparse(&cache.tfidf_indices, &cache.tfidf_values, &dpre, gproj);
                    if let (Some(w), Some(gw), false) = (&p.gate, &mut gp.gate, cache.gate_forced) {
                        let dg: f64 = nn::dot(dhat, &cache.tfidf_out);
                        let dz = dg * g * (1.0 - g);
                        let h = &cache.stack.input[..d];
                        w.accumulate_grad(h, &[dz], gw);
                        nn::axpy(dz, &w.w.data, &mut dh);
                    }
                }
                Ok(dh)
            }
            (HeadParams::Concat(p), HeadParams::Concat(gp)) => {
                let djoint = classify_backward(&p.stack, &cache.stack, dlogits, &mut gp.stack);
                let dh = djoint[..d].to_vec();
                let dpos = &djoint[d..d + POS_PROJ_DIM];
                let (dist, pos_cache) = cache.pos.as_ref().ok_or(Error::NoRecordedForward)?;
                posfeat::project_pos_backward(Some(pos_cache), dist, &p.pos_proj, dpos, &mut gp.pos_proj)?;
                let dt = &djoint[d + POS_PROJ_DIM..];
                let dpre = nn::relu_backward(&cache.tfidf_pre, dt);
                p.tfidf_proj
                    .accumulate_grad_sparse(&cache.tfidf_indices, &cache.tfidf_values, &dpre, &mut gp.tfidf_proj);
                Ok(dh)
            }
            _ => Err(Error::ShapeMismatch("head gradient variant".into())),
        }
    }
}
