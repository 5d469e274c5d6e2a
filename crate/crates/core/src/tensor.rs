//! Dense row-major tensors and the named-parameter visitor used by the
//! optimizer and checkpoint code.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data does not match shape {shape:?}"
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Tensor::zeros(&self.shape)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|x| x.to_le_bytes()).collect()
    }
}

/// A collection of named trainable tensors with a fixed visiting order.
///
/// Gradients are represented by a value of the same type, so two instances
/// built from the same configuration visit tensors with identical names and
/// shapes in identical order.
pub trait ParamSet {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));

    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.visit(&mut |name, t| out.push((name.to_string(), t)));
        out
    }

    fn zero(&mut self) {
        self.visit_mut(&mut |_, t| t.fill(0.0));
    }

    fn scale_all(&mut self, factor: f64) {
        self.visit_mut(&mut |_, t| t.scale(factor));
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.len());
        n
    }
}

/// Adds `src` into `dst` tensor by tensor. Both must come from the same
/// configuration.
pub fn accumulate<P: ParamSet + ?Sized, Q: ParamSet + ?Sized>(dst: &mut P, src: &Q) {
    let srcs = src.named();
    let mut i = 0;
    dst.visit_mut(&mut |name, t| {
        let (sname, s) = &srcs[i];
        debug_assert_eq!(name, sname);
        t.add_assign(s);
        i += 1;
    });
    debug_assert_eq!(i, srcs.len());
}

/// Copies every tensor of `src` into `dst`.
pub fn copy_params<P: ParamSet + ?Sized, Q: ParamSet + ?Sized>(dst: &mut P, src: &Q) {
    let srcs = src.named();
    let mut i = 0;
    dst.visit_mut(&mut |_, t| {
        t.data.copy_from_slice(&srcs[i].1.data);
        i += 1;
    });
}

macro_rules! param_set {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::tensor::ParamSet for $ty {
            fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a $crate::tensor::Tensor)) {
                $( f(stringify!($field), &self.$field); )*
            }
            fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut $crate::tensor::Tensor)) {
                $( f(stringify!($field), &mut self.$field); )*
            }
        }
    };
}
pub(crate) use param_set;

/// Visits a nested parameter set under `prefix.`.
pub(crate) fn visit_prefixed<'a, P: ParamSet + ?Sized>(
    prefix: &str,
    inner: &'a P,
    f: &mut dyn FnMut(&str, &'a Tensor),
) {
    inner.visit(&mut |name, t| f(&format!("{prefix}.{name}"), t));
}

pub(crate) fn visit_prefixed_mut<P: ParamSet + ?Sized>(
    prefix: &str,
    inner: &mut P,
    f: &mut dyn FnMut(&str, &mut Tensor),
) {
    inner.visit_mut(&mut |name, t| f(&format!("{prefix}.{name}"), t));
}
