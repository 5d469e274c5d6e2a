use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments per named tensor, plus the step count.
#[derive(Debug, Clone, Default)]
pub struct OptimizerState {
    pub step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn moments(&self, name: &str) -> Option<(&Tensor, &Tensor)> {
        self.moments.get(name).map(|(m, v)| (m, v))
    }
}

/// One AdamW update with decoupled weight decay:
/// `θ ← θ − lr·m̂/(√v̂ + ε) − lr·wd·θ`.
pub fn adamw_step<P, G>(params: &mut P, grads: &G, state: &mut OptimizerState, lr: f64, cfg: &AdamWConfig) -> Result<()>
where
    P: ParamSet + ?Sized,
    G: ParamSet + ?Sized,
{
    let grads = grads.named();
    let mut shapes_ok = true;
    let mut i = 0;
    params.visit_mut(&mut |name, t| {
        match grads.get(i) {
            Some((gname, g)) if gname == name && g.shape == t.shape => {}
            _ => shapes_ok = false,
        }
        i += 1;
    });
    if !shapes_ok || i != grads.len() {
        return Err(Error::ShapeMismatch("gradients do not match parameters".into()));
    }
    if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(name.clone()));
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let mut i = 0;
    params.visit_mut(&mut |name, theta| {
        let g = grads[i].1;
        i += 1;
        let (m, v) = state
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (theta.zeros_like(), theta.zeros_like()));
        for (((p, gi), mi), vi) in theta.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut v.data) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon) + lr * cfg.weight_decay * *p;
        }
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::param_set;

    struct Scalar {
        x: Tensor,
    }
    param_set!(Scalar { x });

    fn scalar(v: f64) -> Scalar {
        Scalar {
            x: Tensor::from_vec(&[1], vec![v]),
        }
    }

    #[test]
    fn first_step_by_hand() {
        let mut p = scalar(1.0);
        let mut state = OptimizerState::new();
        adamw_step(&mut p, &scalar(1.0), &mut state, 1e-5, &AdamWConfig::default()).unwrap();
        let expected = 1.0 - 1e-5 * (1.0 / (1.0 + 1e-8)) - 1e-5 * 0.01 * 1.0;
        assert!((p.x.data[0] - expected).abs() < 1e-15);
        assert!((p.x.data[0] - 0.999_989_90).abs() < 1e-8);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradient_without_decay_is_noop() {
        let mut p = scalar(0.37);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut state = OptimizerState::new();
        for _ in 0..5 {
            adamw_step(&mut p, &scalar(0.0), &mut state, 1e-3, &cfg).unwrap();
        }
        assert_eq!(p.x.data[0], 0.37);
    }

    #[test]
    fn rejects_bad_gradients() {
        let mut p = scalar(1.0);
        let mut state = OptimizerState::new();
        let cfg = AdamWConfig::default();
        assert!(matches!(
            adamw_step(&mut p, &scalar(f64::NAN), &mut state, 1e-3, &cfg),
            Err(Error::NonFiniteGradient(_))
        ));
        let wrong = Scalar {
            x: Tensor::zeros(&[2]),
        };
        assert!(matches!(
            adamw_step(&mut p, &wrong, &mut state, 1e-3, &cfg),
            Err(Error::ShapeMismatch(_))
        ));
        assert_eq!(state.step, 0);
        assert_eq!(p.x.data[0], 1.0);
    }
}
