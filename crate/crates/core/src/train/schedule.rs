use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    Linear,
    Cosine,
}

/// Learning rate for optimizer step `step` (1-based).
///
/// Linear warmup from 0 to `base` over `warmup_steps`, then either linear
/// decay or half-cosine decay to 0 at `total_steps`.
pub fn lr_at(base: f64, kind: SchedulerKind, warmup_steps: usize, total_steps: usize, step: usize) -> f64 {
    if warmup_steps > 0 && step <= warmup_steps {
        return base * step as f64 / warmup_steps as f64;
    }
    if total_steps <= warmup_steps {
        return base;
    }
    let progress = ((step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64).clamp(0.0, 1.0);
    match kind {
        SchedulerKind::Linear => base * (1.0 - progress),
        SchedulerKind::Cosine => base * 0.5 * (1.0 + (PI * progress).cos()),
    }
}
