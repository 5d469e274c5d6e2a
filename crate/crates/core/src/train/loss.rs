use crate::error::{Error, Result};
use crate::fusion::Logits;

/// `-log softmax(logits)[gold]`, computed with max subtraction.
pub fn cross_entropy(logits: &Logits, gold: usize) -> Result<f64> {
    Ok(cross_entropy_with_grad(logits, gold)?.0)
}

/// Loss and its gradient `softmax(logits) - onehot(gold)`.
pub fn cross_entropy_with_grad(logits: &Logits, gold: usize) -> Result<(f64, Logits)> {
    if gold > 1 {
        return Err(Error::InvalidClass(gold));
    }
    let max = logits[0].max(logits[1]);
    let e0 = (logits[0] - max).exp();
    let e1 = (logits[1] - max).exp();
    let sum = e0 + e1;
    let loss = sum.ln() - (logits[gold] - max);
    let mut grad = [e0 / sum, e1 / sum];
    grad[gold] -= 1.0;
    Ok((loss, grad))
}
