use std::sync::Arc;

use nmt_corpus::PAD;
use nmt_tensor::{Scalar, Tensor, Var};

use crate::error::{CoreError, Result};
use crate::model::TokenBatch;

/// Smoothed target distribution over `v` classes: `1 - smoothing` on the
/// gold class, the rest split evenly over classes that are neither gold nor
/// forbidden, exactly zero on forbidden classes.
pub fn smoothing_distribution(v: usize, gold: u32, smoothing: f64, forbidden: &[u32]) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&smoothing) {
        return Err(CoreError::Config(format!("label_smoothing {smoothing} not in [0, 1)")));
    }
    if gold as usize >= v {
        return Err(CoreError::Contract(format!("gold index {gold} outside vocabulary of {v}")));
    }
    let mut banned = vec![false; v];
    for &f in forbidden {
        if f == gold {
            return Err(CoreError::Contract(format!("gold index {gold} is forbidden")));
        }
        if let Some(b) = banned.get_mut(f as usize) {
            *b = true;
        }
    }
    let others = banned.iter().filter(|b| !**b).count() - 1;
    let mut q = vec![0.0; v];
    if others == 0 {
        q[gold as usize] = 1.0;
        return Ok(q);
    }
    let share = smoothing / others as f64;
    for (j, qj) in q.iter_mut().enumerate() {
        if !banned[j] {
            *qj = share;
        }
    }
    q[gold as usize] = 1.0 - smoothing;
    Ok(q)
}

pub struct LossOutput<'t, T> {
    /// Summed smoothed cross-entropy over non-pad targets.
    pub sum: Var<'t, T>,
    pub tokens: usize,
    pub errors: usize,
}

impl<'t, T: Scalar> LossOutput<'t, T> {
    /// Mean loss per non-pad target token.
    pub fn mean(&self) -> Var<'t, T> {
        self.sum.scale(1.0 / self.tokens.max(1) as f64)
    }
}

/// Label-smoothed loss of `logits[B, T, V]` against `targets[B, T]`;
/// `<pad>` targets contribute nothing and are not counted.
pub fn label_smoothing_loss<'t, T: Scalar>(
    logits: Var<'t, T>,
    targets: &TokenBatch,
    smoothing: f64,
    forbidden: &[u32],
) -> Result<LossOutput<'t, T>> {
    let shape = logits.shape();
    let v = *shape.last().unwrap_or(&0);
    if shape.len() != 3 || shape[0] != targets.rows || shape[1] != targets.cols {
        return Err(CoreError::Contract(format!(
            "logits {shape:?} do not match targets {}x{}",
            targets.rows, targets.cols
        )));
    }
    let lv = logits.value();
    let argmax = lv.argmax_rows();
    let mut q = vec![T::zero(); lv.numel()];
    let (mut tokens, mut errors) = (0, 0);
    for (i, &gold) in targets.data.iter().enumerate() {
        if gold == PAD {
            continue;
        }
        tokens += 1;
        if argmax[i] != gold as usize {
            errors += 1;
        }
        let dist = smoothing_distribution(v, gold, smoothing, forbidden)?;
        for (dst, p) in q[i * v..(i + 1) * v].iter_mut().zip(dist) {
            *dst = T::cast(p);
        }
    }
    let target = Arc::new(Tensor::new(shape, q)?);
    Ok(LossOutput {
        sum: logits.soft_cross_entropy(target)?,
        tokens,
        errors,
    })
}
