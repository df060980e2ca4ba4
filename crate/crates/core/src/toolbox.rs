//! Checkpoint averaging and parameter utilities.

use std::path::Path;

use nmt_tensor::{Scalar, Tensor};

pub use nmt_tensor::pad_tensors;

use crate::error::{CoreError, Result};
use crate::model::Model;
use crate::train::Checkpoint;

/// Element-wise mean of the parameters of `checkpoints`, without optimizer
/// or training state. Values are sorted before summing in `f64`, so the
/// result does not depend on the input order.
pub fn average_loaded(checkpoints: &[Checkpoint]) -> Result<Checkpoint> {
    let first = checkpoints
        .first()
        .ok_or_else(|| CoreError::Config("nothing to average".into()))?;
    for (k, ck) in checkpoints.iter().enumerate().skip(1) {
        if ck.meta.model != first.meta.model {
            return Err(CoreError::Config(format!("checkpoint {k} has a different model configuration")));
        }
        if ck.params.len() != first.params.len() {
            let at = first.params.len().min(ck.params.len());
            let name = first
                .params
                .get(at)
                .or_else(|| ck.params.get(at))
                .map(|p| p.0.as_str())
                .unwrap_or("");
            return Err(CoreError::Config(format!("checkpoint {k} diverges at parameter {name}: missing")));
        }
        for ((na, ta), (nb, tb)) in first.params.iter().zip(&ck.params) {
            if na != nb || ta.shape() != tb.shape() {
                return Err(CoreError::Config(format!(
                    "checkpoint {k} diverges at parameter {na}: found {nb} {:?}, expected {:?}",
                    tb.shape(),
                    ta.shape()
                )));
            }
        }
    }
    let k = checkpoints.len() as f64;
    let mut vals = vec![0f64; checkpoints.len()];
    let params = first
        .params
        .iter()
        .enumerate()
        .map(|(pi, (name, t))| {
            let data = (0..t.numel())
                .map(|e| {
                    for (slot, ck) in vals.iter_mut().zip(checkpoints) {
                        *slot = ck.params[pi].1.data()[e] as f64;
                    }
                    vals.sort_by(f64::total_cmp);
                    (vals.iter().sum::<f64>() / k) as f32
                })
                .collect();
            Ok((name.clone(), Tensor::new(t.shape().to_vec(), data)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Checkpoint {
        meta: first.meta.clone(),
        params,
        optimizer: None,
        state: None,
    })
}

/// Loads and averages checkpoint files.
pub fn average_checkpoints<P: AsRef<Path>>(paths: &[P]) -> Result<Checkpoint> {
    let cks = paths
        .iter()
        .map(|p| Checkpoint::load(p.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    average_loaded(&cks)
}

/// Excludes the named parameters from optimizer updates.
pub fn freeze_params<T: Scalar>(model: &mut Model<T>, names: &[&str]) -> Result<()> {
    Ok(model.store_mut().freeze(names)?)
}

pub fn unfreeze_params<T: Scalar>(model: &mut Model<T>, names: &[&str]) -> Result<()> {
    Ok(model.store_mut().unfreeze(names)?)
}
