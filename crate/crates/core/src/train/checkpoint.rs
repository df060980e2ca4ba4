//! The `NTCK` checkpoint container.
//!
//! ```text
//! "NTCK" | u32 version
//! u32 len | metadata JSON
//! u32 count | per parameter: u32 name_len | name | u32 ndim | u32 dims | f32 data
//! u8 has_optimizer | [u64 step | u8 ams | per parameter: u8 present | m | v | v_max if ams]
//! u8 has_state | [u32 len | training-state JSON]
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use nmt_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{Model, ModelConfig};
use crate::train::optim::{Adam, AdamConfig, Moments};

pub const MAGIC: &[u8; 4] = b"NTCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub label_smoothing: f64,
    pub forbidden_indexes: Vec<u32>,
}

/// Position in a run, enough to continue it exactly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    /// Units of the current epoch's schedule already consumed.
    pub cursor: usize,
    pub schedule: Vec<usize>,
    pub step: u64,
    /// Batch units processed over the whole run; seeds each unit's randomness.
    pub units_seen: u64,
    pub best_loss: Option<f64>,
    pub best_error: Option<f64>,
    pub bad_epochs: usize,
    /// Most recent per-token loss of each batch unit.
    pub unit_losses: Vec<f64>,
    /// Step-numbered checkpoints currently kept on disk, oldest first.
    pub kept: Vec<u64>,
    pub stopped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSection {
    pub step: u64,
    pub use_ams: bool,
    pub slots: Vec<Option<Moments<f32>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: Vec<(String, Tensor<f32>)>,
    pub optimizer: Option<OptimizerSection>,
    pub state: Option<TrainState>,
}

impl Checkpoint {
    pub fn from_model(model: &Model<f32>, label_smoothing: f64, forbidden_indexes: &[u32]) -> Self {
        Self {
            meta: CheckpointMeta {
                model: model.config().clone(),
                label_smoothing,
                forbidden_indexes: forbidden_indexes.to_vec(),
            },
            params: model
                .store()
                .named()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
            optimizer: None,
            state: None,
        }
    }

    pub fn with_training(mut self, opt: &Adam<f32>, state: &TrainState) -> Self {
        self.optimizer = Some(OptimizerSection {
            step: opt.step,
            use_ams: opt.cfg.use_ams,
            slots: opt.slots.clone(),
        });
        self.state = Some(state.clone());
        self
    }

    /// Builds the model described by the metadata and loads the parameters.
    pub fn to_model(&self) -> Result<Model<f32>> {
        let mut m = Model::new(self.meta.model.clone(), 0)?;
        m.load_params(self.params.iter().map(|(n, t)| (n.as_str(), t.clone())))?;
        Ok(m)
    }

    /// Optimizer rebuilt from the stored section, if present.
    pub fn to_optimizer(&self, mut cfg: AdamConfig) -> Option<Adam<f32>> {
        self.optimizer.as_ref().map(|o| {
            cfg.use_ams = o.use_ams;
            Adam {
                cfg,
                step: o.step,
                slots: o.slots.clone(),
            }
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        let meta = serde_json::to_vec(&self.meta).map_err(|e| CoreError::Format(e.to_string()))?;
        put_u32(&mut out, meta.len() as u32);
        out.extend_from_slice(&meta);
        put_u32(&mut out, self.params.len() as u32);
        for (name, t) in &self.params {
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.ndim() as u32);
            for &d in t.shape() {
                put_u32(&mut out, d as u32);
            }
            put_f32s(&mut out, t.data());
        }
        match &self.optimizer {
            None => out.push(0),
            Some(o) => {
                if o.slots.len() != self.params.len() {
                    return Err(CoreError::Contract("optimizer slots do not match parameters".into()));
                }
                out.push(1);
                out.extend_from_slice(&o.step.to_le_bytes());
                out.push(o.use_ams as u8);
                for slot in &o.slots {
                    match slot {
                        None => out.push(0),
                        Some(s) => {
                            out.push(1);
                            put_f32s(&mut out, s.m.data());
                            put_f32s(&mut out, s.v.data());
                            if o.use_ams {
                                let vm = s
                                    .v_max
                                    .as_ref()
                                    .ok_or_else(|| CoreError::Contract("AMSGrad slot without maximum".into()))?;
                                put_f32s(&mut out, vm.data());
                            }
                        }
                    }
                }
            }
        }
        match &self.state {
            None => out.push(0),
            Some(s) => {
                out.push(1);
                let js = serde_json::to_vec(s).map_err(|e| CoreError::Format(e.to_string()))?;
                put_u32(&mut out, js.len() as u32);
                out.extend_from_slice(&js);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CoreError::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CoreError::Format(format!("unsupported checkpoint version {version}")));
        }
        let n = r.u32()? as usize;
        let meta: CheckpointMeta =
            serde_json::from_slice(r.take(n)?).map_err(|e| CoreError::Format(format!("metadata: {e}")))?;
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| CoreError::Format("parameter name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u32()? as usize;
            if ndim > 8 {
                return Err(CoreError::Format(format!("parameter {name} has {ndim} axes")));
            }
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| CoreError::Format(format!("parameter {name} is too large")))?;
            let data = r.f32s(numel)?;
            params.push((name, Tensor::new(shape, data)?));
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = u64::from_le_bytes(r.take(8)?.try_into().expect("eight bytes"));
                let use_ams = match r.u8()? {
                    0 => false,
                    1 => true,
                    b => return Err(CoreError::Format(format!("bad AMSGrad flag {b}"))),
                };
                let mut slots = Vec::with_capacity(params.len());
                for (_, p) in &params {
                    slots.push(match r.u8()? {
                        0 => None,
                        1 => {
                            let shape = p.shape().to_vec();
                            let mut read = || -> Result<Tensor<f32>> { Ok(Tensor::new(shape.clone(), r.f32s(p.numel())?)?) };
                            let m = read()?;
                            let v = read()?;
                            let v_max = if use_ams { Some(read()?) } else { None };
                            Some(Moments { m, v, v_max })
                        }
                        b => return Err(CoreError::Format(format!("bad optimizer slot flag {b}"))),
                    });
                }
                Some(OptimizerSection { step, use_ams, slots })
            }
            b => return Err(CoreError::Format(format!("bad optimizer flag {b}"))),
        };
        let state = match r.u8()? {
            0 => None,
            1 => {
                let n = r.u32()? as usize;
                Some(serde_json::from_slice(r.take(n)?).map_err(|e| CoreError::Format(format!("training state: {e}")))?)
            }
            b => return Err(CoreError::Format(format!("bad state flag {b}"))),
        };
        if r.pos != bytes.len() {
            return Err(CoreError::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self {
            meta,
            params,
            optimizer,
            state,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        // write then rename so a crash never leaves a truncated checkpoint
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CoreError::Format(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, data: &[f32]) {
    out.reserve(4 * data.len());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CoreError::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let len = n.checked_mul(4).ok_or_else(|| CoreError::Format("truncated checkpoint".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let model = Model::<f32>::new(ModelConfig::new(9, 9, 4, 1, 6, 2), 3).unwrap();
        Checkpoint::from_model(&model, 0.1, &[0, 1])
    }

    #[test]
    fn roundtrip_with_sections() {
        let c = sample();
        assert_eq!(Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap(), c);
        let n = c.params.len();
        let mut opt = Adam::new(
            AdamConfig {
                use_ams: true,
                ..AdamConfig::default()
            },
            n,
        );
        opt.slots[1] = Some(Moments {
            m: Tensor::full(c.params[1].1.shape(), 0.5),
            v: Tensor::full(c.params[1].1.shape(), 0.25),
            v_max: Some(Tensor::full(c.params[1].1.shape(), 0.75)),
        });
        opt.step = 17;
        let state = TrainState {
            epoch: 3,
            unit_losses: vec![0.1, 1.0 / 3.0],
            best_loss: Some(2.0f64.sqrt()),
            ..TrainState::default()
        };
        let full = c.with_training(&opt, &state);
        let back = Checkpoint::from_bytes(&full.to_bytes().unwrap()).unwrap();
        assert_eq!(back, full);
        assert_eq!(back.to_optimizer(AdamConfig::default()).unwrap(), opt);
        let model = back.to_model().unwrap();
        assert_eq!(model.store().named().count(), n);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }
}
