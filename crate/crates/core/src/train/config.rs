use crate::config::ConfigMap;
use crate::error::{CoreError, Result};

/// Training options. Field names follow the configuration keys.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub label_smoothing: f64,
    pub forbidden_indexes: Vec<u32>,
    /// Target tokens to accumulate before each optimizer step.
    pub tokens_optm: usize,
    pub warm_step: u64,
    /// Multiplier on the warm-up/decay learning rate.
    pub lr_scale: f64,
    pub use_ams: bool,
    pub weight_decay: f64,
    /// Maximum number of epochs.
    pub maxrun: usize,
    /// Maximum number of optimizer steps; 0 means unbounded.
    pub training_steps: u64,
    /// Epochs without a better validation loss or error before stopping; 0 disables.
    pub earlystop: usize,
    pub save_every: u64,
    pub num_checkpoint: usize,
    pub epoch_start_checkpoint_save: usize,
    pub epoch_save: bool,
    pub batch_report: usize,
    pub report_eva: bool,
    pub dss_ws: f64,
    pub dss_rm: f64,
    pub seed: u64,
    pub expm_dir: String,
    pub data_id: String,
    pub run_id: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            label_smoothing: 0.1,
            forbidden_indexes: vec![0, 1],
            tokens_optm: 25000,
            warm_step: 8000,
            lr_scale: 1.0,
            use_ams: false,
            weight_decay: 0.0,
            maxrun: 128,
            training_steps: 0,
            earlystop: 8,
            save_every: 1500,
            num_checkpoint: 4,
            epoch_start_checkpoint_save: 3,
            epoch_save: true,
            batch_report: 2000,
            report_eva: true,
            dss_ws: 0.0,
            dss_rm: 0.0,
            seed: 666666,
            expm_dir: "expm".into(),
            data_id: "data".into(),
            run_id: "run".into(),
        }
    }
}

impl TrainConfig {
    pub fn from_config(cfg: &mut ConfigMap) -> Result<Self> {
        let d = Self::default();
        let c = Self {
            label_smoothing: cfg.f64_or("label_smoothing", d.label_smoothing)?,
            forbidden_indexes: cfg.index_list_or("forbidden_indexes", &d.forbidden_indexes)?,
            tokens_optm: cfg.usize_or("tokens_optm", d.tokens_optm)?,
            warm_step: cfg.u64_or("warm_step", d.warm_step)?,
            lr_scale: cfg.f64_or("lr_scale", d.lr_scale)?,
            use_ams: cfg.bool_or("use_ams", d.use_ams)?,
            weight_decay: cfg.f64_or("weight_decay", d.weight_decay)?,
            maxrun: cfg.usize_or("maxrun", d.maxrun)?,
            training_steps: cfg.u64_or("training_steps", d.training_steps)?,
            earlystop: cfg.usize_or("earlystop", d.earlystop)?,
            save_every: cfg.u64_or("save_every", d.save_every)?,
            num_checkpoint: cfg.usize_or("num_checkpoint", d.num_checkpoint)?,
            epoch_start_checkpoint_save: cfg.usize_or("epoch_start_checkpoint_save", d.epoch_start_checkpoint_save)?,
            epoch_save: cfg.bool_or("epoch_save", d.epoch_save)?,
            batch_report: cfg.usize_or("batch_report", d.batch_report)?,
            report_eva: cfg.bool_or("report_eva", d.report_eva)?,
            dss_ws: cfg.f64_or("dss_ws", d.dss_ws)?,
            dss_rm: cfg.f64_or("dss_rm", d.dss_rm)?,
            seed: cfg.u64_or("seed", d.seed)?,
            expm_dir: cfg.string_or("expm_dir", &d.expm_dir)?,
            data_id: cfg.string_or("data_id", &d.data_id)?,
            run_id: cfg.string_or("run_id", &d.run_id)?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::Config(m.into()));
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("label_smoothing must be in [0, 1)");
        }
        if self.tokens_optm == 0 {
            return bad("tokens_optm must be positive");
        }
        if !(0.0..=1.0).contains(&self.dss_ws) || !(0.0..=1.0).contains(&self.dss_rm) {
            return bad("dss_ws and dss_rm must be in [0, 1]");
        }
        if self.weight_decay < 0.0 || self.lr_scale <= 0.0 {
            return bad("weight_decay must be nonnegative and lr_scale positive");
        }
        if self.maxrun == 0 {
            return bad("maxrun must be positive");
        }
        for s in [&self.data_id, &self.run_id] {
            if s.is_empty() || s.contains(['/', '\\']) || s == ".." {
                return bad("data_id and run_id must be plain directory names");
            }
        }
        Ok(())
    }
}
