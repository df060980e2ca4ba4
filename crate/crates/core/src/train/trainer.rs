use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use nmt_corpus::BatchUnit;
use nmt_tensor::Tape;

use crate::error::{CoreError, Result};
use crate::model::layers::Ctx;
use crate::model::{Model, TokenBatch};
use crate::train::checkpoint::{Checkpoint, TrainState};
use crate::train::config::TrainConfig;
use crate::train::loss::label_smoothing_loss;
use crate::train::optim::{Adam, AdamConfig};
use crate::train::sample::dynamic_sample;
use crate::train::schedule::noam_lr;

/// Source, decoder input and decoder target matrices of a batch unit.
pub fn unit_inputs(b: &BatchUnit) -> Result<(TokenBatch, TokenBatch, TokenBatch)> {
    if b.tgt_cols < 2 {
        return Err(CoreError::Contract("target rows need <sos> and <eos>".into()));
    }
    let src = TokenBatch::new(b.src.clone(), b.rows, b.src_cols)?;
    let tgt = TokenBatch::new(b.tgt.clone(), b.rows, b.tgt_cols)?;
    Ok((src, tgt.columns(0, b.tgt_cols - 1), tgt.columns(1, b.tgt_cols - 1)))
}

/// Seed for the dropout and noise streams of the `unit`-th batch unit of a run.
pub fn unit_seed(seed: u64, unit: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ unit.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitStats {
    pub loss_sum: f64,
    pub tokens: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub step: u64,
    pub units: usize,
    pub tokens: usize,
    /// Mean loss per target token over the accumulated units.
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub loss: f64,
    pub error_rate: f64,
    pub tokens: usize,
}

/// Smoothed loss per token and argmax error rate over `dev`, without dropout.
pub fn evaluate(model: &Model<f32>, dev: &[BatchUnit], smoothing: f64, forbidden: &[u32]) -> Result<EvalResult> {
    let (mut loss, mut tokens, mut errors) = (0.0, 0usize, 0usize);
    for b in dev {
        let (src, tgt_in, tgt_out) = unit_inputs(b)?;
        let tape = Tape::inference();
        let cx = Ctx::new(&tape, model.store());
        let logits = model.forward(&cx, &src, &tgt_in)?;
        let out = label_smoothing_loss(logits, &tgt_out, smoothing, forbidden)?;
        loss += out.sum.value().item() as f64;
        tokens += out.tokens;
        errors += out.errors;
    }
    let n = tokens.max(1) as f64;
    Ok(EvalResult {
        loss: loss / n,
        error_rate: errors as f64 / n,
        tokens,
    })
}

/// A model, its optimizer and the position in the run.
pub struct Trainer {
    pub model: Model<f32>,
    pub opt: Adam<f32>,
    pub cfg: TrainConfig,
    pub state: TrainState,
    pending: Pending,
}

#[derive(Debug, Default, Clone, Copy)]
struct Pending {
    units: usize,
    tokens: usize,
    loss: f64,
}

impl Trainer {
    fn adam_config(cfg: &TrainConfig) -> AdamConfig {
        AdamConfig {
            use_ams: cfg.use_ams,
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        }
    }

    pub fn new(model: Model<f32>, cfg: TrainConfig) -> Self {
        let opt = Adam::new(Self::adam_config(&cfg), model.store().len());
        Self {
            model,
            opt,
            cfg,
            state: TrainState::default(),
            pending: Pending::default(),
        }
    }

    /// Continues from a checkpoint holding optimizer and training state.
    pub fn resume(ck: &Checkpoint, cfg: TrainConfig) -> Result<Self> {
        let model = ck.to_model()?;
        let opt = ck
            .to_optimizer(Self::adam_config(&cfg))
            .ok_or_else(|| CoreError::Format("checkpoint has no optimizer state".into()))?;
        let mut state = ck
            .state
            .clone()
            .ok_or_else(|| CoreError::Format("checkpoint has no training state".into()))?;
        state.stopped = false;
        Ok(Self {
            model,
            opt,
            cfg,
            state,
            pending: Pending::default(),
        })
    }

    pub fn checkpoint(&self, with_training: bool) -> Checkpoint {
        let ck = Checkpoint::from_model(&self.model, self.cfg.label_smoothing, &self.cfg.forbidden_indexes);
        if with_training {
            ck.with_training(&self.opt, &self.state)
        } else {
            ck
        }
    }

    /// Forward and backward over one unit; gradients add to those already held.
    pub fn accumulate_unit(&mut self, b: &BatchUnit, seed: u64) -> Result<UnitStats> {
        let (src, tgt_in, tgt_out) = unit_inputs(b)?;
        let tape = Tape::new(true, seed);
        let out = {
            let cx = Ctx::new(&tape, self.model.store());
            let logits = self.model.forward(&cx, &src, &tgt_in)?;
            label_smoothing_loss(logits, &tgt_out, self.cfg.label_smoothing, &self.cfg.forbidden_indexes)?
        };
        tape.backward_into(out.sum, self.model.store_mut())?;
        let stats = UnitStats {
            loss_sum: out.sum.value().item() as f64,
            tokens: out.tokens,
            errors: out.errors,
        };
        self.pending.units += 1;
        self.pending.tokens += stats.tokens;
        self.pending.loss += stats.loss_sum;
        Ok(stats)
    }

    pub fn pending_tokens(&self) -> usize {
        self.pending.tokens
    }

    /// One optimizer step on the accumulated gradients, normalized by the
    /// accumulated target-token count.
    pub fn apply_step(&mut self) -> Result<StepStats> {
        let p = std::mem::take(&mut self.pending);
        if p.units == 0 {
            return Err(CoreError::Contract("optimizer step without accumulated units".into()));
        }
        let step = self.opt.step + 1;
        let lr = self.cfg.lr_scale * noam_lr(step, self.model.config().isize, self.cfg.warm_step);
        self.opt.step(self.model.store_mut(), lr, 1.0 / p.tokens.max(1) as f64);
        self.state.step = self.opt.step;
        Ok(StepStats {
            step: self.opt.step,
            units: p.units,
            tokens: p.tokens,
            loss: p.loss / p.tokens.max(1) as f64,
            lr,
        })
    }

    /// Accumulates consecutive units until more than `tokens_optm` target
    /// tokens are gathered, then steps. An exhausted iterator steps on what
    /// was gathered; `None` means there was nothing left.
    pub fn accumulate_and_step<'a>(&mut self, units: &mut impl Iterator<Item = &'a BatchUnit>) -> Result<Option<StepStats>> {
        for b in units.by_ref() {
            let seed = unit_seed(self.cfg.seed, self.state.units_seen);
            self.state.units_seen += 1;
            self.accumulate_unit(b, seed)?;
            if self.pending.tokens > self.cfg.tokens_optm {
                return self.apply_step().map(Some);
            }
        }
        if self.pending.units > 0 {
            return self.apply_step().map(Some);
        }
        Ok(None)
    }
}

/// Where a finished run left its files.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    /// Best model on the validation set, or the last one if no epoch finished.
    pub best: PathBuf,
    /// Final model with optimizer and training state, for resuming.
    pub last: PathBuf,
    pub steps: u64,
    pub epochs_completed: usize,
}

pub fn run_dir(cfg: &TrainConfig) -> PathBuf {
    Path::new(&cfg.expm_dir).join(&cfg.data_id).join(&cfg.run_id)
}

struct RunLog {
    file: File,
}

impl RunLog {
    fn line(&mut self, msg: &str) -> Result<()> {
        log::info!("{msg}");
        writeln!(self.file, "{msg}")?;
        Ok(())
    }
}

/// Trains until `maxrun` epochs, `training_steps` optimizer steps, or early
/// stopping, writing checkpoints under `expm_dir/data_id/run_id/`. With
/// `resume`, continues the run stored in that checkpoint. The whole run is
/// a deterministic function of the configuration and seed.
pub fn train_loop(
    model: Model<f32>,
    train: &[BatchUnit],
    dev: &[BatchUnit],
    cfg: &TrainConfig,
    resume: Option<&Checkpoint>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(CoreError::Config("training set has no batch units".into()));
    }
    let dir = run_dir(cfg);
    std::fs::create_dir_all(&dir)
        .map_err(|e| CoreError::Config(format!("cannot create output directory {}: {e}", dir.display())))?;
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join("train.log"))
        .map_err(|e| CoreError::Config(format!("cannot write to {}: {e}", dir.display())))?;
    let mut log = RunLog { file };

    let mut tr = match resume {
        Some(ck) => Trainer::resume(ck, cfg.clone())?,
        None => Trainer::new(model, cfg.clone()),
    };
    if tr.state.epoch == 0 {
        tr.state.epoch = 1;
        tr.state.unit_losses = vec![0.0; train.len()];
    }
    if tr.state.unit_losses.len() != train.len() {
        return Err(CoreError::Config("checkpoint was trained on a different dataset".into()));
    }
    let best_path = dir.join("best.ntck");
    let last_path = dir.join("last.ntck");
    let mut epochs_completed = tr.state.epoch - 1;
    let (mut report_loss, mut report_tokens) = (0.0, 0usize);

    let early = |s: &TrainState| cfg.earlystop > 0 && s.bad_epochs >= cfg.earlystop;
    let out_of_steps = |s: &TrainState| cfg.training_steps > 0 && s.step >= cfg.training_steps;

    'epochs: while tr.state.epoch <= cfg.maxrun && !early(&tr.state) && !out_of_steps(&tr.state) {
        let epoch = tr.state.epoch;
        if tr.state.cursor == 0 && tr.state.schedule.is_empty() {
            tr.state.schedule = dynamic_sample(&tr.state.unit_losses, cfg.dss_ws, cfg.dss_rm, epoch, cfg.seed);
        }
        while tr.state.cursor < tr.state.schedule.len() {
            let u = tr.state.schedule[tr.state.cursor];
            let b = train
                .get(u)
                .ok_or_else(|| CoreError::Format(format!("schedule refers to missing unit {u}")))?;
            let seed = unit_seed(cfg.seed, tr.state.units_seen);
            let stats = tr.accumulate_unit(b, seed)?;
            tr.state.units_seen += 1;
            tr.state.cursor += 1;
            tr.state.unit_losses[u] = stats.loss_sum / stats.tokens.max(1) as f64;
            report_loss += stats.loss_sum;
            report_tokens += stats.tokens;
            if cfg.batch_report > 0 && tr.state.units_seen % cfg.batch_report as u64 == 0 {
                let lr = cfg.lr_scale * noam_lr(tr.opt.step.max(1), tr.model.config().isize, cfg.warm_step);
                log.line(&format!(
                    "step {} epoch {} loss {:.6} lr {:.6e}",
                    tr.state.step,
                    epoch,
                    report_loss / report_tokens.max(1) as f64,
                    lr
                ))?;
                (report_loss, report_tokens) = (0.0, 0);
            }
            if tr.pending_tokens() > cfg.tokens_optm {
                tr.apply_step()?;
                after_step(&mut tr, &dir, cfg)?;
                if out_of_steps(&tr.state) {
                    break 'epochs;
                }
            }
        }
        if tr.pending.units > 0 {
            tr.apply_step()?;
            after_step(&mut tr, &dir, cfg)?;
            if out_of_steps(&tr.state) {
                break 'epochs;
            }
        }

        let ev = evaluate(&tr.model, dev, cfg.label_smoothing, &cfg.forbidden_indexes)?;
        let better_loss = tr.state.best_loss.map_or(true, |b| ev.loss < b);
        let better_err = tr.state.best_error.map_or(true, |b| ev.error_rate < b);
        if better_loss {
            tr.state.best_loss = Some(ev.loss);
        }
        if better_err {
            tr.state.best_error = Some(ev.error_rate);
        }
        if better_loss || better_err {
            tr.state.bad_epochs = 0;
            tr.checkpoint(false).save(&best_path)?;
        } else {
            tr.state.bad_epochs += 1;
        }
        if cfg.report_eva {
            log.line(&format!(
                "epoch {epoch} dev loss {:.6} error {:.4}{}",
                ev.loss,
                ev.error_rate,
                if better_loss || better_err { " (best)" } else { "" }
            ))?;
        }
        if cfg.epoch_save {
            tr.checkpoint(false).save(&dir.join(format!("epoch_{epoch}.ntck")))?;
        }
        tr.state.epoch += 1;
        tr.state.cursor = 0;
        tr.state.schedule.clear();
        epochs_completed = epoch;
    }

    tr.state.stopped = true;
    tr.checkpoint(true).save(&last_path)?;
    log.line(&format!("finished after {} steps, {} epochs", tr.state.step, epochs_completed))?;
    Ok(TrainOutcome {
        best: if best_path.exists() { best_path } else { last_path.clone() },
        last: last_path,
        run_dir: dir,
        steps: tr.state.step,
        epochs_completed,
    })
}

fn after_step(tr: &mut Trainer, dir: &Path, cfg: &TrainConfig) -> Result<()> {
    let step = tr.state.step;
    if cfg.save_every > 0
        && step % cfg.save_every == 0
        && tr.state.epoch >= cfg.epoch_start_checkpoint_save
        && cfg.num_checkpoint > 0
    {
        tr.state.kept.push(step);
        while tr.state.kept.len() > cfg.num_checkpoint {
            let old = tr.state.kept.remove(0);
            let _ = std::fs::remove_file(dir.join(format!("checkpoint_{old}.ntck")));
        }
        tr.checkpoint(true).save(&dir.join(format!("checkpoint_{step}.ntck")))?;
    }
    Ok(())
}
