use nmt_corpus::{PAD, SOS};
use nmt_tensor::{Scalar, Tape, Tensor};

use crate::error::{CoreError, Result};
use crate::model::layers::Ctx;
use crate::model::{DecoderIncrementalState, Model, TokenBatch};

/// Next-token log-probabilities for a growing set of hypotheses over one source sentence.
pub trait Scorer: Sync {
    fn tgt_vocab(&self) -> usize;
    /// Decoding state holding a single empty hypothesis for `src`.
    fn begin(&self, src: &[u32]) -> Result<Box<dyn ScoreState + '_>>;
}

pub trait ScoreState {
    /// Feeds the last token of every row and returns per-row log-probabilities
    /// over the target vocabulary. Tokens flagged in `blocked` get `-inf`.
    fn step(&mut self, last: &[u32], blocked: &[bool]) -> Result<Vec<Vec<f64>>>;
    /// Keeps rows `rows` (with repetition) in the given order.
    fn reorder(&mut self, rows: &[usize]) -> Result<()>;
}

/// `<pad>`, `<sos>` and every forbidden index are never produced.
pub fn blocked_mask(vocab: usize, forbidden: &[u32]) -> Vec<bool> {
    let mut m = vec![false; vocab];
    for &i in forbidden.iter().chain(&[PAD, SOS]) {
        if let Some(b) = m.get_mut(i as usize) {
            *b = true;
        }
    }
    m
}

fn masked_log_softmax<T: Scalar>(row: &[T], blocked: &[bool]) -> Result<Vec<f64>> {
    let max = row
        .iter()
        .zip(blocked)
        .filter(|(_, &b)| !b)
        .map(|(v, _)| v.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(CoreError::Contract("no admissible token to decode".into()));
    }
    let lse = row
        .iter()
        .zip(blocked)
        .filter(|(_, &b)| !b)
        .map(|(v, _)| (v.as_f64() - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    Ok(row
        .iter()
        .zip(blocked)
        .map(|(v, &b)| if b { f64::NEG_INFINITY } else { v.as_f64() - lse })
        .collect())
}

fn rows_of<T: Scalar>(logits: &Tensor<T>, blocked: &[bool]) -> Result<Vec<Vec<f64>>> {
    let v = *logits.shape().last().unwrap_or(&0);
    if v != blocked.len() {
        return Err(CoreError::Contract(format!("logits over {v} classes, mask over {}", blocked.len())));
    }
    logits.data().chunks(v).map(|r| masked_log_softmax(r, blocked)).collect()
}

fn check_src(src: &[u32]) -> Result<TokenBatch> {
    if src.is_empty() {
        return Err(CoreError::Contract("cannot decode an empty source".into()));
    }
    TokenBatch::new(src.to_vec(), 1, src.len())
}

/// Cached incremental decoding through `decode_step`.
pub struct Incremental<'m, T>(pub &'m Model<T>);

struct IncrementalState<'m, T> {
    model: &'m Model<T>,
    state: DecoderIncrementalState<T>,
}

impl<T: Scalar> Scorer for Incremental<'_, T> {
    fn tgt_vocab(&self) -> usize {
        self.0.config().tgt_vocab
    }

    fn begin(&self, src: &[u32]) -> Result<Box<dyn ScoreState + '_>> {
        let state = self.0.start(&check_src(src)?)?;
        Ok(Box::new(IncrementalState { model: self.0, state }))
    }
}

impl<T: Scalar> ScoreState for IncrementalState<'_, T> {
    fn step(&mut self, last: &[u32], blocked: &[bool]) -> Result<Vec<Vec<f64>>> {
        let logits = self.model.decode_step(&mut self.state, last)?;
        rows_of(&logits, blocked)
    }

    fn reorder(&mut self, rows: &[usize]) -> Result<()> {
        self.state.reorder(rows)
    }
}

/// Decoding that reruns the full training forward pass over each growing
/// prefix. Slow, but needs nothing beyond `forward`.
pub struct Forward<'m, T>(pub &'m Model<T>);

struct ForwardState<'m, T> {
    model: &'m Model<T>,
    src: Vec<u32>,
    prefixes: Vec<Vec<u32>>,
}

impl<T: Scalar> Scorer for Forward<'_, T> {
    fn tgt_vocab(&self) -> usize {
        self.0.config().tgt_vocab
    }

    fn begin(&self, src: &[u32]) -> Result<Box<dyn ScoreState + '_>> {
        check_src(src)?;
        Ok(Box::new(ForwardState {
            model: self.0,
            src: src.to_vec(),
            prefixes: vec![Vec::new()],
        }))
    }
}

impl<T: Scalar> ScoreState for ForwardState<'_, T> {
    fn step(&mut self, last: &[u32], blocked: &[bool]) -> Result<Vec<Vec<f64>>> {
        if last.len() != self.prefixes.len() {
            return Err(CoreError::Contract("token count does not match hypotheses".into()));
        }
        for (p, &t) in self.prefixes.iter_mut().zip(last) {
            p.push(t);
        }
        let rows = self.prefixes.len();
        let src = TokenBatch::new(self.src.repeat(rows), rows, self.src.len())?;
        let tgt = TokenBatch::from_rows(&self.prefixes);
        let tape = Tape::inference();
        let cx = Ctx::new(&tape, self.model.store());
        let logits = self.model.forward(&cx, &src, &tgt)?;
        let lastpos = logits.value().narrow(1, tgt.cols - 1, 1)?;
        rows_of(&lastpos, blocked)
    }

    fn reorder(&mut self, rows: &[usize]) -> Result<()> {
        self.prefixes = rows
            .iter()
            .map(|&r| {
                self.prefixes
                    .get(r)
                    .cloned()
                    .ok_or_else(|| CoreError::Contract(format!("row {r} out of range")))
            })
            .collect::<Result<_>>()?;
        Ok(())
    }
}

/// Averages member next-token probabilities; a single member is used as is.
pub struct Ensemble<'a> {
    members: Vec<Box<dyn Scorer + 'a>>,
    vocab: usize,
}

impl<'a> Ensemble<'a> {
    pub fn new(members: Vec<Box<dyn Scorer + 'a>>) -> Result<Self> {
        let vocab = members
            .first()
            .ok_or_else(|| CoreError::Config("an ensemble needs at least one model".into()))?
            .tgt_vocab();
        if let Some(m) = members.iter().find(|m| m.tgt_vocab() != vocab) {
            return Err(CoreError::Config(format!(
                "ensemble members disagree on target vocabulary size ({vocab} vs {})",
                m.tgt_vocab()
            )));
        }
        Ok(Self { members, vocab })
    }

    pub fn of_models<T: Scalar>(models: &'a [Model<T>]) -> Result<Self> {
        Self::new(
            models
                .iter()
                .map(|m| Box::new(Incremental(m)) as Box<dyn Scorer + 'a>)
                .collect(),
        )
    }
}

struct EnsembleState<'a> {
    states: Vec<Box<dyn ScoreState + 'a>>,
}

impl Scorer for Ensemble<'_> {
    fn tgt_vocab(&self) -> usize {
        self.vocab
    }

    fn begin(&self, src: &[u32]) -> Result<Box<dyn ScoreState + '_>> {
        let states = self.members.iter().map(|m| m.begin(src)).collect::<Result<_>>()?;
        Ok(Box::new(EnsembleState { states }))
    }
}

impl ScoreState for EnsembleState<'_> {
    fn step(&mut self, last: &[u32], blocked: &[bool]) -> Result<Vec<Vec<f64>>> {
        let mut outs = self
            .states
            .iter_mut()
            .map(|s| s.step(last, blocked))
            .collect::<Result<Vec<_>>>()?;
        if outs.len() == 1 {
            return Ok(outs.pop().unwrap_or_default());
        }
        let k = outs.len() as f64;
        let mut avg = outs.pop().unwrap_or_default();
        for row in avg.iter_mut() {
            row.iter_mut().for_each(|v| *v = v.exp());
        }
        for other in &outs {
            for (row, orow) in avg.iter_mut().zip(other) {
                row.iter_mut().zip(orow).for_each(|(a, b)| *a += b.exp());
            }
        }
        for row in avg.iter_mut() {
            row.iter_mut().for_each(|v| *v = (*v / k).ln());
        }
        Ok(avg)
    }

    fn reorder(&mut self, rows: &[usize]) -> Result<()> {
        self.states.iter_mut().try_for_each(|s| s.reorder(rows))
    }
}
