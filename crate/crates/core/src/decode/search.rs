use std::cmp::Ordering;

use nmt_corpus::{EOS, SOS};

use crate::decode::scorer::{blocked_mask, Scorer};
use crate::error::{CoreError, Result};

/// Divisor applied to a hypothesis log-probability: `((5 + len) / 6)^alpha`.
pub fn length_penalty(len: usize, alpha: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(alpha)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Length-penalty exponent; 0 disables it.
    pub alpha: f64,
    /// Maximum number of generated tokens, counting `<eos>`.
    pub max_len: usize,
    pub forbidden: Vec<u32>,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_size: 4,
            alpha: 0.0,
            max_len: 128,
            forbidden: Vec::new(),
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(CoreError::Config("beam size must be at least 1".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(CoreError::Config(format!("length penalty {} must be finite and >= 0", self.alpha)));
        }
        if self.max_len == 0 {
            return Err(CoreError::Config("max_len must be at least 1".into()));
        }
        Ok(())
    }
}

/// A decoded sequence, without `<sos>` and `<eos>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub logp: f64,
    /// `logp` divided by the length penalty.
    pub score: f64,
    /// False when decoding stopped at `max_len` before `<eos>`.
    pub finished: bool,
}

impl Hypothesis {
    fn new(tokens: Vec<u32>, logp: f64, finished: bool, alpha: f64) -> Self {
        let len = tokens.len() + usize::from(finished);
        Self {
            score: logp / length_penalty(len.max(1), alpha),
            tokens,
            logp,
            finished,
        }
    }

    /// Generated length, counting `<eos>`.
    pub fn len(&self) -> usize {
        self.tokens.len() + usize::from(self.finished)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Best first: higher score, then shorter, then lower token ids.
pub fn rank_order(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.len().cmp(&b.len()))
        .then_with(|| a.tokens.cmp(&b.tokens))
        .then(b.finished.cmp(&a.finished))
}

fn argmax(row: &[f64]) -> (u32, f64) {
    let mut best = (0u32, f64::NEG_INFINITY);
    for (i, &v) in row.iter().enumerate() {
        if v > best.1 {
            best = (i as u32, v);
        }
    }
    best
}

/// Picks the most probable token at each step (lowest id on ties).
pub fn greedy_search(scorer: &dyn Scorer, src: &[u32], max_len: usize, forbidden: &[u32]) -> Result<Hypothesis> {
    if max_len == 0 {
        return Err(CoreError::Config("max_len must be at least 1".into()));
    }
    let blocked = blocked_mask(scorer.tgt_vocab(), forbidden);
    let mut state = scorer.begin(src)?;
    let (mut last, mut tokens, mut logp) = (SOS, Vec::new(), 0.0);
    for _ in 0..max_len {
        let row = state.step(&[last], &blocked)?.pop().unwrap_or_default();
        let (id, lp) = argmax(&row);
        logp += lp;
        if id == EOS {
            return Ok(Hypothesis::new(tokens, logp, true, 0.0));
        }
        tokens.push(id);
        last = id;
    }
    Ok(Hypothesis::new(tokens, logp, false, 0.0))
}

/// Beam search returning every retired hypothesis, best first.
///
/// Each step expands all live hypotheses over the vocabulary and keeps the
/// `beam_size` best candidates. Candidates ending in `<eos>` retire; at
/// `max_len` the survivors retire unfinished. Search stops early once no
/// live hypothesis can still beat the best retired one.
pub fn beam_search(scorer: &dyn Scorer, src: &[u32], cfg: &BeamConfig) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    let blocked = blocked_mask(scorer.tgt_vocab(), &cfg.forbidden);
    let mut state = scorer.begin(src)?;
    let mut live: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    let mut pool: Vec<Hypothesis> = Vec::new();
    let bound_lp = length_penalty(cfg.max_len, cfg.alpha);

    for t in 1..=cfg.max_len {
        let last: Vec<u32> = live.iter().map(|(toks, _)| toks.last().copied().unwrap_or(SOS)).collect();
        let rows = state.step(&last, &blocked)?;
        let mut cand: Vec<(f64, usize, u32)> = Vec::new();
        for (p, row) in rows.iter().enumerate() {
            for (tok, &lp) in row.iter().enumerate() {
                if lp.is_finite() {
                    cand.push((live[p].1 + lp, p, tok as u32));
                }
            }
        }
        cand.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| live[a.1].0.cmp(&live[b.1].0))
                .then(a.2.cmp(&b.2))
        });
        cand.truncate(cfg.beam_size);

        let mut next = Vec::new();
        let mut parents = Vec::new();
        for (logp, p, tok) in cand {
            let mut toks = live[p].0.clone();
            if tok == EOS {
                pool.push(Hypothesis::new(toks, logp, true, cfg.alpha));
                continue;
            }
            toks.push(tok);
            if t == cfg.max_len {
                pool.push(Hypothesis::new(toks, logp, false, cfg.alpha));
            } else {
                next.push((toks, logp));
                parents.push(p);
            }
        }
        if next.is_empty() {
            break;
        }
        let best = pool.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
        let reachable = next.iter().map(|(_, lp)| lp / bound_lp).fold(f64::NEG_INFINITY, f64::max);
        if best >= reachable {
            break;
        }
        state.reorder(&parents)?;
        live = next;
    }
    pool.sort_by(rank_order);
    Ok(pool)
}

/// Greedy search for a beam of one, otherwise the top beam hypothesis.
pub fn decode_best(scorer: &dyn Scorer, src: &[u32], cfg: &BeamConfig) -> Result<Hypothesis> {
    cfg.validate()?;
    if cfg.beam_size == 1 {
        let h = greedy_search(scorer, src, cfg.max_len, &cfg.forbidden)?;
        return Ok(Hypothesis::new(h.tokens, h.logp, h.finished, cfg.alpha));
    }
    beam_search(scorer, src, cfg)?
        .into_iter()
        .next()
        .ok_or_else(|| CoreError::Contract("beam search produced no hypothesis".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn penalty_closed_forms() {
        assert_eq!(length_penalty(17, 0.0), 1.0);
        assert_eq!(length_penalty(1, 0.7), 1.0);
        assert!((length_penalty(7, 0.6) - 2f64.powf(0.6)).abs() < 1e-15);
        assert!((length_penalty(7, 0.6) - 1.5157).abs() < 1e-4);
    }

    #[test]
    fn ranking_prefers_shorter_then_lower_ids() {
        let a = Hypothesis::new(vec![5], -1.0, true, 0.0);
        let b = Hypothesis::new(vec![5, 6], -1.0, true, 0.0);
        let c = Hypothesis::new(vec![4], -1.0, true, 0.0);
        let mut v = vec![b.clone(), a.clone(), c.clone()];
        v.sort_by(rank_order);
        assert_eq!(v, vec![c, a, b]);
    }

    #[test]
    fn config_validation() {
        assert!(BeamConfig { beam_size: 0, ..Default::default() }.validate().is_err());
        assert!(BeamConfig { alpha: -1.0, ..Default::default() }.validate().is_err());
        assert!(BeamConfig::default().validate().is_ok());
    }
}
