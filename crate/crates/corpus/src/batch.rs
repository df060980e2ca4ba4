use crate::error::{CorpusError, Result};
use crate::vocab::{EOS, PAD, SOS};

/// A sentence pair mapped to vocabulary ids, without specials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
}

impl EncodedPair {
    pub fn new(src: Vec<u32>, tgt: Vec<u32>) -> Self {
        Self { src, tgt }
    }

    pub fn total_len(&self) -> usize {
        self.src.len() + self.tgt.len()
    }
}

/// One padded source matrix and target matrix. Target rows are
/// `<sos> tokens <eos>` followed by padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchUnit {
    pub rows: usize,
    pub src_cols: usize,
    pub tgt_cols: usize,
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
}

impl BatchUnit {
    pub fn from_pairs(pairs: &[EncodedPair]) -> Self {
        let rows = pairs.len();
        let src_cols = pairs.iter().map(|p| p.src.len()).max().unwrap_or(0);
        let tgt_cols = pairs.iter().map(|p| p.tgt.len() + 2).max().unwrap_or(0);
        let mut src = vec![PAD; rows * src_cols];
        let mut tgt = vec![PAD; rows * tgt_cols];
        for (r, p) in pairs.iter().enumerate() {
            src[r * src_cols..r * src_cols + p.src.len()].copy_from_slice(&p.src);
            let row = &mut tgt[r * tgt_cols..(r + 1) * tgt_cols];
            row[0] = SOS;
            row[1..=p.tgt.len()].copy_from_slice(&p.tgt);
            row[p.tgt.len() + 1] = EOS;
        }
        Self {
            rows,
            src_cols,
            tgt_cols,
            src,
            tgt,
        }
    }

    pub fn src_row(&self, r: usize) -> &[u32] {
        &self.src[r * self.src_cols..(r + 1) * self.src_cols]
    }

    pub fn tgt_row(&self, r: usize) -> &[u32] {
        &self.tgt[r * self.tgt_cols..(r + 1) * self.tgt_cols]
    }

    /// Non-pad target tokens that the model predicts (everything after `<sos>`).
    pub fn target_tokens(&self) -> usize {
        (0..self.rows)
            .map(|r| self.tgt_row(r)[1..].iter().filter(|&&t| t != PAD).count())
            .sum()
    }

    /// Recovers the unpadded pairs.
    pub fn pairs(&self) -> Vec<EncodedPair> {
        (0..self.rows)
            .map(|r| {
                let src = self.src_row(r).iter().copied().filter(|&t| t != PAD).collect();
                let tgt = self.tgt_row(r)[1..].iter().copied().take_while(|&t| t != EOS).collect();
                EncodedPair { src, tgt }
            })
            .collect()
    }

    /// Checks the padding and `<sos>`/`<eos>` layout of every row.
    pub fn validate(&self) -> Result<()> {
        if self.src.len() != self.rows * self.src_cols || self.tgt.len() != self.rows * self.tgt_cols {
            return Err(CorpusError::Format("batch buffer sizes disagree with dimensions".into()));
        }
        for r in 0..self.rows {
            let row = self.tgt_row(r);
            if row.first() != Some(&SOS) {
                return Err(CorpusError::Format(format!("target row {r} does not start with <sos>")));
            }
            let eos: Vec<usize> = row.iter().enumerate().filter(|(_, &t)| t == EOS).map(|(i, _)| i).collect();
            if eos.len() != 1 {
                return Err(CorpusError::Format(format!("target row {r} has {} <eos>", eos.len())));
            }
            if row[1..eos[0]].iter().any(|&t| t == PAD || t == SOS) || row[eos[0] + 1..].iter().any(|&t| t != PAD) {
                return Err(CorpusError::Format(format!("target row {r} is malformed")));
            }
            let src = self.src_row(r);
            let len = src.iter().take_while(|&&t| t != PAD).count();
            if len == 0 || src[len..].iter().any(|&t| t != PAD) {
                return Err(CorpusError::Format(format!("source row {r} is malformed")));
            }
        }
        Ok(())
    }
}

/// Drops over-long pairs, orders the rest by total length then target
/// length, and packs consecutive pairs so that rows times the padded width
/// of each side stays within `budget` tokens.
pub fn sort_and_batch(pairs: &[EncodedPair], budget: usize, max_len: usize) -> Result<Vec<BatchUnit>> {
    if budget == 0 {
        return Err(CorpusError::Invalid("batch token budget must be positive".into()));
    }
    let mut kept: Vec<&EncodedPair> = pairs
        .iter()
        .filter(|p| !p.src.is_empty() && !p.tgt.is_empty() && p.src.len() <= max_len && p.tgt.len() <= max_len)
        .collect();
    // stable: equal (total, target) keys keep corpus order
    kept.sort_by_key(|p| (p.total_len(), p.tgt.len()));

    let mut batches = Vec::new();
    let mut cur: Vec<EncodedPair> = Vec::new();
    let (mut s_max, mut t_max) = (0usize, 0usize);
    for p in kept {
        let s = s_max.max(p.src.len());
        let t = t_max.max(p.tgt.len() + 2);
        let rows = cur.len() + 1;
        if !cur.is_empty() && (rows * s > budget || rows * t > budget) {
            batches.push(BatchUnit::from_pairs(&cur));
            cur.clear();
            s_max = 0;
            t_max = 0;
        }
        if cur.is_empty() && (p.src.len() > budget || p.tgt.len() + 2 > budget) {
            log::warn!(
                "pair with {} source / {} target tokens exceeds the batch budget {budget}; emitted alone",
                p.src.len(),
                p.tgt.len()
            );
        }
        s_max = s_max.max(p.src.len());
        t_max = t_max.max(p.tgt.len() + 2);
        cur.push(p.clone());
    }
    if !cur.is_empty() {
        batches.push(BatchUnit::from_pairs(&cur));
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(s: usize, t: usize, tag: u32) -> EncodedPair {
        EncodedPair::new(vec![tag; s], vec![tag; t])
    }

    #[test]
    fn chunk_then_target_order() {
        // totals 4, 4, 6 with target lengths 2, 1, 3
        let pairs = [pair(2, 2, 10), pair(3, 1, 11), pair(3, 3, 12)];
        let batches = sort_and_batch(&pairs, 1000, 100).unwrap();
        let order: Vec<u32> = batches.iter().flat_map(|b| b.pairs()).map(|p| p.src[0]).collect();
        assert_eq!(order, vec![11, 10, 12]);
    }

    #[test]
    fn identical_pairs_fit_one_batch() {
        let pairs = vec![pair(3, 3, 7); 5];
        let batches = sort_and_batch(&pairs, 25, 100).unwrap();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].rows, 5);
    }

    #[test]
    fn budget_and_oversize() {
        let pairs = [pair(1, 1, 4), pair(2, 2, 5), pair(30, 30, 6)];
        let batches = sort_and_batch(&pairs, 10, 100).unwrap();
        for b in &batches[..batches.len() - 1] {
            assert!(b.rows * b.tgt_cols.max(b.src_cols) <= 10);
        }
        let last = batches.last().unwrap();
        assert_eq!(last.rows, 1);
        assert_eq!(last.src_cols, 30);
        assert!(sort_and_batch(&pairs, 0, 10).is_err());
    }

    #[test]
    fn max_len_drops_pairs() {
        let pairs = [pair(1, 1, 4), pair(6, 1, 5)];
        let batches = sort_and_batch(&pairs, 100, 5).unwrap();
        assert_eq!(batches.iter().map(|b| b.rows).sum::<usize>(), 1);
    }

    #[test]
    fn layout_and_validation() {
        let b = BatchUnit::from_pairs(&[EncodedPair::new(vec![5, 6], vec![7]), EncodedPair::new(vec![5], vec![7, 8, 9])]);
        assert_eq!(b.tgt_row(0), &[SOS, 7, EOS, PAD, PAD]);
        assert_eq!(b.tgt_row(1), &[SOS, 7, 8, 9, EOS]);
        assert_eq!(b.src_row(1), &[5, PAD]);
        assert_eq!(b.target_tokens(), 2 + 4);
        b.validate().unwrap();
        let mut bad = b.clone();
        bad.tgt[3] = 4;
        assert!(bad.validate().is_err());
    }
}
