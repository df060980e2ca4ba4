//! Corpus cleaning: duplicate-source filtering, rare-vocabulary filtering
//! and length-ratio filtering over subword-segmented text.

use std::collections::HashMap;

use crate::error::{CorpusError, Result};
use crate::pair::{words, SentencePair};

/// For every distinct source sentence keep only its most frequent
/// translation, once. Ties go to the translation seen first; output follows
/// the first occurrence of each source. Pairs with an empty side are dropped.
pub fn max_keeper(pairs: &[SentencePair]) -> Vec<SentencePair> {
    // source -> (first position, translation -> (count, first position))
    let mut by_src: HashMap<&[String], (usize, HashMap<&[String], (usize, usize)>)> = HashMap::new();
    for (pos, p) in pairs.iter().enumerate() {
        if !p.is_complete() {
            continue;
        }
        let entry = by_src.entry(&p.src).or_insert_with(|| (pos, HashMap::new()));
        let t = entry.1.entry(&p.tgt).or_insert((0, pos));
        t.0 += 1;
    }
    let mut kept: Vec<(usize, SentencePair)> = by_src
        .into_iter()
        .map(|(src, (first, translations))| {
            let (tgt, _) = translations
                .into_iter()
                .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
                .expect("every source has a translation");
            (first, SentencePair::new(src.to_vec(), tgt.to_vec()))
        })
        .collect();
    kept.sort_by_key(|(first, _)| *first);
    kept.into_iter().map(|(_, p)| p).collect()
}

/// Types ranked by descending frequency, ties in lexicographic order.
fn ranked_types<'a>(sentences: impl Iterator<Item = &'a [String]>) -> Vec<(&'a str, usize)> {
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for s in sentences {
        for t in s {
            *freq.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<_> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked
}

fn rare_set<'a>(sentences: impl Iterator<Item = &'a [String]>, vratio: f64) -> std::collections::HashSet<&'a str> {
    let ranked = ranked_types(sentences);
    let n_rare = ((vratio * ranked.len() as f64) + 1e-9).floor() as usize;
    ranked[ranked.len() - n_rare..].iter().map(|(t, _)| *t).collect()
}

fn vocab_pass(pairs: &[SentencePair], vratio: f64) -> Vec<SentencePair> {
    let rare_src = rare_set(pairs.iter().map(|p| p.src.as_slice()), vratio);
    let rare_tgt = rare_set(pairs.iter().map(|p| p.tgt.as_slice()), vratio);
    let limit = 1.0 - vratio;
    let too_rare = |s: &[String], rare: &std::collections::HashSet<&str>| {
        let n = s.iter().filter(|t| rare.contains(t.as_str())).count();
        s.is_empty() || n as f64 / s.len() as f64 > limit
    };
    pairs
        .iter()
        .filter(|p| !too_rare(&p.src, &rare_src) && !too_rare(&p.tgt, &rare_tgt))
        .cloned()
        .collect()
}

/// Removes pairs in which, on either side, the share of rare tokens exceeds
/// `1 - vratio`. The rare tokens of a side are the `vratio` fraction of its
/// vocabulary types with the lowest corpus frequency.
///
/// Removing pairs changes the frequency table, so the filter is repeated
/// until the corpus stops changing; the result is a fixed point.
pub fn clean_by_vocab(pairs: &[SentencePair], vratio: f64) -> Result<Vec<SentencePair>> {
    if !(vratio > 0.0 && vratio < 1.0) {
        return Err(CorpusError::Invalid(format!("vratio {vratio} not in (0, 1)")));
    }
    let mut cur = vocab_pass(pairs, vratio);
    loop {
        let next = vocab_pass(&cur, vratio);
        if next.len() == cur.len() {
            return Ok(cur);
        }
        cur = next;
    }
}

/// Monolingual segmentation ratios of one side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonoRatios {
    /// added subwords / subwords
    pub cratio: f64,
    /// subwords / words
    pub bratio: f64,
    /// split words / words
    pub sratio: f64,
}

/// Token counts of one segmented side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SideCounts {
    /// tokens after segmentation
    pub nsub: usize,
    /// words before segmentation
    pub ntok: usize,
    /// words that segmentation split
    pub nsep: usize,
}

impl SideCounts {
    pub fn of(tokens: &[String], marker: &str) -> Self {
        let w = words(tokens, marker);
        Self {
            nsub: tokens.len(),
            ntok: w.len(),
            nsep: w.iter().filter(|g| g.len() > 1).count(),
        }
    }

    pub fn nsubadd(&self) -> usize {
        self.nsub - self.ntok
    }
}

/// `None` for an empty side.
pub fn mono_ratios(tokens: &[String], marker: &str) -> Option<MonoRatios> {
    let c = SideCounts::of(tokens, marker);
    if c.ntok == 0 {
        return None;
    }
    Some(MonoRatios {
        cratio: c.nsubadd() as f64 / c.nsub as f64,
        bratio: c.nsub as f64 / c.ntok as f64,
        sratio: c.nsep as f64 / c.ntok as f64,
    })
}

/// Bilingual length ratios of a pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiRatios {
    /// max/min of the segmented lengths
    pub uratio: f64,
    /// max/min of the word lengths
    pub oratio: f64,
}

fn max_over_min(a: usize, b: usize) -> f64 {
    a.max(b) as f64 / a.min(b) as f64
}

/// `None` when either side is empty.
pub fn bi_ratios(pair: &SentencePair, marker: &str) -> Option<BiRatios> {
    let s = SideCounts::of(&pair.src, marker);
    let t = SideCounts::of(&pair.tgt, marker);
    if s.ntok == 0 || t.ntok == 0 {
        return None;
    }
    Some(BiRatios {
        uratio: max_over_min(s.nsub, t.nsub),
        oratio: max_over_min(s.ntok, t.ntok),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioThresholds {
    pub max_cratio: f64,
    pub max_bratio: f64,
    pub max_sratio: f64,
    pub max_uratio: f64,
    pub max_oratio: f64,
}

impl RatioThresholds {
    pub fn validate(&self) -> Result<()> {
        let all = [self.max_cratio, self.max_bratio, self.max_sratio, self.max_uratio, self.max_oratio];
        if all.iter().any(|v| v.is_nan() || *v < 0.0) || self.max_uratio < 1.0 || self.max_oratio < 1.0 {
            return Err(CorpusError::Invalid(format!("invalid ratio thresholds {self:?}")));
        }
        Ok(())
    }

    fn admits(&self, pair: &SentencePair, marker: &str) -> bool {
        let mono_ok = |side: &[String]| match mono_ratios(side, marker) {
            Some(r) => r.cratio <= self.max_cratio && r.bratio <= self.max_bratio && r.sratio <= self.max_sratio,
            None => false,
        };
        let bi_ok = match bi_ratios(pair, marker) {
            Some(r) => r.uratio <= self.max_uratio && r.oratio <= self.max_oratio,
            None => false,
        };
        mono_ok(&pair.src) && mono_ok(&pair.tgt) && bi_ok
    }
}

/// Per-ratio maxima over a development set; pairs with an empty side are skipped.
pub fn estimate_thresholds(dev: &[SentencePair], marker: &str) -> Result<RatioThresholds> {
    let mut t = RatioThresholds {
        max_cratio: 0.0,
        max_bratio: 0.0,
        max_sratio: 0.0,
        max_uratio: 0.0,
        max_oratio: 0.0,
    };
    let mut seen = 0usize;
    for p in dev {
        let (Some(s), Some(g), Some(b)) = (mono_ratios(&p.src, marker), mono_ratios(&p.tgt, marker), bi_ratios(p, marker))
        else {
            continue;
        };
        seen += 1;
        for m in [s, g] {
            t.max_cratio = t.max_cratio.max(m.cratio);
            t.max_bratio = t.max_bratio.max(m.bratio);
            t.max_sratio = t.max_sratio.max(m.sratio);
        }
        t.max_uratio = t.max_uratio.max(b.uratio);
        t.max_oratio = t.max_oratio.max(b.oratio);
    }
    if seen == 0 {
        return Err(CorpusError::Invalid("development set has no usable pairs".into()));
    }
    Ok(t)
}

/// Keeps a pair iff all five ratios are within their thresholds on both sides.
pub fn clean_by_ratios(pairs: &[SentencePair], t: &RatioThresholds, marker: &str) -> Result<Vec<SentencePair>> {
    t.validate()?;
    Ok(pairs.iter().filter(|p| t.admits(p, marker)).cloned().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pair::tokenize;

    fn p(s: &str, t: &str) -> SentencePair {
        SentencePair::from_lines(s, t)
    }

    #[test]
    fn max_keeper_keeps_most_frequent() {
        let out = max_keeper(&[p("a", "x"), p("a", "x"), p("a", "y")]);
        assert_eq!(out, vec![p("a", "x")]);
    }

    #[test]
    fn max_keeper_tie_goes_to_first_seen() {
        let out = max_keeper(&[p("a", "y"), p("b", "z"), p("a", "x")]);
        assert_eq!(out, vec![p("a", "y"), p("b", "z")]);
    }

    #[test]
    fn max_keeper_unique_unchanged() {
        let input = vec![p("c", "1"), p("a", "2"), p("b", "3")];
        assert_eq!(max_keeper(&input), input);
    }

    #[test]
    fn max_keeper_merges_after_normalization() {
        let out = max_keeper(&[p("the\t\tcat", "x"), p("the cat", "y"), p("the  cat", "y")]);
        assert_eq!(out, vec![p("the cat", "y")]);
    }

    #[test]
    fn vocab_cleaning_hand_fixture() {
        // source side: 10 types; r1 and r2 are the two least frequent
        let common = "a b c d e f g h";
        let mut pairs: Vec<SentencePair> = (0..4).map(|_| p(common, "k")).collect();
        pairs.push(p("r1 r2 r1 r2 r1", "k"));
        let out = clean_by_vocab(&pairs, 0.2).unwrap();
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|q| q.src_line() == common));
    }

    #[test]
    fn vocab_cleaning_keeps_sentences_without_rare_tokens() {
        let pairs = vec![p("a a b", "x x"), p("a b", "x")];
        assert_eq!(clean_by_vocab(&pairs, 0.2).unwrap(), pairs);
        assert!(clean_by_vocab(&pairs, 1.0).is_err());
        assert!(clean_by_vocab(&[], 0.2).unwrap().is_empty());
    }

    #[test]
    fn mono_ratio_examples() {
        let r = mono_ratios(&tokenize("the un@@ believ@@ able cat"), "@@").unwrap();
        assert_eq!(r, MonoRatios { cratio: 0.4, bratio: 5.0 / 3.0, sratio: 1.0 / 3.0 });
        let r = mono_ratios(&tokenize("plain words only"), "@@").unwrap();
        assert_eq!(r, MonoRatios { cratio: 0.0, bratio: 1.0, sratio: 0.0 });
        let r = mono_ratios(&tokenize("a@@ b c@@ d e@@ f"), "@@").unwrap();
        assert_eq!(r, MonoRatios { cratio: 0.5, bratio: 2.0, sratio: 1.0 });
        assert!(mono_ratios(&[], "@@").is_none());
    }

    #[test]
    fn bi_ratio_examples() {
        let q = p("a b c", "x y z");
        assert_eq!(bi_ratios(&q, "@@").unwrap(), BiRatios { uratio: 1.0, oratio: 1.0 });
        // 8 words / 10 subwords against 4 words / 5 subwords
        let q = p("a b c d e f g h@@ i@@ j", "w x y z@@ q");
        let r = bi_ratios(&q, "@@").unwrap();
        assert_eq!((r.uratio, r.oratio), (2.0, 2.0));
        let swapped = SentencePair::new(q.tgt.clone(), q.src.clone());
        assert_eq!(bi_ratios(&swapped, "@@").unwrap(), r);
        assert!(bi_ratios(&p("a", ""), "@@").is_none());
    }

    #[test]
    fn thresholds_from_dev() {
        let same = vec![p("a b", "c d"), p("a b", "c d")];
        let t = estimate_thresholds(&same, "@@").unwrap();
        assert_eq!(
            t,
            RatioThresholds { max_cratio: 0.0, max_bratio: 1.0, max_sratio: 0.0, max_uratio: 1.0, max_oratio: 1.0 }
        );
        let one = vec![p("the un@@ believ@@ able cat", "the un@@ believ@@ able cat")];
        assert_eq!(estimate_thresholds(&one, "@@").unwrap().max_cratio, 0.4);
        assert!(estimate_thresholds(&[], "@@").is_err());
    }

    #[test]
    fn ratio_cleaning_removes_outlier() {
        let t = RatioThresholds { max_cratio: 1.0, max_bratio: 10.0, max_sratio: 1.0, max_uratio: 2.0, max_oratio: 10.0 };
        let pairs = vec![p("a b c", "x"), p("a b", "x")];
        assert_eq!(clean_by_ratios(&pairs, &t, "@@").unwrap(), vec![p("a b", "x")]);
        let bad = RatioThresholds { max_uratio: 0.5, ..t };
        assert!(clean_by_ratios(&pairs, &bad, "@@").is_err());
    }
}
