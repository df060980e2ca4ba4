use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{CorpusError, Result};
use crate::pair::SentencePair;

pub const PAD: u32 = 0;
pub const SOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<sos>", "<eos>", "<unk>"];

/// Token/index mapping. Indexes 0..4 are the specials; the rest follow
/// descending corpus frequency with lexicographic tie-breaks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    freq: HashMap<String, u64>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::from_tokens(Vec::new(), HashMap::new())
    }
}

impl Vocab {
    fn from_tokens(regular: Vec<String>, freq: HashMap<String, u64>) -> Self {
        let tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).chain(regular).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index, freq }
    }

    /// Counts tokens over `sentences`; tokens seen fewer than `min_freq`
    /// times are left out and will encode as `<unk>`.
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a [String]>, min_freq: u64) -> Self {
        let mut freq: HashMap<String, u64> = HashMap::new();
        for s in sentences {
            for t in s {
                if SPECIALS.contains(&t.as_str()) {
                    continue;
                }
                *freq.entry(t.clone()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&String, &u64)> = freq.iter().filter(|(_, &c)| c >= min_freq).collect();
        ranked.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        let regular = ranked.into_iter().map(|(t, _)| t.clone()).collect();
        Self::from_tokens(regular, freq)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn frequency(&self, token: &str) -> u64 {
        self.freq.get(token).copied().unwrap_or(0)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.get(t).unwrap_or(UNK)).collect()
    }

    pub fn encode_str(&self, line: &str) -> Vec<u32> {
        line.split_whitespace().map(|t| self.get(t).unwrap_or(UNK)).collect()
    }

    /// Maps ids back to tokens, stopping at `<eos>` and skipping `<pad>`/`<sos>`.
    pub fn decode(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != PAD && i != SOS)
            .map(|&i| self.token(i).unwrap_or(SPECIALS[UNK as usize]))
            .collect()
    }

    /// One `token<TAB>index` line per entry, specials first.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            s.push_str(t);
            s.push('\t');
            s.push_str(&i.to_string());
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let (tok, idx) = line
                .split_once('\t')
                .ok_or_else(|| CorpusError::Format(format!("vocab line {}: missing tab", line_no + 1)))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| CorpusError::Format(format!("vocab line {}: bad index {idx:?}", line_no + 1)))?;
            if idx != line_no {
                return Err(CorpusError::Format(format!(
                    "vocab line {}: index {idx} out of order",
                    line_no + 1
                )));
            }
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(CorpusError::Format(format!("vocab line {}: invalid token", line_no + 1)));
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() < SPECIALS.len() || tokens[..4].iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err(CorpusError::Format("vocab must start with <pad> <sos> <eos> <unk>".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = tokens.iter().find(|t| !seen.insert(t.as_str())) {
            return Err(CorpusError::Format(format!("duplicate vocab token {dup:?}")));
        }
        Ok(Self::from_tokens(tokens.split_off(4), HashMap::new()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// Source and target vocabularies, or one shared vocabulary over both sides.
pub fn build_vocab(pairs: &[SentencePair], min_freq: u64, shared: bool) -> (Vocab, Vocab) {
    if shared {
        let v = Vocab::build(
            pairs.iter().map(|p| p.src.as_slice()).chain(pairs.iter().map(|p| p.tgt.as_slice())),
            min_freq,
        );
        (v.clone(), v)
    } else {
        (
            Vocab::build(pairs.iter().map(|p| p.src.as_slice()), min_freq),
            Vocab::build(pairs.iter().map(|p| p.tgt.as_slice()), min_freq),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_corpus_has_only_specials() {
        let (s, t) = build_vocab(&[], 1, false);
        assert_eq!(s.len(), 4);
        assert_eq!(t.tokens(), &SPECIALS.map(String::from));
    }

    #[test]
    fn frequency_then_lexicographic() {
        let pairs = [SentencePair::from_lines("a a b", "x")];
        let (s, _) = build_vocab(&pairs, 1, false);
        assert_eq!(s.get("a"), Some(4));
        assert_eq!(s.get("b"), Some(5));
        let pairs = [SentencePair::from_lines("c b a", "x")];
        let (s, _) = build_vocab(&pairs, 1, false);
        assert_eq!(&s.tokens()[4..], &["a", "b", "c"]);
    }

    #[test]
    fn min_freq_maps_to_unk() {
        let pairs = [SentencePair::from_lines("a a b", "x")];
        let (s, _) = build_vocab(&pairs, 2, false);
        assert_eq!(s.len(), 5);
        assert_eq!(s.encode_str("a b"), vec![4, UNK]);
    }

    #[test]
    fn shared_vocab_union_bound() {
        let pairs = [SentencePair::from_lines("a b c", "c d"), SentencePair::from_lines("a", "e")];
        let (s, t) = build_vocab(&pairs, 1, false);
        let (sh, sh2) = build_vocab(&pairs, 1, true);
        assert_eq!(sh, sh2);
        assert!(sh.len() <= s.len() + t.len() - 4);
    }

    #[test]
    fn text_roundtrip_and_errors() {
        let pairs = [SentencePair::from_lines("a a b", "x")];
        let (s, _) = build_vocab(&pairs, 1, false);
        let text = s.to_text();
        assert!(text.starts_with("<pad>\t0\n<sos>\t1\n<eos>\t2\n<unk>\t3\n"));
        let back = Vocab::parse(&text).unwrap();
        assert_eq!(back.tokens(), s.tokens());
        assert!(Vocab::parse("<pad>\t0\n").is_err());
        assert!(Vocab::parse("<pad>\t0\n<sos>\t1\n<eos>\t2\n<unk>\t3\na\t5\n").is_err());
        assert!(Vocab::parse("<pad>\t0\n<sos>\t1\n<eos>\t2\n<unk>\t3\na\t4\na\t5\n").is_err());
    }

    #[test]
    fn decode_stops_at_eos() {
        let pairs = [SentencePair::from_lines("a b", "x")];
        let (s, _) = build_vocab(&pairs, 1, false);
        assert_eq!(s.decode(&[SOS, 4, 5, EOS, 4]), vec!["a", "b"]);
    }
}
