use std::collections::BTreeSet;

use crate::vocab::{Vocab, EOS, PAD, SOS, UNK};

/// Indexes of vocabulary entries that never occur on the target side.
/// `<pad>` and `<sos>` are always included; `<eos>` and `<unk>` never are.
pub fn collect_forbidden_indexes<'a>(targets: impl IntoIterator<Item = &'a [String]>, vocab: &Vocab) -> Vec<u32> {
    let mut seen = vec![false; vocab.len()];
    for s in targets {
        for t in s {
            if let Some(i) = vocab.get(t) {
                seen[i as usize] = true;
            }
        }
    }
    let mut out: BTreeSet<u32> = [PAD, SOS].into_iter().collect();
    for (i, &s) in seen.iter().enumerate() {
        let i = i as u32;
        if !s && i != EOS && i != UNK {
            out.insert(i);
        }
    }
    out.into_iter().collect()
}

/// Renders the list as a config fragment: `forbidden_indexes = [0, 1, 17]`.
pub fn forbidden_config_line(indexes: &[u32]) -> String {
    let items: Vec<String> = indexes.iter().map(u32::to_string).collect();
    format!("forbidden_indexes = [{}]\n", items.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pair::SentencePair;
    use crate::vocab::build_vocab;

    #[test]
    fn all_present_gives_default() {
        let pairs = [SentencePair::from_lines("a b", "a b")];
        let (v, _) = build_vocab(&pairs, 1, true);
        let tg: Vec<&[String]> = pairs.iter().map(|p| p.tgt.as_slice()).collect();
        assert_eq!(collect_forbidden_indexes(tg, &v), vec![0, 1]);
    }

    #[test]
    fn source_only_token_is_forbidden() {
        let pairs = [SentencePair::from_lines("a q", "a"), SentencePair::from_lines("z", "z a")];
        let (v, _) = build_vocab(&pairs, 1, true);
        let q = v.get("q").unwrap();
        let out = collect_forbidden_indexes(pairs.iter().map(|p| p.tgt.as_slice()), &v);
        assert_eq!(out, vec![0, 1, q]);
        assert!(out.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(forbidden_config_line(&out), format!("forbidden_indexes = [0, 1, {q}]\n"));
    }
}
