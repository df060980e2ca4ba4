#![no_main]

use libfuzzer_sys::fuzz_target;
use nmt_corpus::{bi_ratios, mono_ratios, tokenize, SentencePair, DEFAULT_MARKER};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let (src, tgt) = text.split_once('\t').unwrap_or((text, text));
        let (s, t) = (tokenize(src), tokenize(tgt));
        let _ = mono_ratios(&s, DEFAULT_MARKER);
        let _ = bi_ratios(&SentencePair::new(s, t), DEFAULT_MARKER);
    }
});
