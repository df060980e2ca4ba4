//! Parallel-corpus preparation: cleaning, vocabularies, length-sorted token
//! batches and the `NTRN` binary dataset format.

mod batch;
mod clean;
mod dataset;
mod error;
mod forbidden;
mod pair;
mod schedule;
mod vocab;

pub use batch::{sort_and_batch, BatchUnit, EncodedPair};
pub use clean::{
    bi_ratios, clean_by_ratios, clean_by_vocab, estimate_thresholds, max_keeper, mono_ratios, BiRatios, MonoRatios,
    RatioThresholds, SideCounts,
};
pub use dataset::{read_dataset, write_dataset, DatasetFile, DatasetHeader, DatasetReader};
pub use error::{CorpusError, Result};
pub use forbidden::{collect_forbidden_indexes, forbidden_config_line};
pub use pair::{normalize_whitespace, read_parallel, tokenize, words, write_parallel, SentencePair, DEFAULT_MARKER};
pub use schedule::epoch_order;
pub use vocab::{build_vocab, Vocab, EOS, PAD, SOS, SPECIALS, UNK};
