//! Greedy, beam and ensemble decoding, the forward-only decoding path, and corpus ranking.

mod rank;
mod scorer;
mod search;

pub use rank::{rank_corpus, write_ranking};
pub use scorer::{blocked_mask, Ensemble, Forward, Incremental, ScoreState, Scorer};
pub use search::{beam_search, decode_best, greedy_search, length_penalty, rank_order, BeamConfig, Hypothesis};

use nmt_tensor::Scalar;

use crate::error::Result;
use crate::model::Model;

/// Greedy translation through the cached incremental decoder.
pub fn greedy_decode<T: Scalar>(model: &Model<T>, src: &[u32], max_len: usize, forbidden: &[u32]) -> Result<Vec<u32>> {
    Ok(greedy_search(&Incremental(model), src, max_len, forbidden)?.tokens)
}

/// Ranked beam hypotheses through the cached incremental decoder.
pub fn beam_decode<T: Scalar>(model: &Model<T>, src: &[u32], cfg: &BeamConfig) -> Result<Vec<Hypothesis>> {
    beam_search(&Incremental(model), src, cfg)
}

/// Ranked beam hypotheses under the averaged distribution of `models`.
pub fn ensemble_decode<T: Scalar>(models: &[Model<T>], src: &[u32], cfg: &BeamConfig) -> Result<Vec<Hypothesis>> {
    beam_search(&Ensemble::of_models(models)?, src, cfg)
}

/// Best translation computed only from the training forward pass: greedy
/// for a beam of one, beam search otherwise.
pub fn train_decode<T: Scalar>(model: &Model<T>, src: &[u32], cfg: &BeamConfig) -> Result<Vec<u32>> {
    Ok(decode_best(&Forward(model), src, cfg)?.tokens)
}
