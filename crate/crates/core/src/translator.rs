//! Text-in, text-out translation over one model or an ensemble.

use std::path::Path;

use nmt_corpus::Vocab;

use crate::decode::{decode_best, BeamConfig, Ensemble};
use crate::error::{CoreError, Result};
use crate::model::Model;
use crate::train::Checkpoint;

/// Loaded models plus the vocabularies that map text to ids and back.
pub struct Translator {
    models: Vec<Model<f32>>,
    src_vocab: Vocab,
    tgt_vocab: Vocab,
    cfg: BeamConfig,
}

impl Translator {
    /// The forbidden indexes of all checkpoints are merged and masked
    /// during search.
    pub fn new(
        checkpoints: &[Checkpoint],
        src_vocab: Vocab,
        tgt_vocab: Vocab,
        beam_size: usize,
        alpha: f64,
        max_len: usize,
    ) -> Result<Self> {
        if checkpoints.is_empty() {
            return Err(CoreError::Config("at least one model is required".into()));
        }
        let mut forbidden: Vec<u32> = checkpoints
            .iter()
            .flat_map(|c| c.meta.forbidden_indexes.iter().copied())
            .collect();
        forbidden.sort_unstable();
        forbidden.dedup();
        let models = checkpoints.iter().map(Checkpoint::to_model).collect::<Result<Vec<_>>>()?;
        for m in &models {
            let c = m.config();
            if c.src_vocab != src_vocab.len() || c.tgt_vocab != tgt_vocab.len() {
                return Err(CoreError::Config(format!(
                    "model vocabularies {}/{} do not match vocabulary files {}/{}",
                    c.src_vocab,
                    c.tgt_vocab,
                    src_vocab.len(),
                    tgt_vocab.len()
                )));
            }
        }
        let cfg = BeamConfig {
            beam_size,
            alpha,
            max_len,
            forbidden,
        };
        cfg.validate()?;
        Ok(Self {
            models,
            src_vocab,
            tgt_vocab,
            cfg,
        })
    }

    pub fn load(
        model_paths: &[impl AsRef<Path>],
        src_vocab: &Path,
        tgt_vocab: &Path,
        beam_size: usize,
        alpha: f64,
        max_len: usize,
    ) -> Result<Self> {
        let cks = model_paths
            .iter()
            .map(|p| Checkpoint::load(p.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(&cks, Vocab::load(src_vocab)?, Vocab::load(tgt_vocab)?, beam_size, alpha, max_len)
    }

    pub fn config(&self) -> &BeamConfig {
        &self.cfg
    }

    pub fn num_models(&self) -> usize {
        self.models.len()
    }

    fn with_overrides(&self, beam: Option<usize>, alpha: Option<f64>) -> Result<BeamConfig> {
        let cfg = BeamConfig {
            beam_size: beam.unwrap_or(self.cfg.beam_size),
            alpha: alpha.unwrap_or(self.cfg.alpha),
            ..self.cfg.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn translate_with(&self, line: &str, cfg: &BeamConfig) -> Result<String> {
        let src = self.src_vocab.encode_str(line);
        if src.is_empty() {
            return Ok(String::new());
        }
        let scorer = Ensemble::of_models(&self.models)?;
        let best = decode_best(&scorer, &src, cfg)?;
        Ok(self.tgt_vocab.decode(&best.tokens).join(" "))
    }

    /// Translates one whitespace-tokenized line; an empty line stays empty.
    pub fn translate(&self, line: &str) -> Result<String> {
        self.translate_with(line, &self.cfg)
    }

    /// Translates `lines` on up to `threads` worker threads; output order
    /// follows input order and equals translating each line alone.
    pub fn translate_batch(
        &self,
        lines: &[String],
        beam: Option<usize>,
        alpha: Option<f64>,
        threads: usize,
    ) -> Result<Vec<String>> {
        let cfg = self.with_overrides(beam, alpha)?;
        let threads = threads.clamp(1, lines.len().max(1));
        let chunk = lines.len().div_ceil(threads).max(1);
        std::thread::scope(|s| {
            let handles: Vec<_> = lines
                .chunks(chunk)
                .map(|part| {
                    let cfg = &cfg;
                    s.spawn(move || part.iter().map(|l| self.translate_with(l, cfg)).collect::<Result<Vec<_>>>())
                })
                .collect();
            let mut out = Vec::with_capacity(lines.len());
            for h in handles {
                let part = h
                    .join()
                    .map_err(|_| CoreError::Contract("translation worker panicked".into()))??;
                out.extend(part);
            }
            Ok(out)
        })
    }
}
