use serde::{Deserialize, Serialize};

use crate::config::ConfigMap;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Standard,
    AvgAttn,
    Transparent,
    Hierarchical,
    RnmtDec,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Standard,
        Variant::AvgAttn,
        Variant::Transparent,
        Variant::Hierarchical,
        Variant::RnmtDec,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::AvgAttn => "avg_attn",
            Variant::Transparent => "transparent",
            Variant::Hierarchical => "hierarchical",
            Variant::RnmtDec => "rnmt_dec",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| CoreError::Config(format!("unknown variant {s}")))
    }
}

/// Architecture hyperparameters. Field names follow the configuration keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub isize: usize,
    pub nlayer: usize,
    pub ff_hsize: usize,
    pub drop: f64,
    pub nhead: usize,
    pub attn_drop: f64,
    pub attn_hsize: usize,
    pub cache_len: usize,
    /// Classifier weight is the decoder embedding table.
    pub bind_decoder_emb: bool,
    /// Encoder and decoder share one embedding table.
    pub share_emb: bool,
    pub norm_output: bool,
    pub variant: Variant,
    /// Scale of the Gaussian noise added to embedding outputs while training; 0 disables it.
    pub emb_noise: f64,
}

impl ModelConfig {
    pub fn new(src_vocab: usize, tgt_vocab: usize, isize: usize, nlayer: usize, ff_hsize: usize, nhead: usize) -> Self {
        Self {
            src_vocab,
            tgt_vocab,
            isize,
            nlayer,
            ff_hsize,
            drop: 0.0,
            nhead,
            attn_drop: 0.0,
            attn_hsize: isize,
            cache_len: 256,
            bind_decoder_emb: true,
            share_emb: false,
            norm_output: true,
            variant: Variant::Standard,
            emb_noise: 0.0,
        }
    }

    /// Reads model keys from `cfg`; vocabulary sizes come from the dataset.
    pub fn from_config(cfg: &mut ConfigMap, src_vocab: usize, tgt_vocab: usize) -> Result<Self> {
        let isize = cfg.usize_or("isize", 512)?;
        let variant = Variant::parse(&cfg.string_or("variant", "standard")?)?;
        let c = Self {
            src_vocab,
            tgt_vocab,
            isize,
            nlayer: cfg.usize_or("nlayer", 6)?,
            ff_hsize: cfg.usize_or("ff_hsize", 2048)?,
            drop: cfg.f64_or("drop", 0.1)?,
            nhead: cfg.usize_or("nhead", 8)?,
            attn_drop: cfg.f64_or("attn_drop", 0.1)?,
            attn_hsize: cfg.usize_or("attn_hsize", isize)?,
            cache_len: cfg.usize_or("cache_len", 256)?,
            bind_decoder_emb: cfg.bool_or("bindDecoderEmb", true)?,
            share_emb: cfg.bool_or("share_emb", false)?,
            norm_output: cfg.bool_or("norm_output", variant != Variant::Hierarchical)?,
            variant,
            emb_noise: cfg.f64_or("emb_noise", 0.0)?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        if variant == Variant::Hierarchical {
            self.norm_output = false;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.isize == 0 || self.isize % 2 != 0 {
            return bad(format!("isize {} must be positive and even", self.isize));
        }
        if self.nlayer == 0 || self.ff_hsize == 0 || self.nhead == 0 || self.cache_len == 0 {
            return bad("nlayer, ff_hsize, nhead and cache_len must be positive".into());
        }
        if self.attn_hsize == 0 || self.attn_hsize % self.nhead != 0 {
            return bad(format!("attn_hsize {} not divisible by nhead {}", self.attn_hsize, self.nhead));
        }
        for (k, p) in [("drop", self.drop), ("attn_drop", self.attn_drop)] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{k} {p} not in [0, 1)"));
            }
        }
        if self.emb_noise < 0.0 {
            return bad("emb_noise must be nonnegative".into());
        }
        if self.src_vocab < nmt_corpus::SPECIALS.len() || self.tgt_vocab < nmt_corpus::SPECIALS.len() {
            return bad("vocabularies must hold at least the special tokens".into());
        }
        if self.share_emb && self.src_vocab != self.tgt_vocab {
            return bad("share_emb needs a shared vocabulary".into());
        }
        if self.variant == Variant::Hierarchical && self.norm_output {
            return bad("the hierarchical variant requires norm_output = false".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.attn_hsize / self.nhead
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_keys_and_validates() {
        let mut m = ConfigMap::parse("isize = 16\nnhead = 4\nvariant = hierarchical\nbindDecoderEmb = false").unwrap();
        let c = ModelConfig::from_config(&mut m, 20, 20).unwrap();
        assert_eq!(c.attn_hsize, 16);
        assert!(!c.norm_output && !c.bind_decoder_emb);
        assert_eq!(c.variant, Variant::Hierarchical);

        let mut m = ConfigMap::parse("isize = 16\nnhead = 3").unwrap();
        assert!(ModelConfig::from_config(&mut m, 20, 20).is_err());
        let mut m = ConfigMap::parse("isize = 16\nnhead = 4\nvariant = hierarchical\nnorm_output = true").unwrap();
        assert!(ModelConfig::from_config(&mut m, 20, 20).is_err());
        let mut m = ConfigMap::parse("isize = 16\nnhead = 4\nshare_emb = true").unwrap();
        assert!(ModelConfig::from_config(&mut m, 20, 21).is_err());
    }
}
