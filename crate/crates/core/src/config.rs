//! Model and training hyperparameters.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::types::ChainOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScoreVariant {
    /// Negative Euclidean distance.
    E,
    /// Cosine similarity.
    C,
    /// Negative Manhattan distance.
    M,
    /// Linear transformation score.
    L,
}

impl ScoreVariant {
    pub const ALL: [ScoreVariant; 4] = [ScoreVariant::E, ScoreVariant::C, ScoreVariant::M, ScoreVariant::L];

    pub fn label(self) -> &'static str {
        match self {
            ScoreVariant::E => "E-Score",
            ScoreVariant::C => "C-Score",
            ScoreVariant::M => "M-Score",
            ScoreVariant::L => "L-Score",
        }
    }
}

impl FromStr for ScoreVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "E" => Ok(ScoreVariant::E),
            "C" => Ok(ScoreVariant::C),
            "M" => Ok(ScoreVariant::M),
            "L" => Ok(ScoreVariant::L),
            other => Err(Error::Config(format!("unknown score variant {other:?} (expected E|C|M|L)"))),
        }
    }
}

impl fmt::Display for ScoreVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScoreVariant::E => "E",
            ScoreVariant::C => "C",
            ScoreVariant::M => "M",
            ScoreVariant::L => "L",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttentionVariant {
    ScaledDot,
    Dot,
    Additive,
    Avg,
}

impl AttentionVariant {
    pub const ALL: [AttentionVariant; 4] =
        [AttentionVariant::ScaledDot, AttentionVariant::Dot, AttentionVariant::Additive, AttentionVariant::Avg];

    pub fn as_str(self) -> &'static str {
        match self {
            AttentionVariant::ScaledDot => "scaled_dot",
            AttentionVariant::Dot => "dot",
            AttentionVariant::Additive => "additive",
            AttentionVariant::Avg => "avg",
        }
    }
}

impl FromStr for AttentionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scaled_dot" => Ok(AttentionVariant::ScaledDot),
            "dot" => Ok(AttentionVariant::Dot),
            "additive" => Ok(AttentionVariant::Additive),
            "avg" => Ok(AttentionVariant::Avg),
            other => Err(Error::Config(format!(
                "unknown attention variant {other:?} (expected scaled_dot|dot|additive|avg)"
            ))),
        }
    }
}

impl fmt::Display for AttentionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Events per chain after padding.
    pub n: usize,
    /// Candidates per sample.
    pub m: usize,
    pub d_w: usize,
    pub d_e: usize,
    pub chain_layers: usize,
    pub chain_ffn: usize,
    pub chain_heads: usize,
    pub text_layers: usize,
    pub text_heads: usize,
    pub text_ffn: usize,
    pub max_text_len: usize,
    pub dropout: f64,
    pub score_variant: ScoreVariant,
    pub attention_variant: AttentionVariant,
    pub multi_chain: bool,
    pub use_text: bool,
    /// Attention-mask null padding events inside the chain Transformer.
    pub mask_null_events: bool,
    /// Drop null padding positions from the chain-level aggregation.
    pub exclude_null_positions: bool,
    /// Score null candidate slots against an all-null chain.
    pub include_null_slots: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n: 8,
            m: 5,
            d_w: 300,
            d_e: 128,
            chain_layers: 2,
            chain_ffn: 1024,
            chain_heads: 2,
            text_layers: 2,
            text_heads: 2,
            text_ffn: 512,
            max_text_len: 64,
            dropout: 0.1,
            score_variant: ScoreVariant::E,
            attention_variant: AttentionVariant::ScaledDot,
            multi_chain: true,
            use_text: true,
            mask_null_events: false,
            exclude_null_positions: false,
            include_null_slots: false,
        }
    }
}

impl ModelConfig {
    /// Desk-scale shape used for the synthetic benchmarks.
    pub fn small() -> Self {
        ModelConfig {
            d_w: 24,
            d_e: 24,
            chain_layers: 1,
            chain_ffn: 48,
            chain_heads: 2,
            text_layers: 1,
            text_heads: 2,
            text_ffn: 48,
            max_text_len: 16,
            dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    /// Smallest shape that still exercises every component; used for
    /// finite-difference checks.
    pub fn tiny() -> Self {
        ModelConfig {
            n: 4,
            d_w: 8,
            d_e: 8,
            chain_layers: 1,
            chain_ffn: 16,
            chain_heads: 2,
            text_layers: 1,
            text_heads: 2,
            text_ffn: 16,
            max_text_len: 12,
            dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    pub fn chain_options(&self) -> ChainOptions {
        ChainOptions { n: self.n, multi_chain: self.multi_chain, include_null_slots: self.include_null_slots }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n == 0 || self.m < 2 || self.d_w == 0 || self.d_e == 0 {
            return fail("n, d_w, d_e must be positive and m >= 2".into());
        }
        if self.chain_heads == 0 || !self.d_e.is_multiple_of(self.chain_heads) {
            return fail(format!("d_e={} not divisible by chain_heads={}", self.d_e, self.chain_heads));
        }
        if self.text_heads == 0 || !self.d_e.is_multiple_of(self.text_heads) {
            return fail(format!("d_e={} not divisible by text_heads={}", self.d_e, self.text_heads));
        }
        if self.chain_ffn == 0 || self.text_ffn == 0 {
            return fail("feed-forward widths must be positive".into());
        }
        if self.max_text_len < 2 {
            return fail("max_text_len must be >= 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_main: f64,
    /// Step size for the text encoder parameters.
    pub lr_text: f64,
    /// L2 factor.
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Stop once an epoch ends with this dev accuracy (or better).
    pub target_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 100,
            lr_main: 1e-4,
            lr_text: 1e-5,
            lambda: 1e-6,
            epochs: 10,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            target_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        for (name, v) in [("lr_main", self.lr_main), ("lr_text", self.lr_text), ("eps", self.eps)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_published_settings() {
        let m = ModelConfig::default();
        assert_eq!((m.n, m.d_w, m.d_e, m.chain_layers, m.chain_ffn), (8, 300, 128, 2, 1024));
        assert_eq!(m.dropout, 0.1);
        assert_eq!(m.m, 5);
        let t = TrainConfig::default();
        assert_eq!((t.batch_size, t.lr_main, t.lr_text, t.lambda), (100, 1e-4, 1e-5, 1e-6));
        m.validate().unwrap();
        t.validate().unwrap();
        ModelConfig::small().validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
    }

    #[test]
    fn heads_must_divide_width() {
        let m = ModelConfig { chain_heads: 3, ..ModelConfig::default() };
        assert!(m.validate().is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in ScoreVariant::ALL {
            assert_eq!(v.to_string().parse::<ScoreVariant>().unwrap(), v);
        }
        for v in AttentionVariant::ALL {
            assert_eq!(v.to_string().parse::<AttentionVariant>().unwrap(), v);
        }
        assert!("X".parse::<ScoreVariant>().is_err());
    }
}
