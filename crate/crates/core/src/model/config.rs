use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where audio enters the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fusion {
    /// Projected track embedding concatenated with every word embedding at the encoder input.
    Early,
    /// Text-only encoder; projected track embedding joins the encoder state at the decoder input.
    Late,
    /// Text-only encoder; an attended mix of chunk features joins the encoder state at the decoder input.
    Attention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractorKind {
    /// Precomputed chunk features read from disk; frozen.
    FrozenFile,
    /// Convolutional frontend over raw frames, trained with the rest of the model.
    Trainable,
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fusion::Early => "early",
            Fusion::Late => "late",
            Fusion::Attention => "attention",
        })
    }
}

impl FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "early" => Ok(Fusion::Early),
            "late" => Ok(Fusion::Late),
            "attention" => Ok(Fusion::Attention),
            other => Err(Error::Argument(format!("unknown fusion mode `{other}`"))),
        }
    }
}

impl fmt::Display for ExtractorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExtractorKind::FrozenFile => "frozen-file",
            ExtractorKind::Trainable => "trainable",
        })
    }
}

impl FromStr for ExtractorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frozen-file" => Ok(ExtractorKind::FrozenFile),
            "trainable" => Ok(ExtractorKind::Trainable),
            other => Err(Error::Argument(format!("unknown extractor `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub fusion: Fusion,
    pub extractor: ExtractorKind,
    pub hidden_enc: usize,
    pub hidden_dec: usize,
    /// Word embedding width `d`.
    pub embed_dim: usize,
    /// Chunk feature width `k`.
    pub feature_dim: usize,
    /// Raw frame width `F`; only used by the trainable extractor.
    pub frame_dim: usize,
    pub vocab_size: usize,
    /// Maximum number of content tokens in a caption.
    pub max_len: usize,
    pub dropout: f64,
}

impl ModelConfig {
    /// Full-size widths: 256 hidden units, 300-d embeddings, 22 tokens.
    pub fn full_size(fusion: Fusion, feature_dim: usize, vocab_size: usize) -> Self {
        Self {
            fusion,
            extractor: ExtractorKind::FrozenFile,
            hidden_enc: 256,
            hidden_dec: 256,
            embed_dim: 300,
            feature_dim,
            frame_dim: 0,
            vocab_size,
            max_len: 22,
            dropout: 0.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden_enc", self.hidden_enc),
            ("hidden_dec", self.hidden_dec),
            ("embed_dim", self.embed_dim),
            ("feature_dim", self.feature_dim),
            ("max_len", self.max_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.vocab_size <= crate::text::SPECIAL_TOKENS.len() {
            return Err(Error::Config(format!(
                "vocabulary of {} leaves no room for words",
                self.vocab_size
            )));
        }
        if self.extractor == ExtractorKind::Trainable && self.frame_dim == 0 {
            return Err(Error::Config("trainable extractor needs frame_dim".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn encoder_input_dim(&self) -> usize {
        match self.fusion {
            Fusion::Early => 2 * self.embed_dim,
            Fusion::Late | Fusion::Attention => self.embed_dim,
        }
    }

    pub fn decoder_input_dim(&self) -> usize {
        match self.fusion {
            Fusion::Early => self.hidden_enc,
            Fusion::Late => 2 * self.hidden_enc,
            Fusion::Attention => self.feature_dim + self.hidden_enc,
        }
    }
}
