//! Model and training hyperparameters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EncoderKind {
    BiLstm,
    ConvS2S,
    Transformer,
    Mhc,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 4] = [EncoderKind::BiLstm, EncoderKind::ConvS2S, EncoderKind::Transformer, EncoderKind::Mhc];

    /// Whether positional embeddings are added to the encoder input.
    pub fn uses_positions(self) -> bool {
        matches!(self, EncoderKind::ConvS2S | EncoderKind::Transformer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttentionKind {
    Ma,
    Msa,
    Mha,
}

impl AttentionKind {
    pub const ALL: [AttentionKind; 3] = [AttentionKind::Ma, AttentionKind::Msa, AttentionKind::Mha];
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::BiLstm => "bilstm",
            EncoderKind::ConvS2S => "convs2s",
            EncoderKind::Transformer => "transformer",
            EncoderKind::Mhc => "mhc",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bilstm" => Ok(EncoderKind::BiLstm),
            "convs2s" => Ok(EncoderKind::ConvS2S),
            "transformer" => Ok(EncoderKind::Transformer),
            "mhc" => Ok(EncoderKind::Mhc),
            _ => Err(ConfigError::Unknown("encoder", s.to_string())),
        }
    }
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionKind::Ma => "ma",
            AttentionKind::Msa => "msa",
            AttentionKind::Mha => "mha",
        })
    }
}

impl FromStr for AttentionKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ma" => Ok(AttentionKind::Ma),
            "msa" => Ok(AttentionKind::Msa),
            "mha" => Ok(AttentionKind::Mha),
            _ => Err(ConfigError::Unknown("attention", s.to_string())),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("unknown {0} kind `{1}`")]
    Unknown(&'static str, String),
    #[error("d_model {d_model} is not divisible by {heads} heads")]
    Heads { d_model: usize, heads: usize },
    #[error("kernel width {0} must be odd")]
    EvenKernel(usize),
    #[error("{0} must be at least 1")]
    Zero(&'static str),
    #[error("dropout {0} outside [0, 1)")]
    Dropout(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    pub attention: AttentionKind,
    pub n_layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub kernel: usize,
    pub max_target_len: usize,
    pub max_source_len: usize,
    pub max_segments: usize,
    /// Scale multi-head scores by `1/√(d/h)`.
    pub scale_attention: bool,
    /// Feedforward width of Transformer blocks.
    pub d_ff: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderKind::Mhc,
            attention: AttentionKind::Mha,
            n_layers: 2,
            d_model: 64,
            heads: 4,
            kernel: 3,
            max_target_len: 40,
            max_source_len: 64,
            max_segments: 8,
            scale_attention: true,
            d_ff: 128,
            dropout: 0.0,
            seed: 7,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("max_target_len", self.max_target_len),
            ("max_source_len", self.max_source_len),
            ("d_ff", self.d_ff),
        ] {
            if v == 0 {
                return Err(ConfigError::Zero(name));
            }
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(ConfigError::Heads {
                d_model: self.d_model,
                heads: self.heads,
            });
        }
        if self.kernel.is_multiple_of(2) {
            return Err(ConfigError::EvenKernel(self.kernel));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ConfigError::Dropout(self.dropout.to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 30,
            clip_norm: 5.0,
            seed: 7,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = ModelConfig {
            d_model: 10,
            heads: 4,
            ..Default::default()
        };
        assert_eq!(bad.validate(), Err(ConfigError::Heads { d_model: 10, heads: 4 }));
        let bad = ModelConfig {
            kernel: 4,
            ..Default::default()
        };
        assert_eq!(bad.validate(), Err(ConfigError::EvenKernel(4)));
        let bad = ModelConfig {
            n_layers: 0,
            ..Default::default()
        };
        assert_eq!(bad.validate(), Err(ConfigError::Zero("n_layers")));
    }

    #[test]
    fn kinds_parse() {
        for k in EncoderKind::ALL {
            assert_eq!(k.to_string().parse::<EncoderKind>().unwrap(), k);
        }
        for k in AttentionKind::ALL {
            assert_eq!(k.to_string().parse::<AttentionKind>().unwrap(), k);
        }
        assert!("MHC".parse::<EncoderKind>().is_ok());
        assert!("rnn".parse::<EncoderKind>().is_err());
    }
}
