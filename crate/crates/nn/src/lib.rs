//! Desk-scale neural translation from questions to query templates: a
//! reverse-mode `f64` tensor kernel, embeddings, four encoders, an LSTM
//! decoder with three cross-attention variants, training and decoding.

pub mod config;
pub mod embeddings;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod model;
pub mod params;
pub mod tensor;

pub use config::{AttentionKind, ConfigError, EncoderKind, ModelConfig, TrainConfig};
pub use embeddings::{Pretrained, Vocab};
pub use graph::{Graph, NodeId};
pub use model::{AttentionTrace, Decoded, EpochStats, Model, ModelError, TrainReport};
pub use params::{ParamId, ParamStore};
pub use tensor::{Tensor, TensorError};
