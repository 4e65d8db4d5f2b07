//! Command surface of the NQT question-answering pipeline.

pub mod commands;
pub mod config;
pub mod pipeline;
