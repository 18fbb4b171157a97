//! Paired-perplexity toolkit: score text with an intact GPT-2 and with a
//! deliberately degraded copy of it (GPT-D), and use the ratio of the two
//! perplexities as a feature for classification, generation and saliency
//! studies.

pub mod corpus;
pub mod engine;
pub mod error;
pub mod evalkit;
pub mod scoring;
pub mod surgery;
pub mod tensor;
pub mod textlab;
pub mod tokenizer;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
