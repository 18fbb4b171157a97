//! Qualitative probes of a model pair: generated continuations, lexical
//! statistics of generated text, and token saliency.

pub mod generate;
pub mod lexical;
pub mod saliency;

pub use generate::{
    beam_search, generate, paired_generate, render_generations, sample, sample_seeded, GenConfig,
    Hypothesis, PairedGeneration,
};
pub use lexical::{lexical_stats, word_tokenize, FrequencyTable, LexConfig, LexReport, ModelLex, Welch};
pub use saliency::{aligned_saliency, saliency, saliency_text, Alignment, SaliencyMap};
