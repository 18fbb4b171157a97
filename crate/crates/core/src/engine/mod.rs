//! GPT-2 decoder: checkpoint loading, the inference forward pass, and the
//! embedding gradient used for saliency.

pub mod archive;
pub mod backward;
pub mod config;
pub mod forward;
pub mod synthetic;

pub use archive::{Tensor, TensorArchive};
pub use backward::logit_gradient;
pub use config::ModelConfig;
pub use forward::{
    extend_cache, forward_logits, forward_logits_with_embedding_override, forward_logprobs,
    forward_logprobs_ids, multi_head_attention, KvCache, LogProbTrace,
};
