//! Context-aware decoding: sampling from
//! `softmax((1 + α) · logit(y | c, x) − α · logit(y | x))`, next to the
//! pieces needed to benchmark it: model adapters, a seeded sampler, ROUGE,
//! an inference cost model, prompt templates and a sweep runner.

pub mod cad;
pub mod engine;
pub mod flops;
pub mod harness;
mod http;
pub mod lm;
pub mod metrics;
pub mod sampler;

pub use cad::{cad_dist, combine_logits, pmi, softmax_with_temperature, CadError, CadParams, ProbDist};
pub use engine::{decode, DecodeError, DecodeRequest, DecodingMethod, ExecutionMode, GenerationRecord, RecordMode};
pub use http::ServerHandle;
pub use lm::{LanguageModel, LmError, LogitVector, ModelConfig, ModelFamily, TokenId, Vocabulary};
pub use sampler::{SamplerRng, SamplingConfig, SamplingStrategy};
