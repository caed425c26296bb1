//! Lexical overlap scores and the client for model-based metrics.

pub mod external;
pub mod rouge;

pub use external::{ExternalScore, ExternalScoreRequest, ExternalScorer, MetricsError, MockScorer, BERTSCORE_P, FACTKB};
pub use rouge::{lcs_len, rouge_l, rouge_n, score_texts, tokenize_for_rouge, Prf, RougeScore};
