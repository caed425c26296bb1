//! Context-aware decoding arithmetic.
//!
//! Given the logits of one step computed with the context (`ctx`) and
//! without it (`unc`), the context-aware distribution is
//!
//! ```text
//! softmax(((1 + alpha) * ctx - alpha * unc) / tau)
//! ```
//!
//! which is the normalized form of `p_ctx * (p_ctx / p_unc)^alpha`. All
//! arithmetic stays in log space; probabilities are only materialized by the
//! final softmax. With `alpha = 0` the combination returns `ctx` unchanged
//! and the result is bit-identical to [`vanilla_dist`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lm::LogitVector;

const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum CadError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// PMI weight `alpha` and temperature `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CadParams {
    alpha: f64,
    tau: f64,
}

impl CadParams {
    pub fn new(alpha: f64, tau: f64) -> Result<Self, CadError> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(CadError::InvalidParameter(format!("alpha must be >= 0, got {alpha}")));
        }
        check_tau(tau)?;
        Ok(Self { alpha, tau })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

fn check_tau(tau: f64) -> Result<(), CadError> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(CadError::InvalidParameter(format!("tau must be > 0, got {tau}")))
    }
}

/// A normalized next-token distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    pub fn new(probs: Vec<f64>) -> Result<Self, CadError> {
        if probs.is_empty() {
            return Err(CadError::InvalidInput("empty distribution".into()));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(CadError::InvalidInput("negative or non-finite probability".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(CadError::InvalidInput(format!("probabilities sum to {total}")));
        }
        Ok(Self(probs))
    }

    /// Scales non-negative weights to sum to one.
    pub(crate) fn normalize(mut weights: Vec<f64>) -> Result<Self, CadError> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(CadError::InvalidInput(format!("cannot normalize weights summing to {total}")));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self(weights))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Half the L1 distance between two distributions of equal length.
    pub fn total_variation(&self, other: &ProbDist) -> f64 {
        0.5 * self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// `softmax(logits / tau)` with max subtraction. Entries equal to `-inf`
/// (masked tokens) receive zero mass.
pub fn softmax_with_temperature(logits: &[f64], tau: f64) -> Result<ProbDist, CadError> {
    check_tau(tau)?;
    if logits.is_empty() {
        return Err(CadError::InvalidInput("empty logit vector".into()));
    }
    if logits.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(CadError::InvalidInput("logits contain NaN or +inf".into()));
    }
    let scaled: Vec<f64> = logits.iter().map(|v| v / tau).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(CadError::InvalidInput("every token is masked".into()));
    }
    let weights: Vec<f64> = scaled.iter().map(|v| (v - max).exp()).collect();
    ProbDist::normalize(weights)
}

/// Natural-log softmax at temperature one.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - log_z).collect()
}

fn check_pair(ctx: &LogitVector, unc: &LogitVector) -> Result<(), CadError> {
    if ctx.len() != unc.len() {
        return Err(CadError::InvalidInput(format!(
            "logit length mismatch: {} with context, {} without",
            ctx.len(),
            unc.len()
        )));
    }
    if ctx.values().iter().chain(unc.values()).any(|v| !v.is_finite()) {
        return Err(CadError::InvalidInput("logits must be finite".into()));
    }
    Ok(())
}

/// Next-token distribution of ordinary decoding.
pub fn vanilla_dist(ctx: &LogitVector, tau: f64) -> Result<ProbDist, CadError> {
    softmax_with_temperature(ctx.values(), tau)
}

/// Per-token log ratio of the with-context and context-free probabilities.
pub fn pmi(ctx: &LogitVector, unc: &LogitVector) -> Result<Vec<f64>, CadError> {
    check_pair(ctx, unc)?;
    let lp = log_softmax(ctx.values());
    let lq = log_softmax(unc.values());
    Ok(lp.iter().zip(&lq).map(|(p, q)| p - q).collect())
}

/// `(1 + alpha) * ctx - alpha * unc`, before temperature.
pub fn combine_logits(ctx: &LogitVector, unc: &LogitVector, alpha: f64) -> Result<LogitVector, CadError> {
    check_pair(ctx, unc)?;
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(CadError::InvalidParameter(format!("alpha must be >= 0, got {alpha}")));
    }
    let values = ctx
        .values()
        .iter()
        .zip(unc.values())
        .map(|(c, u)| (1.0 + alpha) * c - alpha * u)
        .collect();
    Ok(LogitVector::masked(values))
}

/// Context-aware next-token distribution.
pub fn cad_dist(ctx: &LogitVector, unc: &LogitVector, params: CadParams) -> Result<ProbDist, CadError> {
    let combined = combine_logits(ctx, unc, params.alpha)?;
    softmax_with_temperature(combined.values(), params.tau)
}

/// Probability-space route to the same distribution: `p * (p / q)^alpha`,
/// renormalized. For `tau != 1` the weighted log-probabilities are divided
/// by `tau` before exponentiation. Kept as a regression oracle for
/// [`cad_dist`].
#[cfg(any(test, feature = "oracle"))]
pub fn cad_dist_via_pmi(ctx: &LogitVector, unc: &LogitVector, params: CadParams) -> Result<ProbDist, CadError> {
    check_pair(ctx, unc)?;
    let p = softmax_with_temperature(ctx.values(), 1.0)?;
    let q = softmax_with_temperature(unc.values(), 1.0)?;
    let alpha = params.alpha;
    if params.tau == 1.0 {
        let weights = p
            .probs()
            .iter()
            .zip(q.probs())
            .map(|(&pi, &qi)| if pi == 0.0 { 0.0 } else { pi * (pi / qi).powf(alpha) })
            .collect();
        return ProbDist::normalize(weights);
    }
    let weighted: Vec<f64> = p
        .probs()
        .iter()
        .zip(q.probs())
        .map(|(pi, qi)| ((1.0 + alpha) * pi.ln() - alpha * qi.ln()) / params.tau)
        .collect();
    softmax_with_temperature(&weighted, 1.0)
}
