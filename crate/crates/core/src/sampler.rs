//! Token selection: greedy or top-k followed by top-p, with a repetition
//! penalty on logits and a seeded generator.
//!
//! Draws use ChaCha8 seeded through `seed_from_u64`, one `f64` in `[0, 1)`
//! per sampled token (53 random mantissa bits), inverted against the
//! cumulative mass in token-id order. Greedy decoding consumes no randomness.

use std::collections::HashSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cad::ProbDist;
use crate::lm::{LogitVector, TokenId};

#[derive(Debug, Error, PartialEq)]
#[error("invalid sampling config: {0}")]
pub struct SamplingError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    Greedy,
    #[default]
    TopkTopp,
}

impl fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingStrategy::Greedy => "greedy",
            SamplingStrategy::TopkTopp => "topk_topp",
        })
    }
}

impl std::str::FromStr for SamplingStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(SamplingStrategy::Greedy),
            "topk_topp" | "sample" => Ok(SamplingStrategy::TopkTopp),
            other => Err(format!("unknown sampling strategy {other:?}")),
        }
    }
}

/// Every knob of one decoding run apart from the PMI weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub strategy: SamplingStrategy,
    pub top_k: usize,
    pub top_p: f64,
    /// Applied to the (combined) logits before softmax.
    pub temperature: f64,
    pub repetition_penalty: f64,
    pub min_new_tokens: usize,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            strategy: SamplingStrategy::TopkTopp,
            top_k: 50,
            top_p: 0.9,
            temperature: 1.0,
            repetition_penalty: 1.0,
            min_new_tokens: 0,
            max_new_tokens: 64,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn greedy(min_new_tokens: usize, max_new_tokens: usize) -> Self {
        Self {
            strategy: SamplingStrategy::Greedy,
            min_new_tokens,
            max_new_tokens,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.top_k == 0 {
            return Err(SamplingError("top_k must be >= 1".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(SamplingError(format!("top_p must be in (0, 1], got {}", self.top_p)));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(SamplingError(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !(self.repetition_penalty.is_finite() && self.repetition_penalty >= 1.0) {
            return Err(SamplingError(format!(
                "repetition_penalty must be >= 1, got {}",
                self.repetition_penalty
            )));
        }
        if self.min_new_tokens > self.max_new_tokens {
            return Err(SamplingError(format!(
                "min_new_tokens {} exceeds max_new_tokens {}",
                self.min_new_tokens, self.max_new_tokens
            )));
        }
        Ok(())
    }
}

/// Explicit generator state; no global RNG is consulted anywhere.
#[derive(Debug, Clone)]
pub struct SamplerRng(ChaCha8Rng);

impl SamplerRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Independent stream `stream` of the generator seeded with `seed`.
    pub fn for_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self(rng)
    }

    fn next_unit(&mut self) -> f64 {
        self.0.gen::<f64>()
    }
}

/// Token ids sorted by descending probability, lower id first on ties.
fn ranked(probs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order
}

fn keep_only(dist: &ProbDist, keep: &[usize]) -> ProbDist {
    let mut weights = vec![0.0; dist.len()];
    for &i in keep {
        weights[i] = dist.probs()[i];
    }
    ProbDist::normalize(weights).expect("kept tokens carry positive mass")
}

/// Keeps the `k` most probable tokens and renormalizes.
pub fn filter_top_k(dist: &ProbDist, k: usize) -> ProbDist {
    if k >= dist.len() {
        return dist.clone();
    }
    let order = ranked(dist.probs());
    keep_only(dist, &order[..k.max(1)])
}

/// Keeps the shortest descending-probability prefix whose mass reaches `p`.
pub fn filter_top_p(dist: &ProbDist, p: f64) -> ProbDist {
    if p >= 1.0 {
        return dist.clone();
    }
    let order = ranked(dist.probs());
    let mut mass = 0.0;
    let mut cut = order.len();
    for (n, &i) in order.iter().enumerate() {
        mass += dist.probs()[i];
        if mass >= p {
            cut = n + 1;
            break;
        }
    }
    keep_only(dist, &order[..cut])
}

/// Divides positive logits and multiplies non-positive logits of every
/// token seen in `history` by `penalty`. Each distinct token is penalized
/// once.
pub fn apply_repetition_penalty(logits: &LogitVector, history: &[TokenId], penalty: f64) -> LogitVector {
    let mut out = logits.clone();
    if penalty == 1.0 {
        return out;
    }
    let seen: HashSet<TokenId> = history.iter().copied().collect();
    let values = out.values_mut();
    for id in seen {
        if let Some(v) = values.get_mut(id as usize) {
            *v = if *v > 0.0 { *v / penalty } else { *v * penalty };
        }
    }
    out
}

/// Highest-probability token, lowest id on ties.
pub fn argmax(dist: &ProbDist) -> TokenId {
    let mut best = 0;
    for (i, &p) in dist.probs().iter().enumerate() {
        if p > dist.probs()[best] {
            best = i;
        }
    }
    best as TokenId
}

/// Inverse-CDF draw in token-id order.
pub fn draw(dist: &ProbDist, rng: &mut SamplerRng) -> TokenId {
    let u = rng.next_unit();
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, &p) in dist.probs().iter().enumerate() {
        if p > 0.0 {
            cumulative += p;
            last_positive = i;
            if u < cumulative {
                return i as TokenId;
            }
        }
    }
    last_positive as TokenId
}

pub fn sample(dist: &ProbDist, config: &SamplingConfig, rng: &mut SamplerRng) -> TokenId {
    match config.strategy {
        SamplingStrategy::Greedy => argmax(dist),
        SamplingStrategy::TopkTopp => {
            let filtered = filter_top_p(&filter_top_k(dist, config.top_k), config.top_p);
            draw(&filtered, rng)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pd(v: &[f64]) -> ProbDist {
        ProbDist::new(v.to_vec()).unwrap()
    }

    fn close(a: &ProbDist, b: &[f64]) -> bool {
        a.probs().iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn top_k_examples() {
        assert!(close(&filter_top_k(&pd(&[0.5, 0.3, 0.2]), 2), &[0.625, 0.375, 0.0]));
        let d = pd(&[0.5, 0.3, 0.2]);
        assert_eq!(filter_top_k(&d, 3), d);
        assert_eq!(filter_top_k(&d, 10), d);
        assert!(close(&filter_top_k(&pd(&[0.4, 0.4, 0.2]), 1), &[1.0, 0.0, 0.0]));
    }

    #[test]
    fn top_p_examples() {
        let d = pd(&[0.6, 0.3, 0.1]);
        assert_eq!(filter_top_p(&d, 1.0), d);
        assert!(close(&filter_top_p(&d, 0.85), &[2.0 / 3.0, 1.0 / 3.0, 0.0]));
        assert!(close(&filter_top_p(&pd(&[0.9, 0.05, 0.05]), 0.5), &[1.0, 0.0, 0.0]));
        assert!(close(&filter_top_p(&pd(&[0.05, 0.9, 0.05]), 1e-9), &[0.0, 1.0, 0.0]));
    }

    #[test]
    fn repetition_penalty_examples() {
        let l = LogitVector::new(vec![2.0, 1.0]).unwrap();
        assert_eq!(apply_repetition_penalty(&l, &[0, 1], 1.0), l);
        assert_eq!(apply_repetition_penalty(&l, &[0], 2.0).values(), &[1.0, 1.0]);
        let l = LogitVector::new(vec![-1.0, 0.5]).unwrap();
        assert_eq!(apply_repetition_penalty(&l, &[0, 0], 2.0).values(), &[-2.0, 0.5]);
    }

    #[test]
    fn greedy_and_degenerate_nucleus() {
        let cfg = SamplingConfig::greedy(0, 1);
        let mut rng = SamplerRng::new(1);
        assert_eq!(sample(&pd(&[0.1, 0.7, 0.2]), &cfg, &mut rng), 1);
        assert_eq!(argmax(&pd(&[0.4, 0.4, 0.2])), 0);
        let k1 = SamplingConfig { top_k: 1, ..SamplingConfig::default() };
        for seed in 0..50 {
            let mut rng = SamplerRng::new(seed);
            assert_eq!(sample(&pd(&[0.2, 0.3, 0.5]), &k1, &mut rng), 2);
        }
    }

    #[test]
    fn seeded_draws_are_fair_and_repeatable() {
        let d = pd(&[0.5, 0.5]);
        let cfg = SamplingConfig { top_p: 1.0, ..SamplingConfig::default() };
        let run = |seed| {
            let mut rng = SamplerRng::new(seed);
            (0..10_000).map(|_| sample(&d, &cfg, &mut rng)).collect::<Vec<_>>()
        };
        let a = run(7);
        assert_eq!(a, run(7));
        let freq = a.iter().filter(|&&t| t == 0).count() as f64 / a.len() as f64;
        // Binomial(10000, 0.5): sd = 0.005, the band is four sd wide each side.
        assert!((0.48..=0.52).contains(&freq), "frequency {freq}");
    }

    #[test]
    fn config_validation() {
        assert!(SamplingConfig::default().validate().is_ok());
        let bad = |f: fn(&mut SamplingConfig)| {
            let mut c = SamplingConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.top_k = 0));
        assert!(bad(|c| c.top_p = 0.0));
        assert!(bad(|c| c.top_p = 1.5));
        assert!(bad(|c| c.repetition_penalty = 0.5));
        assert!(bad(|c| c.temperature = 0.0));
        assert!(bad(|c| {
            c.min_new_tokens = 5;
            c.max_new_tokens = 4;
        }));
    }

    fn dist() -> impl Strategy<Value = ProbDist> {
        prop::collection::vec(0.0f64..1.0, 1..16).prop_filter_map("zero mass", |w| ProbDist::normalize(w).ok())
    }

    proptest! {
        #[test]
        fn filters_only_remove_mass(d in dist(), k in 1usize..20, p in 0.01f64..1.0) {
            for out in [filter_top_k(&d, k), filter_top_p(&d, p), filter_top_p(&filter_top_k(&d, k), p)] {
                prop_assert!((out.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(out.probs().iter().any(|&x| x > 0.0));
                for (o, i) in out.probs().iter().zip(d.probs()) {
                    prop_assert!(*o == 0.0 || *i > 0.0);
                }
            }
        }

        #[test]
        fn draws_land_in_support(d in dist(), seed in any::<u64>()) {
            let cfg = SamplingConfig::default();
            let mut rng = SamplerRng::new(seed);
            let filtered = filter_top_p(&filter_top_k(&d, cfg.top_k), cfg.top_p);
            let t = sample(&d, &cfg, &mut rng);
            prop_assert!(filtered.probs()[t as usize] > 0.0);
        }
    }
}
