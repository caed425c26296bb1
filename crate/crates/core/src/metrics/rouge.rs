//! Sentence-level, single-reference ROUGE with clipped n-gram counts.
//!
//! Multi-sentence candidates are scored as one token stream; there is no
//! summary-level ROUGE-Lsum variant and no resampling.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Lowercases, splits on runs of non-alphanumeric characters and drops
/// empty pieces. `stem` applies the Porter stemmer to every token.
pub fn tokenize_for_rouge(text: &str, stem: bool) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|piece| !piece.is_empty())
        .map(|piece| {
            let lower = piece.to_lowercase();
            if stem {
                porter_stemmer::stem(&lower)
            } else {
                lower
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// Builds P, R and F1 from an overlap count; empty denominators give 0.
    fn from_counts(overlap: usize, candidate_total: usize, reference_total: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(overlap, candidate_total);
        let recall = ratio(overlap, reference_total);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { precision, recall, f1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub rouge1: Prf,
    pub rouge2: Prf,
    #[serde(rename = "rougeL")]
    pub rouge_l: Prf,
}

impl RougeScore {
    pub fn rouge1_f(&self) -> f64 {
        self.rouge1.f1
    }

    pub fn rouge2_f(&self) -> f64 {
        self.rouge2.f1
    }

    pub fn rouge_l_f(&self) -> f64 {
        self.rouge_l.f1
    }
}

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for window in tokens.windows(n) {
        let key: Vec<&str> = window.iter().map(AsRef::as_ref).collect();
        *counts.entry(key).or_insert(0) += 1;
    }
    counts
}

/// ROUGE-N with each n-gram's overlap clipped to its reference count.
pub fn rouge_n<T: AsRef<str>>(candidate: &[T], reference: &[T], n: usize) -> Prf {
    assert!(n >= 1, "ROUGE-N needs n >= 1");
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let overlap = cand
        .iter()
        .map(|(gram, &c)| c.min(refs.get(gram).copied().unwrap_or(0)))
        .sum();
    Prf::from_counts(overlap, cand.values().sum(), refs.values().sum())
}

/// Length of the longest common subsequence, two-row dynamic programming.
pub fn lcs_len<T: AsRef<str>>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            curr[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

pub fn rouge_l<T: AsRef<str>>(candidate: &[T], reference: &[T]) -> Prf {
    Prf::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

/// ROUGE-1, ROUGE-2 and ROUGE-L of two texts.
pub fn score_texts(candidate: &str, reference: &str, stem: bool) -> RougeScore {
    let cand = tokenize_for_rouge(candidate, stem);
    let refs = tokenize_for_rouge(reference, stem);
    RougeScore {
        rouge1: rouge_n(&cand, &refs, 1),
        rouge2: rouge_n(&cand, &refs, 2),
        rouge_l: rouge_l(&cand, &refs),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize_for_rouge(s, false)
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(toks("The cat-sat."), vec!["the", "cat", "sat"]);
        assert!(toks("").is_empty());
        assert_eq!(toks("A  a\tA"), vec!["a", "a", "a"]);
        assert_eq!(tokenize_for_rouge("running cats", true), vec!["run", "cat"]);
    }

    #[test]
    fn hand_counted_cases() {
        let c = toks("the cat sat");
        let r = toks("the cat ate");
        let r1 = rouge_n(&c, &r, 1);
        assert!((r1.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((r1.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((r1.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((rouge_n(&c, &r, 2).f1 - 0.5).abs() < 1e-12);
        assert_eq!(lcs_len(&c, &r), 2);
        assert!((rouge_l(&c, &r).f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn clipping() {
        let c = toks("the the the");
        let r = toks("the cat");
        let p = rouge_n(&c, &r, 1);
        assert!((p.precision - 1.0 / 3.0).abs() < 1e-12);
        assert!((p.recall - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identity_disjoint_and_empty() {
        let s = toks("a b c d");
        for n in 1..=4 {
            assert_eq!(rouge_n(&s, &s, n), Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
        }
        assert_eq!(rouge_n(&s, &toks("x y z"), 1), Prf::default());
        let empty: Vec<String> = vec![];
        assert_eq!(rouge_l(&empty, &s), Prf::default());
        assert_eq!(rouge_l(&s, &empty), Prf::default());
        assert_eq!(rouge_n(&toks("a"), &toks("a"), 2), Prf::default());
    }

    #[test]
    fn subsequence_has_full_precision() {
        assert_eq!(rouge_l(&toks("a c"), &toks("a b c d")).precision, 1.0);
    }

    #[test]
    fn rouge_l_sees_order() {
        let r = toks("a b c d e");
        let reversed = toks("e d c b a");
        assert_eq!(rouge_n(&reversed, &r, 1).f1, 1.0);
        assert!(rouge_l(&reversed, &r).f1 < 1.0);
    }

    fn words() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 0..12)
            .prop_map(|v| v.into_iter().map(String::from).collect())
    }

    proptest! {
        #[test]
        fn bounds(c in words(), r in words()) {
            for prf in [rouge_n(&c, &r, 1), rouge_n(&c, &r, 2), rouge_l(&c, &r)] {
                for v in [prf.precision, prf.recall, prf.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
                prop_assert!(prf.f1 <= prf.precision.max(prf.recall) + 1e-15);
                prop_assert_eq!(prf.f1 == 0.0, prf.precision == 0.0);
            }
        }

        #[test]
        fn rouge1_ignores_candidate_order(mut c in words(), r in words()) {
            let before = rouge_n(&c, &r, 1);
            c.reverse();
            prop_assert_eq!(before, rouge_n(&c, &r, 1));
        }
    }
}
