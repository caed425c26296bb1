use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    LanguageModel, LmError, LogitVector, ModelConfig, ModelFamily, TokenId, Vocabulary, PROB_FLOOR,
};

const DIST_TOLERANCE: f64 = 1e-9;

/// One suffix rule of a table model, in token strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRule {
    pub suffix: Vec<String>,
    /// Next-token probabilities; tokens not listed get zero.
    pub dist: BTreeMap<String, f64>,
}

/// On-disk description of a [`TableLm`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableLmSpec {
    #[serde(default)]
    pub id: Option<String>,
    pub order: usize,
    pub vocab: Vec<String>,
    pub eos: String,
    #[serde(default)]
    pub rules: Vec<TableRule>,
    pub default: BTreeMap<String, f64>,
    /// Synthetic geometry reported to FLOPs accounting.
    #[serde(default)]
    pub config: Option<ModelConfig>,
    #[serde(default)]
    pub family: ModelFamily,
    #[serde(default)]
    pub max_input_len: Option<usize>,
}

/// Deterministic n-gram style model: the longest rule suffix matching the end
/// of the input decides the next-token distribution, the default covers the
/// rest. Logits are natural logs of the stored probabilities with zeros
/// floored at [`PROB_FLOOR`].
#[derive(Debug, Clone)]
pub struct TableLm {
    id: String,
    order: usize,
    vocab: Vocabulary,
    rules: HashMap<Vec<TokenId>, Vec<f64>>,
    default: Vec<f64>,
    config: ModelConfig,
    family: ModelFamily,
    max_input_len: Option<usize>,
}

impl TableLm {
    pub fn from_spec(spec: TableLmSpec) -> Result<Self, LmError> {
        let vocab = Vocabulary::with_eos_token(spec.vocab, &spec.eos)?;
        if spec.order == 0 && !spec.rules.is_empty() {
            return Err(LmError::InvalidSpec("order 0 model cannot have rules".into()));
        }
        let default = dist_to_logits(&vocab, &spec.default, "default")?;
        let mut rules = HashMap::with_capacity(spec.rules.len());
        for (i, rule) in spec.rules.iter().enumerate() {
            if rule.suffix.is_empty() || rule.suffix.len() > spec.order {
                return Err(LmError::InvalidSpec(format!(
                    "rule {i}: suffix length {} outside 1..={}",
                    rule.suffix.len(),
                    spec.order
                )));
            }
            let key = rule
                .suffix
                .iter()
                .map(|t| {
                    vocab.id_of(t).ok_or_else(|| {
                        LmError::InvalidSpec(format!("rule {i}: suffix token {t:?} not in vocabulary"))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let logits = dist_to_logits(&vocab, &rule.dist, &format!("rule {i}"))?;
            if rules.insert(key, logits).is_some() {
                return Err(LmError::InvalidSpec(format!("rule {i}: duplicate suffix")));
            }
        }
        let config = spec.config.unwrap_or(ModelConfig {
            n_layer: 2,
            d_model: 8,
            d_attn: 8,
            d_ff: 32,
            n_heads: 2,
            n_vocab: vocab.size() as u64,
        });
        config.validate()?;
        Ok(Self {
            id: spec.id.unwrap_or_else(|| "table".to_string()),
            order: spec.order,
            vocab,
            rules,
            default,
            config,
            family: spec.family,
            max_input_len: spec.max_input_len,
        })
    }

    pub fn from_json(json: &str) -> Result<Self, LmError> {
        let spec: TableLmSpec =
            serde_json::from_str(json).map_err(|e| LmError::InvalidSpec(e.to_string()))?;
        Self::from_spec(spec)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, LmError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut model = Self::from_json(&text)?;
        if model.id == "table" {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                model.id = stem.to_string();
            }
        }
        Ok(model)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn with_max_input_len(mut self, max: Option<usize>) -> Self {
        self.max_input_len = max;
        self
    }

    fn lookup(&self, input: &[TokenId]) -> &[f64] {
        let longest = self.order.min(input.len());
        (1..=longest)
            .rev()
            .find_map(|n| self.rules.get(&input[input.len() - n..]))
            .unwrap_or(&self.default)
    }
}

fn dist_to_logits(
    vocab: &Vocabulary,
    dist: &BTreeMap<String, f64>,
    what: &str,
) -> Result<Vec<f64>, LmError> {
    let mut probs = vec![0.0; vocab.size()];
    for (tok, &p) in dist {
        let id = vocab
            .id_of(tok)
            .ok_or_else(|| LmError::InvalidSpec(format!("{what}: token {tok:?} not in vocabulary")))?;
        if !(p.is_finite() && p >= 0.0) {
            return Err(LmError::InvalidSpec(format!("{what}: probability {p} for {tok:?}")));
        }
        probs[id as usize] = p;
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > DIST_TOLERANCE {
        return Err(LmError::InvalidSpec(format!("{what}: probabilities sum to {total}")));
    }
    Ok(probs.into_iter().map(|p| p.max(PROB_FLOOR).ln()).collect())
}

impl LanguageModel for TableLm {
    fn id(&self) -> &str {
        &self.id
    }

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn forward(&self, input: &[TokenId]) -> Result<LogitVector, LmError> {
        if input.is_empty() {
            return Err(LmError::InvalidInput("empty input".into()));
        }
        self.vocab.check_ids(input)?;
        if let Some(max) = self.max_input_len {
            if input.len() > max {
                return Err(LmError::InvalidInput(format!(
                    "input of {} tokens exceeds maximum {max}",
                    input.len()
                )));
            }
        }
        Ok(LogitVector(self.lookup(input).to_vec()))
    }

    fn supports_batch(&self) -> bool {
        true
    }

    fn forward_batch(&self, inputs: &[&[TokenId]]) -> Result<Vec<LogitVector>, LmError> {
        inputs.iter().map(|input| self.forward(input)).collect()
    }

    fn model_config(&self) -> Result<ModelConfig, LmError> {
        Ok(self.config)
    }

    fn family(&self) -> ModelFamily {
        self.family
    }

    fn max_input_len(&self) -> Option<usize> {
        self.max_input_len
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn softmax(xs: &[f64]) -> Vec<f64> {
        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }

    fn two_token() -> TableLm {
        TableLm::from_json(
            r#"{"order": 2, "vocab": ["A", "B", "</s>"], "eos": "</s>",
                "rules": [
                    {"suffix": ["A"], "dist": {"A": 0.9, "B": 0.1}},
                    {"suffix": ["A", "B"], "dist": {"</s>": 1.0}},
                    {"suffix": ["B"], "dist": {"A": 0.5, "B": 0.5}}
                ],
                "default": {"A": 0.25, "B": 0.25, "</s>": 0.5}}"#,
        )
        .unwrap()
    }

    #[test]
    fn rule_distribution_roundtrips_through_softmax() {
        let lm = two_token();
        let p = softmax(lm.forward(&[0]).unwrap().values());
        assert!((p[0] - 0.9).abs() < 1e-9);
        assert!((p[1] - 0.1).abs() < 1e-9);
        assert!(p[2] < 1e-11);
    }

    #[test]
    fn unmatched_input_uses_default() {
        let lm = two_token();
        let p = softmax(lm.forward(&[2]).unwrap().values());
        for (got, want) in p.iter().zip([0.25, 0.25, 0.5]) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn longest_suffix_matches_enumeration_oracle() {
        let lm = two_token();
        // Enumerate every rule key and keep the longest that is a suffix.
        let keys: Vec<Vec<TokenId>> = lm.rules.keys().cloned().collect();
        for a in 0..3u32 {
            for b in 0..3u32 {
                for c in 0..3u32 {
                    let input = [a, b, c];
                    let best = keys
                        .iter()
                        .filter(|k| input.ends_with(k))
                        .max_by_key(|k| k.len());
                    let want = best.map_or(&lm.default, |k| &lm.rules[k]);
                    assert_eq!(lm.forward(&input).unwrap().values(), want.as_slice());
                }
            }
        }
        let p = softmax(lm.forward(&[1, 0, 1]).unwrap().values());
        assert!((p[2] - 1.0).abs() < 1e-9, "order-2 rule [A,B] must win over [B]");
    }

    #[test]
    fn forward_is_pure() {
        let lm = two_token();
        let a = lm.forward(&[0, 1]).unwrap();
        let b = lm.forward(&[0, 1]).unwrap();
        assert_eq!(
            a.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn invalid_inputs() {
        let lm = two_token();
        assert!(matches!(lm.forward(&[]), Err(LmError::InvalidInput(_))));
        assert!(matches!(lm.forward(&[7]), Err(LmError::InvalidInput(_))));
    }

    #[test]
    fn spec_validation() {
        let bad_sum = r#"{"order":1,"vocab":["A","</s>"],"eos":"</s>","default":{"A":0.5}}"#;
        assert!(matches!(TableLm::from_json(bad_sum), Err(LmError::InvalidSpec(_))));
        let long_key = r#"{"order":1,"vocab":["A","</s>"],"eos":"</s>",
            "rules":[{"suffix":["A","A"],"dist":{"A":1.0}}],"default":{"A":1.0}}"#;
        assert!(TableLm::from_json(long_key).is_err());
        let negative = r#"{"order":1,"vocab":["A","</s>"],"eos":"</s>","default":{"A":1.5,"</s>":-0.5}}"#;
        assert!(TableLm::from_json(negative).is_err());
    }

    #[test]
    fn declared_config_is_returned_verbatim() {
        let lm = TableLm::from_json(
            r#"{"order":1,"vocab":["A","</s>"],"eos":"</s>","default":{"A":1.0},
                "config":{"n_layer":2,"d_model":8,"d_attn":8,"d_ff":32,"n_heads":1,"n_vocab":2}}"#,
        )
        .unwrap();
        let c = lm.model_config().unwrap();
        assert_eq!((c.n_layer, c.d_model, c.n_heads), (2, 8, 1));
    }
}
