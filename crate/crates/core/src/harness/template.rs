//! Prompt templates for the four benchmark datasets.
//!
//! Each template has a with-context form carrying `{query}` and `{document}`
//! slots and a context-free form where the document slot holds the literal
//! text `None`. The two lines of every published template are joined with a
//! single space.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lm::ModelFamily;
use crate::sampler::{SamplingConfig, SamplingStrategy};

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("template {template:?} has unresolved slot {{{slot}}}")]
    UnresolvedSlot { template: String, slot: String },
    #[error("template {template:?} has an unterminated slot")]
    Unterminated { template: String },
    #[error("template {template:?} is for {template_family} models but the model is {model_family}")]
    FamilyMismatch {
        template: String,
        template_family: ModelFamily,
        model_family: ModelFamily,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Dbpedia,
    Pubmedqa,
    CnnDailymail,
    Xsum,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 4] = [
        DatasetKind::Dbpedia,
        DatasetKind::Pubmedqa,
        DatasetKind::CnnDailymail,
        DatasetKind::Xsum,
    ];

    /// Name as printed in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            DatasetKind::Dbpedia => "Dbpedia",
            DatasetKind::Pubmedqa => "PubMedQA",
            DatasetKind::CnnDailymail => "CNN Dailymail",
            DatasetKind::Xsum => "XSUM",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            DatasetKind::Dbpedia => "dbpedia",
            DatasetKind::Pubmedqa => "pubmedqa",
            DatasetKind::CnnDailymail => "cnn_dailymail",
            DatasetKind::Xsum => "xsum",
        }
    }

    /// News summarization rows carry no query.
    pub fn is_news(self) -> bool {
        matches!(self, DatasetKind::CnnDailymail | DatasetKind::Xsum)
    }

    /// Guesses the dataset from a file name such as `dbpedia_test.jsonl`.
    pub fn infer_from_path(path: &std::path::Path) -> Option<Self> {
        let name = path.file_name()?.to_str()?.to_ascii_lowercase();
        if name.contains("pubmed") {
            Some(DatasetKind::Pubmedqa)
        } else if name.contains("dbpedia") || name.contains("debatepedia") {
            Some(DatasetKind::Dbpedia)
        } else if name.contains("cnn") || name.contains("dailymail") {
            Some(DatasetKind::CnnDailymail)
        } else if name.contains("xsum") {
            Some(DatasetKind::Xsum)
        } else {
            None
        }
    }

    pub fn hyperparameters(self) -> DecodingHyperparameters {
        let (min_new_tokens, max_new_tokens) = match self {
            DatasetKind::Dbpedia => (5, 30),
            DatasetKind::Pubmedqa => (40, 100),
            DatasetKind::CnnDailymail => (30, 70),
            DatasetKind::Xsum => (20, 50),
        };
        DecodingHyperparameters {
            top_k: 50,
            top_p: 0.9,
            num_beams: 1,
            repetition_penalty: 1.0,
            temperature: 1.0,
            min_new_tokens,
            max_new_tokens,
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace([' ', '-'], "_").as_str() {
            "dbpedia" | "debatepedia" => Ok(DatasetKind::Dbpedia),
            "pubmedqa" => Ok(DatasetKind::Pubmedqa),
            "cnn_dailymail" | "cnn" | "cnndm" => Ok(DatasetKind::CnnDailymail),
            "xsum" => Ok(DatasetKind::Xsum),
            other => Err(format!("unknown dataset {other:?}")),
        }
    }
}

/// One row of the per-dataset decoding hyperparameter table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingHyperparameters {
    pub top_k: usize,
    pub top_p: f64,
    pub num_beams: usize,
    pub repetition_penalty: f64,
    pub temperature: f64,
    pub min_new_tokens: usize,
    pub max_new_tokens: usize,
}

impl DecodingHyperparameters {
    pub fn sampling_config(&self, seed: u64) -> SamplingConfig {
        SamplingConfig {
            strategy: SamplingStrategy::TopkTopp,
            top_k: self.top_k,
            top_p: self.top_p,
            temperature: self.temperature,
            repetition_penalty: self.repetition_penalty,
            min_new_tokens: self.min_new_tokens,
            max_new_tokens: self.max_new_tokens,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub with_context: String,
    pub without_context: String,
    pub family: ModelFamily,
}

const QFS_ONE_SENTENCE: &str = "According to the Document, the one-sentence answer to the Question is:";
const QFS_DETAILED: &str = "According to the Document, the detailed answer to the Question is:";
const NEWS_DECODER: &str = "Summary of the above news article:";
const NEWS_SEQ2SEQ: &str = "Summarize the following article in one or two sentences.";

impl PromptTemplate {
    /// Built-in template for a dataset and model family.
    ///
    /// The published table prints `{document}` in the context-free prompt of
    /// the PubMedQA decoder-only row, unlike every sibling row. By default
    /// that row uses `None` like the others; `literal_table` reproduces the
    /// printed string instead.
    pub fn builtin(kind: DatasetKind, family: ModelFamily, literal_table: bool) -> Self {
        let (with_context, without_context) = match (kind, family) {
            (DatasetKind::Dbpedia, _) => (
                format!("Question: {{query}}. Document: {{document}}. {QFS_ONE_SENTENCE}"),
                format!("Question: {{query}}. Document: None. {QFS_ONE_SENTENCE}"),
            ),
            (DatasetKind::Pubmedqa, _) => {
                let doc_free = if literal_table && family == ModelFamily::DecoderOnly {
                    "{document}"
                } else {
                    "None"
                };
                (
                    format!("Question: {{query}}. Document: {{document}}. {QFS_DETAILED}"),
                    format!("Question: {{query}}. Document: {doc_free}. {QFS_DETAILED}"),
                )
            }
            (DatasetKind::CnnDailymail | DatasetKind::Xsum, ModelFamily::DecoderOnly) => (
                format!("News article: {{document}}. {NEWS_DECODER}"),
                format!("News article: None. {NEWS_DECODER}"),
            ),
            (DatasetKind::CnnDailymail | DatasetKind::Xsum, ModelFamily::EncoderDecoder) => (
                format!("{NEWS_SEQ2SEQ} {{document}}:"),
                format!("{NEWS_SEQ2SEQ} None:"),
            ),
        };
        Self {
            id: format!("{}/{}", kind.slug(), family),
            with_context,
            without_context,
            family,
        }
    }

    /// Renders both prompts. Slot substitution is a single literal pass, so
    /// braces inside the query or document are never reinterpreted.
    pub fn render(&self, query: &str, document: &str) -> Result<(String, String), TemplateError> {
        Ok((
            self.fill(&self.with_context, query, document)?,
            self.fill(&self.without_context, query, document)?,
        ))
    }

    pub fn check_family(&self, model_family: ModelFamily) -> Result<(), TemplateError> {
        if self.family == model_family {
            Ok(())
        } else {
            Err(TemplateError::FamilyMismatch {
                template: self.id.clone(),
                template_family: self.family,
                model_family,
            })
        }
    }

    fn fill(&self, pattern: &str, query: &str, document: &str) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(pattern.len() + query.len() + document.len());
        let mut rest = pattern;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let close = after.find('}').ok_or_else(|| TemplateError::Unterminated {
                template: self.id.clone(),
            })?;
            match &after[..close] {
                "query" => out.push_str(query),
                "document" => out.push_str(document),
                slot => {
                    return Err(TemplateError::UnresolvedSlot {
                        template: self.id.clone(),
                        slot: slot.to_string(),
                    })
                }
            }
            rest = &after[close + 1..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dbpedia_decoder_example() {
        let t = PromptTemplate::builtin(DatasetKind::Dbpedia, ModelFamily::DecoderOnly, false);
        let (a, b) = t.render("q", "d").unwrap();
        assert_eq!(
            a,
            "Question: q. Document: d. According to the Document, the one-sentence answer to the Question is:"
        );
        assert_eq!(
            b,
            "Question: q. Document: None. According to the Document, the one-sentence answer to the Question is:"
        );
    }

    #[test]
    fn news_seq2seq_example() {
        let t = PromptTemplate::builtin(DatasetKind::Xsum, ModelFamily::EncoderDecoder, false);
        let (a, b) = t.render("", "d").unwrap();
        assert_eq!(a, "Summarize the following article in one or two sentences. d:");
        assert_eq!(b, "Summarize the following article in one or two sentences. None:");
    }

    #[test]
    fn braces_in_content_are_literal() {
        let t = PromptTemplate::builtin(DatasetKind::CnnDailymail, ModelFamily::DecoderOnly, false);
        let (a, _) = t.render("", "x {query} y").unwrap();
        assert_eq!(a, "News article: x {query} y. Summary of the above news article:");
    }

    #[test]
    fn unknown_slot_is_an_error() {
        let t = PromptTemplate {
            id: "custom".into(),
            with_context: "{document} {answer}".into(),
            without_context: "None".into(),
            family: ModelFamily::DecoderOnly,
        };
        assert!(matches!(t.render("q", "d"), Err(TemplateError::UnresolvedSlot { slot, .. }) if slot == "answer"));
        let t = PromptTemplate { with_context: "{document".into(), ..t };
        assert!(matches!(t.render("q", "d"), Err(TemplateError::Unterminated { .. })));
    }

    #[test]
    fn family_check() {
        let t = PromptTemplate::builtin(DatasetKind::Xsum, ModelFamily::EncoderDecoder, false);
        assert!(t.check_family(ModelFamily::EncoderDecoder).is_ok());
        assert!(t.check_family(ModelFamily::DecoderOnly).is_err());
    }

    #[test]
    fn dataset_inference_and_hyperparameters() {
        use std::path::Path;
        assert_eq!(DatasetKind::infer_from_path(Path::new("data/dbpedia.jsonl")), Some(DatasetKind::Dbpedia));
        assert_eq!(DatasetKind::infer_from_path(Path::new("PubMedQA-test.jsonl")), Some(DatasetKind::Pubmedqa));
        assert_eq!(DatasetKind::infer_from_path(Path::new("toy.jsonl")), None);
        let h = DatasetKind::Xsum.hyperparameters();
        assert_eq!((h.min_new_tokens, h.max_new_tokens), (20, 50));
        assert_eq!("CNN Dailymail".parse::<DatasetKind>(), Ok(DatasetKind::CnnDailymail));
    }
}
