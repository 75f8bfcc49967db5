//! Embedding and chat-completion providers.
//!
//! Everything downstream talks to the [`Embedder`] and [`ChatProvider`]
//! traits. [`http`] speaks the OpenAI-compatible wire protocol; [`mock`]
//! holds deterministic offline stand-ins used by the tests, the examples
//! and the `--mock-providers` CLI mode.

pub mod http;
pub mod mock;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::ConflictType;

/// Dimension of every sentence embedding.
pub const EMBEDDING_DIM: usize = 384;

/// Sampling temperature for detection, scoring and judging calls.
pub const TEMPERATURE_DETECTION: f64 = 0.0;
/// Sampling temperature for answer generation.
pub const TEMPERATURE_GENERATION: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ProviderError> {
        if values.len() != EMBEDDING_DIM {
            return Err(ProviderError::Protocol(format!(
                "embedding has dimension {}, expected {EMBEDDING_DIM}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ProviderError::Protocol("embedding contains non-finite values".into()));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Cosine similarity; 0 when either vector is all zeros.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            dot / denom
        }
    }
}

/// The prompt families the pipeline sends. Each system prompt carries a
/// `(task: <tag>)` marker, which mocks use as the request fingerprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    PairJudge,
    ClosedBook,
    OpenBook,
    ParametricCompare,
    CriteriaScore,
    DateExtract,
    GenerateConflictAware,
    GenerateStandard,
    JudgeCorrectness,
    RateResolution,
    RateTransparency,
}

impl Task {
    pub const ALL: [Task; 11] = [
        Task::PairJudge,
        Task::ClosedBook,
        Task::OpenBook,
        Task::ParametricCompare,
        Task::CriteriaScore,
        Task::DateExtract,
        Task::GenerateConflictAware,
        Task::GenerateStandard,
        Task::JudgeCorrectness,
        Task::RateResolution,
        Task::RateTransparency,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Task::PairJudge => "pair_judge",
            Task::ClosedBook => "closed_book",
            Task::OpenBook => "open_book",
            Task::ParametricCompare => "parametric_compare",
            Task::CriteriaScore => "criteria_score",
            Task::DateExtract => "date_extract",
            Task::GenerateConflictAware => "generate_conflict_aware",
            Task::GenerateStandard => "generate_standard",
            Task::JudgeCorrectness => "judge_correctness",
            Task::RateResolution => "rate_resolution",
            Task::RateTransparency => "rate_transparency",
        }
    }

    fn role(self) -> &'static str {
        match self {
            Task::PairJudge => "You compare two retrieved documents and decide whether they contradict each other.",
            Task::ClosedBook => "You answer questions from your own knowledge only.",
            Task::OpenBook => "You answer questions using only the provided documents.",
            Task::ParametricCompare => "You compare two candidate answers to the same question.",
            Task::CriteriaScore => "You rate the credibility of a retrieved document.",
            Task::DateExtract => "You extract publication dates from documents.",
            Task::GenerateConflictAware => {
                "You write answers grounded in the most credible sources and you disclose conflicts between sources."
            }
            Task::GenerateStandard => "You answer questions using the provided documents.",
            Task::JudgeCorrectness => "You are an impartial grader of factual correctness.",
            Task::RateResolution | Task::RateTransparency => "You are an impartial grader of answer quality.",
        }
    }

    pub fn system_prompt(self) -> String {
        format!("{} (task: {})", self.role(), self.tag())
    }

    /// Recovers the task from a system prompt built by [`Task::system_prompt`].
    pub fn from_system_prompt(system_prompt: &str) -> Option<Task> {
        let start = system_prompt.rfind("(task: ")? + "(task: ".len();
        let end = start + system_prompt[start..].find(')')?;
        let tag = &system_prompt[start..end];
        Task::ALL.into_iter().find(|t| t.tag() == tag)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn new(task: Task, user_prompt: impl Into<String>, temperature: f64) -> Self {
        Self {
            system_prompt: task.system_prompt(),
            user_prompt: user_prompt.into(),
            temperature,
        }
    }

    pub fn task(&self) -> Option<Task> {
        Task::from_system_prompt(&self.system_prompt)
    }

    /// Prompt size under the 4-characters-per-token estimate.
    pub fn estimated_input_tokens(&self) -> usize {
        estimate_tokens(&self.system_prompt) + estimate_tokens(&self.user_prompt)
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.system_prompt.trim().is_empty() || self.user_prompt.trim().is_empty() {
            return Err(ProviderError::EmptyPrompt);
        }
        if !(self.temperature >= 0.0) {
            return Err(ProviderError::Config(format!("invalid temperature {}", self.temperature)));
        }
        Ok(())
    }
}

/// Token estimate used for budgets and cost accounting: ceil(chars / 4).
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError>;
    fn model_id(&self) -> &str;
}

pub trait ChatProvider: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError>;
    fn model_id(&self) -> &str;
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP {status} after {attempts} attempt(s): {body}")]
    Http { status: u16, attempts: u32, body: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("prompt must not be empty")]
    EmptyPrompt,
    #[error("text to embed must not be empty")]
    EmptyText,
    #[error("no scripted response for task {0}")]
    NoScript(String),
    #[error("provider configuration: {0}")]
    Config(String),
}

/// Structured reply to the pair-judgment prompt. Construction enforces
/// `is_conflict == conflict_type.is_conflict()`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredVerdict {
    is_conflict: bool,
    conflict_type: ConflictType,
    rationale: String,
}

impl StructuredVerdict {
    pub fn new(
        is_conflict: bool,
        conflict_type: ConflictType,
        rationale: impl Into<String>,
    ) -> Result<Self, VerdictError> {
        if is_conflict != conflict_type.is_conflict() {
            return Err(VerdictError::Inconsistent {
                is_conflict,
                conflict_type,
            });
        }
        Ok(Self {
            is_conflict,
            conflict_type,
            rationale: rationale.into(),
        })
    }

    pub fn is_conflict(&self) -> bool {
        self.is_conflict
    }

    pub fn conflict_type(&self) -> ConflictType {
        self.conflict_type
    }

    pub fn rationale(&self) -> &str {
        &self.rationale
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum VerdictError {
    #[error("no structured object found in reply")]
    NoObject,
    #[error("verdict object is missing field {0:?}")]
    MissingField(&'static str),
    #[error("unknown conflict type {0:?}")]
    UnknownType(String),
    #[error("is_conflict={is_conflict} contradicts type {conflict_type}")]
    Inconsistent {
        is_conflict: bool,
        conflict_type: ConflictType,
    },
}

/// Yields every JSON object embedded in `raw`, in order of appearance.
pub(crate) fn json_objects(raw: &str) -> impl Iterator<Item = serde_json::Map<String, Value>> + '_ {
    raw.char_indices().filter(|&(_, c)| c == '{').filter_map(move |(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => Some(map),
            _ => None,
        }
    })
}

/// Extracts the first well-formed verdict object from an LLM reply,
/// ignoring any surrounding prose.
pub fn parse_verdict(raw: &str) -> Result<StructuredVerdict, VerdictError> {
    let mut last_err = VerdictError::NoObject;
    for map in json_objects(raw) {
        let Some(is_conflict) = map.get("is_conflict").and_then(Value::as_bool) else {
            last_err = VerdictError::MissingField("is_conflict");
            continue;
        };
        let Some(type_str) = map.get("type").and_then(Value::as_str) else {
            last_err = VerdictError::MissingField("type");
            continue;
        };
        let conflict_type = ConflictType::from_str(type_str)
            .map_err(|_| VerdictError::UnknownType(type_str.to_string()))?;
        let rationale = map
            .get("rationale")
            .and_then(Value::as_str)
            .unwrap_or_default();
        return StructuredVerdict::new(is_conflict, conflict_type, rationale);
    }
    Err(last_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_direct_mapping() {
        let v = parse_verdict(r#"{"is_conflict":true,"type":"temporal","rationale":"dates differ"}"#).unwrap();
        assert!(v.is_conflict());
        assert_eq!(v.conflict_type(), ConflictType::Temporal);
        assert_eq!(v.rationale(), "dates differ");
    }

    #[test]
    fn verdict_tolerates_prose() {
        let v = parse_verdict(r#"Sure! {"is_conflict":false,"type":"none"}"#).unwrap();
        assert!(!v.is_conflict());
        assert_eq!(v.conflict_type(), ConflictType::NoConflict);
    }

    #[test]
    fn verdict_without_object_fails() {
        assert_eq!(parse_verdict("I cannot decide"), Err(VerdictError::NoObject));
    }

    #[test]
    fn verdict_skips_unrelated_objects() {
        let raw = r#"Context {"note": 1} then {"is_conflict": true, "type": "FACTUAL"} done"#;
        assert_eq!(parse_verdict(raw).unwrap().conflict_type(), ConflictType::Factual);
    }

    #[test]
    fn verdict_rejects_inconsistent_pairs() {
        assert!(matches!(
            parse_verdict(r#"{"is_conflict":true,"type":"none"}"#),
            Err(VerdictError::Inconsistent { .. })
        ));
        assert!(matches!(
            parse_verdict(r#"{"is_conflict":false,"type":"opinion"}"#),
            Err(VerdictError::Inconsistent { .. })
        ));
    }

    #[test]
    fn task_round_trips_through_system_prompt() {
        for task in Task::ALL {
            let req = ChatRequest::new(task, "hi", 0.0);
            assert_eq!(req.task(), Some(task));
        }
        assert_eq!(Task::from_system_prompt("plain"), None);
    }

    #[test]
    fn embedding_dimension_is_enforced() {
        assert!(EmbeddingVector::new(vec![0.0; 383]).is_err());
        assert!(EmbeddingVector::new(vec![0.0; EMBEDDING_DIM]).is_ok());
        let mut v = vec![0.0; EMBEDDING_DIM];
        v[3] = f64::NAN;
        assert!(EmbeddingVector::new(v).is_err());
    }

    #[test]
    fn token_estimate_rounds_up() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcd"), 1);
        assert_eq!(estimate_tokens("abcde"), 2);
    }
}
