//! Deterministic offline providers.
//!
//! - [`HashEmbedder`]: a hash-seeded pseudo-random unit vector per input string.
//! - [`TokenHashEmbedder`]: sum of hash-seeded vectors per token, so texts
//!   sharing words land near each other. Used for offline dense retrieval.
//! - [`ScriptedChat`]: canned replies keyed by task fingerprint and an
//!   optional prompt substring; records every request it receives.
//! - [`RuleBasedChat`]: a rule-driven stand-in for a chat model that reads
//!   the structured prompts this crate produces and answers every task
//!   deterministically. It powers `--mock-providers` runs end to end.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, LazyLock, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use super::{ChatProvider, ChatRequest, EmbeddingVector, Embedder, ProviderError, Task, EMBEDDING_DIM};
use crate::text::{all_tags, attribute, between_tags, first_sentence, fnv1a64, tokenize};

fn seeded_unit_vector(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..EMBEDDING_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn normalize(mut values: Vec<f64>) -> Vec<f64> {
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        values.iter_mut().for_each(|v| *v /= norm);
    }
    values
}

/// Pure function of the input string: FNV-1a seeds a ChaCha stream, 384
/// uniform draws are L2-normalized.
#[derive(Debug, Clone, Default)]
pub struct HashEmbedder;

impl Embedder for HashEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyText);
        }
        EmbeddingVector::new(normalize(seeded_unit_vector(fnv1a64(text.as_bytes()))))
    }

    fn model_id(&self) -> &str {
        "mock-hash-embedder"
    }
}

/// Bag-of-words variant of [`HashEmbedder`].
#[derive(Debug, Clone, Default)]
pub struct TokenHashEmbedder;

impl Embedder for TokenHashEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyText);
        }
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return HashEmbedder.embed(text);
        }
        let mut acc = vec![0.0; EMBEDDING_DIM];
        for token in &tokens {
            for (a, v) in acc.iter_mut().zip(seeded_unit_vector(fnv1a64(token.as_bytes()))) {
                *a += v;
            }
        }
        EmbeddingVector::new(normalize(acc))
    }

    fn model_id(&self) -> &str {
        "mock-token-hash-embedder"
    }
}

#[derive(Debug, Clone)]
struct ScriptRule {
    task: Option<Task>,
    contains: Option<String>,
    reply: String,
}

/// Replies chosen by the first matching rule. Without a match the request
/// goes to the fallback provider, or fails with [`ProviderError::NoScript`].
#[derive(Default)]
pub struct ScriptedChat {
    rules: Vec<ScriptRule>,
    fallback: Option<Arc<dyn ChatProvider>>,
    calls: Mutex<Vec<ChatRequest>>,
    model_id: String,
}

impl ScriptedChat {
    pub fn new() -> Self {
        Self {
            model_id: "mock-scripted".into(),
            ..Self::default()
        }
    }

    pub fn with_model_id(mut self, id: impl Into<String>) -> Self {
        self.model_id = id.into();
        self
    }

    /// Reply for every request of `task`.
    pub fn on(mut self, task: Task, reply: impl Into<String>) -> Self {
        self.rules.push(ScriptRule {
            task: Some(task),
            contains: None,
            reply: reply.into(),
        });
        self
    }

    /// Reply for requests of `task` whose user prompt contains `needle`.
    pub fn on_match(mut self, task: Task, needle: impl Into<String>, reply: impl Into<String>) -> Self {
        self.rules.push(ScriptRule {
            task: Some(task),
            contains: Some(needle.into()),
            reply: reply.into(),
        });
        self
    }

    pub fn with_fallback(mut self, fallback: Arc<dyn ChatProvider>) -> Self {
        self.fallback = Some(fallback);
        self
    }

    pub fn calls(&self) -> Vec<ChatRequest> {
        self.calls.lock().expect("call log poisoned").clone()
    }

    pub fn call_count(&self, task: Task) -> usize {
        self.calls
            .lock()
            .expect("call log poisoned")
            .iter()
            .filter(|r| r.task() == Some(task))
            .count()
    }
}

impl ChatProvider for ScriptedChat {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        request.validate()?;
        self.calls.lock().expect("call log poisoned").push(request.clone());
        let task = request.task();
        // Substring rules take precedence over catch-all rules for the same task.
        let specific = self.rules.iter().find(|r| {
            r.contains.as_ref().is_some_and(|n| request.user_prompt.contains(n.as_str()))
                && (r.task.is_none() || r.task == task)
        });
        let general = || {
            self.rules
                .iter()
                .find(|r| r.contains.is_none() && (r.task.is_none() || r.task == task))
        };
        if let Some(rule) = specific.or_else(general) {
            return Ok(rule.reply.clone());
        }
        match &self.fallback {
            Some(fallback) => fallback.chat(request),
            None => Err(ProviderError::NoScript(
                task.map_or_else(|| "<unknown>".to_string(), |t| t.tag().to_string()),
            )),
        }
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }
}

static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+(?:[.,]\d+)?").expect("valid regex"));
static YEAR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(19|20)\d{2}\b").expect("valid regex"));

const OPINION_CUES: &[&str] = &[
    "argue", "argues", "believe", "believes", "opinion", "critics", "supporters", "prefer",
    "prefers", "should", "overrated", "underrated", "in my view",
];
const TEMPORAL_CUES: &[&str] = &[
    "updated", "revised", "as of", "previously", "currently", "now", "superseded", "latest",
    "no longer", "changed",
];

fn has_cue(text: &str, cues: &[&str]) -> bool {
    let tokens = format!(" {} ", tokenize(text).join(" "));
    cues.iter().any(|c| tokens.contains(&format!(" {c} ")))
}

/// Parsed form of [`crate::model::Document::render_for_prompt`].
#[derive(Debug, Default)]
struct PromptDocument {
    source: String,
    date: Option<String>,
    authority_hint: Option<f64>,
    text: String,
}

fn parse_prompt_document(block: &str) -> PromptDocument {
    let mut doc = PromptDocument::default();
    let mut in_text = false;
    for line in block.trim().lines() {
        if in_text {
            doc.text.push('\n');
            doc.text.push_str(line);
        } else if let Some(v) = line.strip_prefix("source: ") {
            doc.source = v.trim().to_string();
        } else if let Some(v) = line.strip_prefix("date: ") {
            doc.date = Some(v.trim().to_string());
        } else if let Some(v) = line.strip_prefix("authority_hint: ") {
            doc.authority_hint = v.trim().parse().ok();
        } else if let Some(v) = line.strip_prefix("text: ") {
            doc.text = v.to_string();
            in_text = true;
        }
    }
    if !in_text {
        doc.text = block.trim().to_string();
    }
    doc
}

fn numbers(text: &str) -> BTreeSet<String> {
    NUMBER.find_iter(text).map(|m| m.as_str().replace(',', ".")).collect()
}

fn answer_section(candidate: &str) -> &str {
    let Some(start) = candidate.find("ANSWER:") else {
        return candidate.trim();
    };
    let body = &candidate[start + "ANSWER:".len()..];
    let end = ["\nCONFLICTS:", "\nSOURCES:", "\nCONFIDENCE:"]
        .iter()
        .filter_map(|s| body.find(s))
        .min()
        .unwrap_or(body.len());
    body[..end].trim()
}

fn year_of(date: &str) -> Option<f64> {
    let mut parts = date.split('-');
    let year: f64 = parts.next()?.trim().parse().ok()?;
    let month: f64 = parts.next().and_then(|m| m.parse().ok()).unwrap_or(1.0);
    Some(year + (month - 1.0) / 12.0)
}

/// Rule-driven offline chat model. See the module docs.
#[derive(Debug, Clone)]
pub struct RuleBasedChat {
    model_id: String,
}

impl Default for RuleBasedChat {
    fn default() -> Self {
        Self::new("mock-rule-based")
    }
}

impl RuleBasedChat {
    pub fn new(model_id: impl Into<String>) -> Self {
        Self { model_id: model_id.into() }
    }

    fn pair_judge(&self, prompt: &str) -> String {
        let a = parse_prompt_document(between_tags(prompt, "document_a").unwrap_or_default());
        let b = parse_prompt_document(between_tags(prompt, "document_b").unwrap_or_default());
        let (na, nb) = (numbers(&a.text), numbers(&b.text));
        let (kind, rationale) = if has_cue(&a.text, OPINION_CUES) && has_cue(&b.text, OPINION_CUES) {
            ("opinion", "both documents state differing viewpoints")
        } else if !na.is_empty() && !nb.is_empty() && na != nb {
            if has_cue(&a.text, TEMPORAL_CUES) || has_cue(&b.text, TEMPORAL_CUES) {
                ("temporal", "the documents report values from different points in time")
            } else {
                ("factual", "the documents report incompatible values")
            }
        } else {
            ("none", "the documents are compatible")
        };
        format!(
            r#"{{"is_conflict": {}, "type": "{kind}", "rationale": "{rationale}"}}"#,
            kind != "none"
        )
    }

    fn criteria(&self, prompt: &str) -> String {
        let question = prompt
            .lines()
            .find_map(|l| l.strip_prefix("Question: "))
            .unwrap_or_default();
        let doc = parse_prompt_document(between_tags(prompt, "document").unwrap_or_default());
        let authority = doc.authority_hint.unwrap_or(0.5);
        let recency = doc
            .date
            .as_deref()
            .and_then(year_of)
            .map_or(0.3, |y| ((y - 1990.0) / 40.0).clamp(0.0, 1.0));
        let q: BTreeSet<String> = tokenize(question).into_iter().collect();
        let d: BTreeSet<String> = tokenize(&doc.text).into_iter().collect();
        let relevance = if q.is_empty() {
            0.0
        } else {
            q.intersection(&d).count() as f64 / q.len() as f64
        };
        let specificity = (numbers(&doc.text).len() as f64 / 3.0).min(1.0);
        format!(
            r#"{{"authority": {authority:.4}, "recency": {recency:.4}, "relevance": {relevance:.4}, "specificity": {specificity:.4}, "consistency": 0.5}}"#
        )
    }

    fn date_extract(&self, prompt: &str) -> String {
        let doc = parse_prompt_document(between_tags(prompt, "document").unwrap_or_default());
        YEAR.find(&doc.text)
            .map_or_else(|| "UNKNOWN".to_string(), |m| format!("{}-01-01", m.as_str()))
    }

    fn open_book(&self, prompt: &str) -> String {
        all_tags(prompt, "document")
            .first()
            .map_or_else(|| "UNKNOWN".to_string(), |(_, body)| first_sentence(body).to_string())
    }

    fn parametric_compare(&self, prompt: &str) -> String {
        let closed = between_tags(prompt, "closed_book_answer").unwrap_or_default().trim();
        let open = between_tags(prompt, "open_book_answer").unwrap_or_default().trim();
        let conflicting = !closed.eq_ignore_ascii_case("unknown")
            && !open.eq_ignore_ascii_case("unknown")
            && numbers(closed) != numbers(open);
        format!(r#"{{"conflicting": {conflicting}, "explanation": "rule-based comparison"}}"#)
    }

    fn generate(&self, prompt: &str) -> String {
        let docs_block = between_tags(prompt, "documents").unwrap_or_default();
        let docs = all_tags(docs_block, "document");
        let Some(&(first_attrs, first_body)) = docs.first() else {
            return "ANSWER: UNKNOWN\nCONFIDENCE: Low - no documents".to_string();
        };
        let used: Vec<(&str, &str)> = if attribute(first_attrs, "role") == Some("perspective") {
            docs.iter()
                .filter(|(attrs, _)| attribute(attrs, "role") == Some("perspective"))
                .copied()
                .collect()
        } else {
            vec![(first_attrs, first_body)]
        };
        let answer = used
            .iter()
            .map(|(_, body)| first_sentence(body))
            .collect::<Vec<_>>()
            .join(" ");
        let conflicts: Vec<&str> = between_tags(prompt, "conflicts")
            .unwrap_or_default()
            .lines()
            .filter_map(|l| l.trim().strip_prefix("- "))
            .collect();
        let mut out = format!("ANSWER: {answer}\n");
        if !conflicts.is_empty() {
            out.push_str("CONFLICTS:\n");
            for c in &conflicts {
                out.push_str(&format!("- {c}\n"));
            }
        }
        out.push_str("SOURCES:\n");
        for (attrs, body) in &used {
            let source = attribute(attrs, "source").unwrap_or("unknown");
            out.push_str(&format!("- {} | {source}\n", first_sentence(body)));
        }
        if conflicts.is_empty() {
            out.push_str("CONFIDENCE: High - the sources agree");
        } else {
            out.push_str("CONFIDENCE: Moderate - sources disagree and were reconciled");
        }
        out
    }

    fn judge(&self, prompt: &str) -> String {
        let gold = between_tags(prompt, "gold_answer").unwrap_or_default();
        let candidate = answer_section(between_tags(prompt, "candidate_answer").unwrap_or_default());
        let answer_tokens: BTreeSet<String> = tokenize(candidate).into_iter().collect();
        let gold_tokens = tokenize(gold);
        let correct = !gold_tokens.is_empty() && gold_tokens.iter().all(|t| answer_tokens.contains(t));
        format!(r#"{{"correct": {correct}, "rationale": "gold tokens {} in the answer"}}"#,
            if correct { "present" } else { "missing" })
    }

    fn rate(&self, prompt: &str, task: Task) -> String {
        let detected = between_tags(prompt, "detected_conflicts")
            .is_some_and(|c| !c.trim().is_empty() && c.trim() != "none");
        let answer = between_tags(prompt, "answer").unwrap_or_default();
        let annotated = answer.contains("CONFLICTS:");
        let sourced = answer.contains("SOURCES:");
        let qualified = answer.contains("CONFIDENCE:");
        let rating = match task {
            Task::RateResolution => match (detected, annotated) {
                (true, true) => 4 + usize::from(sourced),
                (true, false) => 2,
                (false, _) => 3 + usize::from(sourced),
            },
            _ => 1 + 2 * usize::from(annotated) + usize::from(sourced) + usize::from(qualified),
        };
        rating.to_string()
    }
}

impl ChatProvider for RuleBasedChat {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        request.validate()?;
        let prompt = request.user_prompt.as_str();
        let task = request
            .task()
            .ok_or_else(|| ProviderError::NoScript("<unknown>".into()))?;
        Ok(match task {
            Task::PairJudge => self.pair_judge(prompt),
            Task::ClosedBook => "UNKNOWN".to_string(),
            Task::OpenBook => self.open_book(prompt),
            Task::ParametricCompare => self.parametric_compare(prompt),
            Task::CriteriaScore => self.criteria(prompt),
            Task::DateExtract => self.date_extract(prompt),
            Task::GenerateConflictAware | Task::GenerateStandard => self.generate(prompt),
            Task::JudgeCorrectness => self.judge(prompt),
            Task::RateResolution | Task::RateTransparency => self.rate(prompt, task),
        })
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }
}

/// Wraps a provider and memoizes replies by exact request, so repeated
/// identical calls are answered once.
pub struct MemoChat<P> {
    inner: P,
    cache: Mutex<HashMap<(String, String, u64), String>>,
}

impl<P: ChatProvider> MemoChat<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl<P: ChatProvider> ChatProvider for MemoChat<P> {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let key = (
            request.system_prompt.clone(),
            request.user_prompt.clone(),
            request.temperature.to_bits(),
        );
        if let Some(hit) = self.cache.lock().expect("cache poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let reply = self.inner.chat(request)?;
        self.cache.lock().expect("cache poisoned").insert(key, reply.clone());
        Ok(reply)
    }

    fn model_id(&self) -> &str {
        self.inner.model_id()
    }
}
