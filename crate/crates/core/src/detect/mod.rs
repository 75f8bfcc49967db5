//! Two-stage conflict detection.
//!
//! Every document pair is first scored by the MLP heads (Stage 1). When
//! Head 1's softmax confidence falls strictly below `tau_c`, the pair is
//! escalated to a structured LLM judgment (Stage 2). A
//! [`DetectionCostLedger`] records how many pairs each stage decided, the
//! time spent, and the estimated API spend.
//!
//! Parametric–contextual conflicts are detected separately by comparing a
//! closed-book answer with an open-book one ([`detect_parametric`]).

mod features;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use features::{build_features, pair_input, PairFeatures};

use crate::model::{
    enumerate_pairs, ConflictFinding, ConflictReport, ConflictType, Document, DocumentPair, ParametricVerdict,
    Query, Stage,
};
use crate::neural::{softmax, HeadKind, MlpModel, ModelError};
use crate::providers::{
    estimate_tokens, json_objects, parse_verdict, ChatProvider, ChatRequest, Embedder, ProviderError, Task,
    TEMPERATURE_DETECTION,
};
use crate::templates::{document_tag, Templates};
use crate::text::tokenize;

/// Confidence assigned to every parsed Stage-2 verdict.
pub const STAGE2_CONFIDENCE: f64 = 0.95;
/// Confidence recorded when a Stage-2 reply cannot be parsed.
pub const STAGE2_PARSE_FAILURE_CONFIDENCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    tau_c: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self { tau_c: 0.7 }
    }
}

impl ThresholdConfig {
    pub fn new(tau_c: f64) -> Result<Self, DetectError> {
        if !(0.0..=1.0).contains(&tau_c) {
            return Err(DetectError::Threshold(tau_c));
        }
        Ok(Self { tau_c })
    }

    pub fn tau_c(&self) -> f64 {
        self.tau_c
    }
}

/// Head 1 (binary) and Head 2 (four-way), sharing the same pair features.
#[derive(Debug, Clone)]
pub struct DetectorModels {
    head1: MlpModel,
    head2: MlpModel,
}

impl DetectorModels {
    pub fn new(head1: MlpModel, head2: MlpModel) -> Result<Self, DetectError> {
        if head1.head_kind() != HeadKind::Binary || head2.head_kind() != HeadKind::FourWay {
            return Err(DetectError::HeadKinds);
        }
        Ok(Self { head1, head2 })
    }

    /// All-zero heads: every pair gets confidence 0.5, so under any
    /// `tau_c > 0.5` every pair escalates to Stage 2.
    pub fn untrained() -> Self {
        use crate::neural::{Layer, FEATURE_DIM};
        Self {
            head1: MlpModel::from_layers(HeadKind::Binary, vec![Layer::zeros(FEATURE_DIM, 2)])
                .expect("valid shape"),
            head2: MlpModel::from_layers(HeadKind::FourWay, vec![Layer::zeros(FEATURE_DIM, 4)])
                .expect("valid shape"),
        }
    }

    pub fn head1(&self) -> &MlpModel {
        &self.head1
    }

    pub fn head2(&self) -> &MlpModel {
        &self.head2
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage1Outcome {
    pub is_conflict: bool,
    pub conflict_type: ConflictType,
    /// Head 1's softmax probability for its predicted class.
    pub confidence: f64,
}

/// Head 1 decides conflict/no-conflict and the confidence; Head 2 supplies
/// the type. If Head 2 votes no-conflict while Head 1 says conflict, the
/// type is Head 2's most probable conflict class.
pub fn stage1(features: &PairFeatures, models: &DetectorModels) -> Result<Stage1Outcome, ModelError> {
    let p1 = softmax(&models.head1.forward(features.as_slice())?);
    let is_conflict = p1[1] > p1[0];
    let confidence = p1[usize::from(is_conflict)];
    if !is_conflict {
        return Ok(Stage1Outcome {
            is_conflict,
            conflict_type: ConflictType::NoConflict,
            confidence,
        });
    }
    let p2 = models.head2.predict_proba(features.as_slice())?;
    let mut best = 1;
    for c in 2..4 {
        if p2[c] > p2[best] {
            best = c;
        }
    }
    Ok(Stage1Outcome {
        is_conflict,
        conflict_type: ConflictType::from_index(best).expect("index < 4"),
        confidence,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RoutingDecision {
    AcceptStage1(ConflictFinding),
    EscalateToStage2,
}

/// Escalates exactly when `confidence < tau_c`.
pub fn route(outcome: &Stage1Outcome, pair: DocumentPair, threshold: &ThresholdConfig) -> RoutingDecision {
    if outcome.confidence < threshold.tau_c {
        RoutingDecision::EscalateToStage2
    } else {
        RoutingDecision::AcceptStage1(ConflictFinding {
            pair,
            conflict_type: outcome.conflict_type,
            confidence: outcome.confidence,
            stage: Stage::Stage1,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Result {
    /// May carry [`ConflictType::NoConflict`]; callers drop those.
    pub finding: ConflictFinding,
    pub input_tokens: usize,
    pub output_tokens: usize,
    pub parse_failed: bool,
}

pub fn pair_judge_request(query: &Query, doc_a: &Document, doc_b: &Document, templates: &Templates) -> ChatRequest {
    let prompt = templates.render(
        Task::PairJudge,
        &[
            ("query", query.text.as_str()),
            ("doc_a", &doc_a.render_for_prompt()),
            ("doc_b", &doc_b.render_for_prompt()),
        ],
    );
    ChatRequest::new(Task::PairJudge, prompt, TEMPERATURE_DETECTION)
}

pub fn stage2(
    query: &Query,
    doc_a: &Document,
    doc_b: &Document,
    pair: DocumentPair,
    chat: &dyn ChatProvider,
    templates: &Templates,
) -> Result<Stage2Result, ProviderError> {
    let request = pair_judge_request(query, doc_a, doc_b, templates);
    let reply = chat.chat(&request)?;
    let (conflict_type, confidence, parse_failed) = match parse_verdict(&reply) {
        Ok(v) => (v.conflict_type(), STAGE2_CONFIDENCE, false),
        Err(e) => {
            log::warn!("query {}: pair {pair} verdict unparseable ({e}); treating as no conflict", query.id);
            (ConflictType::NoConflict, STAGE2_PARSE_FAILURE_CONFIDENCE, true)
        }
    };
    Ok(Stage2Result {
        finding: ConflictFinding {
            pair,
            conflict_type,
            confidence,
            stage: Stage::Stage2,
        },
        input_tokens: request.estimated_input_tokens(),
        output_tokens: estimate_tokens(&reply),
        parse_failed,
    })
}

/// USD prices for Stage-2 calls, per thousand tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub usd_per_1k_input: f64,
    pub usd_per_1k_output: f64,
}

impl Default for CostTable {
    fn default() -> Self {
        Self {
            usd_per_1k_input: 0.000_15,
            usd_per_1k_output: 0.000_6,
        }
    }
}

impl CostTable {
    pub fn cost(&self, input_tokens: usize, output_tokens: usize) -> f64 {
        (input_tokens as f64 * self.usd_per_1k_input + output_tokens as f64 * self.usd_per_1k_output) / 1000.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionCostLedger {
    pub pairs_total: usize,
    pub stage1_resolved: usize,
    pub stage2_calls: usize,
    pub stage1_latency_ms: f64,
    pub stage2_latency_ms: f64,
    pub estimated_cost_usd: f64,
}

impl DetectionCostLedger {
    pub fn merge(&mut self, other: &DetectionCostLedger) {
        self.pairs_total += other.pairs_total;
        self.stage1_resolved += other.stage1_resolved;
        self.stage2_calls += other.stage2_calls;
        self.stage1_latency_ms += other.stage1_latency_ms;
        self.stage2_latency_ms += other.stage2_latency_ms;
        self.estimated_cost_usd += other.estimated_cost_usd;
    }

    pub fn stage2_rate(&self) -> f64 {
        if self.pairs_total == 0 {
            0.0
        } else {
            self.stage2_calls as f64 / self.pairs_total as f64
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.stage1_resolved + self.stage2_calls == self.pairs_total
    }
}

/// How pairs are routed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorMode {
    /// Stage 1 with escalation below `tau_c`.
    #[default]
    TwoStage,
    /// Stage 1 decides every pair.
    Stage1Only,
    /// Every pair goes to the LLM.
    LlmOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub mode: DetectorMode,
    pub threshold: ThresholdConfig,
    pub cost: CostTable,
}

/// Providers and assets a detection run needs.
pub struct DetectionContext<'a> {
    pub models: &'a DetectorModels,
    pub embedder: &'a dyn Embedder,
    pub chat: &'a dyn ChatProvider,
    pub templates: &'a Templates,
}

struct PairOutcome {
    finding: ConflictFinding,
    escalated: bool,
    stage1_ms: f64,
    stage2_ms: f64,
    cost: f64,
}

/// Examines all `C(K, 2)` pairs. Pairs run in parallel; results are
/// collected in pair order.
pub fn detect_conflicts(
    query: &Query,
    documents: &[Document],
    ctx: &DetectionContext<'_>,
    config: &DetectorConfig,
) -> Result<(ConflictReport, DetectionCostLedger), DetectError> {
    let pairs = enumerate_pairs(documents.len());
    if pairs.is_empty() {
        return Ok((ConflictReport::empty(), DetectionCostLedger::default()));
    }

    let embed_started = Instant::now();
    let embeddings = if config.mode == DetectorMode::LlmOnly {
        Vec::new()
    } else {
        documents
            .par_iter()
            .enumerate()
            .map(|(i, d)| {
                ctx.embedder
                    .embed(&pair_input(query, d))
                    .map_err(|source| DetectError::Embedding { document: i, source })
            })
            .collect::<Result<Vec<_>, _>>()?
    };
    let embed_ms = embed_started.elapsed().as_secs_f64() * 1e3;

    let outcomes = pairs
        .par_iter()
        .map(|&pair| -> Result<PairOutcome, DetectError> {
            let (a, b) = (pair.index_a(), pair.index_b());
            let mut stage1_ms = 0.0;
            let accepted = if config.mode == DetectorMode::LlmOnly {
                None
            } else {
                let started = Instant::now();
                let features = PairFeatures::from_embeddings(&embeddings[a], &embeddings[b]);
                let outcome = stage1(&features, ctx.models).map_err(|source| DetectError::Model { pair, source })?;
                stage1_ms = started.elapsed().as_secs_f64() * 1e3;
                let threshold = match config.mode {
                    DetectorMode::Stage1Only => ThresholdConfig { tau_c: 0.0 },
                    _ => config.threshold,
                };
                match route(&outcome, pair, &threshold) {
                    RoutingDecision::AcceptStage1(f) => Some(f),
                    RoutingDecision::EscalateToStage2 => None,
                }
            };
            if let Some(finding) = accepted {
                return Ok(PairOutcome {
                    finding,
                    escalated: false,
                    stage1_ms,
                    stage2_ms: 0.0,
                    cost: 0.0,
                });
            }
            let started = Instant::now();
            let result = stage2(query, &documents[a], &documents[b], pair, ctx.chat, ctx.templates)
                .map_err(|source| DetectError::Provider { pair, source })?;
            Ok(PairOutcome {
                finding: result.finding,
                escalated: true,
                stage1_ms,
                stage2_ms: started.elapsed().as_secs_f64() * 1e3,
                cost: config.cost.cost(result.input_tokens, result.output_tokens),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut ledger = DetectionCostLedger {
        pairs_total: pairs.len(),
        stage1_latency_ms: embed_ms,
        ..DetectionCostLedger::default()
    };
    let mut report = ConflictReport {
        pairs_examined: pairs.len(),
        ..ConflictReport::default()
    };
    for o in outcomes {
        if o.escalated {
            ledger.stage2_calls += 1;
        } else {
            ledger.stage1_resolved += 1;
        }
        ledger.stage1_latency_ms += o.stage1_ms;
        ledger.stage2_latency_ms += o.stage2_ms;
        ledger.estimated_cost_usd += o.cost;
        if o.finding.conflict_type.is_conflict() {
            report.findings.push(o.finding);
        }
    }
    report.stage2_calls = ledger.stage2_calls;
    debug_assert!(ledger.is_consistent());
    Ok((report, ledger))
}

pub fn documents_block(documents: &[Document]) -> String {
    documents
        .iter()
        .enumerate()
        .map(|(i, d)| document_tag(i + 1, d, None))
        .collect::<Vec<_>>()
        .join("\n")
}

fn normalized(answer: &str) -> Vec<String> {
    tokenize(answer)
}

fn parse_comparison(reply: &str) -> Option<bool> {
    for map in json_objects(reply) {
        if let Some(b) = map.get("conflicting").and_then(Value::as_bool) {
            return Some(b);
        }
    }
    let lower = reply.to_lowercase();
    if lower.contains("disagree") || lower.contains("conflicting") {
        Some(true)
    } else if lower.contains("agree") || lower.contains("consistent") {
        Some(false)
    } else {
        None
    }
}

/// Compares `LLM(q)` with `LLM(q, D)`. Identical normalized answers skip the
/// comparison call; on disagreement the retrieved evidence is preferred.
pub fn detect_parametric(
    query: &Query,
    documents: &[Document],
    chat: &dyn ChatProvider,
    templates: &Templates,
) -> Result<ParametricVerdict, DetectError> {
    if documents.is_empty() {
        return Err(DetectError::NoDocuments);
    }
    let ask = |task: Task, prompt: String| {
        chat.chat(&ChatRequest::new(task, prompt, TEMPERATURE_DETECTION))
            .map(|s| s.trim().to_string())
            .map_err(DetectError::Parametric)
    };
    let closed = ask(Task::ClosedBook, templates.render(Task::ClosedBook, &[("query", &query.text)]))?;
    let open = ask(
        Task::OpenBook,
        templates.render(
            Task::OpenBook,
            &[("query", &query.text), ("documents", &documents_block(documents))],
        ),
    )?;
    let conflicting = if normalized(&closed) == normalized(&open) {
        false
    } else {
        let reply = ask(
            Task::ParametricCompare,
            templates.render(
                Task::ParametricCompare,
                &[("query", &query.text), ("closed_book", &closed), ("open_book", &open)],
            ),
        )?;
        parse_comparison(&reply).unwrap_or_else(|| {
            log::warn!("query {}: parametric comparison unparseable; assuming agreement", query.id);
            false
        })
    };
    let resolution_note = if conflicting {
        format!(
            "Retrieved evidence ({open:?}) contradicts the model's closed-book answer ({closed:?}); the retrieved evidence is preferred."
        )
    } else {
        String::new()
    };
    Ok(ParametricVerdict {
        closed_book_answer: closed,
        open_book_answer: open,
        conflicting,
        resolution_note,
    })
}

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("tau_c {0} is outside [0, 1]")]
    Threshold(f64),
    #[error("head 1 must be binary and head 2 four-way")]
    HeadKinds,
    #[error("embedding document {document} failed: {source}")]
    Embedding {
        document: usize,
        #[source]
        source: ProviderError,
    },
    #[error("stage 1 failed on pair {pair}: {source}")]
    Model {
        pair: DocumentPair,
        #[source]
        source: ModelError,
    },
    #[error("stage 2 failed on pair {pair}: {source}")]
    Provider {
        pair: DocumentPair,
        #[source]
        source: ProviderError,
    },
    #[error("parametric detection failed: {0}")]
    Parametric(#[source] ProviderError),
    #[error("parametric detection needs at least one document")]
    NoDocuments,
}
