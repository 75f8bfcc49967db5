//! End-to-end composition: retrieve, detect, resolve, generate, and the
//! evaluation harness that runs it over a dataset.

use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, EndpointConfig, PipelineConfig};
use crate::detect::{
    detect_conflicts, detect_parametric, pair_input, DetectError, DetectionContext, DetectionCostLedger,
    DetectorConfig, DetectorModels, PairFeatures,
};
use crate::evaluate::{
    detection_counts, judge_correctness, rate_quality, source_fidelity, token_f1, QualityDimension, QueryScores,
    RunRecord,
};
use crate::generate::{
    build_generation_prompt, build_standard_prompt, generate_answer, AnnotatedAnswer, GenerationConfig,
};
use crate::model::{enumerate_pairs, ConflictReport, ConflictType, DatasetRecord, Document, Query};
use crate::neural::{load_model, LabeledPairExample, ModelError};
use crate::providers::http::{HttpChatProvider, HttpConfig, HttpEmbedder, Limiter, RetryPolicy};
use crate::providers::mock::{RuleBasedChat, TokenHashEmbedder};
use crate::providers::{ChatProvider, EmbeddingVector, Embedder, ProviderError};
use crate::resolve::{resolve, ResolveConfig, ResolvedContext};
use crate::retrieval::{embed_corpus, hybrid_retrieve, InvertedIndex, RetrievalConfig, RetrievalError};
use crate::templates::Templates;

/// Which system answers: the full pipeline or one of the baselines sharing
/// its retrieval and generation plumbing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemMode {
    #[default]
    ConflictAware,
    /// All retrieved documents in retrieval order, no conflict handling.
    Standard,
    /// Only the first retrieved document.
    RerankTop1,
}

impl SystemMode {
    pub fn name(self) -> &'static str {
        match self {
            SystemMode::ConflictAware => "conflict-aware",
            SystemMode::Standard => "standard",
            SystemMode::RerankTop1 => "rerank-top1",
        }
    }
}

impl FromStr for SystemMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conflict-aware" => Ok(SystemMode::ConflictAware),
            "standard" => Ok(SystemMode::Standard),
            "rerank-top1" => Ok(SystemMode::RerankTop1),
            other => Err(format!("unknown system {other:?} (expected conflict-aware, standard or rerank-top1)")),
        }
    }
}

#[derive(Clone)]
pub struct Providers {
    pub generator: Arc<dyn ChatProvider>,
    pub judge: Arc<dyn ChatProvider>,
    pub embedder: Arc<dyn Embedder>,
}

impl Providers {
    /// Offline rule-based chat models and a bag-of-words hash embedder.
    pub fn mock() -> Self {
        Self {
            generator: Arc::new(RuleBasedChat::new("mock-generator")),
            judge: Arc::new(RuleBasedChat::new("mock-judge")),
            embedder: Arc::new(TokenHashEmbedder),
        }
    }

    /// OpenAI-compatible HTTP providers sharing one rate limiter.
    pub fn live(config: &PipelineConfig) -> Result<Self, ProviderError> {
        let limiter = Arc::new(Limiter::new(config.limits.max_concurrent, config.limits.requests_per_minute));
        Ok(Self {
            generator: Arc::new(HttpChatProvider::new(http_config(&config.generator)?, limiter.clone())?),
            judge: Arc::new(HttpChatProvider::new(http_config(&config.judge)?, limiter.clone())?),
            embedder: Arc::new(HttpEmbedder::new(http_config(&config.embedder)?, limiter)?),
        })
    }
}

fn http_config(endpoint: &EndpointConfig) -> Result<HttpConfig, ProviderError> {
    let mut http = HttpConfig::new(&endpoint.base_url, &endpoint.model);
    http.timeout = Duration::from_secs(endpoint.timeout_secs);
    http.retry = RetryPolicy {
        max_attempts: endpoint.max_attempts.max(1),
        ..RetryPolicy::default()
    };
    match (&endpoint.api_key, &endpoint.api_key_env) {
        (Some(key), _) => http.api_key = Some(key.clone()),
        (None, Some(var)) => http = http.with_api_key_env(var)?,
        (None, None) => {}
    }
    Ok(http)
}

/// Loads both heads, or falls back to untrained heads that defer every
/// pair to Stage 2 (their confidence is 0.5).
pub fn load_detector(config: &PipelineConfig) -> Result<DetectorModels, PipelineError> {
    match (&config.detector.head1, &config.detector.head2) {
        (Some(h1), Some(h2)) => {
            let models = DetectorModels::new(load_model(h1)?, load_model(h2)?)?;
            Ok(models)
        }
        _ => {
            log::warn!("no detector weights configured; Stage 1 will defer every pair below tau_c");
            Ok(DetectorModels::untrained())
        }
    }
}

pub fn load_templates(config: &PipelineConfig) -> Result<Templates, PipelineError> {
    match &config.template_dir {
        Some(dir) => Templates::from_dir(dir).map_err(|e| PipelineError::Templates(dir.display().to_string(), e)),
        None => Ok(Templates::builtin()),
    }
}

/// Everything produced while answering one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub documents: Vec<Document>,
    pub report: ConflictReport,
    pub ledger: DetectionCostLedger,
    pub resolved: ResolvedContext,
    pub answer: AnnotatedAnswer,
}

pub struct Pipeline {
    providers: Providers,
    models: DetectorModels,
    templates: Templates,
    pub detector: DetectorConfig,
    pub resolve: ResolveConfig,
    pub generation: GenerationConfig,
    /// Run the closed-book/open-book comparison.
    pub parametric: bool,
}

impl Pipeline {
    /// Default configuration around the given providers and detector.
    pub fn new(providers: Providers, models: DetectorModels, templates: Templates) -> Self {
        Self {
            providers,
            models,
            templates,
            detector: DetectorConfig::default(),
            resolve: ResolveConfig::default(),
            generation: GenerationConfig::default(),
            parametric: true,
        }
    }

    pub fn from_config(config: &PipelineConfig, providers: Providers) -> Result<Self, PipelineError> {
        let mut pipeline = Self::new(providers, load_detector(config)?, load_templates(config)?);
        pipeline.detector = DetectorConfig {
            mode: config.detector.mode,
            threshold: config.threshold(),
            cost: config.cost,
        };
        pipeline.resolve = config.resolve;
        pipeline.generation = config.generation;
        pipeline.parametric = config.detector.parametric;
        Ok(pipeline)
    }

    pub fn providers(&self) -> &Providers {
        &self.providers
    }

    pub fn templates(&self) -> &Templates {
        &self.templates
    }

    pub fn models(&self) -> &DetectorModels {
        &self.models
    }

    /// Conflict detection alone, including the parametric check when enabled.
    pub fn detect(
        &self,
        query: &Query,
        documents: &[Document],
    ) -> Result<(ConflictReport, DetectionCostLedger), DetectError> {
        let ctx = DetectionContext {
            models: &self.models,
            embedder: self.providers.embedder.as_ref(),
            chat: self.providers.generator.as_ref(),
            templates: &self.templates,
        };
        let (mut report, ledger) = detect_conflicts(query, documents, &ctx, &self.detector)?;
        if self.parametric && !documents.is_empty() {
            report.parametric = Some(detect_parametric(
                query,
                documents,
                self.providers.generator.as_ref(),
                &self.templates,
            )?);
        }
        Ok((report, ledger))
    }

    /// Answers `query` from already-retrieved `documents`.
    pub fn answer(&self, query: &Query, documents: &[Document], mode: SystemMode) -> Result<QueryOutcome, PipelineError> {
        let chat = self.providers.generator.as_ref();
        let (documents, report, ledger, resolved, request) = match mode {
            SystemMode::ConflictAware => {
                let (report, ledger) = self.detect(query, documents)?;
                let resolved = resolve(query, documents, &report, chat, &self.templates, &self.resolve);
                let request = build_generation_prompt(query, &resolved, &report, &self.templates, &self.generation);
                (documents.to_vec(), report, ledger, resolved, request)
            }
            SystemMode::Standard | SystemMode::RerankTop1 => {
                let docs = if mode == SystemMode::RerankTop1 { &documents[..documents.len().min(1)] } else { documents };
                let request = build_standard_prompt(query, docs, &self.templates);
                let resolved = ResolvedContext::passthrough(docs);
                (docs.to_vec(), ConflictReport::empty(), DetectionCostLedger::default(), resolved, request)
            }
        };
        let answer = generate_answer(&request, &report, &resolved, chat)?;
        Ok(QueryOutcome { documents, report, ledger, resolved, answer })
    }
}

/// A persisted index with its dense embeddings, ready to serve queries.
pub struct Retriever {
    index: InvertedIndex,
    embeddings: Vec<EmbeddingVector>,
    config: RetrievalConfig,
}

impl Retriever {
    pub fn new(index: InvertedIndex, embedder: &dyn Embedder, config: RetrievalConfig) -> Result<Self, RetrievalError> {
        config.validate()?;
        let embeddings = embed_corpus(&index, embedder)?;
        Ok(Self { index, embeddings, config })
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }

    /// Top-K documents, best first.
    pub fn retrieve(&self, question: &str, embedder: &dyn Embedder) -> Result<Vec<Document>, RetrievalError> {
        Ok(hybrid_retrieve(question, &self.index, embedder, &self.embeddings, &self.config)?
            .into_iter()
            .map(|r| r.document)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub mode: SystemMode,
    /// Judge sees only the `ANSWER:` line.
    pub strip_annotations: bool,
    pub workers: usize,
    /// Documents per query taken from the dataset record, in record order.
    pub k: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            mode: SystemMode::ConflictAware,
            strip_annotations: false,
            workers: 4,
            k: RetrievalConfig::default().k,
        }
    }
}

impl EvalOptions {
    pub fn system_name(&self) -> String {
        let mut name = self.mode.name().to_string();
        if self.strip_annotations {
            name.push_str("+stripped");
        }
        name
    }
}

fn evaluate_record(pipeline: &Pipeline, record: &DatasetRecord, options: &EvalOptions) -> Result<RunRecord, String> {
    let query = &record.query;
    let gold = query.gold_answer.as_deref().ok_or("record has no gold_answer")?;
    let documents = &record.documents[..record.documents.len().min(options.k)];
    let outcome = pipeline.answer(query, documents, options.mode).map_err(|e| e.to_string())?;
    let judged_text = outcome.answer.render(options.strip_annotations);
    let judge = pipeline.providers.judge.as_ref();
    let templates = &pipeline.templates;
    let verdict = judge_correctness(query, &judged_text, gold, judge, templates).map_err(|e| format!("judge: {e}"))?;
    let detection = match &query.gold_conflicts {
        Some(g) => {
            let in_range: Vec<_> = g.iter().copied().filter(|c| c.pair.check_bounds(documents.len()).is_ok()).collect();
            Some(detection_counts(&outcome.report, &in_range, documents.len()).map_err(|e| e.to_string())?)
        }
        None => None,
    };
    let rate = |dim| {
        rate_quality(query, &judged_text, &outcome.report, judge, templates, dim).map_err(|e| format!("rating: {e}"))
    };
    let scores = QueryScores {
        correct: verdict.score,
        judge_rationale: verdict.rationale,
        token_f1: token_f1(&outcome.answer.answer, gold),
        detection,
        resolution: rate(QualityDimension::Resolution)?,
        transparency: rate(QualityDimension::Transparency)?,
        source_fidelity: source_fidelity(&outcome.answer, &outcome.resolved),
    };
    Ok(RunRecord {
        query_id: query.id.clone(),
        system: options.system_name(),
        answer: Some(outcome.answer),
        judged_text,
        topsis_weights: outcome.resolved.topsis_weights(),
        resolution_notes: outcome.resolved.notes,
        report: outcome.report,
        ledger: outcome.ledger,
        scores: Some(scores),
        error: None,
    })
}

/// Runs and scores every record on a pool of `options.workers` threads.
/// Output follows dataset order; a failing query becomes a record with
/// `error` set and the run continues.
pub fn evaluate_dataset(
    pipeline: &Pipeline,
    records: &[DatasetRecord],
    options: &EvalOptions,
) -> Result<Vec<RunRecord>, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.max(1))
        .build()
        .map_err(|e| PipelineError::WorkerPool(e.to_string()))?;
    let started = Instant::now();
    let out = pool.install(|| {
        records
            .par_iter()
            .map(|r| {
                evaluate_record(pipeline, r, options).unwrap_or_else(|e| {
                    log::error!("query {}: {e}", r.query.id);
                    RunRecord::failed(&r.query.id, options.system_name(), e)
                })
            })
            .collect::<Vec<_>>()
    });
    log::info!("evaluated {} queries in {:.1?}", records.len(), started.elapsed());
    Ok(out)
}

/// Labeled pair examples for detector training: every pair of every record,
/// typed by its gold label or `NoConflict`. Records must carry `gold_conflicts`.
pub fn training_examples(
    records: &[DatasetRecord],
    embedder: &dyn Embedder,
) -> Result<Vec<LabeledPairExample>, PipelineError> {
    let per_record: Vec<Vec<LabeledPairExample>> = records
        .par_iter()
        .map(|r| {
            let gold = r.query.gold_conflicts.as_ref().ok_or_else(|| PipelineError::MissingLabels(r.query.id.clone()))?;
            let embeddings = r
                .documents
                .iter()
                .map(|d| embedder.embed(&pair_input(&r.query, d)))
                .collect::<Result<Vec<_>, _>>()?;
            enumerate_pairs(r.documents.len())
                .into_iter()
                .map(|pair| {
                    let label = gold.iter().find(|g| g.pair == pair).map_or(ConflictType::NoConflict, |g| g.conflict_type);
                    let features = PairFeatures::from_embeddings(&embeddings[pair.index_a()], &embeddings[pair.index_b()]);
                    Ok(LabeledPairExample::new(features.into_vec(), label)?)
                })
                .collect()
        })
        .collect::<Result<_, PipelineError>>()?;
    Ok(per_record.into_iter().flatten().collect())
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error("generation failed: {0}")]
    Generate(#[from] ProviderError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("detector weights: {0}")]
    Model(#[from] ModelError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot read templates from {0}: {1}")]
    Templates(String, #[source] std::io::Error),
    #[error("record {0} has no gold_conflicts labels")]
    MissingLabels(String),
    #[error("cannot start worker pool: {0}")]
    WorkerPool(String),
}
