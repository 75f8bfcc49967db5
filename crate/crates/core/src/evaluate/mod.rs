//! Metrics: token F1, pair-level detection P/R/F1 with type accuracy,
//! LLM-judged correctness and 1–5 quality ratings, source fidelity, the CARS
//! composite and its weight sweep, and a paired bootstrap test.

mod bootstrap;
mod run;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use bootstrap::paired_bootstrap;
pub use run::{bootstrap_runs, read_run_file, write_run_file, QueryScores, RunRecord, RunSummary};

use crate::generate::AnnotatedAnswer;
use crate::model::{ConflictReport, ConflictType, DocumentPair, GoldConflict, Query, ValidationError};
use crate::providers::{json_objects, ChatProvider, ChatRequest, ProviderError, Task, TEMPERATURE_DETECTION};
use crate::resolve::ResolvedContext;
use crate::templates::Templates;
use crate::text::tokenize;

static INTEGER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"-?\d+").expect("valid pattern"));

/// Rationale recorded when the judge's reply cannot be read.
pub const JUDGE_PARSE_FAILURE: &str = "judge-parse-failure";

/// Multiset-overlap F1 over lowercase alphanumeric tokens.
pub fn token_f1(prediction: &str, gold: &str) -> f64 {
    let (p, g) = (tokenize(prediction), tokenize(gold));
    match (p.is_empty(), g.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &p {
        if let Some(c) = counts.get_mut(t.as_str()).filter(|c| **c > 0) {
            *c -= 1;
            overlap += 1;
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / p.len() as f64;
    let recall = overlap as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Pair-level detection counts; they add up across queries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// True positives whose predicted type matches the gold type.
    pub type_correct: usize,
}

impl DetectionCounts {
    pub fn add(&mut self, other: &DetectionCounts) {
        self.true_positives += other.true_positives;
        self.false_positives += other.false_positives;
        self.false_negatives += other.false_negatives;
        self.type_correct += other.type_correct;
    }

    pub fn metrics(&self) -> DetectionMetrics {
        let (tp, fp, fn_) = (self.true_positives as f64, self.false_positives as f64, self.false_negatives as f64);
        if tp + fp + fn_ == 0.0 {
            return DetectionMetrics {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
                type_accuracy: None,
            };
        }
        let precision = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
        let recall = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        DetectionMetrics {
            precision,
            recall,
            f1,
            type_accuracy: (self.true_positives > 0).then(|| self.type_correct as f64 / tp),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Share of true-positive pairs with the right type; `None` without any.
    pub type_accuracy: Option<f64>,
}

pub fn detection_counts(
    predicted: &ConflictReport,
    gold: &[GoldConflict],
    document_count: usize,
) -> Result<DetectionCounts, ValidationError> {
    for g in gold {
        g.pair.check_bounds(document_count)?;
    }
    let gold_map: BTreeMap<DocumentPair, ConflictType> = gold
        .iter()
        .filter(|g| g.conflict_type.is_conflict())
        .map(|g| (g.pair, g.conflict_type))
        .collect();
    let predicted_map: BTreeMap<DocumentPair, ConflictType> = predicted
        .findings
        .iter()
        .filter(|f| f.conflict_type.is_conflict())
        .map(|f| (f.pair, f.conflict_type))
        .collect();
    let mut counts = DetectionCounts::default();
    for (pair, t) in &predicted_map {
        match gold_map.get(pair) {
            Some(g) => {
                counts.true_positives += 1;
                counts.type_correct += usize::from(g == t);
            }
            None => counts.false_positives += 1,
        }
    }
    counts.false_negatives = gold_map.keys().filter(|p| !predicted_map.contains_key(p)).count();
    Ok(counts)
}

pub fn detection_metrics(
    predicted: &ConflictReport,
    gold: &[GoldConflict],
    document_count: usize,
) -> Result<DetectionMetrics, ValidationError> {
    Ok(detection_counts(predicted, gold, document_count)?.metrics())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct CarsWeights {
    w: [f64; 4],
}

impl Default for CarsWeights {
    fn default() -> Self {
        Self {
            w: [0.35, 0.25, 0.25, 0.15],
        }
    }
}

impl CarsWeights {
    /// Order: answer correctness, detection, resolution, source fidelity.
    pub fn new(w_a: f64, w_d: f64, w_r: f64, w_s: f64) -> Result<Self, EvaluateError> {
        let w = [w_a, w_d, w_r, w_s];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(EvaluateError::CarsWeights(w));
        }
        Ok(Self { w })
    }

    pub fn as_array(&self) -> [f64; 4] {
        self.w
    }
}

impl TryFrom<[f64; 4]> for CarsWeights {
    type Error = EvaluateError;

    fn try_from(w: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(w[0], w[1], w[2], w[3])
    }
}

impl From<CarsWeights> for [f64; 4] {
    fn from(w: CarsWeights) -> Self {
        w.w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarsComponents {
    pub ac: f64,
    pub cda: f64,
    pub ra: f64,
    pub sf: f64,
}

impl CarsComponents {
    pub fn new(ac: f64, cda: f64, ra: f64, sf: f64) -> Result<Self, EvaluateError> {
        let c = [ac, cda, ra, sf];
        if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(EvaluateError::CarsComponents(c));
        }
        Ok(Self { ac, cda, ra, sf })
    }

    fn as_array(&self) -> [f64; 4] {
        [self.ac, self.cda, self.ra, self.sf]
    }
}

/// Weighted sum with compensated (Neumaier) summation; plain left-to-right
/// addition turns (0.8, 0.9, 0.7, 0.6) into 0.7699999999999999.
pub fn cars(components: &CarsComponents, weights: &CarsWeights) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for (c, w) in components.as_array().iter().zip(weights.w) {
        let term = c * w;
        let t = sum + term;
        carry += if sum.abs() >= term.abs() { (sum - t) + term } else { (term - t) + sum };
        sum = t;
    }
    sum + carry
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub weight_vectors_checked: usize,
    /// Weight vectors under which some pair of systems changed order.
    pub flips: Vec<[f64; 4]>,
}

impl SweepReport {
    pub fn invariant(&self) -> bool {
        self.flips.is_empty()
    }
}

const TIE: f64 = 1e-12;

fn ordering_signs(systems: &[CarsComponents], weights: &CarsWeights) -> Vec<i8> {
    let scores: Vec<f64> = systems.iter().map(|s| cars(s, weights)).collect();
    let mut signs = Vec::new();
    for i in 0..scores.len() {
        for k in (i + 1)..scores.len() {
            let d = scores[i] - scores[k];
            signs.push(if d > TIE {
                1
            } else if d < -TIE {
                -1
            } else {
                0
            });
        }
    }
    signs
}

/// Shifts every weight by −delta, 0 or +delta (all 3⁴ combinations), clamps at
/// zero, renormalizes, and checks whether the pairwise CARS ordering of the
/// systems matches the ordering under `base`.
pub fn cars_weight_sweep(
    systems: &[CarsComponents],
    base: &CarsWeights,
    delta: f64,
) -> Result<SweepReport, EvaluateError> {
    if systems.len() < 2 {
        return Err(EvaluateError::TooFewSystems(systems.len()));
    }
    let reference = ordering_signs(systems, base);
    let steps = [-delta, 0.0, delta];
    let mut report = SweepReport {
        weight_vectors_checked: 0,
        flips: Vec::new(),
    };
    for code in 0..81usize {
        let shifted: [f64; 4] = std::array::from_fn(|j| (base.w[j] + steps[(code / 3usize.pow(j as u32)) % 3]).max(0.0));
        let sum: f64 = shifted.iter().sum();
        if sum <= 0.0 {
            continue;
        }
        let w = CarsWeights {
            w: shifted.map(|v| v / sum),
        };
        report.weight_vectors_checked += 1;
        if ordering_signs(systems, &w) != reference {
            report.flips.push(w.w);
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub score: u8,
    pub rationale: String,
}

fn parse_judgement(reply: &str) -> Option<JudgeVerdict> {
    for map in json_objects(reply) {
        let correct = match map.get("correct") {
            Some(Value::Bool(b)) => *b,
            Some(Value::Number(n)) => n.as_f64()? >= 0.5,
            Some(Value::String(s)) => match s.to_ascii_lowercase().as_str() {
                "true" | "yes" | "correct" => true,
                "false" | "no" | "incorrect" => false,
                _ => continue,
            },
            _ => continue,
        };
        let rationale = map.get("rationale").and_then(Value::as_str).unwrap_or_default().to_string();
        return Some(JudgeVerdict {
            score: u8::from(correct),
            rationale,
        });
    }
    let lower = reply.trim().to_ascii_lowercase();
    if lower.starts_with("incorrect") || lower.starts_with("false") {
        Some(JudgeVerdict { score: 0, rationale: reply.trim().to_string() })
    } else if lower.starts_with("correct") || lower.starts_with("true") {
        Some(JudgeVerdict { score: 1, rationale: reply.trim().to_string() })
    } else {
        None
    }
}

/// Binary correctness from the judge model at temperature 0.
pub fn judge_correctness(
    query: &Query,
    answer: &str,
    gold_answer: &str,
    chat: &dyn ChatProvider,
    templates: &Templates,
) -> Result<JudgeVerdict, ProviderError> {
    let prompt = templates.render(
        Task::JudgeCorrectness,
        &[("query", query.text.as_str()), ("gold_answer", gold_answer), ("answer", answer)],
    );
    let reply = chat.chat(&ChatRequest::new(Task::JudgeCorrectness, prompt, TEMPERATURE_DETECTION))?;
    Ok(parse_judgement(&reply).unwrap_or_else(|| {
        log::warn!("query {}: judge reply unparseable: {reply:?}", query.id);
        JudgeVerdict {
            score: 0,
            rationale: JUDGE_PARSE_FAILURE.to_string(),
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityDimension {
    Resolution,
    Transparency,
}

impl QualityDimension {
    fn task(self) -> Task {
        match self {
            QualityDimension::Resolution => Task::RateResolution,
            QualityDimension::Transparency => Task::RateTransparency,
        }
    }
}

/// First integer in the reply, clamped to 1–5; no integer gives 1.
pub fn parse_rating(reply: &str) -> u8 {
    match INTEGER.find(reply).and_then(|m| m.as_str().parse::<i64>().ok()) {
        Some(r) if (1..=5).contains(&r) => r as u8,
        Some(r) => {
            log::warn!("rating {r} clamped to 1..=5");
            r.clamp(1, 5) as u8
        }
        None => {
            log::warn!("rating reply {reply:?} has no integer; using 1");
            1
        }
    }
}

pub fn rescale_rating(rating: u8) -> f64 {
    (f64::from(rating.clamp(1, 5)) - 1.0) / 4.0
}

/// Detected conflicts as listed to the rater; "none" when there are none.
pub fn conflicts_summary(report: &ConflictReport) -> String {
    let mut lines: Vec<String> = report
        .findings
        .iter()
        .map(|f| format!("- {} conflict between documents {} and {}", f.conflict_type.as_str(), f.pair.index_a() + 1, f.pair.index_b() + 1))
        .collect();
    if let Some(p) = report.parametric.as_ref().filter(|p| p.conflicting) {
        lines.push(format!("- parametric conflict: {}", p.resolution_note));
    }
    if lines.is_empty() {
        "none".to_string()
    } else {
        lines.join("\n")
    }
}

pub fn rate_quality(
    query: &Query,
    answer: &str,
    report: &ConflictReport,
    chat: &dyn ChatProvider,
    templates: &Templates,
    dimension: QualityDimension,
) -> Result<u8, ProviderError> {
    let task = dimension.task();
    let prompt = templates.render(
        task,
        &[
            ("query", query.text.as_str()),
            ("conflicts", &conflicts_summary(report)),
            ("answer", answer),
        ],
    );
    let reply = chat.chat(&ChatRequest::new(task, prompt, TEMPERATURE_DETECTION))?;
    Ok(parse_rating(&reply))
}

/// Share of attributions naming a source the resolution selected (primary
/// sources and perspectives, or every source when nothing was resolved).
pub fn source_fidelity(answer: &AnnotatedAnswer, resolved: &ResolvedContext) -> f64 {
    if answer.source_attribution.is_empty() {
        return 0.0;
    }
    let credible: BTreeSet<&str> = resolved.credible_sources().into_iter().collect();
    let hits = answer
        .source_attribution
        .iter()
        .filter(|a| credible.contains(a.source.as_str()))
        .count();
    hits as f64 / answer.source_attribution.len() as f64
}

/// Judge and generator must differ unless explicitly allowed.
pub fn check_judge_distinct(generator_model: &str, judge_model: &str, allow_self_judge: bool) -> Result<(), EvaluateError> {
    if generator_model == judge_model && !allow_self_judge {
        return Err(EvaluateError::SelfJudge(generator_model.to_string()));
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("CARS weights {0:?} must be non-negative and sum to 1")]
    CarsWeights([f64; 4]),
    #[error("CARS components {0:?} must lie in [0, 1]")]
    CarsComponents([f64; 4]),
    #[error("a weight sweep needs at least two systems, got {0}")]
    TooFewSystems(usize),
    #[error("bootstrap needs two score lists of equal length >= 2 (got {0} and {1})")]
    BootstrapLengths(usize, usize),
    #[error("judge and generator are both {0:?}; pass --allow-self-judge to permit this")]
    SelfJudge(String),
    #[error("run files do not cover the same queries: {0}")]
    RunMismatch(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("{path}:{line}: {message}")]
    RunFormat { path: String, line: usize, message: String },
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{Attribution, ConfidenceLevel, ConfidenceQualifier};
    use crate::model::{ConflictFinding, Document, Stage};
    use crate::providers::mock::ScriptedChat;
    use crate::resolve::{DocumentRole, ResolvedDocument};
    use proptest::prelude::*;

    fn pair(a: usize, b: usize) -> DocumentPair {
        DocumentPair::new(a, b).unwrap()
    }

    fn predicted(items: &[(usize, usize, ConflictType)]) -> ConflictReport {
        ConflictReport {
            findings: items
                .iter()
                .map(|&(a, b, t)| ConflictFinding {
                    pair: pair(a, b),
                    conflict_type: t,
                    confidence: 0.9,
                    stage: Stage::Stage1,
                })
                .collect(),
            ..ConflictReport::default()
        }
    }

    fn gold(items: &[(usize, usize, ConflictType)]) -> Vec<GoldConflict> {
        items.iter().map(|&(a, b, t)| GoldConflict::new(pair(a, b), t).unwrap()).collect()
    }

    #[test]
    fn token_f1_cases() {
        assert_eq!(token_f1("the cat sat", "the cat"), 0.8);
        assert_eq!(token_f1("Paris", "paris"), 1.0);
        assert_eq!(token_f1("a b", "c d"), 0.0);
        assert_eq!(token_f1("", ""), 1.0);
        assert_eq!(token_f1("", "x"), 0.0);
        assert_eq!(token_f1("x", ""), 0.0);
        // Multiset: one "the" in the gold matches only one prediction copy.
        assert_eq!(token_f1("the the", "the"), 2.0 * 0.5 * 1.0 / 1.5);
    }

    #[test]
    fn detection_hand_case() {
        use ConflictType::*;
        let m = detection_metrics(
            &predicted(&[(0, 1, Factual), (1, 2, Temporal)]),
            &gold(&[(0, 1, Factual), (2, 3, Opinion)]),
            4,
        )
        .unwrap();
        assert_eq!((m.precision, m.recall, m.f1, m.type_accuracy), (0.5, 0.5, 0.5, Some(1.0)));
    }

    #[test]
    fn detection_edge_cases() {
        use ConflictType::*;
        let g = gold(&[(0, 1, Factual)]);
        let exact = detection_metrics(&predicted(&[(0, 1, Factual)]), &g, 2).unwrap();
        assert_eq!((exact.precision, exact.recall, exact.f1, exact.type_accuracy), (1.0, 1.0, 1.0, Some(1.0)));
        let none = detection_metrics(&predicted(&[]), &g, 2).unwrap();
        assert_eq!(none.recall, 0.0);
        let both_empty = detection_metrics(&predicted(&[]), &[], 2).unwrap();
        assert_eq!((both_empty.precision, both_empty.recall, both_empty.f1), (1.0, 1.0, 1.0));
        let disjoint = detection_metrics(&predicted(&[(1, 2, Factual)]), &gold(&[(0, 1, Factual)]), 3).unwrap();
        assert_eq!(disjoint.f1, 0.0);
        let wrong_type = detection_metrics(&predicted(&[(0, 1, Opinion)]), &g, 2).unwrap();
        assert_eq!((wrong_type.f1, wrong_type.type_accuracy), (1.0, Some(0.0)));
        assert!(detection_metrics(&predicted(&[]), &gold(&[(0, 5, Factual)]), 3).is_err());
    }

    #[test]
    fn cars_hand_cases() {
        let w = CarsWeights::default();
        assert_eq!(cars(&CarsComponents::new(0.8, 0.9, 0.7, 0.6).unwrap(), &w), 0.77);
        assert_eq!(cars(&CarsComponents::new(1.0, 1.0, 1.0, 1.0).unwrap(), &w), 1.0);
        assert_eq!(cars(&CarsComponents::new(0.0, 0.0, 0.0, 0.0).unwrap(), &w), 0.0);
        assert!(CarsWeights::new(0.5, 0.5, 0.1, 0.0).is_err());
        assert!(CarsComponents::new(1.1, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn sweep_dominance_and_ties() {
        let strong = CarsComponents::new(0.9, 0.8, 0.7, 0.9).unwrap();
        let weak = CarsComponents::new(0.5, 0.6, 0.7, 0.2).unwrap();
        let r = cars_weight_sweep(&[strong, weak], &CarsWeights::default(), 0.1).unwrap();
        assert!(r.invariant());
        assert_eq!(r.weight_vectors_checked, 81);
        let r = cars_weight_sweep(&[weak, weak], &CarsWeights::default(), 0.1).unwrap();
        assert!(r.invariant());
        assert!(cars_weight_sweep(&[weak], &CarsWeights::default(), 0.1).is_err());
    }

    #[test]
    fn sweep_detects_near_tie() {
        // Base difference 0.35·0.08 − 0.25·0.1 = 0.003; raising w_d by 0.1 flips it.
        let a = CarsComponents::new(0.8, 0.5, 0.7, 0.6).unwrap();
        let b = CarsComponents::new(0.72, 0.6, 0.7, 0.6).unwrap();
        let base = CarsWeights::default();
        assert!(cars(&a, &base) > cars(&b, &base));
        let r = cars_weight_sweep(&[a, b], &base, 0.1).unwrap();
        assert!(!r.invariant());
        let raised_d = [0.35 / 1.1, 0.35 / 1.1, 0.25 / 1.1, 0.15 / 1.1];
        assert!(r.flips.iter().any(|w| w.iter().zip(raised_d).all(|(x, y)| (x - y).abs() < 1e-12)));
    }

    #[test]
    fn judge_parsing() {
        let q = Query::new("q", "?");
        let t = Templates::builtin();
        let yes = ScriptedChat::new().on(Task::JudgeCorrectness, r#"{"correct": true, "rationale": "ok"}"#);
        assert_eq!(judge_correctness(&q, "a", "a", &yes, &t).unwrap(), JudgeVerdict { score: 1, rationale: "ok".into() });
        let no = ScriptedChat::new().on(Task::JudgeCorrectness, r#"{"correct": false}"#);
        assert_eq!(judge_correctness(&q, "a", "b", &no, &t).unwrap().score, 0);
        let junk = ScriptedChat::new().on(Task::JudgeCorrectness, "hmm");
        let v = judge_correctness(&q, "a", "b", &junk, &t).unwrap();
        assert_eq!((v.score, v.rationale.as_str()), (0, JUDGE_PARSE_FAILURE));
    }

    #[test]
    fn ratings() {
        assert_eq!(parse_rating("5"), 5);
        assert_eq!(parse_rating("0"), 1);
        assert_eq!(parse_rating("Rating: 9/5"), 5);
        assert_eq!(parse_rating("n/a"), 1);
        assert_eq!(rescale_rating(5), 1.0);
        assert_eq!(rescale_rating(3), 0.5);
        assert_eq!(rescale_rating(1), 0.0);
        let chat = ScriptedChat::new().on(Task::RateTransparency, "4");
        let r = rate_quality(&Query::new("q", "?"), "x", &ConflictReport::empty(), &chat, &Templates::builtin(), QualityDimension::Transparency);
        assert_eq!(r.unwrap(), 4);
    }

    fn answer_with(sources: &[&str]) -> AnnotatedAnswer {
        AnnotatedAnswer {
            answer: "x".into(),
            conflict_annotations: vec![],
            source_attribution: sources
                .iter()
                .map(|s| Attribution { claim: "x".into(), source: s.to_string() })
                .collect(),
            confidence_qualifier: ConfidenceQualifier { level: ConfidenceLevel::High, reason: "r".into() },
        }
    }

    fn resolved() -> ResolvedContext {
        ResolvedContext {
            strategies: vec![],
            documents: vec![
                ResolvedDocument { retrieval_rank: 1, document: Document::new("b", "t", "good"), role: DocumentRole::PrimarySource },
                ResolvedDocument { retrieval_rank: 0, document: Document::new("a", "t", "bad"), role: DocumentRole::Superseded },
            ],
            notes: vec![],
        }
    }

    #[test]
    fn source_fidelity_ratio() {
        assert_eq!(source_fidelity(&answer_with(&["good", "good"]), &resolved()), 1.0);
        assert_eq!(source_fidelity(&answer_with(&[]), &resolved()), 0.0);
        assert_eq!(source_fidelity(&answer_with(&["good", "bad"]), &resolved()), 0.5);
    }

    #[test]
    fn self_judge_is_refused() {
        assert!(check_judge_distinct("m", "m", false).is_err());
        assert!(check_judge_distinct("m", "m", true).is_ok());
        assert!(check_judge_distinct("gen", "judge", false).is_ok());
    }

    proptest! {
        #[test]
        fn token_f1_symmetric_and_bounded(a in "[a-c ]{0,12}", b in "[a-c ]{0,12}") {
            let f = token_f1(&a, &b);
            prop_assert_eq!(f, token_f1(&b, &a));
            prop_assert!((0.0..=1.0).contains(&f));
        }

        #[test]
        fn cars_strictly_increases_in_each_component(
            c in prop::array::uniform4(0.0f64..0.9), j in 0usize..4, bump in 0.01f64..0.1
        ) {
            let w = CarsWeights::default();
            let base = CarsComponents::new(c[0], c[1], c[2], c[3]).unwrap();
            let mut up = c;
            up[j] += bump;
            let raised = CarsComponents::new(up[0], up[1], up[2], up[3]).unwrap();
            prop_assert!(cars(&raised, &w) > cars(&base, &w));
        }

        #[test]
        fn f1_is_harmonic_mean(tp in 0usize..20, fp in 0usize..20, fn_ in 0usize..20) {
            let m = DetectionCounts { true_positives: tp, false_positives: fp, false_negatives: fn_, type_correct: 0 }.metrics();
            if m.precision > 0.0 && m.recall > 0.0 {
                prop_assert!((m.f1 - 2.0 * m.precision * m.recall / (m.precision + m.recall)).abs() < 1e-12);
            }
        }
    }
}
