//! Type-adaptive conflict resolution.
//!
//! Documents joined by conflicting pairs are grouped per conflict type
//! (connected components). Factual groups are ranked by Entropy-TOPSIS over
//! LLM-extracted criteria, temporal groups by recency, and opinion groups are
//! kept whole as perspectives. A document touching several types is handled
//! by the highest-priority one: factual, then temporal, then opinion.

mod topsis;

use std::collections::BTreeMap;
use std::sync::LazyLock;

use chrono::NaiveDate;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use topsis::{
    entropy_weights, entropy_weights_of, rank_order, sensitivity, topsis_closeness, topsis_rank, CriteriaMatrix,
    CriteriaWeights, TopsisRanking, CRITERIA, CRITERIA_COUNT,
};

use crate::model::{ConflictReport, ConflictType, Document, Query};
use crate::providers::{json_objects, ChatProvider, ChatRequest, ProviderError, Task, TEMPERATURE_DETECTION};
use crate::templates::Templates;

/// Score used for a criterion the reply does not mention.
pub const DEFAULT_CRITERION_SCORE: f64 = 0.5;

const CONSISTENCY: usize = 4;

static CRITERION_PATTERNS: LazyLock<Vec<Regex>> = LazyLock::new(|| {
    CRITERIA
        .iter()
        .map(|c| Regex::new(&format!(r#"(?i)"?\b{c}\b"?\s*[:=]\s*(-?\d+(?:\.\d+)?)"#)).expect("valid pattern"))
        .collect()
});
static ISO_DATE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(\d{4})-(\d{2})-(\d{2})\b").expect("valid pattern"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentRole {
    PrimarySource,
    /// Older or outranked side of a conflict; still shown to the generator.
    Superseded,
    Perspective,
    Unconflicted,
}

impl DocumentRole {
    pub fn as_str(self) -> &'static str {
        match self {
            DocumentRole::PrimarySource => "primary_source",
            DocumentRole::Superseded => "superseded",
            DocumentRole::Perspective => "perspective",
            DocumentRole::Unconflicted => "unconflicted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedDocument {
    /// Position in the retrieved list.
    pub retrieval_rank: usize,
    pub document: Document,
    pub role: DocumentRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerspectiveGroup {
    pub source: String,
    pub documents: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum Strategy {
    EntropyTopsis {
        documents: Vec<usize>,
        matrix: CriteriaMatrix,
        weights: CriteriaWeights,
        closeness: Vec<f64>,
        /// Share of ±perturbation trials that changed the top document.
        top1_change_rate: f64,
    },
    Recency {
        documents: Vec<usize>,
        dates: Vec<Option<NaiveDate>>,
        determinable: bool,
    },
    Perspectives {
        groups: Vec<PerspectiveGroup>,
    },
    Unresolved {
        conflict_type: ConflictType,
        documents: Vec<usize>,
        reason: String,
    },
}

/// Documents reordered for generation, each exactly once.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResolvedContext {
    pub strategies: Vec<Strategy>,
    pub documents: Vec<ResolvedDocument>,
    pub notes: Vec<String>,
}

impl ResolvedContext {
    /// Retrieval order, every document unconflicted.
    pub fn passthrough(documents: &[Document]) -> Self {
        Self {
            strategies: Vec::new(),
            documents: documents
                .iter()
                .enumerate()
                .map(|(i, d)| ResolvedDocument {
                    retrieval_rank: i,
                    document: d.clone(),
                    role: DocumentRole::Unconflicted,
                })
                .collect(),
            notes: Vec::new(),
        }
    }

    fn sources_with(&self, roles: &[DocumentRole]) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for d in &self.documents {
            if roles.contains(&d.role) && !out.contains(&d.document.source.as_str()) {
                out.push(&d.document.source);
            }
        }
        out
    }

    /// Sources the answer should rest on: primary sources and perspectives,
    /// or every source when nothing was resolved.
    pub fn credible_sources(&self) -> Vec<&str> {
        let credible = self.sources_with(&[DocumentRole::PrimarySource, DocumentRole::Perspective]);
        if credible.is_empty() {
            self.sources_with(&[DocumentRole::Unconflicted, DocumentRole::Superseded])
        } else {
            credible
        }
    }

    pub fn topsis_weights(&self) -> Vec<CriteriaWeights> {
        self.strategies
            .iter()
            .filter_map(|s| match s {
                Strategy::EntropyTopsis { weights, .. } => Some(*weights),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResolveConfig {
    /// Zero the consistency criterion before weighting.
    pub drop_consistency: bool,
    pub sensitivity_perturbation: f64,
    pub sensitivity_trials: usize,
    pub seed: u64,
}

impl Default for ResolveConfig {
    fn default() -> Self {
        Self {
            drop_consistency: false,
            sensitivity_perturbation: 0.1,
            sensitivity_trials: 200,
            seed: 0,
        }
    }
}

/// Five scores from one criteria reply, plus a description of anything
/// that had to be defaulted or clamped.
pub fn parse_criteria(reply: &str) -> ([f64; CRITERIA_COUNT], Vec<String>) {
    let mut found: [Option<f64>; CRITERIA_COUNT] = [None; CRITERIA_COUNT];
    if let Some(map) = json_objects(reply).find(|m| CRITERIA.iter().any(|c| m.contains_key(*c))) {
        for (j, c) in CRITERIA.iter().enumerate() {
            found[j] = map.get(*c).and_then(Value::as_f64);
        }
    }
    for (j, re) in CRITERION_PATTERNS.iter().enumerate() {
        if found[j].is_none() {
            found[j] = re.captures(reply).and_then(|c| c[1].parse().ok());
        }
    }
    let mut issues = Vec::new();
    let row = std::array::from_fn(|j| match found[j] {
        Some(v) if v.is_finite() && !(0.0..=1.0).contains(&v) => {
            let clamped = v.clamp(0.0, 1.0);
            issues.push(format!("{} score {v} clamped to {clamped}", CRITERIA[j]));
            clamped
        }
        Some(v) if v.is_finite() => v,
        _ => {
            issues.push(format!("{} score missing; using {DEFAULT_CRITERION_SCORE}", CRITERIA[j]));
            DEFAULT_CRITERION_SCORE
        }
    });
    (row, issues)
}

pub fn criteria_request(query: &Query, document: &Document, templates: &Templates) -> ChatRequest {
    let prompt = templates.render(
        Task::CriteriaScore,
        &[("query", query.text.as_str()), ("document", &document.render_for_prompt())],
    );
    ChatRequest::new(Task::CriteriaScore, prompt, TEMPERATURE_DETECTION)
}

/// One criteria prompt per document, issued in parallel.
pub fn extract_criteria(
    query: &Query,
    documents: &[&Document],
    chat: &dyn ChatProvider,
    templates: &Templates,
) -> Result<CriteriaMatrix, ResolveError> {
    let rows = documents
        .par_iter()
        .map(|d| {
            let reply = chat.chat(&criteria_request(query, d, templates))?;
            let (row, issues) = parse_criteria(&reply);
            for issue in issues {
                log::warn!("query {}: document {}: {issue}", query.id, d.id);
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>, ProviderError>>()?;
    CriteriaMatrix::new(rows)
}

/// Result of resolving one conflict group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupResolution {
    /// Retrieval indices in resolved order with their roles.
    pub placed: Vec<(usize, DocumentRole)>,
    pub strategy: Strategy,
    pub note: String,
}

fn source_list(documents: &[Document], indices: impl IntoIterator<Item = usize>) -> String {
    let mut seen: Vec<&str> = Vec::new();
    for i in indices {
        let s = documents[i].source.as_str();
        if !seen.contains(&s) {
            seen.push(s);
        }
    }
    seen.join(", ")
}

/// Entropy-TOPSIS over the group's documents. The winner becomes the
/// primary source and the rest are superseded.
pub fn resolve_factual(
    query: &Query,
    documents: &[Document],
    group: &[usize],
    chat: &dyn ChatProvider,
    templates: &Templates,
    config: &ResolveConfig,
) -> Result<GroupResolution, ResolveError> {
    let members: Vec<&Document> = group.iter().map(|&i| &documents[i]).collect();
    let mut matrix = extract_criteria(query, &members, chat, templates)?;
    if config.drop_consistency {
        matrix = matrix.without_criterion(CONSISTENCY);
    }
    let weights = entropy_weights(&matrix);
    let ranking = topsis_rank(&matrix, &weights);
    let top1_change_rate = if group.len() > 1 {
        sensitivity(
            &matrix,
            &weights,
            config.sensitivity_perturbation,
            config.sensitivity_trials,
            config.seed,
        )?
    } else {
        0.0
    };
    let placed: Vec<(usize, DocumentRole)> = ranking
        .order
        .iter()
        .enumerate()
        .map(|(rank, &row)| {
            let role = if rank == 0 {
                DocumentRole::PrimarySource
            } else {
                DocumentRole::Superseded
            };
            (group[row], role)
        })
        .collect();
    let best = ranking.best();
    let note = format!(
        "factual conflict: {} ranked most credible by Entropy-TOPSIS (closeness {:.3}); outranked: {}",
        documents[group[best]].source,
        ranking.closeness[best],
        source_list(documents, placed.iter().skip(1).map(|(i, _)| *i)),
    );
    Ok(GroupResolution {
        placed,
        strategy: Strategy::EntropyTopsis {
            documents: group.to_vec(),
            matrix,
            weights,
            closeness: ranking.closeness,
            top1_change_rate,
        },
        note,
    })
}

pub fn parse_date(reply: &str) -> Option<NaiveDate> {
    let c = ISO_DATE.captures(reply)?;
    NaiveDate::from_ymd_opt(c[1].parse().ok()?, c[2].parse().ok()?, c[3].parse().ok()?)
}

fn extract_date(document: &Document, chat: &dyn ChatProvider, templates: &Templates) -> Option<NaiveDate> {
    let prompt = templates.render(Task::DateExtract, &[("document", &document.render_for_prompt())]);
    match chat.chat(&ChatRequest::new(Task::DateExtract, prompt, TEMPERATURE_DETECTION)) {
        Ok(reply) => parse_date(&reply),
        Err(e) => {
            log::warn!("date extraction for {} failed: {e}", document.id);
            None
        }
    }
}

/// Newest first; metadata dates win, undated documents get one extraction
/// attempt and otherwise rank last. Equal dates keep retrieval order.
pub fn resolve_temporal(
    documents: &[Document],
    group: &[usize],
    chat: &dyn ChatProvider,
    templates: &Templates,
) -> GroupResolution {
    let dates: Vec<Option<NaiveDate>> = group
        .par_iter()
        .map(|&i| documents[i].date.or_else(|| extract_date(&documents[i], chat, templates)))
        .collect();
    if dates.iter().all(Option::is_none) {
        return GroupResolution {
            placed: group.iter().map(|&i| (i, DocumentRole::Perspective)).collect(),
            strategy: Strategy::Recency {
                documents: group.to_vec(),
                dates,
                determinable: false,
            },
            note: format!(
                "temporal conflict between {}: recency undeterminable, retrieval order kept",
                source_list(documents, group.iter().copied())
            ),
        };
    }
    let mut order: Vec<usize> = (0..group.len()).collect();
    // None sorts below every date, so reversing the comparison puts undated last.
    order.sort_by(|&a, &b| dates[b].cmp(&dates[a]).then(group[a].cmp(&group[b])));
    let placed: Vec<(usize, DocumentRole)> = order
        .iter()
        .enumerate()
        .map(|(rank, &k)| {
            let role = if rank == 0 {
                DocumentRole::PrimarySource
            } else {
                DocumentRole::Superseded
            };
            (group[k], role)
        })
        .collect();
    let newest = order[0];
    let evolution = order[1..]
        .iter()
        .map(|&k| match dates[k] {
            Some(d) => format!("{} ({d})", documents[group[k]].source),
            None => format!("{} (undated)", documents[group[k]].source),
        })
        .collect::<Vec<_>>()
        .join(", ");
    GroupResolution {
        placed,
        strategy: Strategy::Recency {
            documents: group.to_vec(),
            dates: dates.clone(),
            determinable: true,
        },
        note: format!(
            "temporal conflict: latest source prioritized ({}, {}); earlier reports kept as temporal evolution: {evolution}",
            documents[group[newest]].source,
            dates[newest].expect("newest has a date"),
        ),
    }
}

/// Every document kept as a perspective, grouped by source in order of
/// first appearance.
pub fn resolve_opinion(documents: &[Document], group: &[usize]) -> GroupResolution {
    let mut groups: Vec<PerspectiveGroup> = Vec::new();
    for &i in group {
        let source = &documents[i].source;
        match groups.iter_mut().find(|g| &g.source == source) {
            Some(g) => g.documents.push(i),
            None => groups.push(PerspectiveGroup {
                source: source.clone(),
                documents: vec![i],
            }),
        }
    }
    let placed = groups
        .iter()
        .flat_map(|g| g.documents.iter().map(|&i| (i, DocumentRole::Perspective)))
        .collect();
    let note = format!(
        "opinion conflict: {} perspectives presented side by side ({})",
        groups.len(),
        groups.iter().map(|g| g.source.as_str()).collect::<Vec<_>>().join("; ")
    );
    GroupResolution {
        placed,
        strategy: Strategy::Perspectives { groups },
        note,
    }
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut root = i;
    while parent[root] != root {
        root = parent[root];
    }
    let mut cur = i;
    while parent[cur] != root {
        let next = parent[cur];
        parent[cur] = root;
        cur = next;
    }
    root
}

/// Connected components of one conflict type's pairs, each sorted, ordered
/// by their first member.
pub fn conflict_groups(report: &ConflictReport, conflict_type: ConflictType, document_count: usize) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..document_count).collect();
    let mut involved = vec![false; document_count];
    for f in &report.findings {
        if f.conflict_type != conflict_type || f.pair.check_bounds(document_count).is_err() {
            continue;
        }
        let (a, b) = (f.pair.index_a(), f.pair.index_b());
        involved[a] = true;
        involved[b] = true;
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in (0..document_count).filter(|&i| involved[i]) {
        let root = find(&mut parent, i);
        components.entry(root).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = components.into_values().collect();
    out.sort_by_key(|g| g[0]);
    out
}

/// Applies the per-type strategies and returns every document exactly once.
/// Provider failures leave the affected group in retrieval order with a note.
pub fn resolve(
    query: &Query,
    documents: &[Document],
    report: &ConflictReport,
    chat: &dyn ChatProvider,
    templates: &Templates,
    config: &ResolveConfig,
) -> ResolvedContext {
    for f in &report.findings {
        if f.pair.check_bounds(documents.len()).is_err() {
            log::warn!("query {}: finding {} is out of range and ignored", query.id, f.pair);
        }
    }
    let mut ctx = ResolvedContext::default();
    let mut claimed = vec![false; documents.len()];
    for conflict_type in [ConflictType::Factual, ConflictType::Temporal, ConflictType::Opinion] {
        for component in conflict_groups(report, conflict_type, documents.len()) {
            let group: Vec<usize> = component.into_iter().filter(|&i| !claimed[i]).collect();
            if group.is_empty() {
                continue;
            }
            let resolution = match conflict_type {
                ConflictType::Factual => resolve_factual(query, documents, &group, chat, templates, config)
                    .unwrap_or_else(|e| {
                        log::warn!("query {}: factual resolution failed: {e}", query.id);
                        GroupResolution {
                            placed: group.iter().map(|&i| (i, DocumentRole::Perspective)).collect(),
                            strategy: Strategy::Unresolved {
                                conflict_type,
                                documents: group.clone(),
                                reason: e.to_string(),
                            },
                            note: format!(
                                "factual conflict between {} left unresolved ({e}); retrieval order kept",
                                source_list(documents, group.iter().copied())
                            ),
                        }
                    }),
                ConflictType::Temporal => resolve_temporal(documents, &group, chat, templates),
                ConflictType::Opinion => resolve_opinion(documents, &group),
                ConflictType::NoConflict => unreachable!("not iterated"),
            };
            for &(i, role) in &resolution.placed {
                claimed[i] = true;
                ctx.documents.push(ResolvedDocument {
                    retrieval_rank: i,
                    document: documents[i].clone(),
                    role,
                });
            }
            ctx.strategies.push(resolution.strategy);
            ctx.notes.push(resolution.note);
        }
    }
    for (i, d) in documents.iter().enumerate().filter(|(i, _)| !claimed[*i]) {
        ctx.documents.push(ResolvedDocument {
            retrieval_rank: i,
            document: d.clone(),
            role: DocumentRole::Unconflicted,
        });
    }
    if let Some(p) = report.parametric.as_ref().filter(|p| p.conflicting) {
        ctx.notes.push(p.resolution_note.clone());
    }
    ctx
}

#[derive(Debug, Error)]
pub enum ResolveError {
    #[error("decision matrix has no rows")]
    EmptyMatrix,
    #[error("row {row}: {criterion} score {value} is outside [0, 1]")]
    ScoreRange {
        row: usize,
        criterion: &'static str,
        value: f64,
    },
    #[error("weights {0:?} are not a distribution")]
    Weights(Vec<f64>),
    #[error("perturbation {0} is outside [0, 1)")]
    Perturbation(f64),
    #[error("criteria extraction failed: {0}")]
    Provider(#[from] ProviderError),
    #[error("writing decision matrix: {0}")]
    Csv(#[from] csv::Error),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConflictFinding, DocumentPair, Stage};
    use crate::providers::mock::ScriptedChat;

    fn finding(a: usize, b: usize, t: ConflictType) -> ConflictFinding {
        ConflictFinding {
            pair: DocumentPair::new(a, b).unwrap(),
            conflict_type: t,
            confidence: 0.9,
            stage: Stage::Stage1,
        }
    }

    fn report(findings: Vec<ConflictFinding>) -> ConflictReport {
        ConflictReport {
            findings,
            ..ConflictReport::default()
        }
    }

    fn date(y: i32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, 1, 1).unwrap()
    }

    fn roles(ctx: &ResolvedContext) -> Vec<(usize, DocumentRole)> {
        ctx.documents.iter().map(|d| (d.retrieval_rank, d.role)).collect()
    }

    #[test]
    fn criteria_from_json() {
        let (row, issues) = parse_criteria(
            r#"Scores: {"authority": 0.9, "recency": 0.1, "relevance": 1, "specificity": 0.25, "consistency": 0.5}"#,
        );
        assert_eq!(row, [0.9, 0.1, 1.0, 0.25, 0.5]);
        assert!(issues.is_empty());
    }

    #[test]
    fn criteria_clamped_and_defaulted() {
        let (row, issues) = parse_criteria("authority: 1.3\nrecency = -0.2\nrelevance: 0.4");
        assert_eq!(row, [1.0, 0.0, 0.4, 0.5, 0.5]);
        assert!(issues[0].contains("authority score 1.3 clamped to 1"));
        assert_eq!(issues.len(), 4);
        let (row, _) = parse_criteria("no numbers here");
        assert_eq!(row, [0.5; 5]);
    }

    #[test]
    fn scripted_scores_become_the_matrix() {
        let q = Query::new("q", "?");
        let docs = [Document::new("a", "alpha", "A"), Document::new("b", "beta", "B")];
        let chat = ScriptedChat::new()
            .on_match(Task::CriteriaScore, "alpha", r#"{"authority":0.9,"recency":0.2,"relevance":0.7,"specificity":0.6,"consistency":0.5}"#)
            .on_match(Task::CriteriaScore, "beta", r#"{"authority":0.3,"recency":0.8,"relevance":0.7,"specificity":0.4,"consistency":0.5}"#);
        let m = extract_criteria(&q, &[&docs[0], &docs[1]], &chat, &Templates::builtin()).unwrap();
        assert_eq!(m.row(0), [0.9, 0.2, 0.7, 0.6, 0.5]);
        assert_eq!(m.row(1), [0.3, 0.8, 0.7, 0.4, 0.5]);
    }

    #[test]
    fn empty_report_is_passthrough() {
        let q = Query::new("q", "?");
        let docs = vec![Document::new("a", "x", "A"), Document::new("b", "y", "B")];
        let ctx = resolve(&q, &docs, &ConflictReport::empty(), &ScriptedChat::new(), &Templates::builtin(), &ResolveConfig::default());
        assert_eq!(ctx, ResolvedContext::passthrough(&docs));
        assert!(ctx.notes.is_empty());
    }

    #[test]
    fn factual_pair_follows_closeness() {
        let q = Query::new("q", "?");
        let docs = vec![
            Document::new("a", "weak claim", "blog"),
            Document::new("b", "strong claim", "journal"),
            Document::new("c", "other", "misc"),
        ];
        let chat = ScriptedChat::new()
            .on_match(Task::CriteriaScore, "weak", r#"{"authority":0.2,"recency":0.5,"relevance":0.6,"specificity":0.3,"consistency":0.5}"#)
            .on_match(Task::CriteriaScore, "strong", r#"{"authority":0.9,"recency":0.5,"relevance":0.6,"specificity":0.8,"consistency":0.5}"#);
        let ctx = resolve(
            &q,
            &docs,
            &report(vec![finding(0, 1, ConflictType::Factual)]),
            &chat,
            &Templates::builtin(),
            &ResolveConfig::default(),
        );
        assert_eq!(
            roles(&ctx),
            vec![(1, DocumentRole::PrimarySource), (0, DocumentRole::Superseded), (2, DocumentRole::Unconflicted)]
        );
        let Strategy::EntropyTopsis { closeness, top1_change_rate, .. } = &ctx.strategies[0] else {
            panic!("expected TOPSIS");
        };
        assert_eq!(closeness, &vec![0.0, 1.0]);
        assert_eq!(*top1_change_rate, 0.0);
        assert!(ctx.notes[0].contains("journal ranked most credible"));
    }

    #[test]
    fn criteria_failure_degrades_to_retrieval_order() {
        let q = Query::new("q", "?");
        let docs = vec![Document::new("a", "x", "A"), Document::new("b", "y", "B")];
        let ctx = resolve(
            &q,
            &docs,
            &report(vec![finding(0, 1, ConflictType::Factual)]),
            &ScriptedChat::new(),
            &Templates::builtin(),
            &ResolveConfig::default(),
        );
        assert_eq!(roles(&ctx), vec![(0, DocumentRole::Perspective), (1, DocumentRole::Perspective)]);
        assert!(matches!(ctx.strategies[0], Strategy::Unresolved { .. }));
        assert!(ctx.notes[0].contains("left unresolved"));
    }

    #[test]
    fn temporal_newest_first() {
        let docs = vec![
            Document::new("a", "old", "S1").with_date(date(2010)),
            Document::new("b", "new", "S2").with_date(date(2020)),
        ];
        let r = resolve_temporal(&docs, &[0, 1], &ScriptedChat::new(), &Templates::builtin());
        assert_eq!(r.placed, vec![(1, DocumentRole::PrimarySource), (0, DocumentRole::Superseded)]);
        assert!(r.note.contains("latest source prioritized"));
    }

    #[test]
    fn temporal_equal_dates_keep_retrieval_order() {
        let docs = vec![
            Document::new("a", "x", "S1").with_date(date(2015)),
            Document::new("b", "y", "S2").with_date(date(2015)),
        ];
        let r = resolve_temporal(&docs, &[0, 1], &ScriptedChat::new(), &Templates::builtin());
        assert_eq!(r.placed[0].0, 0);
    }

    #[test]
    fn temporal_undated_uses_extraction_then_falls_back() {
        let docs = vec![
            Document::new("a", "undated one", "S1"),
            Document::new("b", "undated two", "S2"),
            Document::new("c", "dated", "S3").with_date(date(2001)),
        ];
        let chat = ScriptedChat::new()
            .on_match(Task::DateExtract, "undated one", "2005-06-01")
            .on(Task::DateExtract, "UNKNOWN");
        let r = resolve_temporal(&docs, &[0, 1, 2], &chat, &Templates::builtin());
        let order: Vec<usize> = r.placed.iter().map(|p| p.0).collect();
        assert_eq!(order, vec![0, 2, 1]);
        assert_eq!(chat.call_count(Task::DateExtract), 2);

        let none = ScriptedChat::new().on(Task::DateExtract, "UNKNOWN");
        let r = resolve_temporal(&docs, &[0, 1], &none, &Templates::builtin());
        assert_eq!(r.placed, vec![(0, DocumentRole::Perspective), (1, DocumentRole::Perspective)]);
        assert!(r.note.contains("recency undeterminable"));
    }

    #[test]
    fn opinions_group_by_source() {
        let docs = vec![
            Document::new("a", "x", "Critic"),
            Document::new("b", "y", "Fan"),
            Document::new("c", "z", "Critic"),
        ];
        let r = resolve_opinion(&docs, &[0, 1, 2]);
        let Strategy::Perspectives { groups } = &r.strategy else { panic!() };
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].documents, vec![0, 2]);
        assert_eq!(r.placed.iter().map(|p| p.0).collect::<Vec<_>>(), vec![0, 2, 1]);
        assert!(r.placed.iter().all(|p| p.1 == DocumentRole::Perspective));
    }

    #[test]
    fn mixed_types_follow_priority() {
        let q = Query::new("q", "?");
        let docs = vec![
            Document::new("a", "opinion a", "O1"),
            Document::new("b", "opinion b", "O2"),
            Document::new("c", "plain", "P"),
            Document::new("d", "old", "T1").with_date(date(2000)),
            Document::new("e", "new", "T2").with_date(date(2022)),
        ];
        let r = report(vec![finding(0, 1, ConflictType::Opinion), finding(3, 4, ConflictType::Temporal)]);
        let ctx = resolve(&q, &docs, &r, &ScriptedChat::new(), &Templates::builtin(), &ResolveConfig::default());
        assert_eq!(
            roles(&ctx),
            vec![
                (4, DocumentRole::PrimarySource),
                (3, DocumentRole::Superseded),
                (0, DocumentRole::Perspective),
                (1, DocumentRole::Perspective),
                (2, DocumentRole::Unconflicted),
            ]
        );
        assert_eq!(ctx.notes.len(), 2);
    }

    #[test]
    fn document_in_two_types_goes_to_higher_priority() {
        let q = Query::new("q", "?");
        let docs = vec![
            Document::new("a", "x", "A").with_date(date(2001)),
            Document::new("b", "y", "B").with_date(date(2002)),
            Document::new("c", "z", "C").with_date(date(2003)),
        ];
        let r = report(vec![finding(0, 1, ConflictType::Temporal), finding(1, 2, ConflictType::Opinion)]);
        let ctx = resolve(&q, &docs, &r, &ScriptedChat::new(), &Templates::builtin(), &ResolveConfig::default());
        assert_eq!(
            roles(&ctx),
            vec![(1, DocumentRole::PrimarySource), (0, DocumentRole::Superseded), (2, DocumentRole::Perspective)]
        );
    }

    #[test]
    fn components_join_transitively() {
        let r = report(vec![
            finding(0, 2, ConflictType::Factual),
            finding(2, 4, ConflictType::Factual),
            finding(1, 3, ConflictType::Factual),
            finding(0, 1, ConflictType::Opinion),
        ]);
        assert_eq!(conflict_groups(&r, ConflictType::Factual, 5), vec![vec![0, 2, 4], vec![1, 3]]);
        assert_eq!(conflict_groups(&r, ConflictType::Temporal, 5), Vec::<Vec<usize>>::new());
    }

    #[test]
    fn dropping_consistency_zeroes_its_weight() {
        let q = Query::new("q", "?");
        let docs = vec![Document::new("a", "one", "A"), Document::new("b", "two", "B")];
        let chat = ScriptedChat::new()
            .on_match(Task::CriteriaScore, "one", r#"{"authority":0.9,"recency":0.2,"relevance":0.7,"specificity":0.6,"consistency":0.1}"#)
            .on_match(Task::CriteriaScore, "two", r#"{"authority":0.3,"recency":0.8,"relevance":0.7,"specificity":0.4,"consistency":0.9}"#);
        let config = ResolveConfig {
            drop_consistency: true,
            ..ResolveConfig::default()
        };
        let r = resolve_factual(&q, &docs, &[0, 1], &chat, &Templates::builtin(), &config).unwrap();
        let Strategy::EntropyTopsis { weights, .. } = r.strategy else { panic!() };
        assert_eq!(weights.as_array()[4], 0.0);
    }

    /// Criteria replies with Gaussian noise of std 0.04 around fixed scores.
    struct JitterChat {
        base: Vec<(&'static str, [f64; 5])>,
        rng: std::sync::Mutex<rand_chacha::ChaCha8Rng>,
    }

    impl ChatProvider for JitterChat {
        fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
            use rand_distr::{Distribution, Normal};
            let noise = Normal::new(0.0, 0.04).unwrap();
            let (_, scores) = self.base.iter().find(|(k, _)| request.user_prompt.contains(k)).unwrap();
            let mut rng = self.rng.lock().unwrap();
            let fields: Vec<String> = CRITERIA
                .iter()
                .zip(scores)
                .map(|(c, s)| format!("\"{c}\": {:.4}", (s + noise.sample(&mut *rng)).clamp(0.0, 1.0)))
                .collect();
            Ok(format!("{{{}}}", fields.join(", ")))
        }

        fn model_id(&self) -> &str {
            "jitter"
        }
    }

    #[test]
    fn ranking_is_stable_under_extraction_jitter() {
        use rand::SeedableRng;
        let q = Query::new("q", "?");
        let docs = vec![
            Document::new("a", "doc-a", "A"),
            Document::new("b", "doc-b", "B"),
            Document::new("c", "doc-c", "C"),
        ];
        let chat = JitterChat {
            base: vec![
                ("doc-a", [0.85, 0.6, 0.8, 0.7, 0.5]),
                ("doc-b", [0.45, 0.5, 0.75, 0.4, 0.5]),
                ("doc-c", [0.3, 0.7, 0.6, 0.5, 0.5]),
            ],
            rng: std::sync::Mutex::new(rand_chacha::ChaCha8Rng::seed_from_u64(11)),
        };
        let refs: Vec<&Document> = docs.iter().collect();
        let trials = 300;
        let stable = (0..trials)
            .filter(|_| {
                let m = extract_criteria(&q, &refs, &chat, &Templates::builtin()).unwrap();
                topsis_rank(&m, &entropy_weights(&m)).best() == 0
            })
            .count();
        assert!(stable as f64 / trials as f64 >= 0.94, "{stable}/{trials}");
    }

    #[test]
    fn parse_date_variants() {
        assert_eq!(parse_date("Published 2019-03-04."), NaiveDate::from_ymd_opt(2019, 3, 4));
        assert_eq!(parse_date("UNKNOWN"), None);
        assert_eq!(parse_date("2019-13-40"), None);
    }

    #[test]
    fn mean_weights() {
        let a = CriteriaWeights::new([1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let b = CriteriaWeights::equal();
        let m = CriteriaWeights::mean(&[a, b]).unwrap().as_array();
        assert!((m[0] - 0.6).abs() < 1e-12 && (m[1] - 0.1).abs() < 1e-12);
        assert!(CriteriaWeights::mean(&[]).is_none());
    }
}
