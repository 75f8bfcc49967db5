//! Answer generation from a resolved context.
//!
//! With conflicts present the prompt lists documents in resolved order with
//! their roles, summarizes each conflict, and adds type-specific
//! instructions. Without conflicts the request is exactly the standard RAG
//! prompt. Replies are split on the `ANSWER:` / `CONFLICTS:` / `SOURCES:` /
//! `CONFIDENCE:` sentinels; whatever is missing is filled in from the report.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{ConflictFinding, ConflictReport, ConflictType, Document, Query};
use crate::providers::{ChatProvider, ChatRequest, ProviderError, Task, TEMPERATURE_GENERATION};
use crate::resolve::{DocumentRole, ResolvedContext};
use crate::templates::{document_tag, Templates};

pub const DEFAULT_TOKEN_BUDGET: usize = 8000;
const TRUNCATION_MARK: &str = " [truncated]";
const SENTINELS: [&str; 4] = ["ANSWER:", "CONFLICTS:", "SOURCES:", "CONFIDENCE:"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConfidenceLevel {
    High,
    Moderate,
    Low,
}

impl ConfidenceLevel {
    fn parse(word: &str) -> Option<Self> {
        match word.to_ascii_lowercase().as_str() {
            "high" => Some(Self::High),
            "moderate" | "medium" => Some(Self::Moderate),
            "low" => Some(Self::Low),
            _ => None,
        }
    }
}

impl fmt::Display for ConfidenceLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::High => "High",
            Self::Moderate => "Moderate",
            Self::Low => "Low",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfidenceQualifier {
    pub level: ConfidenceLevel,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribution {
    /// Claim span, or the whole answer when the reply names only a source.
    pub claim: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedAnswer {
    pub answer: String,
    pub conflict_annotations: Vec<String>,
    pub source_attribution: Vec<Attribution>,
    pub confidence_qualifier: ConfidenceQualifier,
}

impl AnnotatedAnswer {
    /// Sentinel form; `strip` keeps only the answer section.
    pub fn render(&self, strip: bool) -> String {
        let mut out = format!("ANSWER: {}", self.answer);
        if strip {
            return out;
        }
        if !self.conflict_annotations.is_empty() {
            out.push_str("\nCONFLICTS:");
            for a in &self.conflict_annotations {
                out.push_str(&format!("\n- {a}"));
            }
        }
        if !self.source_attribution.is_empty() {
            out.push_str("\nSOURCES:");
            for a in &self.source_attribution {
                out.push_str(&format!("\n- {} | {}", a.claim, a.source));
            }
        }
        out.push_str(&format!(
            "\nCONFIDENCE: {} - {}",
            self.confidence_qualifier.level, self.confidence_qualifier.reason
        ));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub token_budget: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            token_budget: DEFAULT_TOKEN_BUDGET,
        }
    }
}

fn has_conflicts(report: &ConflictReport) -> bool {
    !report.findings.is_empty() || report.parametric.as_ref().is_some_and(|p| p.conflicting)
}

/// Standard RAG: documents in the given order, no roles, no conflict section.
pub fn build_standard_prompt(query: &Query, documents: &[Document], templates: &Templates) -> ChatRequest {
    let block = documents
        .iter()
        .enumerate()
        .map(|(i, d)| document_tag(i + 1, d, None))
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = templates.render(
        Task::GenerateStandard,
        &[("query", query.text.as_str()), ("documents", &block)],
    );
    ChatRequest::new(Task::GenerateStandard, prompt, TEMPERATURE_GENERATION)
}

/// One line per finding, documents named by their prompt position.
pub fn describe_finding(finding: &ConflictFinding, resolved: &ResolvedContext) -> String {
    let describe = |retrieval: usize| {
        resolved
            .documents
            .iter()
            .position(|d| d.retrieval_rank == retrieval)
            .map(|p| format!("document {} ({})", p + 1, resolved.documents[p].document.source))
            .unwrap_or_else(|| format!("retrieved document {}", retrieval + 1))
    };
    format!(
        "{} conflict between {} and {}",
        finding.conflict_type.as_str(),
        describe(finding.pair.index_a()),
        describe(finding.pair.index_b())
    )
}

fn instructions(report: &ConflictReport, resolved: &ResolvedContext) -> String {
    let mut lines = Vec::new();
    if report.has_type(ConflictType::Factual) {
        lines.push(
            "Factual conflict: ground the answer in the primary_source document and state that the outranked sources disagree."
                .to_string(),
        );
    }
    if report.has_type(ConflictType::Temporal) {
        lines.push(
            "Temporal conflict: prioritize the latest source and note how the information changed over time.".to_string(),
        );
    }
    if report.has_type(ConflictType::Opinion) {
        lines.push(
            "Opinion conflict: present every perspective with its source; do not pick a side.".to_string(),
        );
    }
    if report.parametric.as_ref().is_some_and(|p| p.conflicting) {
        lines.push("The retrieved evidence contradicts prior knowledge: defer to the retrieved evidence.".to_string());
    }
    for note in &resolved.notes {
        lines.push(format!("Resolution note: {note}"));
    }
    lines.join("\n")
}

fn documents_block(docs: &[(Document, DocumentRole)]) -> String {
    docs.iter()
        .enumerate()
        .map(|(i, (d, role))| document_tag(i + 1, d, Some(role.as_str())))
        .collect::<Vec<_>>()
        .join("\n")
}

fn truncate_tail(text: &mut String, chars: usize) {
    let keep = text.chars().count().saturating_sub(chars + TRUNCATION_MARK.len());
    let cut = text.char_indices().nth(keep).map_or(text.len(), |(i, _)| i);
    text.truncate(cut);
    text.push_str(TRUNCATION_MARK);
}

/// Conflict-aware request, or the standard request when the report has no
/// conflicts. Superseded documents are shortened from the last one backwards
/// while the prompt exceeds the token budget.
pub fn build_generation_prompt(
    query: &Query,
    resolved: &ResolvedContext,
    report: &ConflictReport,
    templates: &Templates,
    config: &GenerationConfig,
) -> ChatRequest {
    if !has_conflicts(report) {
        let docs: Vec<Document> = resolved.documents.iter().map(|d| d.document.clone()).collect();
        return build_standard_prompt(query, &docs, templates);
    }
    let conflicts = {
        let mut lines: Vec<String> = report
            .findings
            .iter()
            .map(|f| format!("- {}", describe_finding(f, resolved)))
            .collect();
        if let Some(p) = report.parametric.as_ref().filter(|p| p.conflicting) {
            lines.push(format!(
                "- parametric conflict: closed-book answer {:?} differs from the retrieved evidence",
                p.closed_book_answer
            ));
        }
        lines.join("\n")
    };
    let instructions = instructions(report, resolved);
    let mut docs: Vec<(Document, DocumentRole)> =
        resolved.documents.iter().map(|d| (d.document.clone(), d.role)).collect();
    let render = |docs: &[(Document, DocumentRole)]| {
        templates.render(
            Task::GenerateConflictAware,
            &[
                ("query", query.text.as_str()),
                ("documents", &documents_block(docs)),
                ("conflicts", &conflicts),
                ("instructions", &instructions),
            ],
        )
    };
    let mut prompt = render(&docs);
    let superseded: Vec<usize> = (0..docs.len()).rev().filter(|&i| docs[i].1 == DocumentRole::Superseded).collect();
    for i in superseded {
        let request = ChatRequest::new(Task::GenerateConflictAware, prompt.clone(), TEMPERATURE_GENERATION);
        let tokens = request.estimated_input_tokens();
        if tokens <= config.token_budget {
            break;
        }
        let excess_chars = (tokens - config.token_budget) * 4;
        truncate_tail(&mut docs[i].0.text, excess_chars);
        prompt = render(&docs);
    }
    let request = ChatRequest::new(Task::GenerateConflictAware, prompt, TEMPERATURE_GENERATION);
    if request.estimated_input_tokens() > config.token_budget {
        log::warn!(
            "query {}: generation prompt is {} tokens, over the {} budget after truncating superseded documents",
            query.id,
            request.estimated_input_tokens(),
            config.token_budget
        );
    }
    request
}

/// Lines of each sentinel section, in reply order. `None` when the reply has
/// no `ANSWER:` sentinel at all.
fn split_sections(reply: &str) -> Option<[Option<String>; 4]> {
    let mut sections: [Option<String>; 4] = Default::default();
    let mut current: Option<usize> = None;
    for line in reply.lines() {
        let trimmed = line.trim_start();
        if let Some(k) = SENTINELS.iter().position(|s| trimmed.starts_with(s)) {
            let rest = trimmed[SENTINELS[k].len()..].trim();
            sections[k] = Some(rest.to_string());
            current = Some(k);
        } else if let Some(k) = current {
            let body = sections[k].get_or_insert_with(String::new);
            if !body.is_empty() {
                body.push('\n');
            }
            body.push_str(line.trim());
        }
    }
    sections[0].is_some().then_some(sections)
}

fn bullet_lines(section: &str) -> impl Iterator<Item = &str> {
    section
        .lines()
        .map(|l| l.trim().trim_start_matches(['-', '*']).trim())
        .filter(|l| !l.is_empty() && !l.eq_ignore_ascii_case("none"))
}

fn synthesized_qualifier(conflicted: bool) -> ConfidenceQualifier {
    if conflicted {
        ConfidenceQualifier {
            level: ConfidenceLevel::Moderate,
            reason: "retrieved sources conflict".to_string(),
        }
    } else {
        ConfidenceQualifier {
            level: ConfidenceLevel::High,
            reason: "no conflicts detected among the retrieved sources".to_string(),
        }
    }
}

/// Splits a reply into the four answer parts. Attributions naming a source
/// absent from the resolved documents are dropped.
pub fn parse_answer(
    reply: &str,
    report: &ConflictReport,
    resolved: &ResolvedContext,
) -> AnnotatedAnswer {
    let conflicted = has_conflicts(report);
    let Some(sections) = split_sections(reply) else {
        log::warn!("generation reply has no ANSWER section; using the whole reply");
        return AnnotatedAnswer {
            answer: reply.trim().to_string(),
            conflict_annotations: synthesized_annotations(report, resolved),
            source_attribution: Vec::new(),
            confidence_qualifier: synthesized_qualifier(conflicted),
        };
    };
    let [answer, conflicts, sources, confidence] = sections;
    let answer = answer.unwrap_or_default();
    let mut conflict_annotations: Vec<String> =
        conflicts.as_deref().map(|c| bullet_lines(c).map(str::to_string).collect()).unwrap_or_default();
    if conflict_annotations.is_empty() && conflicted {
        conflict_annotations = synthesized_annotations(report, resolved);
    }
    let known: Vec<&str> = resolved.documents.iter().map(|d| d.document.source.as_str()).collect();
    let mut source_attribution = Vec::new();
    for line in sources.as_deref().map(bullet_lines).into_iter().flatten() {
        let (claim, source) = match line.rsplit_once('|') {
            Some((c, s)) => (c.trim(), s.trim()),
            None => (answer.as_str(), line),
        };
        match known.iter().find(|k| k.eq_ignore_ascii_case(source)) {
            Some(k) => source_attribution.push(Attribution {
                claim: claim.to_string(),
                source: (*k).to_string(),
            }),
            None => log::warn!("attribution to unknown source {source:?} dropped"),
        }
    }
    let confidence_qualifier = confidence
        .as_deref()
        .and_then(|c| {
            let word_end = c.find(|ch: char| !ch.is_alphabetic()).unwrap_or(c.len());
            let level = ConfidenceLevel::parse(&c[..word_end])?;
            let reason = c[word_end..].trim().trim_start_matches(['-', ':', ',']).trim();
            Some(ConfidenceQualifier {
                level,
                reason: if reason.is_empty() {
                    synthesized_qualifier(conflicted).reason
                } else {
                    reason.to_string()
                },
            })
        })
        .unwrap_or_else(|| synthesized_qualifier(conflicted));
    AnnotatedAnswer {
        answer,
        conflict_annotations,
        source_attribution,
        confidence_qualifier,
    }
}

fn synthesized_annotations(report: &ConflictReport, resolved: &ResolvedContext) -> Vec<String> {
    let mut out: Vec<String> = report.findings.iter().map(|f| describe_finding(f, resolved)).collect();
    if let Some(p) = report.parametric.as_ref().filter(|p| p.conflicting) {
        out.push(p.resolution_note.clone());
    }
    out
}

pub fn generate_answer(
    request: &ChatRequest,
    report: &ConflictReport,
    resolved: &ResolvedContext,
    chat: &dyn ChatProvider,
) -> Result<AnnotatedAnswer, ProviderError> {
    let reply = chat.chat(request)?;
    Ok(parse_answer(&reply, report, resolved))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DocumentPair, Stage};
    use crate::providers::mock::ScriptedChat;
    use crate::resolve::ResolvedDocument;

    fn docs() -> Vec<Document> {
        vec![
            Document::new("a", "The tower is 300 m tall.", "blog"),
            Document::new("b", "The tower is 330 m tall.", "survey"),
        ]
    }

    fn finding(t: ConflictType) -> ConflictFinding {
        ConflictFinding {
            pair: DocumentPair::new(0, 1).unwrap(),
            conflict_type: t,
            confidence: 0.95,
            stage: Stage::Stage2,
        }
    }

    fn report(t: ConflictType) -> ConflictReport {
        ConflictReport {
            findings: vec![finding(t)],
            pairs_examined: 1,
            stage2_calls: 1,
            parametric: None,
        }
    }

    fn resolved_swapped() -> ResolvedContext {
        let d = docs();
        ResolvedContext {
            strategies: vec![],
            documents: vec![
                ResolvedDocument { retrieval_rank: 1, document: d[1].clone(), role: DocumentRole::PrimarySource },
                ResolvedDocument { retrieval_rank: 0, document: d[0].clone(), role: DocumentRole::Superseded },
            ],
            notes: vec!["latest source prioritized".into()],
        }
    }

    #[test]
    fn empty_report_matches_standard_prompt() {
        let q = Query::new("q", "How tall?");
        let t = Templates::builtin();
        let ctx = ResolvedContext::passthrough(&docs());
        let a = build_generation_prompt(&q, &ctx, &ConflictReport::empty(), &t, &GenerationConfig::default());
        let b = build_standard_prompt(&q, &docs(), &t);
        assert_eq!(a, b);
        assert!(!a.user_prompt.contains("<conflicts>"));
        assert_eq!(a.temperature, 0.3);
    }

    #[test]
    fn conflict_prompt_lists_roles_and_instructions() {
        let q = Query::new("q", "How tall?");
        let req = build_generation_prompt(
            &q,
            &resolved_swapped(),
            &report(ConflictType::Temporal),
            &Templates::builtin(),
            &GenerationConfig::default(),
        );
        let p = &req.user_prompt;
        assert!(p.contains(r#"<document index="1" source="survey" role="primary_source">"#));
        assert!(p.contains(r#"role="superseded""#));
        assert!(p.contains("- temporal conflict between document 2 (blog) and document 1 (survey)"));
        assert!(p.contains("prioritize the latest source"));
        assert_eq!(req.task(), Some(Task::GenerateConflictAware));
    }

    #[test]
    fn budget_truncates_superseded_tail() {
        let q = Query::new("q", "How tall?");
        let long = "word ".repeat(160); // 800 chars, 200 tokens
        let mut ctx = ResolvedContext::default();
        for i in 0..5 {
            ctx.documents.push(ResolvedDocument {
                retrieval_rank: i,
                document: Document::new(format!("d{i}"), format!("{i} {long}"), format!("s{i}")),
                role: if i == 0 { DocumentRole::PrimarySource } else { DocumentRole::Superseded },
            });
        }
        let r = ConflictReport {
            findings: vec![finding(ConflictType::Factual)],
            ..ConflictReport::default()
        };
        let t = Templates::builtin();
        let full = build_generation_prompt(&q, &ctx, &r, &t, &GenerationConfig::default());
        assert!(full.estimated_input_tokens() < DEFAULT_TOKEN_BUDGET);
        assert!(!full.user_prompt.contains("[truncated]"));

        let budget = full.estimated_input_tokens() - 300;
        let cut = build_generation_prompt(&q, &ctx, &r, &t, &GenerationConfig { token_budget: budget });
        assert!(cut.estimated_input_tokens() <= budget, "{} > {budget}", cut.estimated_input_tokens());
        assert!(cut.user_prompt.contains("[truncated]"));
        // The primary source is untouched.
        assert!(cut.user_prompt.contains(&format!("0 {}", long.trim())));
    }

    #[test]
    fn four_sections_parse_verbatim() {
        let reply = "ANSWER: It is 330 m.\nCONFLICTS:\n- factual conflict between blog and survey\nSOURCES:\n- It is 330 m. | survey\nCONFIDENCE: Moderate - sources disagree";
        let a = parse_answer(reply, &report(ConflictType::Factual), &resolved_swapped());
        assert_eq!(a.answer, "It is 330 m.");
        assert_eq!(a.conflict_annotations, vec!["factual conflict between blog and survey"]);
        assert_eq!(a.source_attribution, vec![Attribution { claim: "It is 330 m.".into(), source: "survey".into() }]);
        assert_eq!(a.confidence_qualifier.level, ConfidenceLevel::Moderate);
        assert_eq!(a.confidence_qualifier.reason, "sources disagree");
        assert_eq!(a.render(false), reply);
        assert_eq!(a.render(true), "ANSWER: It is 330 m.");
    }

    #[test]
    fn answer_only_reply_gets_synthesized_parts() {
        let a = parse_answer("ANSWER: 330 m", &report(ConflictType::Factual), &resolved_swapped());
        assert_eq!(a.conflict_annotations.len(), 1);
        assert!(a.conflict_annotations[0].starts_with("factual conflict"));
        assert_eq!(a.confidence_qualifier.level, ConfidenceLevel::Moderate);
    }

    #[test]
    fn plain_reply_without_conflicts_is_high() {
        let ctx = ResolvedContext::passthrough(&docs());
        let a = parse_answer("It is 330 m.", &ConflictReport::empty(), &ctx);
        assert_eq!(a.answer, "It is 330 m.");
        assert!(a.conflict_annotations.is_empty());
        assert_eq!(a.confidence_qualifier.level, ConfidenceLevel::High);
    }

    #[test]
    fn unknown_sources_are_dropped() {
        let ctx = ResolvedContext::passthrough(&docs());
        let a = parse_answer(
            "ANSWER: x\nSOURCES:\n- x | Wikipedia\n- x | SURVEY\n- blog",
            &ConflictReport::empty(),
            &ctx,
        );
        let sources: Vec<&str> = a.source_attribution.iter().map(|s| s.source.as_str()).collect();
        assert_eq!(sources, vec!["survey", "blog"]);
        assert_eq!(a.source_attribution[1].claim, "x");
    }

    #[test]
    fn generate_answer_calls_provider() {
        let chat = ScriptedChat::new().on(Task::GenerateStandard, "ANSWER: 300 m\nCONFIDENCE: High - one source");
        let ctx = ResolvedContext::passthrough(&docs());
        let req = build_standard_prompt(&Query::new("q", "?"), &docs(), &Templates::builtin());
        let a = generate_answer(&req, &ConflictReport::empty(), &ctx, &chat).unwrap();
        assert_eq!(a.answer, "300 m");
        assert_eq!(a.confidence_qualifier.reason, "one source");
        assert!(generate_answer(&req, &ConflictReport::empty(), &ctx, &ScriptedChat::new()).is_err());
    }
}
