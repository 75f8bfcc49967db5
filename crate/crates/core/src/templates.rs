//! Prompt templates.
//!
//! Every [`Task`] has one template file. Built-in copies are compiled in;
//! a template directory may override any subset of them. Placeholders are
//! written `{name}` and only the names passed to [`Templates::render`] are
//! substituted, so literal JSON braces in a template survive untouched.

use std::collections::HashMap;
use std::path::Path;

use crate::model::Document;
use crate::providers::Task;

impl Task {
    pub fn template_file(self) -> &'static str {
        match self {
            Task::PairJudge => "pair_judge.txt",
            Task::ClosedBook => "closed_book.txt",
            Task::OpenBook => "open_book.txt",
            Task::ParametricCompare => "parametric_compare.txt",
            Task::CriteriaScore => "criteria_score.txt",
            Task::DateExtract => "date_extract.txt",
            Task::GenerateConflictAware => "generate_conflict_aware.txt",
            Task::GenerateStandard => "generate_standard.txt",
            Task::JudgeCorrectness => "judge_correctness.txt",
            Task::RateResolution => "rate_resolution.txt",
            Task::RateTransparency => "rate_transparency.txt",
        }
    }

    fn builtin_template(self) -> &'static str {
        match self {
            Task::PairJudge => include_str!("../templates/pair_judge.txt"),
            Task::ClosedBook => include_str!("../templates/closed_book.txt"),
            Task::OpenBook => include_str!("../templates/open_book.txt"),
            Task::ParametricCompare => include_str!("../templates/parametric_compare.txt"),
            Task::CriteriaScore => include_str!("../templates/criteria_score.txt"),
            Task::DateExtract => include_str!("../templates/date_extract.txt"),
            Task::GenerateConflictAware => include_str!("../templates/generate_conflict_aware.txt"),
            Task::GenerateStandard => include_str!("../templates/generate_standard.txt"),
            Task::JudgeCorrectness => include_str!("../templates/judge_correctness.txt"),
            Task::RateResolution => include_str!("../templates/rate_resolution.txt"),
            Task::RateTransparency => include_str!("../templates/rate_transparency.txt"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Templates {
    by_task: HashMap<Task, String>,
}

impl Default for Templates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Templates {
    pub fn builtin() -> Self {
        Self {
            by_task: Task::ALL
                .into_iter()
                .map(|t| (t, t.builtin_template().to_string()))
                .collect(),
        }
    }

    /// Built-ins overridden by any `<task>.txt` present in `dir`.
    pub fn from_dir(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("template directory {} does not exist", dir.display()),
            ));
        }
        let mut templates = Self::builtin();
        for task in Task::ALL {
            let path = dir.join(task.template_file());
            if path.is_file() {
                templates.by_task.insert(task, std::fs::read_to_string(path)?);
            }
        }
        Ok(templates)
    }

    pub fn set(&mut self, task: Task, template: impl Into<String>) {
        self.by_task.insert(task, template.into());
    }

    pub fn get(&self, task: Task) -> &str {
        &self.by_task[&task]
    }

    pub fn render(&self, task: Task, vars: &[(&str, &str)]) -> String {
        render(self.get(task), vars)
    }
}

/// Single-pass substitution; substituted values are never re-scanned.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'outer: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        for (name, value) in vars {
            if after.starts_with(name) && after[name.len()..].starts_with('}') {
                out.push_str(value);
                rest = &after[name.len() + 1..];
                continue 'outer;
            }
        }
        out.push('{');
        rest = after;
    }
    out.push_str(rest);
    out
}

/// `<document index=".." source=".." [date=".."] [role=".."]>text</document>`,
/// the document form used inside list-style prompts.
pub fn document_tag(index: usize, doc: &Document, role: Option<&str>) -> String {
    let mut attrs = format!("index=\"{index}\" source=\"{}\"", doc.source.replace('"', "'"));
    if let Some(date) = doc.date {
        attrs.push_str(&format!(" date=\"{date}\""));
    }
    if let Some(role) = role {
        attrs.push_str(&format!(" role=\"{role}\""));
    }
    format!("<document {attrs}>{}</document>", doc.text.trim())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_substitutes_only_known_names() {
        let t = r#"Q: {query} {"is_conflict": {unknown}}"#;
        assert_eq!(
            render(t, &[("query", "why {query}?")]),
            r#"Q: why {query}? {"is_conflict": {unknown}}"#
        );
    }

    #[test]
    fn builtins_cover_every_task() {
        let t = Templates::builtin();
        for task in Task::ALL {
            assert!(!t.get(task).trim().is_empty(), "{task}");
        }
        assert!(t.get(Task::PairJudge).contains("{doc_a}"));
    }

    #[test]
    fn directory_overrides_single_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("pair_judge.txt"), "custom {query}").unwrap();
        let t = Templates::from_dir(dir.path()).unwrap();
        assert_eq!(t.render(Task::PairJudge, &[("query", "q")]), "custom q");
        assert_eq!(t.get(Task::ClosedBook), Templates::builtin().get(Task::ClosedBook));
        assert!(Templates::from_dir(dir.path().join("missing")).is_err());
    }
}
