//! Core domain types shared by every stage of the pipeline, plus the
//! line-delimited dataset format.
//!
//! Documents are identified positionally within a query: a [`DocumentPair`]
//! holds indices into the query's document list, and string ids are kept
//! only for reporting.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A retrieved passage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub authority_hint: Option<f64>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, source: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            source: source.into(),
            date: None,
            authority_hint: None,
        }
    }

    pub fn with_date(mut self, date: NaiveDate) -> Self {
        self.date = Some(date);
        self
    }

    pub fn with_authority_hint(mut self, hint: f64) -> Self {
        self.authority_hint = Some(hint);
        self
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.text.trim().is_empty() {
            return Err(ValidationError::EmptyText(self.id.clone()));
        }
        if let Some(h) = self.authority_hint {
            if !(0.0..=1.0).contains(&h) {
                return Err(ValidationError::AuthorityHint(self.id.clone(), h));
            }
        }
        Ok(())
    }

    /// Text block with metadata lines, as presented inside prompts.
    pub fn render_for_prompt(&self) -> String {
        let mut out = format!("source: {}", self.source);
        if let Some(date) = self.date {
            out.push_str(&format!("\ndate: {date}"));
        }
        if let Some(hint) = self.authority_hint {
            out.push_str(&format!("\nauthority_hint: {hint}"));
        }
        out.push_str("\ntext: ");
        out.push_str(self.text.trim());
        out
    }
}

/// The four classes of Head 2, in logit order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictType {
    NoConflict,
    Factual,
    Temporal,
    Opinion,
}

impl ConflictType {
    pub const ALL: [ConflictType; 4] = [
        ConflictType::NoConflict,
        ConflictType::Factual,
        ConflictType::Temporal,
        ConflictType::Opinion,
    ];

    pub fn index(self) -> usize {
        match self {
            ConflictType::NoConflict => 0,
            ConflictType::Factual => 1,
            ConflictType::Temporal => 2,
            ConflictType::Opinion => 3,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn is_conflict(self) -> bool {
        self != ConflictType::NoConflict
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConflictType::NoConflict => "none",
            ConflictType::Factual => "factual",
            ConflictType::Temporal => "temporal",
            ConflictType::Opinion => "opinion",
        }
    }
}

impl fmt::Display for ConflictType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConflictType {
    type Err = ValidationError;

    /// Case-insensitive; accepts "none" and "no_conflict" for the negative class.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "no_conflict" | "noconflict" | "no-conflict" => Ok(ConflictType::NoConflict),
            "factual" => Ok(ConflictType::Factual),
            "temporal" => Ok(ConflictType::Temporal),
            "opinion" => Ok(ConflictType::Opinion),
            other => Err(ValidationError::UnknownConflictType(other.to_string())),
        }
    }
}

/// Unordered pair of document positions, stored with `index_a < index_b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DocumentPair {
    index_a: usize,
    index_b: usize,
}

impl DocumentPair {
    pub fn new(index_a: usize, index_b: usize) -> Result<Self, ValidationError> {
        if index_a >= index_b {
            return Err(ValidationError::PairOrder(index_a, index_b));
        }
        Ok(Self { index_a, index_b })
    }

    pub fn index_a(self) -> usize {
        self.index_a
    }

    pub fn index_b(self) -> usize {
        self.index_b
    }

    pub fn check_bounds(self, document_count: usize) -> Result<(), ValidationError> {
        if self.index_b >= document_count {
            return Err(ValidationError::PairOutOfRange {
                pair: (self.index_a, self.index_b),
                document_count,
            });
        }
        Ok(())
    }
}

impl fmt::Display for DocumentPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.index_a, self.index_b)
    }
}

// Serialized as `[a, b]`, matching the dataset format.
impl Serialize for DocumentPair {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        [self.index_a, self.index_b].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DocumentPair {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [a, b] = <[usize; 2]>::deserialize(deserializer)?;
        DocumentPair::new(a, b).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldConflict {
    pub pair: DocumentPair,
    #[serde(rename = "type")]
    pub conflict_type: ConflictType,
}

impl GoldConflict {
    pub fn new(pair: DocumentPair, conflict_type: ConflictType) -> Result<Self, ValidationError> {
        if !conflict_type.is_conflict() {
            return Err(ValidationError::GoldNoConflict(pair.index_a, pair.index_b));
        }
        Ok(Self { pair, conflict_type })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_conflicts: Option<Vec<GoldConflict>>,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            gold_answer: None,
            gold_conflicts: None,
        }
    }
}

/// Which detector produced a finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Stage1,
    Stage2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConflictFinding {
    pub pair: DocumentPair,
    pub conflict_type: ConflictType,
    pub confidence: f64,
    pub stage: Stage,
}

/// Outcome of comparing closed-book and open-book answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricVerdict {
    pub closed_book_answer: String,
    pub open_book_answer: String,
    pub conflicting: bool,
    pub resolution_note: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConflictReport {
    /// Only pairs judged to conflict.
    pub findings: Vec<ConflictFinding>,
    pub pairs_examined: usize,
    pub stage2_calls: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parametric: Option<ParametricVerdict>,
}

impl ConflictReport {
    pub fn empty() -> Self {
        Self::default()
    }

    /// True when no inter-document conflict was found.
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has_type(&self, conflict_type: ConflictType) -> bool {
        self.findings.iter().any(|f| f.conflict_type == conflict_type)
    }
}

/// All unordered pairs of `document_count` positions in lexicographic order.
pub fn enumerate_pairs(document_count: usize) -> Vec<DocumentPair> {
    let mut pairs = Vec::with_capacity(document_count * document_count.saturating_sub(1) / 2);
    for a in 0..document_count {
        for b in (a + 1)..document_count {
            pairs.push(DocumentPair { index_a: a, index_b: b });
        }
    }
    pairs
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub query: Query,
    pub documents: Vec<Document>,
}

impl DatasetRecord {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.query.text.trim().is_empty() {
            return Err(ValidationError::EmptyQuestion(self.query.id.clone()));
        }
        let mut seen = HashSet::new();
        for doc in &self.documents {
            doc.validate()?;
            if !seen.insert(doc.id.as_str()) {
                return Err(ValidationError::DuplicateDocumentId(doc.id.clone()));
            }
        }
        if let Some(gold) = &self.query.gold_conflicts {
            for g in gold {
                g.pair.check_bounds(self.documents.len())?;
                if !g.conflict_type.is_conflict() {
                    return Err(ValidationError::GoldNoConflict(g.pair.index_a, g.pair.index_b));
                }
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct RecordWire {
    id: String,
    question: String,
    documents: Vec<Document>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_conflicts: Option<Vec<GoldConflict>>,
}

impl From<RecordWire> for DatasetRecord {
    fn from(w: RecordWire) -> Self {
        DatasetRecord {
            query: Query {
                id: w.id,
                text: w.question,
                gold_answer: w.gold_answer,
                gold_conflicts: w.gold_conflicts,
            },
            documents: w.documents,
        }
    }
}

impl From<&DatasetRecord> for RecordWire {
    fn from(r: &DatasetRecord) -> Self {
        RecordWire {
            id: r.query.id.clone(),
            question: r.query.text.clone(),
            documents: r.documents.clone(),
            gold_answer: r.query.gold_answer.clone(),
            gold_conflicts: r.query.gold_conflicts.clone(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ValidationError {
    #[error("document {0:?} has empty text")]
    EmptyText(String),
    #[error("query {0:?} has empty question text")]
    EmptyQuestion(String),
    #[error("document {0:?} has authority_hint {1} outside [0, 1]")]
    AuthorityHint(String, f64),
    #[error("duplicate document id {0:?}")]
    DuplicateDocumentId(String),
    #[error("pair ({0}, {1}) must satisfy index_a < index_b")]
    PairOrder(usize, usize),
    #[error("pair {pair:?} is out of range for {document_count} documents")]
    PairOutOfRange {
        pair: (usize, usize),
        document_count: usize,
    },
    #[error("gold conflict on pair ({0}, {1}) cannot have type none")]
    GoldNoConflict(usize, usize),
    #[error("unknown conflict type {0:?}")]
    UnknownConflictType(String),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read dataset {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: ValidationError,
    },
}

/// Parses dataset records from line-delimited JSON text. Blank lines are skipped.
pub fn parse_dataset(text: &str) -> Result<Vec<DatasetRecord>, DatasetError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let wire: RecordWire = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let record = DatasetRecord::from(wire);
        record
            .validate()
            .map_err(|source| DatasetError::Invalid { line: line_no, source })?;
        records.push(record);
    }
    Ok(records)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>, DatasetError> {
    let path = path.as_ref();
    let io_err = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::open(path).map_err(io_err)?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line.map_err(io_err)?);
        text.push('\n');
    }
    parse_dataset(&text)
}

pub fn save_dataset(path: impl AsRef<Path>, records: &[DatasetRecord]) -> std::io::Result<()> {
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    for record in records {
        let line = serde_json::to_string(&RecordWire::from(record)).map_err(std::io::Error::other)?;
        writeln!(file, "{line}")?;
    }
    file.flush()
}

/// Reads a corpus file: one [`Document`] object per line.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut docs: Vec<Document> = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        doc.validate()
            .map_err(|source| DatasetError::Invalid { line: i + 1, source })?;
        if !seen.insert(doc.id.clone()) {
            return Err(DatasetError::Invalid {
                line: i + 1,
                source: ValidationError::DuplicateDocumentId(doc.id),
            });
        }
        docs.push(doc);
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_documents_give_ten_pairs() {
        assert_eq!(enumerate_pairs(5).len(), 10);
    }

    #[test]
    fn degenerate_counts_have_no_pairs() {
        assert!(enumerate_pairs(0).is_empty());
        assert!(enumerate_pairs(1).is_empty());
    }

    #[test]
    fn four_documents_lexicographic() {
        let pairs = enumerate_pairs(4);
        assert_eq!(pairs.len(), 6);
        assert_eq!(pairs[0], DocumentPair::new(0, 1).unwrap());
        assert_eq!(pairs[5], DocumentPair::new(2, 3).unwrap());
    }

    #[test]
    fn pair_rejects_bad_order() {
        assert!(DocumentPair::new(2, 2).is_err());
        assert!(DocumentPair::new(3, 1).is_err());
    }

    #[test]
    fn conflict_type_parses_case_insensitively() {
        assert_eq!("Temporal".parse::<ConflictType>().unwrap(), ConflictType::Temporal);
        assert_eq!("NONE".parse::<ConflictType>().unwrap(), ConflictType::NoConflict);
        assert!("mixed".parse::<ConflictType>().is_err());
    }

    #[test]
    fn empty_dataset_is_empty() {
        assert!(parse_dataset("").unwrap().is_empty());
    }

    #[test]
    fn missing_question_names_line_one() {
        let err = parse_dataset(r#"{"id":"q1","documents":[]}"#).unwrap_err();
        match err {
            DatasetError::Parse { line, message } => {
                assert_eq!(line, 1);
                assert!(message.contains("question"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_document_id_is_rejected() {
        let line = r#"{"id":"q","question":"x?","documents":[{"id":"d","text":"a","source":"s"},{"id":"d","text":"b","source":"s"}]}"#;
        let err = parse_dataset(&format!("\n{line}")).unwrap_err();
        assert!(matches!(
            err,
            DatasetError::Invalid { line: 2, source: ValidationError::DuplicateDocumentId(_) }
        ));
    }

    #[test]
    fn gold_conflict_wire_format() {
        let line = r#"{"id":"q","question":"x?","documents":[{"id":"a","text":"a","source":"s","date":"2020-01-02"},{"id":"b","text":"b","source":"t","authority_hint":0.5}],"gold_answer":"a","gold_conflicts":[{"pair":[0,1],"type":"temporal"}]}"#;
        let records = parse_dataset(line).unwrap();
        let gold = records[0].query.gold_conflicts.as_ref().unwrap();
        assert_eq!(gold[0].conflict_type, ConflictType::Temporal);
        assert_eq!(gold[0].pair, DocumentPair::new(0, 1).unwrap());
        assert_eq!(records[0].documents[0].date, NaiveDate::from_ymd_opt(2020, 1, 2));
    }

    #[test]
    fn gold_pair_out_of_range_is_rejected() {
        let line = r#"{"id":"q","question":"x?","documents":[{"id":"a","text":"a","source":"s"}],"gold_conflicts":[{"pair":[0,1],"type":"factual"}]}"#;
        assert!(matches!(
            parse_dataset(line).unwrap_err(),
            DatasetError::Invalid { source: ValidationError::PairOutOfRange { .. }, .. }
        ));
    }

    #[test]
    fn whitespace_only_text_is_invalid() {
        let doc = Document::new("d", "   ", "s");
        assert_eq!(doc.validate(), Err(ValidationError::EmptyText("d".into())));
    }
}
