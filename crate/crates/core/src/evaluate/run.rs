use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    cars, paired_bootstrap, rescale_rating, CarsComponents, CarsWeights, DetectionCounts, DetectionMetrics,
    EvaluateError,
};
use crate::detect::DetectionCostLedger;
use crate::generate::AnnotatedAnswer;
use crate::model::ConflictReport;
use crate::resolve::CriteriaWeights;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryScores {
    pub correct: u8,
    pub judge_rationale: String,
    pub token_f1: f64,
    /// Absent when the query has no gold conflict labels.
    pub detection: Option<DetectionCounts>,
    pub resolution: u8,
    pub transparency: u8,
    pub source_fidelity: f64,
}

/// One line of a run file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub query_id: String,
    pub system: String,
    pub answer: Option<AnnotatedAnswer>,
    /// Text shown to the judge (annotations stripped when requested).
    pub judged_text: String,
    pub report: ConflictReport,
    pub ledger: DetectionCostLedger,
    pub resolution_notes: Vec<String>,
    pub topsis_weights: Vec<CriteriaWeights>,
    pub scores: Option<QueryScores>,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn failed(query_id: impl Into<String>, system: impl Into<String>, error: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            system: system.into(),
            answer: None,
            judged_text: String::new(),
            report: ConflictReport::empty(),
            ledger: DetectionCostLedger::default(),
            resolution_notes: Vec::new(),
            topsis_weights: Vec::new(),
            scores: None,
            error: Some(error.into()),
        }
    }

    pub fn correctness(&self) -> f64 {
        self.scores.as_ref().map_or(0.0, |s| f64::from(s.correct))
    }
}

pub fn write_run_file(path: impl AsRef<Path>, records: &[RunRecord]) -> Result<(), EvaluateError> {
    let path = path.as_ref();
    let io = |e| EvaluateError::Io(path.display().to_string(), e);
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for r in records {
        let line = serde_json::to_string(r).expect("run records serialize");
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_run_file(path: impl AsRef<Path>) -> Result<Vec<RunRecord>, EvaluateError> {
    let path = path.as_ref();
    let io = |e| EvaluateError::Io(path.display().to_string(), e);
    let reader = BufReader::new(std::fs::File::open(path).map_err(io)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| EvaluateError::RunFormat {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(records)
}

/// Correctness bootstrap between two runs over the same queries; failed
/// queries count as incorrect.
pub fn bootstrap_runs(a: &[RunRecord], b: &[RunRecord], resamples: usize, seed: u64) -> Result<f64, EvaluateError> {
    let index: BTreeMap<&str, &RunRecord> = b.iter().map(|r| (r.query_id.as_str(), r)).collect();
    if index.len() != a.len() {
        return Err(EvaluateError::RunMismatch(format!("{} vs {} queries", a.len(), b.len())));
    }
    let mut xs = Vec::with_capacity(a.len());
    let mut ys = Vec::with_capacity(a.len());
    for r in a {
        let other = index
            .get(r.query_id.as_str())
            .ok_or_else(|| EvaluateError::RunMismatch(format!("query {} missing from second run", r.query_id)))?;
        xs.push(r.correctness());
        ys.push(other.correctness());
    }
    paired_bootstrap(&xs, &ys, resamples, seed)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// System-level metrics; CARS is computed from the aggregated components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub system: String,
    pub queries: usize,
    pub failures: usize,
    pub correctness: f64,
    pub token_f1: f64,
    /// Micro-averaged over labeled queries; type accuracy over true positives.
    pub detection: Option<DetectionMetrics>,
    /// Mean 1–5 ratings.
    pub resolution: f64,
    pub transparency: f64,
    pub source_fidelity: f64,
    pub cars: f64,
    pub stage2_call_rate: f64,
    pub estimated_cost_usd: f64,
    /// Mean of the per-conflict-set entropy weights.
    pub mean_topsis_weights: Option<CriteriaWeights>,
}

impl RunSummary {
    pub fn from_records(system: &str, records: &[RunRecord], weights: &CarsWeights) -> Self {
        let scored: Vec<&QueryScores> = records.iter().filter_map(|r| r.scores.as_ref()).collect();
        let failures = records.len() - scored.len();
        let n = records.len().max(1) as f64;
        let correctness = records.iter().map(RunRecord::correctness).sum::<f64>() / n;
        let mut counts = DetectionCounts::default();
        let mut labeled = false;
        for s in &scored {
            if let Some(c) = &s.detection {
                counts.add(c);
                labeled = true;
            }
        }
        let detection = labeled.then(|| counts.metrics());
        let resolution = mean(scored.iter().map(|s| f64::from(s.resolution)));
        let transparency = mean(scored.iter().map(|s| f64::from(s.transparency)));
        let source_fidelity = mean(scored.iter().map(|s| s.source_fidelity));
        let components = CarsComponents {
            ac: correctness,
            cda: detection.map_or(0.0, |d| d.f1),
            ra: mean(scored.iter().map(|s| rescale_rating(s.resolution))),
            sf: source_fidelity,
        };
        let mut ledger = DetectionCostLedger::default();
        for r in records {
            ledger.merge(&r.ledger);
        }
        let weights_seen: Vec<CriteriaWeights> = records.iter().flat_map(|r| r.topsis_weights.iter().copied()).collect();
        Self {
            system: system.to_string(),
            queries: records.len(),
            failures,
            correctness,
            token_f1: mean(scored.iter().map(|s| s.token_f1)),
            detection,
            resolution,
            transparency,
            source_fidelity,
            cars: cars(&components, weights),
            stage2_call_rate: ledger.stage2_rate(),
            estimated_cost_usd: ledger.estimated_cost_usd,
            mean_topsis_weights: CriteriaWeights::mean(&weights_seen),
        }
    }

    pub fn cars_components(&self, records: &[RunRecord]) -> CarsComponents {
        let ra = mean(records.iter().filter_map(|r| r.scores.as_ref()).map(|s| rescale_rating(s.resolution)));
        CarsComponents {
            ac: self.correctness,
            cda: self.detection.map_or(0.0, |d| d.f1),
            ra,
            sf: self.source_fidelity,
        }
    }

    const HEADER: [&'static str; 14] = [
        "system",
        "queries",
        "failures",
        "correctness",
        "token_f1",
        "detection_p",
        "detection_r",
        "detection_f1",
        "type_accuracy",
        "resolution",
        "transparency",
        "cars",
        "stage2_rate",
        "cost_usd",
    ];

    fn cells(&self) -> [String; 14] {
        let pct = |v: f64| format!("{:.1}", v * 100.0);
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), pct);
        [
            self.system.clone(),
            self.queries.to_string(),
            self.failures.to_string(),
            pct(self.correctness),
            pct(self.token_f1),
            opt(self.detection.map(|d| d.precision)),
            opt(self.detection.map(|d| d.recall)),
            opt(self.detection.map(|d| d.f1)),
            opt(self.detection.and_then(|d| d.type_accuracy)),
            format!("{:.2}", self.resolution),
            format!("{:.2}", self.transparency),
            format!("{:.3}", self.cars),
            pct(self.stage2_call_rate),
            format!("{:.6}", self.estimated_cost_usd),
        ]
    }

    /// Aligned plain-text table, one row per system.
    pub fn table(summaries: &[RunSummary]) -> String {
        let rows: Vec<[String; 14]> = summaries.iter().map(Self::cells).collect();
        let widths: Vec<usize> = (0..14)
            .map(|c| rows.iter().map(|r| r[c].len()).chain([Self::HEADER[c].len()]).max().unwrap_or(0))
            .collect();
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect::<Vec<_>>()
                .join("  ")
        };
        let header: Vec<String> = Self::HEADER.iter().map(|h| h.to_string()).collect();
        let mut out = line(&header);
        for r in &rows {
            out.push('\n');
            out.push_str(&line(r));
        }
        out
    }

    pub fn to_csv(summaries: &[RunSummary]) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::HEADER).expect("in-memory write");
        for s in summaries {
            w.write_record(s.cells()).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, correct: u8, detection: Option<DetectionCounts>) -> RunRecord {
        RunRecord {
            scores: Some(QueryScores {
                correct,
                judge_rationale: String::new(),
                token_f1: f64::from(correct),
                detection,
                resolution: 5,
                transparency: 3,
                source_fidelity: 1.0,
            }),
            error: None,
            ..RunRecord::failed(id, "sys", "")
        }
    }

    #[test]
    fn summary_aggregates() {
        let tp = DetectionCounts { true_positives: 1, false_positives: 1, false_negatives: 0, type_correct: 1 };
        let records = vec![record("a", 1, Some(tp)), record("b", 0, None), RunRecord::failed("c", "sys", "boom")];
        let s = RunSummary::from_records("sys", &records, &CarsWeights::default());
        assert_eq!((s.queries, s.failures), (3, 1));
        assert!((s.correctness - 1.0 / 3.0).abs() < 1e-12);
        let d = s.detection.unwrap();
        assert_eq!((d.precision, d.recall, d.type_accuracy), (0.5, 1.0, Some(1.0)));
        assert_eq!(s.resolution, 5.0);
        let expected = cars(&s.cars_components(&records), &CarsWeights::default());
        assert_eq!(s.cars, expected);
        let table = RunSummary::table(&[s.clone()]);
        assert!(table.starts_with("system"));
        assert_eq!(RunSummary::to_csv(&[s]).lines().count(), 2);
    }

    #[test]
    fn run_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        let records = vec![record("a", 1, None), RunRecord::failed("b", "sys", "x")];
        write_run_file(&path, &records).unwrap();
        assert_eq!(read_run_file(&path).unwrap(), records);
        std::fs::write(&path, "{not json}\n").unwrap();
        assert!(matches!(read_run_file(&path), Err(EvaluateError::RunFormat { line: 1, .. })));
    }

    #[test]
    fn run_bootstrap_against_itself() {
        let records: Vec<RunRecord> = (0..10).map(|i| record(&i.to_string(), (i % 2) as u8, None)).collect();
        assert_eq!(bootstrap_runs(&records, &records, 2000, 1).unwrap(), 1.0);
        assert!(bootstrap_runs(&records, &records[..5], 10, 1).is_err());
    }
}
