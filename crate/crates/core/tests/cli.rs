use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn carag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_carag"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Wall-clock latencies are the only nondeterministic output.
fn normalize(text: &str) -> String {
    text.lines()
        .map(|l| if l.starts_with("Latency:") { "Latency: <elapsed>" } else { l })
        .collect::<Vec<_>>()
        .join("\n")
}

fn build_index(dir: &Path) -> String {
    let index = dir.join("index.json");
    let o = carag(&["index", fixture("corpus.jsonl").to_str().unwrap(), "-o", index.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "9 documents\n");
    index.to_str().unwrap().to_string()
}

#[test]
fn index_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let first = std::fs::read(build_index(dir.path())).unwrap();
    let second = std::fs::read(build_index(dir.path())).unwrap();
    assert_eq!(first, second);
}

#[test]
fn missing_corpus_is_a_usage_error() {
    let o = carag(&["index", "no/such/corpus.jsonl", "-o", "/tmp/never-written.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no/such/corpus.jsonl"));
}

#[test]
fn bad_threshold_is_a_usage_error() {
    let o = carag(&["--mock-providers", "--tau-c", "1.5", "ask", "--dataset", "x", "--query-id", "q"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("tau_c"));
}

#[test]
fn ask_matches_golden_output() {
    let dir = tempfile::tempdir().unwrap();
    let index = build_index(dir.path());
    let args = ["--mock-providers", "--k", "3", "ask", "--index", &index, "How tall is the Harbor Tower?"];
    let first = carag(&args);
    assert!(first.status.success(), "{}", stderr(&first));
    let got = normalize(&stdout(&first));
    let golden_path = fixture("golden/ask_harbor_tower.txt");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden_path, &got).unwrap();
    }
    let golden = std::fs::read_to_string(&golden_path).unwrap();
    assert_eq!(got, golden);
    assert_eq!(normalize(&stdout(&carag(&args))), got, "reruns are stable");
}

#[test]
fn no_conflict_pipeline_is_standard_rag() {
    let dir = tempfile::tempdir().unwrap();
    let index = build_index(dir.path());
    let o = carag(&["--mock-providers", "--k", "3", "ask", "--index", &index, "--no-conflict-pipeline", "How tall is the Harbor Tower?"]);
    let out = stdout(&o);
    assert!(o.status.success());
    assert!(out.starts_with("ANSWER: The Harbor Tower is 298 metres tall."), "{out}");
    assert!(!out.contains("CONFLICTS:"));
    assert!(out.contains("Ledger: 0 pairs"));
}

#[test]
fn single_document_question_has_no_pairs() {
    let dataset = fixture("conflict_rigged.jsonl");
    let o = carag(&["--mock-providers", "--k", "1", "ask", "--dataset", dataset.to_str().unwrap(), "--query-id", "q01"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("Conflict report: 0 pairs examined"));
}

#[test]
fn detect_with_zero_threshold_makes_no_stage2_calls() {
    let dataset = fixture("conflict_rigged.jsonl");
    let o = carag(&["--mock-providers", "--tau-c", "0", "detect", "--dataset", dataset.to_str().unwrap(), "--query-id", "q02"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("3 pairs, 3 resolved by Stage 1, 0 Stage-2 calls"));
}

#[test]
fn eval_and_bootstrap_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run.jsonl");
    let csv = dir.path().join("summary.csv");
    let dataset = fixture("conflict_rigged.jsonl");
    let o = carag(&[
        "--mock-providers",
        "eval",
        dataset.to_str().unwrap(),
        "-o",
        run.to_str().unwrap(),
        "--summary-csv",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("system"));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 2);
    let run = run.to_str().unwrap();
    let b = carag(&["--mock-providers", "bootstrap", run, run, "--resamples", "2000"]);
    assert!(stdout(&b).contains("p = 1.0000"), "{}", stdout(&b));
}

#[test]
fn eval_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("unlabeled.jsonl");
    std::fs::write(&dataset, r#"{"id":"x","question":"Who?","documents":[{"id":"d","text":"Someone.","source":"s"}]}"#).unwrap();
    let run = dir.path().join("run.jsonl");
    let o = carag(&["--mock-providers", "eval", dataset.to_str().unwrap(), "-o", run.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("1 of 1 queries failed"));
}

#[test]
fn train_detector_requires_labels_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let unlabeled = dir.path().join("unlabeled.jsonl");
    std::fs::write(&unlabeled, r#"{"id":"x","question":"Who?","documents":[{"id":"d","text":"Someone.","source":"s"}]}"#).unwrap();
    let out_dir = dir.path().join("models");
    let o = carag(&["--mock-providers", "train-detector", unlabeled.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gold_conflicts"), "{}", stderr(&o));

    let dataset = fixture("conflict_rigged.jsonl");
    let train = || {
        let o = carag(&[
            "--mock-providers",
            "--seed",
            "5",
            "train-detector",
            dataset.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
            "--epochs",
            "10",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        (stdout(&o), std::fs::read(out_dir.join("head1.json")).unwrap())
    };
    let first = train();
    assert!(first.0.contains("head1: validation accuracy"));
    assert!(first.0.contains("head2: validation accuracy"));
    assert_eq!(first, train());
}
