//! The `carag` command line. Commands write to the supplied writer so they
//! can be driven in-process as well as from the binary.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Overrides, PipelineConfig};
use crate::detect::DetectionCostLedger;
use crate::evaluate::{bootstrap_runs, check_judge_distinct, read_run_file, write_run_file, RunSummary};
use crate::model::{load_corpus, load_dataset, ConflictReport, DatasetRecord, Document, Query};
use crate::neural::{classification_report, save_model, train, ClassificationReport, HeadKind, TrainConfig};
use crate::pipeline::{
    evaluate_dataset, training_examples, EvalOptions, Pipeline, Providers, QueryOutcome, Retriever, SystemMode,
};
use crate::retrieval::InvertedIndex;

/// Exit status for usage and configuration errors.
pub const EXIT_USAGE: i32 = 2;
/// Exit status when a run completed with per-query or provider failures.
pub const EXIT_FAILURES: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "carag", version, about = "Conflict-aware retrieval-augmented generation")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Use the offline rule-based providers instead of HTTP endpoints.
    #[arg(long, global = true)]
    pub mock_providers: bool,
    /// Stage-1 confidence below which a pair escalates to Stage 2.
    #[arg(long, global = true)]
    pub tau_c: Option<f64>,
    /// Documents retrieved per query.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build and save the inverted index of a corpus.
    Index {
        /// Corpus file, one document object per line.
        corpus: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train both detector heads from a labeled dataset.
    TrainDetector(TrainArgs),
    /// Report the conflicts among a question's documents.
    Detect {
        #[command(flatten)]
        source: QuestionSource,
    },
    /// Answer one question.
    Ask {
        #[command(flatten)]
        source: QuestionSource,
        /// Standard RAG over the same documents.
        #[arg(long)]
        no_conflict_pipeline: bool,
        #[arg(long, value_parser = parse_baseline, conflicts_with = "no_conflict_pipeline")]
        baseline: Option<SystemMode>,
    },
    /// Run and score a system over a dataset.
    Eval(EvalArgs),
    /// Paired bootstrap on correctness between two run files.
    Bootstrap {
        run_a: PathBuf,
        run_b: PathBuf,
        #[arg(long)]
        resamples: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct QuestionSource {
    /// Question text; optional with --query-id.
    pub question: Option<String>,
    /// Saved index to retrieve from.
    #[arg(long, conflicts_with = "dataset")]
    pub index: Option<PathBuf>,
    /// Dataset whose record supplies the documents.
    #[arg(long, requires = "query_id")]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub query_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub dataset: PathBuf,
    /// Directory receiving head1.json and head2.json.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub dataset: PathBuf,
    /// Run file to write.
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_baseline)]
    pub baseline: Option<SystemMode>,
    /// Judge only the answer text, without annotations.
    #[arg(long)]
    pub strip_annotations: bool,
    /// Permit the judge to use the generator's model.
    #[arg(long)]
    pub allow_self_judge: bool,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Also write the summary table as CSV.
    #[arg(long)]
    pub summary_csv: Option<PathBuf>,
}

fn parse_baseline(s: &str) -> Result<SystemMode, String> {
    match s.parse()? {
        SystemMode::ConflictAware => Err("the baseline must be standard or rerank-top1".into()),
        mode => Ok(mode),
    }
}

/// An error with the exit status it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: anyhow::Error,
}

impl CliError {
    fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_USAGE, error: error.into() }
    }

    fn failure(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_FAILURES, error: error.into() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.error)
    }
}

type CliResult = Result<i32, CliError>;

fn io(e: std::io::Error) -> CliError {
    CliError::failure(e)
}

struct Context {
    config: PipelineConfig,
    mock: bool,
}

impl Context {
    fn new(cli: &Cli) -> Result<Self, CliError> {
        let mut config = match &cli.config {
            Some(path) => PipelineConfig::load(path).map_err(CliError::usage)?,
            None => PipelineConfig::default(),
        };
        config.apply(&Overrides { seed: cli.seed, tau_c: cli.tau_c, k: cli.k });
        config.validate().map_err(CliError::usage)?;
        Ok(Self { config, mock: cli.mock_providers })
    }

    fn providers(&self) -> Result<Providers, CliError> {
        if self.mock {
            Ok(Providers::mock())
        } else {
            Providers::live(&self.config).map_err(CliError::usage)
        }
    }

    fn pipeline(&self) -> Result<Pipeline, CliError> {
        Pipeline::from_config(&self.config, self.providers()?).map_err(CliError::usage)
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> CliResult {
    let ctx = Context::new(cli)?;
    match &cli.command {
        Command::Index { corpus, out: path } => cmd_index(corpus, path, out),
        Command::TrainDetector(args) => cmd_train_detector(&ctx, args, out),
        Command::Detect { source } => cmd_detect(&ctx, source, out),
        Command::Ask { source, no_conflict_pipeline, baseline } => {
            let mode = match (no_conflict_pipeline, baseline) {
                (_, Some(b)) => *b,
                (true, None) => SystemMode::Standard,
                (false, None) => SystemMode::ConflictAware,
            };
            cmd_ask(&ctx, source, mode, out)
        }
        Command::Eval(args) => cmd_eval(&ctx, args, out),
        Command::Bootstrap { run_a, run_b, resamples } => cmd_bootstrap(&ctx, run_a, run_b, *resamples, out),
    }
}

fn cmd_index(corpus: &Path, path: &Path, out: &mut dyn Write) -> CliResult {
    let docs = load_corpus(corpus).map_err(CliError::usage)?;
    let index = InvertedIndex::build(&docs).map_err(CliError::usage)?;
    index.save(path).map_err(CliError::failure)?;
    writeln!(out, "{} documents", index.len()).map_err(io)?;
    Ok(0)
}

fn write_report(report: &ConflictReport, documents: &[Document], out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(
        out,
        "Conflict report: {} pairs examined, conflicts found: {}, Stage-2 calls: {}",
        report.pairs_examined,
        report.findings.len(),
        report.stage2_calls
    )?;
    for f in &report.findings {
        let id = |i: usize| documents.get(i).map_or("?", |d| d.id.as_str());
        writeln!(
            out,
            "  {} {} vs {}: {} ({:?}, confidence {:.3})",
            f.pair,
            id(f.pair.index_a()),
            id(f.pair.index_b()),
            f.conflict_type,
            f.stage,
            f.confidence
        )?;
    }
    if let Some(p) = &report.parametric {
        let state = if p.conflicting { "conflicting" } else { "consistent" };
        writeln!(out, "Parametric check: {state}")?;
    }
    Ok(())
}

fn write_ledger(ledger: &DetectionCostLedger, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(
        out,
        "Ledger: {} pairs, {} resolved by Stage 1, {} Stage-2 calls, estimated cost ${:.6}",
        ledger.pairs_total, ledger.stage1_resolved, ledger.stage2_calls, ledger.estimated_cost_usd
    )?;
    writeln!(
        out,
        "Latency: Stage 1 {:.2} ms, Stage 2 {:.2} ms",
        ledger.stage1_latency_ms, ledger.stage2_latency_ms
    )
}

/// The query and its documents, from a dataset record or by retrieval.
fn gather(ctx: &Context, source: &QuestionSource, providers: &Providers) -> Result<(Query, Vec<Document>), CliError> {
    if let Some(dataset) = &source.dataset {
        let id = source.query_id.as_deref().expect("clap enforces --query-id");
        let records = load_dataset(dataset).map_err(CliError::usage)?;
        let record: DatasetRecord = records
            .into_iter()
            .find(|r| r.query.id == id)
            .ok_or_else(|| CliError::usage(anyhow::anyhow!("no record with id {id} in {}", dataset.display())))?;
        let mut query = record.query;
        if let Some(q) = &source.question {
            query.text = q.clone();
        }
        let k = ctx.config.retrieval.k.min(record.documents.len());
        return Ok((query, record.documents[..k].to_vec()));
    }
    let question = source
        .question
        .clone()
        .ok_or_else(|| CliError::usage(anyhow::anyhow!("a question is required with --index")))?;
    let index_path = source
        .index
        .as_ref()
        .ok_or_else(|| CliError::usage(anyhow::anyhow!("give --index or --dataset with --query-id")))?;
    let index = InvertedIndex::load(index_path).map_err(CliError::usage)?;
    let embedder = providers.embedder.as_ref();
    let retriever = Retriever::new(index, embedder, ctx.config.retrieval).map_err(CliError::failure)?;
    let docs = retriever.retrieve(&question, embedder).map_err(CliError::failure)?;
    Ok((Query::new("cli", question), docs))
}

fn cmd_detect(ctx: &Context, source: &QuestionSource, out: &mut dyn Write) -> CliResult {
    let pipeline = ctx.pipeline()?;
    let (query, docs) = gather(ctx, source, pipeline.providers())?;
    let (report, ledger) = pipeline.detect(&query, &docs).map_err(CliError::failure)?;
    write_report(&report, &docs, out).map_err(io)?;
    write_ledger(&ledger, out).map_err(io)?;
    Ok(0)
}

fn write_outcome(outcome: &QueryOutcome, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "{}", outcome.answer.render(false))?;
    writeln!(out)?;
    writeln!(out, "Documents:")?;
    for (i, d) in outcome.resolved.documents.iter().enumerate() {
        writeln!(
            out,
            "  {}. {} ({}) {} [retrieved #{}]",
            i + 1,
            d.document.id,
            d.document.source,
            d.role.as_str(),
            d.retrieval_rank + 1
        )?;
    }
    write_report(&outcome.report, &outcome.documents, out)?;
    for note in &outcome.resolved.notes {
        writeln!(out, "Resolution: {note}")?;
    }
    write_ledger(&outcome.ledger, out)
}

fn cmd_ask(ctx: &Context, source: &QuestionSource, mode: SystemMode, out: &mut dyn Write) -> CliResult {
    let pipeline = ctx.pipeline()?;
    let (query, docs) = gather(ctx, source, pipeline.providers())?;
    let outcome = pipeline.answer(&query, &docs, mode).map_err(CliError::failure)?;
    write_outcome(&outcome, out).map_err(io)?;
    Ok(0)
}

fn print_class_report(name: &str, labels: &[&str], r: &ClassificationReport, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "{name}: validation accuracy {:.4}", r.accuracy)?;
    for (label, (f1, support)) in labels.iter().zip(r.per_class_f1.iter().zip(&r.support)) {
        writeln!(out, "  {label:<12} f1 {f1:.4}  support {support}")?;
    }
    Ok(())
}

fn cmd_train_detector(ctx: &Context, args: &TrainArgs, out: &mut dyn Write) -> CliResult {
    if !(0.0..1.0).contains(&args.val_fraction) || args.val_fraction == 0.0 {
        return Err(CliError::usage(anyhow::anyhow!("--val-fraction must lie in (0, 1)")));
    }
    let records = load_dataset(&args.dataset).map_err(CliError::usage)?;
    let providers = ctx.providers()?;
    let mut examples = training_examples(&records, providers.embedder.as_ref()).map_err(CliError::usage)?;
    examples.shuffle(&mut ChaCha8Rng::seed_from_u64(ctx.config.seed));
    let val = ((examples.len() as f64 * args.val_fraction).round() as usize).max(1);
    let train_count = examples.len().saturating_sub(val);
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        learning_rate: args.learning_rate.unwrap_or(defaults.learning_rate),
        batch_size: args.batch_size.unwrap_or(defaults.batch_size),
        max_epochs: args.epochs.unwrap_or(defaults.max_epochs),
        seed: ctx.config.seed,
        ..defaults
    };
    writeln!(out, "{} labeled pairs ({train_count} train, {val} validation)", examples.len()).map_err(io)?;
    std::fs::create_dir_all(&args.out_dir).map_err(io)?;
    let heads = [
        (HeadKind::Binary, "head1", vec!["no_conflict", "conflict"]),
        (HeadKind::FourWay, "head2", vec!["no_conflict", "factual", "temporal", "opinion"]),
    ];
    for (kind, name, labels) in heads {
        let (model, log) = train(&examples, (train_count, val), &config, kind)
            .map_err(|e| CliError::usage(anyhow::anyhow!("{name}: {e}")))?;
        let report = classification_report(&model, &examples[train_count..]).map_err(CliError::failure)?;
        writeln!(out, "{name}: best epoch {} of {}", log.best_epoch, log.epochs.len()).map_err(io)?;
        print_class_report(name, &labels, &report, out).map_err(io)?;
        let path = args.out_dir.join(format!("{name}.json"));
        save_model(&model, &path).map_err(CliError::failure)?;
        writeln!(out, "wrote {}", path.display()).map_err(io)?;
    }
    Ok(0)
}

fn cmd_eval(ctx: &Context, args: &EvalArgs, out: &mut dyn Write) -> CliResult {
    let pipeline = ctx.pipeline()?;
    let providers = pipeline.providers();
    check_judge_distinct(providers.generator.model_id(), providers.judge.model_id(), args.allow_self_judge)
        .map_err(CliError::usage)?;
    let records = load_dataset(&args.dataset).map_err(CliError::usage)?;
    let options = EvalOptions {
        mode: args.baseline.unwrap_or_default(),
        strip_annotations: args.strip_annotations,
        workers: args.workers.unwrap_or(ctx.config.eval.workers),
        k: ctx.config.retrieval.k,
    };
    let run = evaluate_dataset(&pipeline, &records, &options).map_err(CliError::failure)?;
    write_run_file(&args.out, &run).map_err(CliError::failure)?;
    let summary = RunSummary::from_records(&options.system_name(), &run, &ctx.config.cars);
    writeln!(out, "{}", RunSummary::table(std::slice::from_ref(&summary))).map_err(io)?;
    writeln!(out, "source fidelity {:.3} (attribution ratio)", summary.source_fidelity).map_err(io)?;
    if let Some(w) = summary.mean_topsis_weights {
        let w = w.as_array();
        writeln!(out, "mean entropy weights {:.3?}", w).map_err(io)?;
    }
    if let Some(path) = &args.summary_csv {
        std::fs::write(path, RunSummary::to_csv(&[summary.clone()])).map_err(io)?;
    }
    writeln!(out, "wrote {}", args.out.display()).map_err(io)?;
    if summary.failures > 0 {
        writeln!(out, "{} of {} queries failed", summary.failures, summary.queries).map_err(io)?;
        return Ok(EXIT_FAILURES);
    }
    Ok(0)
}

fn cmd_bootstrap(ctx: &Context, a: &Path, b: &Path, resamples: Option<usize>, out: &mut dyn Write) -> CliResult {
    let run_a = read_run_file(a).map_err(CliError::usage)?;
    let run_b = read_run_file(b).map_err(CliError::usage)?;
    let resamples = resamples.unwrap_or(ctx.config.eval.bootstrap_resamples);
    let p = bootstrap_runs(&run_a, &run_b, resamples, ctx.config.seed).map_err(CliError::usage)?;
    let mean = |r: &[crate::evaluate::RunRecord]| r.iter().map(|x| x.correctness()).sum::<f64>() / r.len().max(1) as f64;
    writeln!(
        out,
        "{} queries: correctness {:.4} vs {:.4}, p = {p:.4} ({resamples} resamples)",
        run_a.len(),
        mean(&run_a),
        mean(&run_b)
    )
    .map_err(io)?;
    Ok(0)
}
