// Scores the conflict-aware pipeline against the standard baseline on the
// bundled rigged fixture set, compares them with a paired bootstrap and
// checks that the CARS ordering survives ±0.1 weight shifts.
//
// Run: `cargo run --example evaluation_harness`

use conflict_aware_rag::detect::DetectorModels;
use conflict_aware_rag::evaluate::{bootstrap_runs, cars_weight_sweep, CarsWeights, RunSummary};
use conflict_aware_rag::model::load_dataset;
use conflict_aware_rag::pipeline::{evaluate_dataset, EvalOptions, Pipeline, Providers, SystemMode};
use conflict_aware_rag::templates::Templates;

pub fn run_example() -> anyhow::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/conflict_rigged.jsonl");
    let records = load_dataset(path)?;
    let pipeline = Pipeline::new(Providers::mock(), DetectorModels::untrained(), Templates::builtin());
    let weights = CarsWeights::default();

    let mut runs = Vec::new();
    let mut summaries = Vec::new();
    for mode in [SystemMode::ConflictAware, SystemMode::Standard] {
        let options = EvalOptions { mode, ..EvalOptions::default() };
        let run = evaluate_dataset(&pipeline, &records, &options)?;
        summaries.push(RunSummary::from_records(mode.name(), &run, &weights));
        runs.push(run);
    }
    println!("{}", RunSummary::table(&summaries));

    let p = bootstrap_runs(&runs[0], &runs[1], 10_000, 42)?;
    println!("paired bootstrap p = {p:.4}");

    let components: Vec<_> = summaries.iter().zip(&runs).map(|(s, r)| s.cars_components(r)).collect();
    let sweep = cars_weight_sweep(&components, &weights, 0.1)?;
    println!("CARS ranking invariant over {} weight vectors: {}", sweep.weight_vectors_checked, sweep.invariant());

    assert!(summaries[0].correctness > summaries[1].correctness);
    assert!(p < 0.01);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
