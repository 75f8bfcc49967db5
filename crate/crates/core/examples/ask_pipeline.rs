// Answers one question end to end with the offline providers: retrieval
// over a small corpus, detection, resolution and annotated generation.
//
// Run: `cargo run --example ask_pipeline`

use chrono::NaiveDate;
use conflict_aware_rag::detect::DetectorModels;
use conflict_aware_rag::model::{Document, Query};
use conflict_aware_rag::pipeline::{Pipeline, Providers, Retriever, SystemMode};
use conflict_aware_rag::retrieval::{InvertedIndex, RetrievalConfig};
use conflict_aware_rag::templates::Templates;

pub fn run_example() -> anyhow::Result<()> {
    let day = |y, m| NaiveDate::from_ymd_opt(y, m, 1).expect("valid date");
    let corpus = vec![
        Document::new("blog", "The Eastgate Bridge was opened in 1931.", "city-blog")
            .with_date(day(2009, 4))
            .with_authority_hint(0.3),
        Document::new("registry", "The Eastgate Bridge was opened in 1929.", "heritage-registry")
            .with_date(day(2022, 1))
            .with_authority_hint(0.9),
        Document::new("tolls", "The Eastgate Bridge charges no tolls on weekends.", "transport-office"),
        Document::new("fog", "Port Alder has mild winters and frequent autumn fog.", "met-office"),
    ];
    let providers = Providers::mock();
    let retriever = Retriever::new(
        InvertedIndex::build(&corpus)?,
        providers.embedder.as_ref(),
        RetrievalConfig { k: 3, ..RetrievalConfig::default() },
    )?;
    let pipeline = Pipeline::new(providers.clone(), DetectorModels::untrained(), Templates::builtin());

    let query = Query::new("bridge", "When was the Eastgate Bridge opened?");
    let docs = retriever.retrieve(&query.text, providers.embedder.as_ref())?;
    for mode in [SystemMode::Standard, SystemMode::ConflictAware] {
        let outcome = pipeline.answer(&query, &docs, mode)?;
        println!("== {}\n{}\n", mode.name(), outcome.answer.render(false));
        for note in &outcome.resolved.notes {
            println!("note: {note}");
        }
        if mode == SystemMode::ConflictAware {
            assert!(outcome.answer.answer.contains("1929"));
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
