// Builds an inverted index, scores a query with BM25 and fuses it with a
// dense ranking by reciprocal rank.
//
// Run: `cargo run --example hybrid_retrieval`

use conflict_aware_rag::model::Document;
use conflict_aware_rag::providers::mock::TokenHashEmbedder;
use conflict_aware_rag::retrieval::{embed_corpus, hybrid_retrieve, InvertedIndex, RetrievalConfig};
use conflict_aware_rag::text::tokenize;

pub fn run_example() -> anyhow::Result<()> {
    let corpus = vec![
        Document::new("tower-1", "The Harbor Tower is 312 metres tall.", "survey-office"),
        Document::new("tower-2", "The Harbor Tower is 298 metres tall.", "city-blog"),
        Document::new("ferry", "Ferries to Port Alder leave hourly from the west harbour.", "ferry-company"),
        Document::new("fog", "Port Alder has mild winters and frequent autumn fog.", "met-office"),
    ];
    let index = InvertedIndex::build(&corpus)?;
    let config = RetrievalConfig { k: 3, ..RetrievalConfig::default() };
    let question = "How tall is the Harbor Tower?";

    println!("BM25:");
    for (doc, score) in index.lexical_ranking(&tokenize(question), &config) {
        println!("  {:<8} {score:.4}", corpus[doc].id);
    }

    let embedder = TokenHashEmbedder;
    let embeddings = embed_corpus(&index, &embedder)?;
    let hits = hybrid_retrieve(question, &index, &embedder, &embeddings, &config)?;
    println!("fused top {}:", config.k);
    for h in &hits {
        println!("  {:<8} {:.5}", h.document.id, h.score);
    }
    assert_eq!(hits.len(), 3);
    assert!(hits[..2].iter().all(|h| h.document.id.starts_with("tower")));
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
