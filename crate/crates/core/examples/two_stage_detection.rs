// Detects conflicts among four retrieved passages. Untrained heads are
// never confident, so every pair escalates to the (rule-based) LLM judge;
// with tau_c = 0 Stage 1 keeps everything and no judge call is made.
//
// Run: `cargo run --example two_stage_detection`

use conflict_aware_rag::detect::{
    detect_conflicts, DetectionContext, DetectorConfig, DetectorModels, ThresholdConfig,
};
use conflict_aware_rag::model::{Document, Query};
use conflict_aware_rag::providers::mock::{HashEmbedder, RuleBasedChat};
use conflict_aware_rag::templates::Templates;

pub fn run_example() -> anyhow::Result<()> {
    let query = Query::new("q", "What is the population of Lakeside?");
    let docs = vec![
        Document::new("a", "The population of Lakeside was 48000 in the 2011 census.", "archive"),
        Document::new("b", "As of 2023, the population of Lakeside is 52000.", "news-desk"),
        Document::new("c", "Critics argue Lakeside should build a second bridge.", "op-ed"),
        Document::new("d", "Supporters believe Lakeside prefers its ferry.", "letters"),
    ];
    let models = DetectorModels::untrained();
    let templates = Templates::builtin();
    let chat = RuleBasedChat::default();
    let ctx = DetectionContext { models: &models, embedder: &HashEmbedder, chat: &chat, templates: &templates };

    for tau_c in [0.7, 0.0] {
        let config = DetectorConfig { threshold: ThresholdConfig::new(tau_c)?, ..DetectorConfig::default() };
        let (report, ledger) = detect_conflicts(&query, &docs, &ctx, &config)?;
        println!("tau_c = {tau_c}");
        for f in &report.findings {
            println!("  {} {} via {:?} ({:.2})", f.pair, f.conflict_type, f.stage, f.confidence);
        }
        println!(
            "  {} pairs: {} kept by Stage 1, {} escalated, ${:.6}",
            ledger.pairs_total, ledger.stage1_resolved, ledger.stage2_calls, ledger.estimated_cost_usd
        );
        assert!(ledger.is_consistent());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
