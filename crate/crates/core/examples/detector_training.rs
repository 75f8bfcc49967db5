// Trains both detector heads on a small synthetic pair set whose classes
// are separable by construction, then saves and reloads the weights.
//
// Run: `cargo run --example detector_training`

use conflict_aware_rag::model::ConflictType;
use conflict_aware_rag::neural::{
    classification_report, gradient_check, load_model, save_model, train, HeadKind, LabeledPairExample,
    TrainConfig, FEATURE_DIM,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Each class lights up its own slice of the difference block, plus noise.
fn synthetic(n: usize, seed: u64) -> anyhow::Result<Vec<LabeledPairExample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let class = ConflictType::from_index(i % 4).expect("four classes");
            let mut f: Vec<f64> = (0..FEATURE_DIM).map(|_| rng.gen_range(-0.05..0.05)).collect();
            for v in &mut f[768 + class.index() * 16..768 + (class.index() + 1) * 16] {
                *v += 1.0;
            }
            Ok(LabeledPairExample::new(f, class)?)
        })
        .collect()
}

pub fn run_example() -> anyhow::Result<()> {
    let examples = synthetic(240, 3)?;
    let config = TrainConfig { max_epochs: 40, seed: 11, ..TrainConfig::default() };
    let dir = tempfile::tempdir()?;

    for head in [HeadKind::Binary, HeadKind::FourWay] {
        let (model, log) = train(&examples, (192, 48), &config, head)?;
        let report = classification_report(&model, &examples[192..])?;
        println!(
            "{head:?}: {} parameters, best epoch {}, validation accuracy {:.3}",
            model.parameter_count(),
            log.best_epoch,
            report.accuracy
        );
        assert!(report.accuracy >= 0.95);

        let worst = gradient_check(&model, &examples[0], 1e-5)?;
        println!("  max relative gradient error {worst:.2e}");

        let path = dir.path().join(format!("{head:?}.json"));
        save_model(&model, &path)?;
        assert_eq!(load_model(&path)?, model);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
