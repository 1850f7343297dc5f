//! Pretrain a latent-factor backbone with pairwise ranking loss on a
//! synthetic interaction log, watch the validation recall improve, and
//! round-trip the model through its JSON file format.
//!
//! Run with: `cargo run --example train_backbone`

use reciprocal::backbone::{
    init_model, train, validation_recall, LatentFactorModel, TrainConfig, TrainData,
};
use reciprocal::dataset::{generate_synthetic, split};
use reciprocal::metrics::MatchSet;

fn main() -> reciprocal::Result<()> {
    let log = generate_synthetic(200, 200, 16, 0.15, 11)?;
    let parts = split(&log, (0.8, 0.1, 0.1), 12)?;
    let data = TrainData::from_log(&parts.train);
    println!(
        "training on {} matched pairs ({} interactions)",
        data.positive_pairs.len(),
        parts.train.interactions.len()
    );

    // Validate on pairs whose match first appears in the validation
    // partition: pairs already matched in train are training positives and
    // get excluded from the ranking candidates anyway.
    let train_matched = parts.train.matched_pairs();
    let valset = MatchSet::from_pairs(
        parts
            .validation
            .matched_pairs()
            .difference(&train_matched)
            .copied(),
    );
    println!("validating on {} fresh matched pairs", valset.pair_count());

    let init = init_model(200, 200, 16, 5)?;
    let config = TrainConfig {
        seed: 6,
        learning_rate: 3e-3,
        batch_size: 256,
        negatives_per_positive: 2,
        ..TrainConfig::default()
    };
    let outcome = train(&init, &data, Some(&valset), &config)?;

    println!("\nepoch |   loss | recall@{}", config.eval_k);
    for record in outcome.history.iter().step_by(20) {
        println!(
            "{:5} | {:.4} | {:.3}",
            record.epoch, record.loss, record.validation
        );
    }
    println!(
        "best epoch {} of {} run",
        outcome.best_epoch,
        outcome.history.len()
    );

    let recall = validation_recall(&outcome.model, &data, &valset, 10)?;
    println!("returned model: validation recall@10 = {recall:.3}");

    // Models persist as JSON and load back bit-for-bit.
    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("backbone.json");
    outcome.model.save(&path)?;
    let restored = LatentFactorModel::load(&path)?;
    assert_eq!(restored, outcome.model);
    println!("saved and restored {} parameters unchanged", restored.param_len());
    Ok(())
}
