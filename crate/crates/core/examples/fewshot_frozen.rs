//! Few-shot comparison of trainable and frozen encoders.

use std::sync::Arc;

use measured::dataset::split;
use measured::encoder::EncoderConfig;
use measured::fewshot::{run, FewshotConfig};
use measured::model::Variant;
use measured::synth::{generate, SynthConfig};
use measured::training::{TrainConfig, Weighting};
use measured::units::UnitRegistry;

fn main() -> measured::Result<()> {
    let reg = Arc::new(UnitRegistry::builtin());
    let parts = split(generate(&SynthConfig { n: 3500, ..SynthConfig::default() }, &reg)?, [0.8, 0.1, 0.1], 0)?;

    let base = TrainConfig {
        batch_size: 32,
        max_epochs: 100,
        learning_rate: 3e-3,
        warmup_steps: 10,
        patience: 5,
        ..TrainConfig::default()
    };
    let config = FewshotConfig {
        variants: vec![Variant::DiscD, Variant::DiscY],
        ks: vec![10, 40],
        seeds: 2,
        encoder: EncoderConfig { feature_dim: 4096, hidden_dim: 16, ..EncoderConfig::default() },
        frozen_train: TrainConfig {
            learning_rate: 3e-2,
            weighting: Weighting::LogFrequency,
            ..base.clone()
        },
        train: base,
        seed: 0,
    };
    let report = run(&config, &parts, &reg)?;
    println!("majority accuracy {:.3}, median log-mae {:.3}", report.majority_accuracy, report.median_log_mae);
    for row in &report.rows {
        for cell in &row.cells {
            let tag = if cell.frozen { "frozen" } else { "trainable" };
            println!("{:<7} {:<9} k={:<3} {} {:.3} ± {:.3}", row.variant, tag, cell.k, row.metric, cell.mean, cell.sd);
        }
    }
    Ok(())
}
