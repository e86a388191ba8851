//! Train the full generative model on synthetic data, evaluate it and
//! round-trip it through a checkpoint.

use std::sync::Arc;

use measured::checkpoint::{load_model, save_model};
use measured::dataset::split;
use measured::encoder::{EncoderConfig, HashedEncoder};
use measured::evaluation::{evaluate, Probe};
use measured::model::{Model, ModelSpec, Variant};
use measured::synth::{generate, SynthConfig};
use measured::training::{train, TrainConfig};
use measured::units::UnitRegistry;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let reg = Arc::new(UnitRegistry::builtin());
    let data = generate(&SynthConfig { n: 3500, ..SynthConfig::default() }, &reg)?;
    let parts = split(data, [0.8, 0.1, 0.1], 0)?;

    let encoder = HashedEncoder::new(
        EncoderConfig {
            feature_dim: 4096,
            hidden_dim: 16,
            ..EncoderConfig::default()
        },
        1,
    )?;
    let mut model = Model::new(ModelSpec::new(Variant::Gemm, 16), encoder, reg.clone(), 2)?;
    let config = TrainConfig {
        batch_size: 32,
        max_epochs: 15,
        learning_rate: 3e-3,
        warmup_steps: 50,
        patience: 3,
        ..TrainConfig::default()
    };
    let outcome = train(&mut model, &parts.train, &parts.val, &config)?;
    for r in &outcome.history {
        println!("epoch {:>2} loss {:.4} val {} {:.4}", r.epoch, r.train_loss, outcome.selection_metric, r.val_metric);
    }
    println!("best epoch {}", outcome.best_epoch);

    let report = evaluate(&model, &parts.train, &parts.test, &Probe::available(Variant::Gemm))?;
    for (name, probe) in &report.probes {
        println!("{name:<14} f1={:?} log_mae={:?}", probe.macro_f1, probe.log_mae);
    }

    let dir = std::env::temp_dir().join("measured-train-gemm");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("gemm.json");
    save_model(&model, &path)?;
    let back = load_model(&path, reg.clone())?;
    let text = "The runway stretches [#NUM] [#UNIT] along the coast.";
    let p = back.predict_text(text)?;
    println!(
        "\n{text}\n  -> {} {} ({})",
        p.number.unwrap(),
        reg.unit(p.unit.unwrap()).name,
        reg.dimension(p.dimension.unwrap()).name
    );
    Ok(())
}
