//! Show how an observed number sharpens the dimension distribution of a
//! model that scores numbers per dimension.

use std::sync::Arc;

use measured::dataset::split;
use measured::encoder::{EncoderConfig, HashedEncoder};
use measured::model::{Model, ModelSpec, Variant};
use measured::synth::{generate, SynthConfig};
use measured::training::{train, TrainConfig};
use measured::units::UnitRegistry;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let reg = Arc::new(UnitRegistry::builtin());
    let synth = SynthConfig { n: 3500, dim_cue_prob: 0.3, ..SynthConfig::default() };
    let parts = split(generate(&synth, &reg)?, [0.8, 0.1, 0.1], 0)?;

    let encoder = HashedEncoder::new(EncoderConfig { feature_dim: 4096, hidden_dim: 16, ..EncoderConfig::default() }, 0)?;
    let mut model = Model::new(ModelSpec::new(Variant::GenYd, 16), encoder, reg.clone(), 1)?;
    let config = TrainConfig {
        batch_size: 32,
        max_epochs: 15,
        learning_rate: 3e-3,
        warmup_steps: 50,
        ..TrainConfig::default()
    };
    train(&mut model, &parts.train, &parts.val, &config)?;

    let names: Vec<&str> = reg.dimensions().iter().map(|d| d.name.as_str()).collect();
    let show = |label: &str, p: &[f64]| {
        let cells: Vec<String> = names.iter().zip(p).filter(|(_, p)| **p > 0.01).map(|(n, p)| format!("{n} {p:.2}")).collect();
        println!("  {label:<12} {}", cells.join(", "));
    };

    let h = model.encode("The figure was recorded as [#NUM] [#UNIT] in the survey.");
    show("text only", &model.dim_distribution(&h)?);
    for ybar in [2.0, 3000.0, 300.0, 1e10] {
        show(&format!("ȳ = {ybar:e}"), &model.posterior_dim(&h, ybar)?);
    }
    Ok(())
}
