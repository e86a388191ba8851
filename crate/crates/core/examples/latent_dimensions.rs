//! Fit the latent-dimension mixture with no dimension labels, then match its
//! latent classes to the true dimensions.

use std::sync::Arc;

use measured::dataset::split;
use measured::encoder::{EncoderConfig, HashedEncoder};
use measured::evaluation::{evaluate, Probe};
use measured::model::{Model, ModelSpec, Variant};
use measured::synth::{generate, SynthConfig};
use measured::training::{train, TrainConfig};
use measured::units::UnitRegistry;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let reg = Arc::new(UnitRegistry::builtin());
    let data = generate(&SynthConfig { n: 3500, seed: 4, ..SynthConfig::default() }, &reg)?;
    let parts = split(data, [0.8, 0.1, 0.1], 4)?;

    let encoder = HashedEncoder::new(EncoderConfig { feature_dim: 4096, hidden_dim: 16, ..EncoderConfig::default() }, 4)?;
    let mut model = Model::new(ModelSpec::new(Variant::LatDim, 16), encoder, reg.clone(), 5)?;
    let config = TrainConfig {
        batch_size: 32,
        max_epochs: 20,
        learning_rate: 3e-3,
        warmup_steps: 50,
        patience: 3,
        ..TrainConfig::default()
    };
    train(&mut model, &parts.train, &parts.val, &config)?;

    let report = evaluate(&model, &parts.train, &parts.test, &[Probe::LatDim, Probe::Num])?;
    let latdim = &report.probes["latdim"];
    println!("latent class -> dimension:");
    for (class, dim) in latdim.mapping.as_ref().unwrap() {
        println!("  {class} -> {dim}");
    }
    println!("matched macro-F1 {:.3}", latdim.macro_f1.unwrap());
    println!("number log-mae   {:.3}", report.probes["num"].log_mae.unwrap());
    println!("median baseline  {:.3}", report.baselines.median_number.log_mae);
    Ok(())
}
