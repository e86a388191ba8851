#![allow(dead_code)]

use std::sync::Arc;

use measured::dataset::MeasurementExample;
use measured::encoder::{EncoderConfig, HashedEncoder, TextEncoder};
use measured::model::{LossWeights, Model, ModelSpec, Variant};
use measured::synth::{generate, SynthConfig};
use measured::training::gradients;
use measured::units::UnitRegistry;

pub fn registry() -> Arc<UnitRegistry> {
    Arc::new(UnitRegistry::builtin())
}

pub fn tiny_model(variant: Variant, seed: u64, frozen: bool) -> Model<HashedEncoder> {
    let enc = HashedEncoder::new(
        EncoderConfig {
            feature_dim: 64,
            hidden_dim: 4,
            frozen,
            ..EncoderConfig::default()
        },
        seed,
    )
    .unwrap();
    Model::new(ModelSpec::new(variant, 4), enc, registry(), seed.wrapping_add(101)).unwrap()
}

/// A few synthetic examples whose `log10 ȳ` stays well away from the
/// near-zero locations of a freshly initialized number head.
pub fn batch(seed: u64, n: usize) -> Vec<MeasurementExample> {
    let reg = registry();
    let c = SynthConfig {
        n: 7 * n,
        seed,
        ..SynthConfig::default()
    };
    generate(&c, &reg)
        .unwrap()
        .into_iter()
        .filter(|e| e.canonical.log10().abs() > 0.3)
        .take(n)
        .collect()
}

fn mean_joint_nll(model: &Model<HashedEncoder>, data: &[MeasurementExample]) -> f64 {
    data.iter()
        .map(|e| model.joint_nll(&model.encode(&e.text), e).unwrap())
        .sum::<f64>()
        / data.len() as f64
}

/// Largest relative disagreement between analytic gradients of the mean
/// joint NLL and central differences with step `1e-5`, over every
/// trainable parameter. Denominators are floored at `1e-6`.
pub fn fd_max_rel_error(variant: Variant, seed: u64) -> f64 {
    let mut model = tiny_model(variant, seed, false);
    let data = batch(seed, 4);
    let features: Vec<_> = data.iter().map(|e| model.encoder.features(&e.text)).collect();
    let pairs: Vec<_> = features.iter().zip(&data).collect();
    let (_, grads) = gradients(&model, &pairs, &LossWeights::default()).unwrap();
    let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().map(|t| t.to_vec()).collect();

    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for (t, g) in analytic.iter().enumerate() {
        for i in 0..g.len() {
            let orig = model.trainable_tensors()[t][i];
            model.trainable_tensors_mut()[t][i] = orig + step;
            let up = mean_joint_nll(&model, &data);
            model.trainable_tensors_mut()[t][i] = orig - step;
            let down = mean_joint_nll(&model, &data);
            model.trainable_tensors_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let rel = (numeric - g[i]).abs() / numeric.abs().max(g[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}
