//! Plug a different sentence encoder into the heads: a trainable
//! bag-of-words embedding averaged over tokens.

use std::collections::HashMap;
use std::sync::Arc;

use measured::dataset::{split, tokenize};
use measured::encoder::TextEncoder;
use measured::evaluation::{evaluate, Probe};
use measured::model::{Model, ModelSpec, Variant};
use measured::synth::{generate, SynthConfig};
use measured::training::{train, TrainConfig};
use measured::units::UnitRegistry;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
struct BagOfWords {
    vocab: HashMap<String, usize>,
    dim: usize,
    /// `vocab.len() x dim`, row-major; the last row is for unknown words.
    table: Vec<f64>,
}

impl BagOfWords {
    fn fit<'a>(texts: impl Iterator<Item = &'a str>, dim: usize, seed: u64) -> Self {
        let mut vocab = HashMap::new();
        for t in texts {
            for tok in tokenize(t) {
                let next = vocab.len();
                vocab.entry(tok.to_lowercase()).or_insert(next);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = (0..(vocab.len() + 1) * dim).map(|_| rng.random_range(-0.1..0.1)).collect();
        BagOfWords { vocab, dim, table }
    }
}

impl TextEncoder for BagOfWords {
    /// Row indices of the tokens.
    type Features = Vec<usize>;

    fn hidden_dim(&self) -> usize {
        self.dim
    }

    fn features(&self, text: &str) -> Vec<usize> {
        let unk = self.vocab.len();
        tokenize(text)
            .into_iter()
            .map(|t| *self.vocab.get(&t.to_lowercase()).unwrap_or(&unk))
            .collect()
    }

    fn forward(&self, rows: &Vec<usize>) -> Vec<f64> {
        let mut h = vec![0.0; self.dim];
        for r in rows {
            for (hi, w) in h.iter_mut().zip(&self.table[r * self.dim..(r + 1) * self.dim]) {
                *hi += w / rows.len() as f64;
            }
        }
        h
    }

    fn backward(&self, rows: &Vec<usize>, grad_h: &[f64], grad: &mut [f64]) {
        for r in rows {
            for (g, gh) in grad[r * self.dim..(r + 1) * self.dim].iter_mut().zip(grad_h) {
                *g += gh / rows.len() as f64;
            }
        }
    }

    fn frozen(&self) -> bool {
        false
    }

    fn params(&self) -> &[f64] {
        &self.table
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.table
    }
}

fn main() -> measured::Result<()> {
    let reg = Arc::new(UnitRegistry::builtin());
    let parts = split(generate(&SynthConfig { n: 3500, ..SynthConfig::default() }, &reg)?, [0.8, 0.1, 0.1], 0)?;
    let encoder = BagOfWords::fit(parts.train.iter().map(|e| e.text.as_str()), 16, 0);
    println!("vocabulary: {} words", encoder.vocab.len());

    let mut model = Model::new(ModelSpec::new(Variant::DiscDu, 16), encoder, reg, 1)?;
    let config = TrainConfig {
        batch_size: 32,
        max_epochs: 20,
        learning_rate: 1e-2,
        warmup_steps: 50,
        patience: 3,
        ..TrainConfig::default()
    };
    let outcome = train(&mut model, &parts.train, &parts.val, &config)?;
    println!("stopped after {} epochs, best {}", outcome.history.len(), outcome.best_epoch);

    let report = evaluate(&model, &parts.train, &parts.test, &[Probe::Dim, Probe::Unit])?;
    for (name, p) in &report.probes {
        println!("{name}: macro-F1 {:.3}, accuracy {:.3}", p.macro_f1.unwrap(), p.accuracy.unwrap());
    }
    Ok(())
}
