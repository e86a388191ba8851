//! Dump sentence embeddings with dimension, unit and magnitude labels as TSV,
//! ready for t-SNE or UMAP.

use std::io::BufWriter;

use measured::encoder::{export_embeddings, EncoderConfig, HashedEncoder};
use measured::synth::{generate, SynthConfig};
use measured::units::UnitRegistry;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let reg = UnitRegistry::builtin();
    let data = generate(&SynthConfig { n: 70, ..SynthConfig::default() }, &reg)?;
    let encoder = HashedEncoder::new(EncoderConfig { feature_dim: 4096, hidden_dim: 8, ..EncoderConfig::default() }, 0)?;

    let path = std::env::temp_dir().join("measured-embeddings.tsv");
    let file = std::fs::File::create(&path)?;
    export_embeddings(&encoder, &data, &reg, BufWriter::new(file))?;

    let text = std::fs::read_to_string(&path)?;
    for line in text.lines().take(3) {
        println!("{line}");
    }
    println!("... {} rows written to {}", text.lines().count() - 1, path.display());
    Ok(())
}
