//! Generate a synthetic measurement corpus and print its statistics.

use measured::dataset::{split, stats};
use measured::synth::{generate, SynthConfig};
use measured::units::UnitRegistry;

fn main() -> measured::Result<()> {
    let reg = UnitRegistry::builtin();
    let mut config = SynthConfig {
        n: 1400,
        seed: 3,
        ..SynthConfig::default()
    };
    config.set("dim_cue_prob", "0.5")?;
    config.set("unit.km", "5.0,0.2")?;

    let data = generate(&config, &reg)?;
    for ex in data.iter().take(5) {
        println!("{}  ({} {})", ex.text, ex.number, reg.unit(ex.unit).name);
    }

    let parts = split(data, [0.8, 0.1, 0.1], 3)?;
    println!("\n{}", serde_json::to_string_pretty(&stats(&parts, &reg))?);
    Ok(())
}
