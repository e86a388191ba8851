//! Turn raw sentences, some with `{{convert}}` templates, into masked examples.

use measured::dataset::{ingest_jsonl, mask_wikitext};
use measured::units::UnitRegistry;

const CORPUS: &str = r#"{"text": "The summit rises to {{convert|4478|m|ft}} above sea level."}
{"text": "The lake covers {{convert|1,250|km2|sqmi|0}} of the plateau."}
{"text": "The engine produced [#NUM] [#UNIT] at full throttle.", "number": 350, "unit": "hp"}
{"text": "The ship sailed at [#NUM] [#UNIT].", "number": 12, "unit": "furlongs"}
{"text": "The well is [#NUM] [#UNIT] deep.", "number": -30, "unit": "m"}
{"text": "The trail {{convert|two|km|mi}} long."}
"#;

fn main() -> std::io::Result<()> {
    let reg = UnitRegistry::builtin();

    let masked = mask_wikitext("A span of {{convert|120|ft|m}} across the gorge.").unwrap();
    println!("masked: {:?} number={:?} unit={:?}\n", masked.text, masked.number, masked.unit);

    let report = ingest_jsonl(CORPUS.as_bytes(), &reg)?;
    for ex in &report.examples {
        println!(
            "kept  {:<55} {} {} = {:.4e} {}",
            ex.text,
            ex.number,
            reg.unit(ex.unit).name,
            ex.canonical,
            reg.dimension(ex.dimension).name
        );
    }
    for (reason, n) in report.drop_counts() {
        println!("dropped {n} x {}", reason.as_str());
    }
    Ok(())
}
