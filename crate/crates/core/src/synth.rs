//! Templated synthetic corpora with controllable dimension and unit cues and
//! per-unit log-normal magnitudes.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::MeasurementExample;
use crate::error::{Error, Result};
use crate::units::{DimId, UnitId, UnitRegistry};

/// Location and scale of `log10 ȳ` for one unit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Magnitude {
    pub loc: f64,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub dimensions: Vec<String>,
    /// Units to draw from; empty means every registry unit of each dimension.
    pub units: Vec<String>,
    /// Probability that a sentence carries a word naming its dimension.
    pub dim_cue_prob: f64,
    /// Probability that a sentence carries a word tied to its unit.
    pub unit_cue_prob: f64,
    /// Per-unit magnitudes; units of a listed dimension missing here use
    /// `default_magnitude`.
    pub magnitudes: BTreeMap<String, Magnitude>,
    pub default_magnitude: Magnitude,
    pub seed: u64,
}

const DEFAULT_DIMENSIONS: [&str; 7] = ["length", "mass", "time", "area", "velocity", "power", "temperature"];

const DEFAULT_UNITS: [&str; 21] = [
    "m", "km", "ft", "mi", "g", "kg", "lb", "s", "h", "yr", "m2", "km2", "mi2", "m/s", "mph", "ft/s", "in/yr", "W", "hp",
    "K", "°C",
];

const DEFAULT_MAGNITUDES: [(&str, f64, f64); 22] = [
    ("m", 3.5, 0.3),
    ("ft", 3.3, 0.3),
    ("km", 4.6, 0.3),
    ("mi", 4.8, 0.3),
    ("g", -1.8, 0.3),
    ("kg", -0.8, 0.3),
    ("lb", -1.0, 0.3),
    ("s", 7.6, 0.3),
    ("h", 8.0, 0.3),
    ("yr", 8.9, 0.3),
    ("m2", 10.5, 0.3),
    ("km2", 11.5, 0.3),
    ("mi2", 12.0, 0.3),
    ("m/s", 1.0, 0.3),
    ("mph", 1.4, 0.3),
    ("ft/s", 0.7, 0.3),
    ("in/yr", -1.5, 0.3),
    ("W", 5.8, 0.3),
    ("hp", 6.4, 0.3),
    ("K", 2.45, 0.01),
    ("°C", 2.47, 0.005),
    ("mi/yr", -0.5, 0.3),
];

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 7000,
            dimensions: DEFAULT_DIMENSIONS.iter().map(|s| s.to_string()).collect(),
            units: DEFAULT_UNITS.iter().map(|s| s.to_string()).collect(),
            dim_cue_prob: 0.7,
            unit_cue_prob: 0.3,
            magnitudes: DEFAULT_MAGNITUDES
                .iter()
                .map(|(u, loc, scale)| (u.to_string(), Magnitude { loc: *loc, scale: *scale }))
                .collect(),
            default_magnitude: Magnitude { loc: 0.0, scale: 0.5 },
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Applies one `key=value` override. Magnitudes use `unit.<name>=loc,scale`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("{key}: not a number: {v:?}")))
        };
        match key {
            "n" => {
                self.n = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("n: not an integer: {value:?}")))?
            }
            "seed" => {
                self.seed = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("seed: not an integer: {value:?}")))?
            }
            "dimensions" => self.dimensions = value.split(',').map(|s| s.trim().to_string()).collect(),
            "units" => {
                self.units = value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            }
            "dim_cue_prob" | "dim-cue-prob" => self.dim_cue_prob = num(value)?,
            "unit_cue_prob" | "unit-cue-prob" => self.unit_cue_prob = num(value)?,
            _ => {
                let Some(unit) = key.strip_prefix("unit.") else {
                    return Err(Error::Config(format!("unknown synth key {key:?}")));
                };
                let (loc, scale) = value
                    .split_once(',')
                    .ok_or_else(|| Error::Config(format!("{key}: expected loc,scale")))?;
                self.magnitudes.insert(
                    unit.to_string(),
                    Magnitude {
                        loc: num(loc)?,
                        scale: num(scale)?,
                    },
                );
            }
        }
        Ok(())
    }

    pub fn validate(&self, registry: &UnitRegistry) -> Result<()> {
        if self.n == 0 || self.dimensions.is_empty() {
            return Err(Error::Config("synth needs n > 0 and at least one dimension".into()));
        }
        for p in [self.dim_cue_prob, self.unit_cue_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("cue probability {p} outside [0, 1]")));
            }
        }
        for d in &self.dimensions {
            registry.dimension_id(d)?;
        }
        for u in &self.units {
            registry.unit_id(u)?;
        }
        for (u, m) in &self.magnitudes {
            if !(m.scale >= 0.0) || !m.loc.is_finite() {
                return Err(Error::Config(format!("bad magnitude for unit {u}")));
            }
        }
        Ok(())
    }

    /// Units of `dim` that the corpus draws from.
    pub fn units_of(&self, registry: &UnitRegistry, dim: DimId) -> Result<Vec<UnitId>> {
        let all = registry.units_of(dim)?;
        let picked: Vec<UnitId> = all
            .iter()
            .copied()
            .filter(|u| self.units.is_empty() || self.units.iter().any(|n| *n == registry.unit(*u).name))
            .collect();
        if picked.is_empty() {
            return Err(Error::Config(format!(
                "no configured units for dimension {}",
                registry.dimension(dim).name
            )));
        }
        Ok(picked)
    }

    pub fn magnitude(&self, unit: &str) -> Magnitude {
        self.magnitudes.get(unit).copied().unwrap_or(self.default_magnitude)
    }
}

const SUBJECTS: [&str; 10] = [
    "the site",
    "the project",
    "this one",
    "the village",
    "it",
    "the station",
    "the model",
    "the record",
    "the structure",
    "the survey",
];
const VERBS: [&str; 6] = ["is", "was", "has", "reached", "showed", "recorded"];
const FILLERS: [&str; 8] = [
    "about",
    "roughly",
    "nearly",
    "officially",
    "in total",
    "at most",
    "at least",
    "according to reports",
];
const TAILS: [&str; 6] = ["", "in 1990", "last year", "overall", "at the time", "since then"];

fn dimension_cues(name: &str) -> &'static [&'static str] {
    match name {
        "length" => &["long", "length", "tall", "wide", "distance", "deep"],
        "mass" => &["weighs", "weight", "mass", "heavy"],
        "time" => &["lasted", "duration", "took", "period"],
        "area" => &["area", "covers", "surface", "acreage"],
        "velocity" => &["speed", "fast", "velocity", "travels"],
        "power" => &["power", "output", "generates", "engine"],
        "temperature" => &["temperature", "hot", "cold", "heated"],
        "charge" => &["charge", "charged", "capacity"],
        _ => &["amount"],
    }
}

fn unit_cues(name: &str) -> Vec<String> {
    let fixed: &[&str] = match name {
        "m" => &["room", "hall"],
        "km" => &["road", "border"],
        "cm" => &["leaf"],
        "mm" => &["screw"],
        "ft" => &["tower", "yard"],
        "yd" => &["field"],
        "mi" => &["highway", "interstate"],
        "in" => &["screen"],
        "kg" => &["athlete", "bag"],
        "g" => &["coin", "sample"],
        "lb" => &["fish", "parcel"],
        "s" => &["sprint", "clip"],
        "h" => &["shift", "journey"],
        "yr" => &["reign", "drought"],
        "m2" => &["apartment", "office"],
        "km2" => &["district", "lake"],
        "mi2" => &["county", "territory"],
        "m/s" => &["wind", "gust"],
        "mph" => &["car", "pitch"],
        "ft/s" => &["projectile", "bullet"],
        "in/yr" => &["glacier", "coastline"],
        "mi/yr" => &["migration"],
        "W" => &["bulb", "charger"],
        "hp" => &["truck", "tractor"],
        "K" => &["lab", "cryostat"],
        "°C" => &["summer", "oven"],
        "C" => &["battery"],
        _ => &[],
    };
    if fixed.is_empty() {
        vec![format!("{}-marker", name.to_lowercase())]
    } else {
        fixed.iter().map(|s| s.to_string()).collect()
    }
}

fn sentence(rng: &mut ChaCha8Rng, dim_cue: Option<&str>, unit_cue: Option<&str>) -> String {
    let mut parts: Vec<&str> = vec![SUBJECTS.choose(rng).unwrap(), VERBS.choose(rng).unwrap()];
    if let Some(c) = unit_cue {
        parts.push("near the");
        parts.push(c);
    }
    if let Some(c) = dim_cue {
        parts.push(c);
    }
    if rng.random_bool(0.5) {
        parts.push(FILLERS.choose(rng).unwrap());
    }
    parts.push("[#NUM] [#UNIT]");
    let tail = *TAILS.choose(rng).unwrap();
    if !tail.is_empty() {
        parts.push(tail);
    }
    parts.join(" ")
}

/// Generates `config.n` examples, split evenly over the dimensions (any
/// remainder goes to the first ones) and uniformly over each dimension's
/// units. Deterministic in `config.seed`.
pub fn generate(config: &SynthConfig, registry: &UnitRegistry) -> Result<Vec<MeasurementExample>> {
    config.validate(registry)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dims: Vec<DimId> = config
        .dimensions
        .iter()
        .map(|d| registry.dimension_id(d))
        .collect::<Result<_>>()?;
    let per = config.n / dims.len();
    let extra = config.n % dims.len();

    let mut out = Vec::with_capacity(config.n);
    for (i, &d) in dims.iter().enumerate() {
        let units = config.units_of(registry, d)?;
        let count = per + usize::from(i < extra);
        let dim_name = &registry.dimension(d).name;
        for _ in 0..count {
            let u = *units.choose(&mut rng).unwrap();
            let unit = registry.unit(u);
            let mag = config.magnitude(&unit.name);
            let normal = Normal::new(mag.loc, mag.scale).map_err(|e| Error::Config(e.to_string()))?;
            // redraw the rare magnitudes whose surface value would be nonpositive
            let (canonical, number) = loop {
                let canonical = 10f64.powf(normal.sample(&mut rng));
                let number = registry.convert(canonical, registry.canonical_unit(d), u)?;
                if number > 0.0 && number.is_finite() {
                    break (canonical, number);
                }
            };
            let dim_cue = rng
                .random_bool(config.dim_cue_prob)
                .then(|| *dimension_cues(dim_name).choose(&mut rng).unwrap());
            let cues = unit_cues(&unit.name);
            let unit_cue = rng
                .random_bool(config.unit_cue_prob)
                .then(|| cues.choose(&mut rng).unwrap().as_str());
            out.push(MeasurementExample {
                text: sentence(&mut rng, dim_cue, unit_cue),
                number,
                unit: u,
                dimension: d,
                canonical,
            });
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}
