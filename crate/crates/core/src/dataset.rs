//! Measurement corpora: `{{convert}}` template extraction, masking, JSONL
//! ingestion, deterministic splits, balanced few-shot subsets and corpus
//! statistics.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{DimId, UnitId, UnitRegistry};

pub const NUM_MASK: &str = "[#NUM]";
pub const UNIT_MASK: &str = "[#UNIT]";

/// Sentences longer than this (in [`tokenize`] tokens) are dropped on ingest.
pub const MAX_TOKENS: usize = 64;

/// Whitespace tokenization with every punctuation character split off as its
/// own token. The two mask tokens are kept whole.
pub fn tokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut rest = word;
        while !rest.is_empty() {
            if let Some(mask) = [NUM_MASK, UNIT_MASK].iter().find(|m| rest.starts_with(**m)) {
                out.push(&rest[..mask.len()]);
                rest = &rest[mask.len()..];
                continue;
            }
            let mut chars = rest.char_indices();
            let (_, c) = chars.next().unwrap();
            if is_punct(c) {
                let end = c.len_utf8();
                out.push(&rest[..end]);
                rest = &rest[end..];
                continue;
            }
            let end = rest
                .char_indices()
                .find(|&(i, c)| {
                    i > 0 && (is_punct(c) || rest[i..].starts_with(NUM_MASK) || rest[i..].starts_with(UNIT_MASK))
                })
                .map(|(i, _)| i)
                .unwrap_or(rest.len());
            out.push(&rest[..end]);
            rest = &rest[end..];
        }
    }
    out
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '“' | '”' | '‘' | '’' | '–' | '—' | '…')
}

/// A parsed `{{convert|number|from|to}}` template.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvertTemplate {
    pub number: f64,
    pub unit: String,
    pub display_unit: String,
}

/// A template located inside wikitext, with its byte span.
#[derive(Clone, Debug, PartialEq)]
pub struct TemplateMatch {
    pub template: ConvertTemplate,
    pub span: std::ops::Range<usize>,
}

fn parse_template_number(s: &str) -> Option<f64> {
    let s: String = s.trim().chars().filter(|c| *c != ',').collect();
    let body = s.strip_prefix(['-', '+']).unwrap_or(&s);
    let (mantissa, exponent) = match body.find(['e', 'E']) {
        Some(i) => (&body[..i], Some(&body[i + 1..])),
        None => (body, None),
    };
    let (int, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    let digits = |x: &str| x.chars().all(|c| c.is_ascii_digit());
    if (int.is_empty() && frac.is_empty()) || !digits(int) || !digits(frac) {
        return None;
    }
    if let Some(e) = exponent {
        let e = e.strip_prefix(['-', '+']).unwrap_or(e);
        if e.is_empty() || !digits(e) {
            return None;
        }
    }
    s.parse().ok().filter(|v: &f64| v.is_finite())
}

/// Finds the first `{{convert}}` (or `{{cvt}}`) template in `wikitext`.
pub fn find_convert_template(wikitext: &str) -> Result<TemplateMatch> {
    let mut search = 0;
    while let Some(rel) = wikitext[search..].find("{{") {
        let start = search + rel;
        let Some(close_rel) = wikitext[start + 2..].find("}}") else {
            break;
        };
        let end = start + 2 + close_rel + 2;
        let inner = &wikitext[start + 2..end - 2];
        let mut parts = inner.split('|');
        let name = parts.next().unwrap_or("").trim().to_lowercase();
        if name != "convert" && name != "cvt" {
            search = start + 2;
            continue;
        }
        let malformed = |reason: &str| Error::MalformedTemplate {
            template: wikitext[start..end].to_string(),
            reason: reason.to_string(),
        };
        let positional: Vec<&str> = parts.map(str::trim).filter(|p| !p.contains('=')).collect();
        let arity_ok = match positional.len() {
            3 => true,
            4 => positional[3].parse::<u32>().is_ok(),
            _ => false,
        };
        if !arity_ok {
            return Err(malformed("expected number|unit|display-unit"));
        }
        let number = parse_template_number(positional[0])
            .ok_or_else(|| malformed("first argument is not a number"))?;
        if positional[1].is_empty() || positional[2].is_empty() {
            return Err(malformed("empty unit"));
        }
        return Ok(TemplateMatch {
            template: ConvertTemplate {
                number,
                unit: positional[1].to_string(),
                display_unit: positional[2].to_string(),
            },
            span: start..end,
        });
    }
    Err(Error::NoTemplate)
}

pub fn parse_convert_template(wikitext: &str) -> Result<ConvertTemplate> {
    find_convert_template(wikitext).map(|m| m.template)
}

pub fn format_convert_template(number: f64, unit: &str, display_unit: &str) -> String {
    format!("{{{{convert|{number}|{unit}|{display_unit}}}}}")
}

/// Replaces the first `{{convert}}` template with `[#NUM] [#UNIT]`.
pub fn mask_wikitext(wikitext: &str) -> Result<RawRecord> {
    let m = find_convert_template(wikitext)?;
    let text = format!(
        "{}{NUM_MASK} {UNIT_MASK}{}",
        &wikitext[..m.span.start],
        &wikitext[m.span.end..]
    );
    Ok(RawRecord {
        text,
        number: Some(m.template.number),
        unit: Some(m.template.unit),
        dimension: None,
        canonical_number: None,
    })
}

/// One JSONL line. Raw corpora carry `text`, `number` and `unit`; ingested
/// corpora add `dimension` and `canonical_number`. A raw line may instead
/// carry unmasked wikitext with a `{{convert}}` template and no number/unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub number: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canonical_number: Option<f64>,
}

impl RawRecord {
    pub fn new(text: impl Into<String>, number: f64, unit: impl Into<String>) -> Self {
        RawRecord {
            text: text.into(),
            number: Some(number),
            unit: Some(unit.into()),
            dimension: None,
            canonical_number: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementExample {
    /// Sentence with exactly one `[#NUM]` and one `[#UNIT]`.
    pub text: String,
    /// Surface number, in `unit`.
    pub number: f64,
    pub unit: UnitId,
    pub dimension: DimId,
    /// `number` in the canonical unit of `dimension`.
    pub canonical: f64,
}

impl MeasurementExample {
    pub fn to_record(&self, registry: &UnitRegistry) -> RawRecord {
        RawRecord {
            text: self.text.clone(),
            number: Some(self.number),
            unit: Some(registry.unit(self.unit).name.clone()),
            dimension: Some(registry.dimension(self.dimension).name.clone()),
            canonical_number: Some(self.canonical),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    Malformed,
    Template,
    BadMask,
    NonFinite,
    Negative,
    NonPositive,
    UnknownUnit,
    TooLong,
    DimensionMismatch,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::Malformed => "malformed",
            DropReason::Template => "template",
            DropReason::BadMask => "bad-mask",
            DropReason::NonFinite => "non-finite",
            DropReason::Negative => "negative",
            DropReason::NonPositive => "non-positive",
            DropReason::UnknownUnit => "unknown-unit",
            DropReason::TooLong => "too-long",
            DropReason::DimensionMismatch => "dimension-mismatch",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DroppedRecord {
    /// Zero-based position in the input stream.
    pub index: usize,
    pub reason: DropReason,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct IngestReport {
    pub examples: Vec<MeasurementExample>,
    pub dropped: Vec<DroppedRecord>,
}

impl IngestReport {
    pub fn drop_counts(&self) -> BTreeMap<DropReason, usize> {
        let mut counts = BTreeMap::new();
        for d in &self.dropped {
            *counts.entry(d.reason).or_insert(0) += 1;
        }
        counts
    }
}

fn count_occurrences(text: &str, needle: &str) -> usize {
    text.matches(needle).count()
}

/// Validates and canonicalizes a single record.
pub fn ingest_record(
    record: &RawRecord,
    registry: &UnitRegistry,
) -> std::result::Result<MeasurementExample, (DropReason, String)> {
    let masked;
    let record = if record.number.is_none() && record.unit.is_none() {
        masked = mask_wikitext(&record.text).map_err(|e| (DropReason::Template, e.to_string()))?;
        &masked
    } else {
        record
    };
    let (number, unit) = match (record.number, record.unit.as_deref()) {
        (Some(n), Some(u)) => (n, u),
        _ => return Err((DropReason::Malformed, "record needs both number and unit".into())),
    };
    if count_occurrences(&record.text, NUM_MASK) != 1 || count_occurrences(&record.text, UNIT_MASK) != 1 {
        return Err((DropReason::BadMask, "need exactly one [#NUM] and one [#UNIT]".into()));
    }
    if !number.is_finite() {
        return Err((DropReason::NonFinite, number.to_string()));
    }
    if number < 0.0 {
        return Err((DropReason::Negative, number.to_string()));
    }
    if number == 0.0 {
        return Err((DropReason::NonPositive, number.to_string()));
    }
    let unit_id = registry
        .resolve(unit)
        .map_err(|e| (DropReason::UnknownUnit, e.to_string()))?;
    let n_tokens = tokenize(&record.text).len();
    if n_tokens > MAX_TOKENS {
        return Err((DropReason::TooLong, format!("{n_tokens} tokens")));
    }
    let dimension = registry.unit(unit_id).dimension;
    if let Some(declared) = &record.dimension {
        let actual = &registry.dimension(dimension).name;
        if declared != actual {
            return Err((
                DropReason::DimensionMismatch,
                format!("record says {declared:?}, unit {unit:?} is {actual:?}"),
            ));
        }
    }
    let (canonical, _) = registry
        .canonicalize(number, unit_id)
        .map_err(|e| (DropReason::NonFinite, e.to_string()))?;
    if canonical <= 0.0 {
        return Err((DropReason::NonPositive, format!("canonical value {canonical}")));
    }
    Ok(MeasurementExample {
        text: record.text.clone(),
        number,
        unit: unit_id,
        dimension,
        canonical,
    })
}

/// Ingests already-parsed records. Output order equals input order.
pub fn ingest(records: &[RawRecord], registry: &UnitRegistry) -> IngestReport {
    let mut report = IngestReport::default();
    for (index, record) in records.iter().enumerate() {
        match ingest_record(record, registry) {
            Ok(ex) => report.examples.push(ex),
            Err((reason, detail)) => report.dropped.push(DroppedRecord {
                index,
                reason,
                detail,
            }),
        }
    }
    report
}

/// Ingests a JSONL stream. Unparseable lines are dropped as `malformed`;
/// read errors are fatal.
pub fn ingest_jsonl<R: BufRead>(reader: R, registry: &UnitRegistry) -> std::io::Result<IngestReport> {
    let mut report = IngestReport::default();
    let mut index = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let outcome = serde_json::from_str::<RawRecord>(&line)
            .map_err(|e| (DropReason::Malformed, e.to_string()))
            .and_then(|r| ingest_record(&r, registry));
        match outcome {
            Ok(ex) => report.examples.push(ex),
            Err((reason, detail)) => report.dropped.push(DroppedRecord {
                index,
                reason,
                detail,
            }),
        }
        index += 1;
    }
    Ok(report)
}

pub fn read_examples(path: impl AsRef<std::path::Path>, registry: &UnitRegistry) -> Result<IngestReport> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_jsonl(std::io::BufReader::new(file), registry).map_err(|e| Error::io(path, e))
}

pub fn write_examples<W: Write>(
    mut out: W,
    examples: &[MeasurementExample],
    registry: &UnitRegistry,
) -> std::io::Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut out, &ex.to_record(registry))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Clone, Debug, Default)]
pub struct DatasetSplit {
    pub train: Vec<MeasurementExample>,
    pub val: Vec<MeasurementExample>,
    pub test: Vec<MeasurementExample>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> impl Iterator<Item = &MeasurementExample> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

/// Shuffles deterministically by `seed`, then partitions by `ratios`
/// (train, val, test). Train and val sizes are rounded; test takes the rest.
pub fn split(examples: Vec<MeasurementExample>, ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::BadRatios(ratios.to_vec()));
    }
    let n = examples.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n_train = ((n as f64) * ratios[0]).round() as usize;
    let n_train = n_train.min(n);
    let n_val = (((n as f64) * ratios[1]).round() as usize).min(n - n_train);

    let mut slots: Vec<Option<MeasurementExample>> = examples.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<MeasurementExample> {
        idx.iter().map(|&i| slots[i].take().unwrap()).collect()
    };
    let train = take(&order[..n_train]);
    let val = take(&order[n_train..n_train + n_val]);
    let test = take(&order[n_train + n_val..]);
    Ok(DatasetSplit {
        train,
        val,
        test,
        seed,
    })
}

/// Draws exactly `k` examples per class in `classes`, without replacement.
pub fn fewshot_sample(
    pool: &[MeasurementExample],
    classes: &[DimId],
    k: usize,
    seed: u64,
    registry: &UnitRegistry,
) -> Result<Vec<MeasurementExample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(k * classes.len());
    for &class in classes {
        let members: Vec<&MeasurementExample> = pool.iter().filter(|e| e.dimension == class).collect();
        if members.len() < k {
            return Err(Error::InsufficientExamples {
                dimension: registry.dimension(class).name.clone(),
                available: members.len(),
                k,
            });
        }
        let picked = rand::seq::index::sample(&mut rng, members.len(), k);
        out.extend(picked.into_iter().map(|i| members[i].clone()));
    }
    Ok(out)
}

/// Dimension classes present in `examples`, in registry order.
pub fn observed_dimensions(examples: &[MeasurementExample]) -> Vec<DimId> {
    let mut dims: Vec<DimId> = examples.iter().map(|e| e.dimension).collect();
    dims.sort();
    dims.dedup();
    dims
}

/// `floor(log10 value)`, corrected for rounding in `log10`.
pub fn exponent_bin(value: f64) -> i32 {
    let mut b = value.log10().floor() as i32;
    if 10f64.powi(b + 1) <= value {
        b += 1;
    } else if 10f64.powi(b) > value {
        b -= 1;
    }
    b
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub split_counts: BTreeMap<String, usize>,
    pub dimension_counts: BTreeMap<String, usize>,
    pub unit_counts: BTreeMap<String, usize>,
    pub exponent_histogram_by_dimension: BTreeMap<String, BTreeMap<i32, usize>>,
    pub exponent_histogram_by_unit: BTreeMap<String, BTreeMap<i32, usize>>,
    pub median_characters: usize,
    pub median_tokens: usize,
}

fn lower_median(mut xs: Vec<usize>) -> usize {
    if xs.is_empty() {
        return 0;
    }
    xs.sort_unstable();
    xs[(xs.len() - 1) / 2]
}

pub fn stats_of<'a>(
    examples: impl IntoIterator<Item = &'a MeasurementExample>,
    registry: &UnitRegistry,
) -> CorpusStats {
    let mut s = CorpusStats::default();
    let mut chars = Vec::new();
    let mut tokens = Vec::new();
    for ex in examples {
        let dim = registry.dimension(ex.dimension).name.clone();
        let unit = registry.unit(ex.unit).name.clone();
        let bin = exponent_bin(ex.canonical);
        *s.dimension_counts.entry(dim.clone()).or_insert(0) += 1;
        *s.unit_counts.entry(unit.clone()).or_insert(0) += 1;
        *s.exponent_histogram_by_dimension
            .entry(dim)
            .or_default()
            .entry(bin)
            .or_insert(0) += 1;
        *s.exponent_histogram_by_unit
            .entry(unit)
            .or_default()
            .entry(bin)
            .or_insert(0) += 1;
        chars.push(ex.text.chars().count());
        tokens.push(tokenize(&ex.text).len());
    }
    s.split_counts.insert("all".into(), chars.len());
    s.median_characters = lower_median(chars);
    s.median_tokens = lower_median(tokens);
    s
}

pub fn stats(split: &DatasetSplit, registry: &UnitRegistry) -> CorpusStats {
    let mut s = stats_of(split.all(), registry);
    s.split_counts.insert("train".into(), split.train.len());
    s.split_counts.insert("val".into(), split.val.len());
    s.split_counts.insert("test".into(), split.test.len());
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(reg: &UnitRegistry, text: &str, number: f64, unit: &str) -> MeasurementExample {
        ingest_record(&RawRecord::new(text, number, unit), reg).unwrap()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("has an [#NUM] [#UNIT] centerboard."),
            vec!["has", "an", "[#NUM]", "[#UNIT]", "centerboard", "."]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("a,b"), vec!["a", ",", "b"]);
        assert_eq!(tokenize("([#NUM][#UNIT])"), vec!["(", "[#NUM]", "[#UNIT]", ")"]);
    }

    #[test]
    fn template_examples() {
        let t = parse_convert_template("{{convert|2|km|mi}}").unwrap();
        assert_eq!(t, ConvertTemplate { number: 2.0, unit: "km".into(), display_unit: "mi".into() });
        let t = parse_convert_template("it is {{Convert|3.5|m|ft|abbr=on}} deep").unwrap();
        assert_eq!((t.number, t.unit.as_str(), t.display_unit.as_str()), (3.5, "m", "ft"));
        assert!(matches!(
            parse_convert_template("{{convert|km|mi}}"),
            Err(Error::MalformedTemplate { .. })
        ));
        assert!(matches!(
            parse_convert_template("{{convert|two|km|mi}}"),
            Err(Error::MalformedTemplate { .. })
        ));
        assert!(matches!(parse_convert_template("no template {{cite|x}}"), Err(Error::NoTemplate)));
        assert_eq!(parse_convert_template("{{cvt|1,200|ft|m|0}}").unwrap().number, 1200.0);
    }

    #[test]
    fn masks_wikitext() {
        let r = mask_wikitext("The road is {{convert|2|km|mi}} long.").unwrap();
        assert_eq!(r.text, "The road is [#NUM] [#UNIT] long.");
        assert_eq!(r.number, Some(2.0));
        assert_eq!(r.unit.as_deref(), Some("km"));
    }

    #[test]
    fn ingest_examples() {
        let reg = UnitRegistry::builtin();
        let e = ex(&reg, "a road of [#NUM] [#UNIT] .", 2.0, "km");
        assert_eq!(e.canonical, 2000.0);
        assert_eq!(reg.dimension(e.dimension).name, "length");

        let long_text = format!("{} [#NUM] [#UNIT]", vec!["word"; 68].join(" "));
        let records = vec![
            RawRecord::new("x [#NUM] [#UNIT]", -5.0, "m"),
            RawRecord::new(long_text, 1.0, "m"),
            RawRecord::new("x [#NUM] [#UNIT]", 1.0, "furlongs"),
            RawRecord::new("no mask here", 1.0, "m"),
            RawRecord { text: "ran {{convert|5|mi|km}} today".into(), number: None, unit: None, dimension: None, canonical_number: None },
            RawRecord { dimension: Some("charge".into()), ..RawRecord::new("x [#NUM] [#UNIT]", 20.0, "°C") },
        ];
        let report = ingest(&records, &reg);
        let reasons: Vec<_> = report.dropped.iter().map(|d| d.reason).collect();
        assert_eq!(
            reasons,
            vec![
                DropReason::Negative,
                DropReason::TooLong,
                DropReason::UnknownUnit,
                DropReason::BadMask,
                DropReason::DimensionMismatch
            ]
        );
        assert_eq!(report.examples.len(), 1);
        assert!((report.examples[0].canonical - 8046.72).abs() < 1e-9);
    }

    #[test]
    fn jsonl_malformed_lines_are_dropped() {
        let reg = UnitRegistry::builtin();
        let input = "{\"text\": \"a [#NUM] [#UNIT]\", \"number\": 3, \"unit\": \"kg\"}\nnot json\n\n";
        let report = ingest_jsonl(input.as_bytes(), &reg).unwrap();
        assert_eq!(report.examples.len(), 1);
        assert_eq!(report.dropped[0].reason, DropReason::Malformed);
        assert_eq!(report.dropped[0].index, 1);
    }

    fn corpus(reg: &UnitRegistry, n: usize) -> Vec<MeasurementExample> {
        let units = ["m", "kg", "s", "W", "K", "m/s", "m2"];
        (0..n)
            .map(|i| ex(reg, &format!("item {i} is [#NUM] [#UNIT]"), (i + 1) as f64, units[i % units.len()]))
            .collect()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let reg = UnitRegistry::builtin();
        let s = split(corpus(&reg, 10), [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        let a = split(corpus(&reg, 50), [0.8, 0.1, 0.1], 9).unwrap();
        let b = split(corpus(&reg, 50), [0.8, 0.1, 0.1], 9).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert!(matches!(split(corpus(&reg, 5), [0.5, 0.1, 0.1], 0), Err(Error::BadRatios(_))));
    }

    #[test]
    fn split_sizes_at_wiki_convert_scale() {
        // Only sizes matter here, so examples are cheap clones.
        let reg = UnitRegistry::builtin();
        let one = ex(&reg, "x [#NUM] [#UNIT]", 1.0, "m");
        let s = split(vec![one; 919_237], [0.8, 0.1, 0.1], 0).unwrap();
        assert!(s.train.len().abs_diff(735_390) <= 1);
        assert!(s.val.len().abs_diff(91_924) <= 1);
        assert!(s.test.len().abs_diff(91_924) <= 1);
    }

    #[test]
    fn fewshot_is_balanced_and_deterministic() {
        let reg = UnitRegistry::builtin();
        let pool = corpus(&reg, 140);
        let classes = observed_dimensions(&pool);
        assert_eq!(classes.len(), 7);
        let a = fewshot_sample(&pool, &classes, 10, 1, &reg).unwrap();
        assert_eq!(a.len(), 70);
        for c in &classes {
            assert_eq!(a.iter().filter(|e| e.dimension == *c).count(), 10);
        }
        assert_eq!(a, fewshot_sample(&pool, &classes, 10, 1, &reg).unwrap());
        assert!(matches!(
            fewshot_sample(&pool, &classes, 21, 1, &reg),
            Err(Error::InsufficientExamples { available: 20, k: 21, .. })
        ));
    }

    #[test]
    fn exponent_bins() {
        assert_eq!(exponent_bin(1000.0), 3);
        assert_eq!(exponent_bin(999.7), 2);
        assert_eq!(exponent_bin(1.0), 0);
        assert_eq!(exponent_bin(0.01), -2);
        assert_eq!(exponent_bin(0.0099), -3);
        for e in -12..=12 {
            assert_eq!(exponent_bin(10f64.powi(e)), e);
        }
    }

    #[test]
    fn stats_histograms_sum_to_counts() {
        let reg = UnitRegistry::builtin();
        let s = split(corpus(&reg, 70), [0.8, 0.1, 0.1], 0).unwrap();
        let st = stats(&s, &reg);
        assert_eq!(st.split_counts["all"], 70);
        for (dim, hist) in &st.exponent_histogram_by_dimension {
            assert_eq!(hist.values().sum::<usize>(), st.dimension_counts[dim]);
        }
        assert_eq!(st.median_tokens, 5);
    }
}
