//! Metrics and probes: macro-F1, log-mae, constant baselines, confusion
//! matrices, dimension-distance error histograms, grouped log-mae and the
//! latent-class to dimension matching used to score unsupervised models.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::MeasurementExample;
use crate::encoder::TextEncoder;
use crate::error::{Error, Result};
use crate::model::{argmax, Model, NumberCondition, Variant};
use crate::units::{DimId, UnitId, UnitRegistry};

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch(a, b));
    }
    Ok(())
}

/// Accuracy and macro-averaged precision/recall scores over `classes`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationScores {
    pub macro_f1: f64,
    pub accuracy: f64,
    pub macro_recall: f64,
}

/// Unweighted mean of per-class F1. A class in `classes` that never occurs
/// in `gold` or `pred` scores 0.
pub fn macro_f1<T: PartialEq + Copy>(gold: &[T], pred: &[T], classes: &[T]) -> Result<f64> {
    Ok(classification_scores(gold, pred, classes)?.macro_f1)
}

/// Macro-F1 (strict, over all `classes`), accuracy, and macro-recall over the
/// classes that have gold support.
pub fn classification_scores<T: PartialEq + Copy>(gold: &[T], pred: &[T], classes: &[T]) -> Result<ClassificationScores> {
    same_len(gold.len(), pred.len())?;
    if classes.is_empty() {
        return Ok(ClassificationScores {
            macro_f1: 0.0,
            accuracy: 0.0,
            macro_recall: 0.0,
        });
    }
    let mut f1_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut supported = 0usize;
    for c in classes {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (g, p) in gold.iter().zip(pred) {
            match (g == c, p == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                _ => {}
            }
        }
        let denom = 2 * tp + fp + fn_;
        if denom > 0 {
            f1_sum += 2.0 * tp as f64 / denom as f64;
        }
        if tp + fn_ > 0 {
            recall_sum += tp as f64 / (tp + fn_) as f64;
            supported += 1;
        }
    }
    let correct = gold.iter().zip(pred).filter(|(g, p)| g == p).count();
    Ok(ClassificationScores {
        macro_f1: f1_sum / classes.len() as f64,
        accuracy: if gold.is_empty() { 0.0 } else { correct as f64 / gold.len() as f64 },
        macro_recall: if supported == 0 { 0.0 } else { recall_sum / supported as f64 },
    })
}

/// Mean `|log10 gold − log10 pred|`.
pub fn log_mae(gold: &[f64], pred: &[f64]) -> Result<f64> {
    same_len(gold.len(), pred.len())?;
    if let Some(bad) = gold.iter().chain(pred).find(|v| !(**v > 0.0)) {
        return Err(Error::NonPositiveNumber(*bad));
    }
    if gold.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = gold.iter().zip(pred).map(|(g, p)| (g.log10() - p.log10()).abs()).sum();
    Ok(sum / gold.len() as f64)
}

/// Most frequent label; ties go to the smallest label.
pub fn majority_baseline<T: Ord + Copy>(labels: &[T]) -> Option<T> {
    let mut counts: BTreeMap<T, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(*l).or_insert(0) += 1;
    }
    let mut best: Option<(T, usize)> = None;
    for (label, n) in counts {
        if best.is_none_or(|(_, b)| n > b) {
            best = Some((label, n));
        }
    }
    best.map(|(l, _)| l)
}

/// Median of `values`; for an even count the lower of the two middle values.
pub fn median_baseline(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

/// `matrix[i][j]` counts examples with gold `classes[i]` predicted as `classes[j]`.
pub fn confusion<T: PartialEq + Copy>(gold: &[T], pred: &[T], classes: &[T]) -> Result<Vec<Vec<usize>>> {
    same_len(gold.len(), pred.len())?;
    let pos = |x: &T| {
        classes
            .iter()
            .position(|c| c == x)
            .ok_or_else(|| Error::ShapeMismatch("label missing from class list".into()))
    };
    let mut m = vec![vec![0usize; classes.len()]; classes.len()];
    for (g, p) in gold.iter().zip(pred) {
        m[pos(g)?][pos(p)?] += 1;
    }
    Ok(m)
}

/// Histogram of exponent-vector distances between gold and predicted
/// dimensions; bucket 0 holds the correct predictions.
pub fn manhattan_error_histogram(gold: &[DimId], pred: &[DimId], registry: &UnitRegistry) -> Result<BTreeMap<u32, usize>> {
    same_len(gold.len(), pred.len())?;
    let mut hist = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        *hist.entry(registry.manhattan(*g, *p)).or_insert(0) += 1;
    }
    Ok(hist)
}

/// log-mae within each group; empty groups are absent.
pub fn groupwise_log_mae<G: Ord + Clone>(groups: &[G], gold: &[f64], pred: &[f64]) -> Result<BTreeMap<G, (f64, usize)>> {
    same_len(groups.len(), gold.len())?;
    same_len(gold.len(), pred.len())?;
    let mut buckets: BTreeMap<G, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((g, y), p) in groups.iter().zip(gold).zip(pred) {
        let e = buckets.entry(g.clone()).or_default();
        e.0.push(*y);
        e.1.push(*p);
    }
    buckets
        .into_iter()
        .map(|(g, (y, p))| Ok((g, (log_mae(&y, &p)?, y.len()))))
        .collect()
}

/// Square count matrix: rows are predicted latent classes, columns true dimensions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ContingencyMatrix {
    pub fn from_pairs(latent: &[usize], truth: &[usize], size: usize) -> Result<Self> {
        same_len(latent.len(), truth.len())?;
        let mut counts = vec![vec![0u64; size]; size];
        for (l, t) in latent.iter().zip(truth) {
            if *l >= size || *t >= size {
                return Err(Error::ShapeMismatch(format!("class index out of range for {size}x{size} table")));
            }
            counts[*l][*t] += 1;
        }
        Ok(ContingencyMatrix { counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// Maximum-weight perfect matching on a square matrix; returns the column
/// assigned to each row. O(n³) shortest augmenting paths with potentials.
pub fn hungarian_max(weights: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = weights.len();
    for row in weights {
        if row.len() != n {
            return Err(Error::NonSquare { rows: n, cols: row.len() });
        }
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    // Minimize negated weights. 1-based arrays; index 0 is a sentinel.
    let cost = |i: usize, j: usize| -weights[i - 1][j - 1];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[row_of[j] - 1] = j - 1;
    }
    Ok(assignment)
}

/// Bijection latent class → true dimension maximizing matched counts.
pub fn hungarian_map(contingency: &ContingencyMatrix) -> Result<Vec<usize>> {
    let w: Vec<Vec<f64>> = contingency
        .counts
        .iter()
        .map(|r| r.iter().map(|c| *c as f64).collect())
        .collect();
    hungarian_max(&w)
}

/// A probe run by [`evaluate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Probe {
    /// Dimension from the text alone.
    Dim,
    /// Dimension from text and gold number, by Bayes' rule.
    DimGivenY,
    /// Unit given the gold dimension.
    Unit,
    /// Unit given the predicted dimension.
    UnitPredDim,
    /// Number from the text alone.
    Num,
    /// Number given the gold dimension (or gold unit for unit-conditioned heads).
    NumGold,
    /// Number given the predicted dimension (and unit).
    NumArgmax,
    /// Latent dimension classes scored after optimal matching.
    LatDim,
}

impl Probe {
    pub const ALL: [Probe; 8] = [
        Probe::Dim,
        Probe::DimGivenY,
        Probe::Unit,
        Probe::UnitPredDim,
        Probe::Num,
        Probe::NumGold,
        Probe::NumArgmax,
        Probe::LatDim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Probe::Dim => "dim",
            Probe::DimGivenY => "dim-given-y",
            Probe::Unit => "unit",
            Probe::UnitPredDim => "unit-pred-dim",
            Probe::Num => "num",
            Probe::NumGold => "num-gold",
            Probe::NumArgmax => "num-argmax",
            Probe::LatDim => "latdim",
        }
    }

    pub fn supported_by(self, variant: Variant) -> bool {
        use Variant::*;
        match self {
            Probe::Dim => matches!(variant, Gemm | GemmUy | DiscD | DiscDu | GenYd),
            Probe::DimGivenY => matches!(variant, GenYd | GemmUy),
            Probe::Unit | Probe::UnitPredDim => variant.has_unit_head(),
            Probe::Num => matches!(variant, Gemm | GemmUy | GenYd | DiscY | LatDim),
            Probe::NumGold | Probe::NumArgmax => matches!(variant, Gemm | GemmUy | GenYd),
            Probe::LatDim => variant == LatDim,
        }
    }

    pub fn available(variant: Variant) -> Vec<Probe> {
        Probe::ALL.into_iter().filter(|p| p.supported_by(variant)).collect()
    }

    /// Parses a comma-separated list.
    pub fn parse_list(s: &str) -> Result<Vec<Probe>> {
        s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
    }
}

impl fmt::Display for Probe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Probe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Probe::ALL
            .into_iter()
            .find(|p| p.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown probe {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub labels: Vec<String>,
    pub matrix: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupLogMae {
    pub dimension: BTreeMap<String, f64>,
    pub unit: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub macro_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub macro_recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_mae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<Confusion>,
    /// Per gold dimension, for unit probes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unit_confusion: Option<BTreeMap<String, Confusion>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manhattan_histogram: Option<BTreeMap<u32, usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group_log_mae: Option<GroupLogMae>,
    /// Latent class → dimension name, for the latent probe.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mapping: Option<BTreeMap<usize, String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ProbeReport {
    fn with_scores(mut self, s: ClassificationScores) -> Self {
        self.macro_f1 = Some(s.macro_f1);
        self.accuracy = Some(s.accuracy);
        self.macro_recall = Some(s.macro_recall);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MajorityReport {
    pub label: String,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub macro_recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedianReport {
    pub value: f64,
    pub log_mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub majority_dimension: MajorityReport,
    pub majority_unit: MajorityReport,
    pub median_number: MedianReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub examples: usize,
    pub baselines: Baselines,
    pub probes: BTreeMap<String, ProbeReport>,
}

fn label_union<T: Ord + Copy>(a: &[T], b: &[T]) -> Vec<T> {
    let mut v: Vec<T> = a.iter().chain(b).copied().collect();
    v.sort();
    v.dedup();
    v
}

fn dim_names(reg: &UnitRegistry, ids: &[DimId]) -> Vec<String> {
    ids.iter().map(|d| reg.dimension(*d).name.clone()).collect()
}

fn unit_names(reg: &UnitRegistry, ids: &[UnitId]) -> Vec<String> {
    ids.iter().map(|u| reg.unit(*u).name.clone()).collect()
}

/// Majority and median baselines fitted on `train`, scored on `test`.
pub fn baselines(train: &[MeasurementExample], test: &[MeasurementExample], reg: &UnitRegistry) -> Result<Baselines> {
    let empty = || Error::Config("baselines need a nonempty training set".into());
    let train_dims: Vec<DimId> = train.iter().map(|e| e.dimension).collect();
    let train_units: Vec<UnitId> = train.iter().map(|e| e.unit).collect();
    let train_vals: Vec<f64> = train.iter().map(|e| e.canonical).collect();
    let maj_d = majority_baseline(&train_dims).ok_or_else(empty)?;
    let maj_u = majority_baseline(&train_units).ok_or_else(empty)?;
    let med = median_baseline(&train_vals).ok_or_else(empty)?;

    let gold_d: Vec<DimId> = test.iter().map(|e| e.dimension).collect();
    let gold_u: Vec<UnitId> = test.iter().map(|e| e.unit).collect();
    let gold_y: Vec<f64> = test.iter().map(|e| e.canonical).collect();
    let pred_d = vec![maj_d; test.len()];
    let pred_u = vec![maj_u; test.len()];
    let sd = classification_scores(&gold_d, &pred_d, &label_union(&gold_d, &pred_d))?;
    let su = classification_scores(&gold_u, &pred_u, &label_union(&gold_u, &pred_u))?;
    Ok(Baselines {
        majority_dimension: MajorityReport {
            label: reg.dimension(maj_d).name.clone(),
            macro_f1: sd.macro_f1,
            accuracy: sd.accuracy,
            macro_recall: sd.macro_recall,
        },
        majority_unit: MajorityReport {
            label: reg.unit(maj_u).name.clone(),
            macro_f1: su.macro_f1,
            accuracy: su.accuracy,
            macro_recall: su.macro_recall,
        },
        median_number: MedianReport {
            value: med,
            log_mae: log_mae(&gold_y, &vec![med; test.len()])?,
        },
    })
}

fn dimension_probe(gold: &[DimId], pred: &[DimId], reg: &UnitRegistry) -> Result<ProbeReport> {
    let classes = label_union(gold, pred);
    let scores = classification_scores(gold, pred, &classes)?;
    Ok(ProbeReport {
        confusion: Some(Confusion {
            labels: dim_names(reg, &classes),
            matrix: confusion(gold, pred, &classes)?,
        }),
        manhattan_histogram: Some(manhattan_error_histogram(gold, pred, reg)?),
        ..ProbeReport::default()
    }
    .with_scores(scores))
}

fn unit_probe(examples: &[MeasurementExample], pred: &[UnitId], reg: &UnitRegistry) -> Result<ProbeReport> {
    let gold: Vec<UnitId> = examples.iter().map(|e| e.unit).collect();
    let classes = label_union(&gold, pred);
    let scores = classification_scores(&gold, pred, &classes)?;
    let mut per_dim = BTreeMap::new();
    for d in label_union(&examples.iter().map(|e| e.dimension).collect::<Vec<_>>(), &[]) {
        let idx: Vec<usize> = (0..examples.len()).filter(|&i| examples[i].dimension == d).collect();
        let g: Vec<UnitId> = idx.iter().map(|&i| gold[i]).collect();
        let p: Vec<UnitId> = idx.iter().map(|&i| pred[i]).collect();
        let cls = label_union(&g, &p);
        per_dim.insert(
            reg.dimension(d).name.clone(),
            Confusion {
                labels: unit_names(reg, &cls),
                matrix: confusion(&g, &p, &cls)?,
            },
        );
    }
    Ok(ProbeReport {
        unit_confusion: Some(per_dim),
        ..ProbeReport::default()
    }
    .with_scores(scores))
}

fn number_probe(examples: &[MeasurementExample], pred: &[f64], reg: &UnitRegistry) -> Result<ProbeReport> {
    let gold: Vec<f64> = examples.iter().map(|e| e.canonical).collect();
    let by_dim: Vec<String> = examples.iter().map(|e| reg.dimension(e.dimension).name.clone()).collect();
    let by_unit: Vec<String> = examples.iter().map(|e| reg.unit(e.unit).name.clone()).collect();
    let strip = |m: BTreeMap<String, (f64, usize)>| m.into_iter().map(|(k, (v, _))| (k, v)).collect();
    Ok(ProbeReport {
        log_mae: Some(log_mae(&gold, pred)?),
        group_log_mae: Some(GroupLogMae {
            dimension: strip(groupwise_log_mae(&by_dim, &gold, pred)?),
            unit: strip(groupwise_log_mae(&by_unit, &gold, pred)?),
        }),
        ..ProbeReport::default()
    })
}

/// Runs `probes` on `examples`; baselines are fitted on `train`.
pub fn evaluate<E: TextEncoder>(
    model: &Model<E>,
    train: &[MeasurementExample],
    examples: &[MeasurementExample],
    probes: &[Probe],
) -> Result<EvalReport> {
    let reg = model.registry();
    let variant = model.variant();
    for p in probes {
        if !p.supported_by(variant) {
            return Err(Error::MissingHead {
                variant: variant.name(),
                head: p.name(),
            });
        }
    }
    let hs: Vec<Vec<f64>> = examples.iter().map(|e| model.encode(&e.text)).collect();
    let predictions = hs.iter().map(|h| model.predict(h)).collect::<Result<Vec<_>>>()?;
    let gold_d: Vec<DimId> = examples.iter().map(|e| e.dimension).collect();

    let mut out = BTreeMap::new();
    for &probe in probes {
        let report = match probe {
            Probe::Dim => {
                let pred: Vec<DimId> = predictions.iter().map(|p| p.dimension.unwrap()).collect();
                dimension_probe(&gold_d, &pred, reg)?
            }
            Probe::DimGivenY => {
                let pred = hs
                    .iter()
                    .zip(examples)
                    .map(|(h, e)| Ok(DimId(argmax(&model.posterior_dim(h, e.canonical)?))))
                    .collect::<Result<Vec<_>>>()?;
                dimension_probe(&gold_d, &pred, reg)?
            }
            Probe::Unit => {
                let pred = hs
                    .iter()
                    .zip(examples)
                    .map(|(h, e)| Ok(UnitId(argmax(&model.unit_distribution(h, e.dimension)?))))
                    .collect::<Result<Vec<_>>>()?;
                unit_probe(examples, &pred, reg)?
            }
            Probe::UnitPredDim => {
                let pred: Vec<UnitId> = predictions.iter().map(|p| p.unit.unwrap()).collect();
                let mut r = unit_probe(examples, &pred, reg)?;
                r.note = Some("unit conditioned on the predicted dimension".into());
                r
            }
            Probe::Num => {
                let pred: Vec<f64> = predictions.iter().map(|p| p.canonical.unwrap()).collect();
                number_probe(examples, &pred, reg)?
            }
            Probe::NumGold => {
                let pred = hs
                    .iter()
                    .zip(examples)
                    .map(|(h, e)| {
                        let cond = if variant == Variant::GemmUy {
                            NumberCondition::GoldUnit(e.unit)
                        } else {
                            NumberCondition::GoldDimension(e.dimension)
                        };
                        model.conditional_number(h, cond)
                    })
                    .collect::<Result<Vec<_>>>()?;
                number_probe(examples, &pred, reg)?
            }
            Probe::NumArgmax => {
                let pred = hs
                    .iter()
                    .map(|h| model.conditional_number(h, NumberCondition::Argmax))
                    .collect::<Result<Vec<_>>>()?;
                number_probe(examples, &pred, reg)?
            }
            Probe::LatDim => {
                let n = reg.num_dimensions();
                let latent: Vec<usize> = predictions.iter().map(|p| p.latent_class.unwrap()).collect();
                let truth: Vec<usize> = gold_d.iter().map(|d| d.0).collect();
                let table = ContingencyMatrix::from_pairs(&latent, &truth, n)?;
                let mapping = hungarian_map(&table)?;
                let mapped: Vec<DimId> = latent.iter().map(|l| DimId(mapping[*l])).collect();
                let mut r = dimension_probe(&gold_d, &mapped, reg)?;
                r.mapping = Some(
                    mapping
                        .iter()
                        .enumerate()
                        .map(|(l, d)| (l, reg.dimension(DimId(*d)).name.clone()))
                        .collect(),
                );
                r
            }
        };
        out.insert(probe.name().to_string(), report);
    }

    Ok(EvalReport {
        variant: variant.name().to_string(),
        examples: examples.len(),
        baselines: baselines(train, examples, reg)?,
        probes: out,
    })
}
