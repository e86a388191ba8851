//! Few-shot grid: train on `k` examples per dimension with a frozen and a
//! trainable encoder, repeated over several seeds.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{fewshot_sample, observed_dimensions, DatasetSplit, MeasurementExample};
use crate::encoder::{EncoderConfig, HashedEncoder};
use crate::error::{Error, Result};
use crate::evaluation::{classification_scores, log_mae, majority_baseline, median_baseline};
use crate::model::{Model, ModelSpec, Variant};
use crate::seed::derive_seed;
use crate::training::{train, TrainConfig};
use crate::units::{DimId, UnitRegistry};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FewshotConfig {
    pub variants: Vec<Variant>,
    pub ks: Vec<usize>,
    pub seeds: usize,
    /// `frozen` is overridden per run.
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub frozen_train: TrainConfig,
    pub seed: u64,
}

impl Default for FewshotConfig {
    fn default() -> Self {
        FewshotConfig {
            variants: vec![Variant::DiscD, Variant::DiscY],
            ks: vec![10, 40, 70, 100],
            seeds: 3,
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            frozen_train: TrainConfig::frozen(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub k: usize,
    pub frozen: bool,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (0 for a single seed).
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FewshotRow {
    pub variant: Variant,
    /// `macro_f1` for dimension classifiers, `log_mae` for number regressors.
    pub metric: String,
    pub cells: Vec<Cell>,
}

impl FewshotRow {
    pub fn cell(&self, k: usize, frozen: bool) -> Option<&Cell> {
        self.cells.iter().find(|c| c.k == k && c.frozen == frozen)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FewshotReport {
    pub classes: Vec<String>,
    pub majority_accuracy: f64,
    pub median_log_mae: f64,
    pub rows: Vec<FewshotRow>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Test-set score of a trained model: macro-F1 over `classes` when the
/// variant predicts dimensions, otherwise log-mae of the number.
fn score(model: &Model<HashedEncoder>, test: &[MeasurementExample], classes: &[DimId]) -> Result<f64> {
    let preds = test
        .iter()
        .map(|e| model.predict_text(&e.text))
        .collect::<Result<Vec<_>>>()?;
    if model.variant().has_dim_head() && model.variant() != Variant::LatDim {
        let gold: Vec<DimId> = test.iter().map(|e| e.dimension).collect();
        let pred: Vec<DimId> = preds.iter().map(|p| p.dimension.unwrap()).collect();
        let mut cls = classes.to_vec();
        cls.extend(&pred);
        cls.sort();
        cls.dedup();
        Ok(classification_scores(&gold, &pred, &cls)?.macro_f1)
    } else {
        let gold: Vec<f64> = test.iter().map(|e| e.canonical).collect();
        let pred: Vec<f64> = preds
            .iter()
            .map(|p| {
                p.canonical.ok_or(Error::MissingHead {
                    variant: model.variant().name(),
                    head: "number",
                })
            })
            .collect::<Result<_>>()?;
        log_mae(&gold, &pred)
    }
}

fn metric_name(variant: Variant) -> &'static str {
    if variant.has_dim_head() && variant != Variant::LatDim {
        "macro_f1"
    } else {
        "log_mae"
    }
}

/// Trains one model on `k` examples per class and scores it on the test split.
pub fn run_cell(
    config: &FewshotConfig,
    split: &DatasetSplit,
    registry: &Arc<UnitRegistry>,
    variant: Variant,
    k: usize,
    frozen: bool,
    rep: usize,
) -> Result<f64> {
    let classes = observed_dimensions(&split.train);
    // sample and initialization depend on (k, rep) only, so frozen and
    // trainable runs start from the same point
    let base = derive_seed(config.seed, &format!("fewshot/{k}/{rep}"));
    let sample = fewshot_sample(&split.train, &classes, k, derive_seed(base, "sample"), registry)?;
    let enc_config = EncoderConfig {
        frozen,
        ..config.encoder.clone()
    };
    let encoder = HashedEncoder::new(enc_config, derive_seed(base, "encoder"))?;
    let spec = ModelSpec::new(variant, config.encoder.hidden_dim);
    let mut model = Model::new(spec, encoder, registry.clone(), derive_seed(base, "heads"))?;
    let mut tc = if frozen {
        config.frozen_train.clone()
    } else {
        config.train.clone()
    };
    tc.seed = derive_seed(base, "shuffle");
    tc.warmup_steps = tc.warmup_steps.min(tc.max_epochs * tc.steps_per_epoch(sample.len()));
    train(&mut model, &sample, &split.val, &tc)?;
    score(&model, &split.test, &classes)
}

/// Runs every (variant, k, frozen) cell over `config.seeds` repetitions.
pub fn run(config: &FewshotConfig, split: &DatasetSplit, registry: &Arc<UnitRegistry>) -> Result<FewshotReport> {
    if config.seeds == 0 || config.ks.is_empty() || config.variants.is_empty() {
        return Err(Error::Config("few-shot grid needs seeds, ks and variants".into()));
    }
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::Config("few-shot grid needs train and test examples".into()));
    }
    let classes = observed_dimensions(&split.train);
    let mut rows = Vec::new();
    for &variant in &config.variants {
        let mut cells = Vec::new();
        for &k in &config.ks {
            for frozen in [false, true] {
                let values = (0..config.seeds)
                    .map(|rep| run_cell(config, split, registry, variant, k, frozen, rep))
                    .collect::<Result<Vec<_>>>()?;
                let (mean, sd) = mean_sd(&values);
                cells.push(Cell {
                    k,
                    frozen,
                    values,
                    mean,
                    sd,
                });
            }
        }
        rows.push(FewshotRow {
            variant,
            metric: metric_name(variant).to_string(),
            cells,
        });
    }

    let train_dims: Vec<DimId> = split.train.iter().map(|e| e.dimension).collect();
    let maj = majority_baseline(&train_dims).expect("nonempty train");
    let correct = split.test.iter().filter(|e| e.dimension == maj).count();
    let med = median_baseline(&split.train.iter().map(|e| e.canonical).collect::<Vec<_>>()).expect("nonempty train");
    let gold: Vec<f64> = split.test.iter().map(|e| e.canonical).collect();
    Ok(FewshotReport {
        classes: classes.iter().map(|d| registry.dimension(*d).name.clone()).collect(),
        majority_accuracy: correct as f64 / split.test.len() as f64,
        median_log_mae: log_mae(&gold, &vec![med; gold.len()])?,
        rows,
    })
}
