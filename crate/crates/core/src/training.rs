//! Mini-batch training: AdamW with linear warmup, optional log-frequency
//! class weighting, and early stopping on a validation metric.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::MeasurementExample;
use crate::encoder::TextEncoder;
use crate::error::{Error, Result};
use crate::evaluation::{log_mae, macro_f1};
use crate::model::{Gradients, Heads, LossWeights, Model, Variant};
use crate::units::{DimId, UnitRegistry};

/// `w_c = 1 / ln(e + n_c)`, rescaled to mean 1.
pub fn class_weights(counts: &[usize]) -> Result<Vec<f64>> {
    if !counts.iter().any(|&n| n > 0) {
        return Err(Error::AllZeroCounts);
    }
    let raw: Vec<f64> = counts.iter().map(|&n| 1.0 / (std::f64::consts::E + n as f64).ln()).collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    Ok(raw.into_iter().map(|w| w / mean).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    #[default]
    Uniform,
    LogFrequency,
}

impl FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Weighting::Uniform),
            "log-frequency" => Ok(Weighting::LogFrequency),
            _ => Err(Error::Config(format!("unknown weighting {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMetric {
    JointNll,
    MacroF1,
    LogMae,
}

impl SelectionMetric {
    pub fn for_variant(variant: Variant) -> Self {
        match variant {
            Variant::DiscD | Variant::DiscDu => SelectionMetric::MacroF1,
            Variant::DiscY => SelectionMetric::LogMae,
            _ => SelectionMetric::JointNll,
        }
    }

    pub fn higher_is_better(self) -> bool {
        self == SelectionMetric::MacroF1
    }

    pub fn name(self) -> &'static str {
        match self {
            SelectionMetric::JointNll => "joint-nll",
            SelectionMetric::MacroF1 => "macro-f1",
            SelectionMetric::LogMae => "log-mae",
        }
    }
}

impl fmt::Display for SelectionMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectionMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint-nll" => Ok(SelectionMetric::JointNll),
            "macro-f1" => Ok(SelectionMetric::MacroF1),
            "log-mae" => Ok(SelectionMetric::LogMae),
            _ => Err(Error::Config(format!("unknown selection metric {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub patience: usize,
    pub seed: u64,
    pub weighting: Weighting,
    /// Defaults to [`SelectionMetric::for_variant`].
    pub selection_metric: Option<SelectionMetric>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 200,
            max_epochs: 100,
            learning_rate: 1e-4,
            warmup_steps: 500,
            patience: 5,
            seed: 0,
            weighting: Weighting::Uniform,
            selection_metric: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl TrainConfig {
    /// Defaults for training heads on top of a fixed encoder.
    pub fn frozen() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weighting: Weighting::LogFrequency,
            ..TrainConfig::default()
        }
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size.max(1))
    }

    pub fn validate(&self, train_len: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch_size, max_epochs and patience must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("invalid optimizer constants");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be nonnegative");
        }
        let total = self.max_epochs * self.steps_per_epoch(train_len);
        if self.warmup_steps > total {
            return Err(Error::Config(format!(
                "warmup_steps {} exceeds the {} total steps",
                self.warmup_steps, total
            )));
        }
        Ok(())
    }
}

/// `base · min(1, step / warmup)`.
pub fn lr_at(step: usize, config: &TrainConfig) -> f64 {
    if config.warmup_steps == 0 {
        return config.learning_rate;
    }
    config.learning_rate * (step as f64 / config.warmup_steps as f64).min(1.0)
}

/// Decoupled-weight-decay Adam state.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn from_config(c: &TrainConfig) -> Self {
        AdamW::new(c.beta1, c.beta2, c.eps, c.weight_decay)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameter tensors, {} gradient tensors",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::ShapeMismatch(format!("tensor {i}: {} params, {} grads", p.len(), g.len())));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() || self.m.iter().zip(&params).any(|(m, p)| m.len() != p.len()) {
            return Err(Error::ShapeMismatch("parameters changed shape between steps".into()));
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        for ((p, g), (m, v)) in params.into_iter().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.len() {
                p[i] -= lr * wd * p[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Mean-over-batch loss and gradients.
pub fn gradients<E: TextEncoder>(
    model: &Model<E>,
    batch: &[(&E::Features, &MeasurementExample)],
    weights: &LossWeights,
) -> Result<(f64, Gradients)> {
    let mut grads = model.zero_gradients();
    let loss = accumulate_batch(model, batch, weights, &mut grads)?;
    Ok((loss, grads))
}

fn accumulate_batch<E: TextEncoder>(
    model: &Model<E>,
    batch: &[(&E::Features, &MeasurementExample)],
    weights: &LossWeights,
    grads: &mut Gradients,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for (x, ex) in batch {
        loss += model.accumulate_gradients(x, ex, weights, scale, grads)?;
    }
    Ok(loss * scale)
}

fn clear(grads: &mut Gradients) {
    grads.encoder.iter_mut().for_each(|g| *g = 0.0);
    let heads = &mut grads.heads;
    for t in heads.tensors_mut() {
        t.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Tracks the best validation score and signals when patience runs out.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    patience: usize,
    higher_is_better: bool,
    best: Option<(usize, f64)>,
    since_best: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize, higher_is_better: bool) -> Self {
        EarlyStopper {
            patience,
            higher_is_better,
            best: None,
            since_best: 0,
        }
    }

    /// Records an epoch's score; returns whether it is a new best.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        let better = match self.best {
            None => true,
            Some((_, b)) => {
                if self.higher_is_better {
                    score > b
                } else {
                    score < b
                }
            }
        };
        if better {
            self.best = Some((epoch, score));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        better
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub selection_metric: SelectionMetric,
    pub steps: usize,
}

impl TrainOutcome {
    pub fn history_jsonl(&self) -> String {
        self.history
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain record") + "\n")
            .collect()
    }
}

/// Loss weights from training-set label counts.
pub fn loss_weights(examples: &[MeasurementExample], registry: &UnitRegistry, weighting: Weighting) -> Result<LossWeights> {
    if weighting == Weighting::Uniform {
        return Ok(LossWeights::default());
    }
    let mut dims = vec![0usize; registry.num_dimensions()];
    let mut units = vec![0usize; registry.num_units()];
    for e in examples {
        dims[e.dimension.0] += 1;
        units[e.unit.0] += 1;
    }
    Ok(LossWeights {
        dimension: Some(class_weights(&dims)?),
        unit: Some(class_weights(&units)?),
    })
}

/// Scores `model` on `examples` with `metric` (lower is better except macro-F1).
pub fn selection_score<E: TextEncoder>(
    model: &Model<E>,
    examples: &[MeasurementExample],
    metric: SelectionMetric,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Config("selection metric needs examples".into()));
    }
    let hs: Vec<Vec<f64>> = examples.iter().map(|e| model.encode(&e.text)).collect();
    match metric {
        SelectionMetric::JointNll => {
            let mut sum = 0.0;
            for (h, e) in hs.iter().zip(examples) {
                sum += model.joint_nll(h, e)?;
            }
            Ok(sum / examples.len() as f64)
        }
        SelectionMetric::MacroF1 => {
            let gold: Vec<DimId> = examples.iter().map(|e| e.dimension).collect();
            let mut pred = Vec::with_capacity(hs.len());
            for h in &hs {
                pred.push(model.predict(h)?.dimension.ok_or(Error::MissingHead {
                    variant: model.variant().name(),
                    head: "dimension",
                })?);
            }
            let mut classes: Vec<DimId> = gold.iter().chain(&pred).copied().collect();
            classes.sort();
            classes.dedup();
            macro_f1(&gold, &pred, &classes)
        }
        SelectionMetric::LogMae => {
            let gold: Vec<f64> = examples.iter().map(|e| e.canonical).collect();
            let mut pred = Vec::with_capacity(hs.len());
            for h in &hs {
                pred.push(model.predict(h)?.canonical.ok_or(Error::MissingHead {
                    variant: model.variant().name(),
                    head: "number",
                })?);
            }
            log_mae(&gold, &pred)
        }
    }
}

/// Trains `model` in place and leaves it holding the best-epoch parameters.
/// With an empty `val` the training loss drives early stopping.
pub fn train<E: TextEncoder>(
    model: &mut Model<E>,
    train_set: &[MeasurementExample],
    val: &[MeasurementExample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    config.validate(train_set.len())?;
    let metric = config
        .selection_metric
        .unwrap_or_else(|| SelectionMetric::for_variant(model.variant()));
    let weights = loss_weights(train_set, model.registry(), config.weighting)?;
    let features: Vec<E::Features> = train_set.iter().map(|e| model.encoder.features(&e.text)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = AdamW::from_config(config);
    let mut grads = model.zero_gradients();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let use_val = !val.is_empty();
    let mut stopper = EarlyStopper::new(
        config.patience,
        use_val && metric.higher_is_better(),
    );
    let mut best: Option<(Heads, Vec<f64>)> = None;
    let mut history = Vec::new();
    let mut step = 0usize;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(config.batch_size) {
            step += 1;
            clear(&mut grads);
            let batch: Vec<(&E::Features, &MeasurementExample)> =
                chunk.iter().map(|&i| (&features[i], &train_set[i])).collect();
            let loss = accumulate_batch(model, &batch, &weights, &mut grads)?;
            epoch_loss += loss * chunk.len() as f64;
            lr = lr_at(step, config);
            opt.step(model.trainable_tensors_mut(), grads.tensors(), lr)?;
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_metric = if use_val {
            selection_score(model, val, metric)?
        } else {
            train_loss
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_metric,
            lr,
        });
        if stopper.observe(epoch, val_metric) {
            let enc = if model.encoder.frozen() {
                Vec::new()
            } else {
                model.encoder.params().to_vec()
            };
            best = Some((model.heads.clone(), enc));
        }
        if stopper.should_stop() {
            break;
        }
    }

    let (best_epoch, best_metric) = stopper.best().expect("at least one epoch ran");
    if let Some((heads, enc)) = best {
        model.heads = heads;
        if !enc.is_empty() {
            model.encoder.params_mut().copy_from_slice(&enc);
        }
    }
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_metric,
        selection_metric: metric,
        steps: step,
    })
}
