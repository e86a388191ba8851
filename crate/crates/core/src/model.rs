//! Joint number/unit/dimension models over an encoder output `h`.
//!
//! Every variant is a subset of three linear heads on `h`:
//!
//! * a dimension head giving `p(D|S)` by softmax,
//! * a unit head giving `p(U|D,S)` by a softmax masked to the units of `D`,
//! * a number head giving Log-Laplace locations `μ` in `log10` space, one per
//!   dimension, one per unit, or a single one.
//!
//! The number loss is `|log10 ȳ − μ|` (scale fixed at 1). Cross-entropies and
//! the latent-dimension mixture are in nats.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::MeasurementExample;
use crate::encoder::TextEncoder;
use crate::error::{Error, Result};
use crate::units::{DimId, UnitId, UnitRegistry};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// `p(D|S) p(U|D,S) p(Ȳ|S)` with one number location per dimension.
    #[serde(rename = "gemm")]
    Gemm,
    /// `p(D|S) p(U|D,S) p(Ȳ|U,S)`.
    #[serde(rename = "gemm-uy")]
    GemmUy,
    DiscD,
    DiscDu,
    GenYd,
    DiscY,
    LatDim,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Gemm,
        Variant::GemmUy,
        Variant::DiscD,
        Variant::DiscDu,
        Variant::GenYd,
        Variant::DiscY,
        Variant::LatDim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Gemm => "gemm",
            Variant::GemmUy => "gemm-uy",
            Variant::DiscD => "disc-d",
            Variant::DiscDu => "disc-du",
            Variant::GenYd => "gen-yd",
            Variant::DiscY => "disc-y",
            Variant::LatDim => "lat-dim",
        }
    }

    pub fn has_dim_head(self) -> bool {
        !matches!(self, Variant::DiscY)
    }

    pub fn has_unit_head(self) -> bool {
        matches!(self, Variant::Gemm | Variant::GemmUy | Variant::DiscDu)
    }

    /// Width of the number head, if any.
    pub fn number_columns(self, registry: &UnitRegistry) -> Option<usize> {
        match self {
            Variant::Gemm | Variant::GenYd | Variant::LatDim => Some(registry.num_dimensions()),
            Variant::GemmUy => Some(registry.num_units()),
            Variant::DiscY => Some(1),
            Variant::DiscD | Variant::DiscDu => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {s:?}; expected one of {}",
                    Variant::ALL.map(Variant::name).join(", ")
                ))
            })
    }
}

/// How a GeMM model turns its per-dimension number locations into one number.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NumberReadout {
    /// Use the location of the most probable dimension.
    #[default]
    ArgmaxDimension,
    /// Use the median of the mixture `Σ_d p(d|S) Laplace(μ_d)`.
    Marginal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub hidden_dim: usize,
    #[serde(default)]
    pub number_readout: NumberReadout,
}

impl ModelSpec {
    pub fn new(variant: Variant, hidden_dim: usize) -> Self {
        ModelSpec {
            variant,
            hidden_dim,
            number_readout: NumberReadout::default(),
        }
    }
}

/// Dense layer `y = Wᵀh + b` with `W` of shape `M×K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    /// Weights uniform in `±1/√M`, zero bias.
    pub fn init(m: usize, k: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (m as f64).sqrt();
        Linear {
            weight: Array2::from_shape_simple_fn((m, k), || rng.random_range(-bound..bound)),
            bias: Array1::zeros(k),
        }
    }

    pub fn zeros(m: usize, k: usize) -> Self {
        Linear {
            weight: Array2::zeros((m, k)),
            bias: Array1::zeros(k),
        }
    }

    pub fn outputs(&self) -> usize {
        self.bias.len()
    }

    pub fn forward(&self, h: &[f64]) -> Vec<f64> {
        let mut out = self.bias.to_vec();
        for (hm, row) in h.iter().zip(self.weight.rows()) {
            if *hm == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(row.iter()) {
                *o += hm * w;
            }
        }
        out
    }

    /// Accumulates `scale·∂L/∂W`, `scale·∂L/∂b` into `grad` and `W·g` into `grad_h`.
    fn backward(&self, h: &[f64], g: &[f64], scale: f64, grad: &mut Linear, grad_h: &mut [f64]) {
        for (k, gk) in g.iter().enumerate() {
            if *gk == 0.0 {
                continue;
            }
            grad.bias[k] += scale * gk;
        }
        for (m, hm) in h.iter().enumerate() {
            let wrow = self.weight.row(m);
            let mut grow = grad.weight.row_mut(m);
            let mut acc = 0.0;
            for k in 0..g.len() {
                if g[k] == 0.0 {
                    continue;
                }
                grow[k] += scale * hm * g[k];
                acc += wrow[k] * g[k];
            }
            grad_h[m] += acc;
        }
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 2] {
        [
            self.weight.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }

    fn tensors(&self) -> [&[f64]; 2] {
        [
            self.weight.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ]
    }
}

/// The `W_D`, `W_U`, `W_Y` heads (with biases) present for a variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heads {
    pub dim: Option<Linear>,
    pub unit: Option<Linear>,
    pub number: Option<Linear>,
}

impl Heads {
    pub fn init(spec: &ModelSpec, registry: &UnitRegistry, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = spec.hidden_dim;
        let v = spec.variant;
        Heads {
            dim: v.has_dim_head().then(|| Linear::init(m, registry.num_dimensions(), &mut rng)),
            unit: v.has_unit_head().then(|| Linear::init(m, registry.num_units(), &mut rng)),
            number: v.number_columns(registry).map(|k| Linear::init(m, k, &mut rng)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |l: &Option<Linear>| l.as_ref().map(|l| Linear::zeros(l.weight.nrows(), l.outputs()));
        Heads {
            dim: z(&self.dim),
            unit: z(&self.unit),
            number: z(&self.number),
        }
    }

    /// Parameter tensors in a fixed order: dim W, b, unit W, b, number W, b.
    pub fn tensors(&self) -> Vec<&[f64]> {
        [&self.dim, &self.unit, &self.number]
            .into_iter()
            .flatten()
            .flat_map(|l| l.tensors())
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        [&mut self.dim, &mut self.unit, &mut self.number]
            .into_iter()
            .flatten()
            .flat_map(|l| l.tensors_mut())
            .collect()
    }

    fn validate(&self, spec: &ModelSpec, registry: &UnitRegistry) -> Result<()> {
        let v = spec.variant;
        let check = |name: &str, head: &Option<Linear>, want: Option<usize>| -> Result<()> {
            match (head, want) {
                (None, None) => Ok(()),
                (Some(l), Some(k)) if l.weight.dim() == (spec.hidden_dim, k) && l.bias.len() == k => Ok(()),
                _ => Err(Error::ShapeMismatch(format!("{name} head does not fit variant {v}"))),
            }
        };
        check("dimension", &self.dim, v.has_dim_head().then(|| registry.num_dimensions()))?;
        check("unit", &self.unit, v.has_unit_head().then(|| registry.num_units()))?;
        check("number", &self.number, v.number_columns(registry))
    }
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = logsumexp(logits);
    logits.iter().map(|l| (l - lse).exp()).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = logsumexp(logits);
    logits.iter().map(|l| l - lse).collect()
}

/// Softmax restricted to `support`; every other entry is exactly 0.
pub fn masked_softmax(logits: &[f64], support: &[usize]) -> Vec<f64> {
    let sub: Vec<f64> = support.iter().map(|&i| logits[i]).collect();
    let p = softmax(&sub);
    let mut out = vec![0.0; logits.len()];
    for (&i, pi) in support.iter().zip(p) {
        out[i] = pi;
    }
    out
}

/// Lowest index of the maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

fn checked_log10(ybar: f64) -> Result<f64> {
    if !(ybar > 0.0) || !ybar.is_finite() {
        return Err(Error::NonPositiveNumber(ybar));
    }
    Ok(ybar.log10())
}

/// `|log10 ȳ − μ|`, the parameter-dependent part of the Log-Laplace NLL.
pub fn laplace_residual(ybar: f64, mu: f64) -> Result<f64> {
    Ok((checked_log10(ybar)? - mu).abs())
}

/// Full negative log density (nats) of `ȳ` when `log10 ȳ ~ Laplace(μ, 1)`:
/// `|log10 ȳ − μ| + ln 2 + ln(ȳ ln 10)`.
pub fn laplace_full_nll(ybar: f64, mu: f64) -> Result<f64> {
    Ok(laplace_residual(ybar, mu)? + laplace_normalizer(ybar))
}

/// The `μ`-independent part of [`laplace_full_nll`], including the Jacobian.
pub fn laplace_normalizer(ybar: f64) -> f64 {
    std::f64::consts::LN_2 + (ybar * std::f64::consts::LN_10).ln()
}

fn laplace_cdf(z: f64, mu: f64) -> f64 {
    if z < mu {
        0.5 * (z - mu).exp()
    } else {
        1.0 - 0.5 * (mu - z).exp()
    }
}

/// Median of `Σ_i w_i Laplace(μ_i, 1)` by bisection; weights must sum to 1.
pub fn mixture_median(weights: &[f64], mus: &[f64]) -> f64 {
    let lo0 = mus.iter().copied().fold(f64::INFINITY, f64::min);
    let hi0 = mus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cdf = |z: f64| -> f64 { weights.iter().zip(mus).map(|(w, m)| w * laplace_cdf(z, *m)).sum() };
    let (mut lo, mut hi) = (lo0 - 40.0, hi0 + 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Which number-head column to read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NumberCondition {
    GoldDimension(DimId),
    GoldUnit(UnitId),
    /// The most probable dimension (and unit, for unit-conditioned heads).
    Argmax,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub dimension: Option<DimId>,
    /// Argmax class of an unsupervised dimension head.
    pub latent_class: Option<usize>,
    pub unit: Option<UnitId>,
    /// Predicted `ȳ` in the canonical unit.
    pub canonical: Option<f64>,
    /// Predicted `y` in `unit`.
    pub number: Option<f64>,
    pub dim_probs: Option<Vec<f64>>,
    pub unit_probs: Option<Vec<f64>>,
    pub number_locations: Option<Vec<f64>>,
}

/// Per-term losses of one example.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub dimension: f64,
    pub unit: f64,
    pub number: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.dimension + self.unit + self.number
    }
}

/// Optional per-class cross-entropy weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossWeights {
    pub dimension: Option<Vec<f64>>,
    pub unit: Option<Vec<f64>>,
}

/// Gradients with the same layout as the model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub heads: Heads,
    /// Empty for frozen encoders.
    pub encoder: Vec<f64>,
}

impl Gradients {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut t = Vec::new();
        if !self.encoder.is_empty() {
            t.push(self.encoder.as_slice());
        }
        t.extend(self.heads.tensors());
        t
    }
}

pub struct Model<E: TextEncoder> {
    pub spec: ModelSpec,
    pub encoder: E,
    pub heads: Heads,
    registry: Arc<UnitRegistry>,
}

impl<E: TextEncoder + fmt::Debug> fmt::Debug for Model<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("spec", &self.spec)
            .field("encoder", &self.encoder)
            .field("heads", &self.heads)
            .field("registry", &self.registry.fingerprint())
            .finish()
    }
}

impl<E: TextEncoder + Clone> Clone for Model<E> {
    fn clone(&self) -> Self {
        Model {
            spec: self.spec,
            encoder: self.encoder.clone(),
            heads: self.heads.clone(),
            registry: Arc::clone(&self.registry),
        }
    }
}

impl<E: TextEncoder> Model<E> {
    pub fn new(spec: ModelSpec, encoder: E, registry: Arc<UnitRegistry>, seed: u64) -> Result<Self> {
        let heads = Heads::init(&spec, &registry, seed);
        Self::from_parts(spec, encoder, heads, registry)
    }

    pub fn from_parts(spec: ModelSpec, encoder: E, heads: Heads, registry: Arc<UnitRegistry>) -> Result<Self> {
        if encoder.hidden_dim() != spec.hidden_dim {
            return Err(Error::ShapeMismatch(format!(
                "encoder width {} != model width {}",
                encoder.hidden_dim(),
                spec.hidden_dim
            )));
        }
        heads.validate(&spec, &registry)?;
        Ok(Model {
            spec,
            encoder,
            heads,
            registry,
        })
    }

    pub fn registry(&self) -> &UnitRegistry {
        &self.registry
    }

    pub fn registry_arc(&self) -> Arc<UnitRegistry> {
        Arc::clone(&self.registry)
    }

    pub fn variant(&self) -> Variant {
        self.spec.variant
    }

    pub fn encode(&self, text: &str) -> Vec<f64> {
        self.encoder.encode(text)
    }

    fn missing(&self, head: &'static str) -> Error {
        Error::MissingHead {
            variant: self.spec.variant.name(),
            head,
        }
    }

    fn dim_head(&self) -> Result<&Linear> {
        self.heads.dim.as_ref().ok_or_else(|| self.missing("dimension"))
    }

    fn unit_head(&self) -> Result<&Linear> {
        self.heads.unit.as_ref().ok_or_else(|| self.missing("unit"))
    }

    fn number_head(&self) -> Result<&Linear> {
        self.heads.number.as_ref().ok_or_else(|| self.missing("number"))
    }

    fn support(&self, d: DimId) -> Result<Vec<usize>> {
        Ok(self.registry.units_of(d)?.iter().map(|u| u.0).collect())
    }

    /// `softmax(W_Dᵀh + b_D)`.
    pub fn dim_distribution(&self, h: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.dim_head()?.forward(h)))
    }

    /// Distribution over all units with zero mass outside `units_of(d)`.
    pub fn unit_distribution(&self, h: &[f64], d: DimId) -> Result<Vec<f64>> {
        let support = self.support(d)?;
        Ok(masked_softmax(&self.unit_head()?.forward(h), &support))
    }

    /// Log-Laplace locations `μ` (log10 of canonical numbers).
    pub fn number_locations(&self, h: &[f64]) -> Result<Vec<f64>> {
        Ok(self.number_head()?.forward(h))
    }

    /// The number-head column trained against `example`.
    pub fn gold_number_column(&self, example: &MeasurementExample) -> Result<usize> {
        match self.spec.variant {
            Variant::Gemm | Variant::GenYd => Ok(example.dimension.0),
            Variant::GemmUy => Ok(example.unit.0),
            Variant::DiscY => Ok(0),
            Variant::LatDim | Variant::DiscD | Variant::DiscDu => Err(self.missing("conditioned number")),
        }
    }

    /// `|log10 ȳ* − μ_column|`.
    pub fn number_nll(&self, h: &[f64], ybar: f64, column: usize) -> Result<f64> {
        let mus = self.number_locations(h)?;
        let mu = *mus
            .get(column)
            .ok_or_else(|| Error::ShapeMismatch(format!("number column {column} out of range")))?;
        laplace_residual(ybar, mu)
    }

    /// Per-term losses for supervised variants.
    pub fn loss_terms(&self, h: &[f64], example: &MeasurementExample) -> Result<LossTerms> {
        let v = self.spec.variant;
        if v == Variant::LatDim {
            return Ok(LossTerms {
                number: self.latdim_mixture(h, example.canonical)?,
                ..LossTerms::default()
            });
        }
        let mut terms = LossTerms::default();
        if v.has_dim_head() {
            let lp = log_softmax(&self.dim_head()?.forward(h));
            terms.dimension = -lp[example.dimension.0];
        }
        if v.has_unit_head() {
            let logits = self.unit_head()?.forward(h);
            let support = self.support(example.dimension)?;
            let sub: Vec<f64> = support.iter().map(|&i| logits[i]).collect();
            let lse = logsumexp(&sub);
            terms.unit = lse - logits[example.unit.0];
        }
        if v.number_columns(&self.registry).is_some() {
            terms.number = self.number_nll(h, example.canonical, self.gold_number_column(example)?)?;
        }
        Ok(terms)
    }

    /// Sum of the variant's loss terms; for Lat-Dim the marginal NLL of `ȳ`
    /// without the parameter-free density normalizer.
    pub fn joint_nll(&self, h: &[f64], example: &MeasurementExample) -> Result<f64> {
        Ok(self.loss_terms(h, example)?.total())
    }

    /// `−ln Σ_d p(d|h) exp(−fullNLL_d(ȳ))`, via log-sum-exp.
    pub fn latdim_nll(&self, h: &[f64], ybar: f64) -> Result<f64> {
        Ok(self.latdim_mixture(h, ybar)? + laplace_normalizer(ybar))
    }

    /// `−ln Σ_d p(d|h) exp(−|log10 ȳ − μ_d|)`; the optimized Lat-Dim loss.
    fn latdim_mixture(&self, h: &[f64], ybar: f64) -> Result<f64> {
        if self.spec.variant != Variant::LatDim {
            return Err(self.missing("latent mixture"));
        }
        let z = checked_log10(ybar)?;
        let lp = log_softmax(&self.dim_head()?.forward(h));
        let mus = self.number_locations(h)?;
        let a: Vec<f64> = lp.iter().zip(&mus).map(|(l, mu)| l - (z - mu).abs()).collect();
        Ok(-logsumexp(&a))
    }

    /// `p(D | ȳ, S)` by Bayes' rule, normalized in log space.
    pub fn posterior_dim(&self, h: &[f64], ybar: f64) -> Result<Vec<f64>> {
        let z = checked_log10(ybar)?;
        let lp = log_softmax(&self.dim_head()?.forward(h));
        let mus = self.number_locations(h)?;
        let scores: Vec<f64> = match self.spec.variant {
            Variant::GenYd => lp.iter().zip(&mus).map(|(l, mu)| l - (z - mu).abs()).collect(),
            Variant::GemmUy => {
                let unit_logits = self.unit_head()?.forward(h);
                (0..lp.len())
                    .map(|d| -> Result<f64> {
                        let support = self.support(DimId(d))?;
                        let sub: Vec<f64> = support.iter().map(|&u| unit_logits[u]).collect();
                        let lse = logsumexp(&sub);
                        let per_unit: Vec<f64> = support
                            .iter()
                            .map(|&u| unit_logits[u] - lse - (z - mus[u]).abs())
                            .collect();
                        Ok(lp[d] + logsumexp(&per_unit))
                    })
                    .collect::<Result<_>>()?
            }
            _ => return Err(self.missing("dimension-conditioned number")),
        };
        Ok(softmax(&scores))
    }

    /// `10^μ` from the column chosen by `condition`.
    pub fn conditional_number(&self, h: &[f64], condition: NumberCondition) -> Result<f64> {
        let mus = self.number_locations(h)?;
        let column = match (self.spec.variant, condition) {
            (Variant::Gemm | Variant::GenYd, NumberCondition::GoldDimension(d)) => d.0,
            (Variant::GemmUy, NumberCondition::GoldUnit(u)) => u.0,
            (Variant::Gemm | Variant::GenYd, NumberCondition::Argmax) => argmax(&self.dim_distribution(h)?),
            (Variant::GemmUy, NumberCondition::Argmax) => {
                let d = DimId(argmax(&self.dim_distribution(h)?));
                argmax(&self.unit_distribution(h, d)?)
            }
            (Variant::GemmUy, NumberCondition::GoldDimension(_)) => return Err(self.missing("dimension-conditioned number")),
            (Variant::Gemm | Variant::GenYd, NumberCondition::GoldUnit(_)) => return Err(self.missing("unit-conditioned number")),
            _ => return Err(self.missing("conditioned number")),
        };
        let mu = *mus
            .get(column)
            .ok_or_else(|| Error::ShapeMismatch(format!("number column {column} out of range")))?;
        Ok(10f64.powf(mu))
    }

    /// Most probable dimension and unit, and the number they imply.
    pub fn predict(&self, h: &[f64]) -> Result<Prediction> {
        let v = self.spec.variant;
        let mut p = Prediction {
            dimension: None,
            latent_class: None,
            unit: None,
            canonical: None,
            number: None,
            dim_probs: None,
            unit_probs: None,
            number_locations: None,
        };
        if v.has_dim_head() {
            let probs = self.dim_distribution(h)?;
            let best = argmax(&probs);
            if v == Variant::LatDim {
                p.latent_class = Some(best);
            } else {
                p.dimension = Some(DimId(best));
            }
            p.dim_probs = Some(probs);
        }
        if let (true, Some(d)) = (v.has_unit_head(), p.dimension) {
            let probs = self.unit_distribution(h, d)?;
            p.unit = Some(UnitId(argmax(&probs)));
            p.unit_probs = Some(probs);
        }
        if v.number_columns(&self.registry).is_some() {
            let mus = self.number_locations(h)?;
            let mu = match v {
                Variant::Gemm if self.spec.number_readout == NumberReadout::Marginal => {
                    mixture_median(p.dim_probs.as_ref().unwrap(), &mus)
                }
                Variant::LatDim => mixture_median(p.dim_probs.as_ref().unwrap(), &mus),
                Variant::Gemm | Variant::GenYd => mus[p.dimension.unwrap().0],
                Variant::GemmUy => mus[p.unit.unwrap().0],
                _ => mus[0],
            };
            let canonical = 10f64.powf(mu);
            p.canonical = Some(canonical);
            if let (Some(d), Some(u)) = (p.dimension, p.unit) {
                p.number = Some(self.registry.convert(canonical, self.registry.canonical_unit(d), u)?);
            }
            p.number_locations = Some(mus);
        }
        Ok(p)
    }

    pub fn predict_text(&self, text: &str) -> Result<Prediction> {
        self.predict(&self.encode(text))
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            heads: self.heads.zeros_like(),
            encoder: if self.encoder.frozen() {
                Vec::new()
            } else {
                vec![0.0; self.encoder.params().len()]
            },
        }
    }

    /// Adds `scale·∇` of the (weighted) example loss to `grads` and returns
    /// the weighted loss. The L1 subgradient at the kink is 0.
    pub fn accumulate_gradients(
        &self,
        x: &E::Features,
        example: &MeasurementExample,
        weights: &LossWeights,
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<f64> {
        let h = self.encoder.forward(x);
        let mut grad_h = vec![0.0; h.len()];
        let v = self.spec.variant;
        let z = checked_log10(example.canonical)?;
        let mut loss = 0.0;

        if v == Variant::LatDim {
            let dim_head = self.dim_head()?;
            let num_head = self.number_head()?;
            let logits = dim_head.forward(&h);
            let mus = num_head.forward(&h);
            let lp = log_softmax(&logits);
            let a: Vec<f64> = lp.iter().zip(&mus).map(|(l, mu)| l - (z - mu).abs()).collect();
            loss = -logsumexp(&a);
            let resp = softmax(&a);
            let p = softmax(&logits);
            let g_logits: Vec<f64> = p.iter().zip(&resp).map(|(p, r)| p - r).collect();
            let g_mu: Vec<f64> = resp.iter().zip(&mus).map(|(r, mu)| -r * sign(z - mu)).collect();
            dim_head.backward(&h, &g_logits, scale, grads.heads.dim.as_mut().unwrap(), &mut grad_h);
            num_head.backward(&h, &g_mu, scale, grads.heads.number.as_mut().unwrap(), &mut grad_h);
        } else {
            if let Some(head) = &self.heads.dim {
                let logits = head.forward(&h);
                let p = softmax(&logits);
                let d = example.dimension.0;
                let w = weights.dimension.as_ref().map_or(1.0, |w| w[d]);
                loss -= w * p[d].ln();
                let mut g: Vec<f64> = p.iter().map(|pi| w * pi).collect();
                g[d] -= w;
                head.backward(&h, &g, scale, grads.heads.dim.as_mut().unwrap(), &mut grad_h);
            }
            if let Some(head) = &self.heads.unit {
                let logits = head.forward(&h);
                let support = self.support(example.dimension)?;
                let p = masked_softmax(&logits, &support);
                let u = example.unit.0;
                let w = weights.unit.as_ref().map_or(1.0, |w| w[u]);
                loss -= w * p[u].ln();
                let mut g: Vec<f64> = p.iter().map(|pi| w * pi).collect();
                g[u] -= w;
                head.backward(&h, &g, scale, grads.heads.unit.as_mut().unwrap(), &mut grad_h);
            }
            if let Some(head) = &self.heads.number {
                let mus = head.forward(&h);
                let col = self.gold_number_column(example)?;
                loss += (z - mus[col]).abs();
                let mut g = vec![0.0; mus.len()];
                g[col] = -sign(z - mus[col]);
                head.backward(&h, &g, scale, grads.heads.number.as_mut().unwrap(), &mut grad_h);
            }
        }

        if !self.encoder.frozen() {
            grad_h.iter_mut().for_each(|g| *g *= scale);
            self.encoder.backward(x, &grad_h, &mut grads.encoder);
        }
        Ok(loss)
    }

    /// Trainable parameter tensors in the same order as [`Gradients::tensors`].
    pub fn trainable_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = Vec::new();
        if !self.encoder.frozen() {
            t.push(self.encoder.params_mut());
        }
        t.extend(self.heads.tensors_mut());
        t
    }

    pub fn trainable_tensors(&self) -> Vec<&[f64]> {
        let mut t = Vec::new();
        if !self.encoder.frozen() {
            t.push(self.encoder.params());
        }
        t.extend(self.heads.tensors());
        t
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ingest_record, RawRecord};
    use crate::encoder::{EncoderConfig, HashedEncoder};

    fn registry() -> Arc<UnitRegistry> {
        Arc::new(UnitRegistry::builtin())
    }

    fn model(variant: Variant) -> Model<HashedEncoder> {
        let enc = HashedEncoder::new(
            EncoderConfig {
                feature_dim: 256,
                hidden_dim: 6,
                ..EncoderConfig::default()
            },
            3,
        )
        .unwrap();
        Model::new(ModelSpec::new(variant, 6), enc, registry(), 5).unwrap()
    }

    fn example(reg: &UnitRegistry, number: f64, unit: &str) -> MeasurementExample {
        ingest_record(&RawRecord::new("a [#NUM] [#UNIT] thing", number, unit), reg).unwrap()
    }

    fn random_h(seed: u64, m: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.name()));
        }
        assert!("gemm-xx".parse::<Variant>().is_err());
    }

    #[test]
    fn head_shapes_follow_variant() {
        let reg = registry();
        let (nd, nu) = (reg.num_dimensions(), reg.num_units());
        let cols = |v| model(v).heads.number.map(|l| l.outputs());
        assert_eq!(cols(Variant::Gemm), Some(nd));
        assert_eq!(cols(Variant::GenYd), Some(nd));
        assert_eq!(cols(Variant::LatDim), Some(nd));
        assert_eq!(cols(Variant::GemmUy), Some(nu));
        assert_eq!(cols(Variant::DiscY), Some(1));
        assert_eq!(cols(Variant::DiscD), None);
        assert_eq!(cols(Variant::DiscDu), None);
        assert!(model(Variant::DiscY).heads.dim.is_none());
        assert!(model(Variant::GenYd).heads.unit.is_none());
        let m = model(Variant::Gemm);
        assert!(m.heads.dim.as_ref().unwrap().bias.iter().all(|b| *b == 0.0));
        let bound = 1.0 / 6f64.sqrt();
        assert!(m.heads.unit.as_ref().unwrap().weight.iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn dim_distribution_properties() {
        let mut m = model(Variant::DiscD);
        let nd = m.registry().num_dimensions();
        let p = m.dim_distribution(&[0.0; 6]).unwrap();
        assert!(p.iter().all(|x| (x - 1.0 / nd as f64).abs() < 1e-15));

        let h = random_h(1, 6);
        let p1 = m.dim_distribution(&h).unwrap();
        assert!((p1.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p1.iter().all(|x| *x > 0.0));

        // by-hand exp/normalize
        let head = m.heads.dim.as_ref().unwrap();
        let logits: Vec<f64> = (0..nd)
            .map(|k| (0..6).map(|i| h[i] * head.weight[[i, k]]).sum::<f64>() + head.bias[k])
            .collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for (a, l) in p1.iter().zip(&logits) {
            assert!((a - l.exp() / z).abs() < 1e-14);
        }

        m.heads.dim.as_mut().unwrap().bias.mapv_inplace(|b| b + 7.5);
        let p2 = m.dim_distribution(&h).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn unit_distribution_is_masked() {
        let m = model(Variant::Gemm);
        let reg = m.registry();
        let vel = reg.dimension_id("velocity").unwrap();
        let p = m.unit_distribution(&random_h(2, 6), vel).unwrap();
        let support: Vec<usize> = reg.units_of(vel).unwrap().iter().map(|u| u.0).collect();
        for (i, pi) in p.iter().enumerate() {
            if support.contains(&i) {
                assert!(*pi > 0.0);
            } else {
                assert_eq!(*pi, 0.0);
            }
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let charge = reg.dimension_id("charge").unwrap();
        let p = m.unit_distribution(&random_h(3, 6), charge).unwrap();
        assert_eq!(p[reg.unit_id("C").unwrap().0], 1.0);
        assert!(matches!(m.unit_distribution(&[0.0; 6], DimId(99)), Err(Error::UnknownDimension(_))));
    }

    #[test]
    fn number_nll_examples() {
        let mut m = model(Variant::DiscY);
        let head = m.heads.number.as_mut().unwrap();
        head.weight.fill(0.0);
        head.bias[0] = 2.0;
        let h = [0.0; 6];
        assert_eq!(m.number_nll(&h, 1000.0, 0).unwrap(), 1.0);
        assert_eq!(m.number_nll(&h, 100.0, 0).unwrap(), 0.0);
        assert!(matches!(m.number_nll(&h, -1.0, 0), Err(Error::NonPositiveNumber(_))));
        assert!(matches!(m.number_nll(&h, 0.0, 0), Err(Error::NonPositiveNumber(_))));
    }

    #[test]
    fn number_nll_derivative_in_mu() {
        // ∂/∂μ |z − μ| = −sign(z − μ), by central differences
        let z = 2.7f64;
        for mu in [0.3, 1.9, 4.4] {
            let f = |mu: f64| laplace_residual(10f64.powf(z), mu).unwrap();
            let fd = (f(mu + 1e-5) - f(mu - 1e-5)) / 2e-5;
            assert!((fd + (z - mu).signum()).abs() < 1e-6);
        }
    }

    #[test]
    fn joint_nll_is_sum_of_terms() {
        let m = model(Variant::Gemm);
        let reg = m.registry().clone();
        let ex = example(&reg, 3.5, "km");
        let h = random_h(4, 6);
        let t = m.loss_terms(&h, &ex).unwrap();
        // independent per-head computations
        let dim = -m.dim_distribution(&h).unwrap()[ex.dimension.0].ln();
        let unit = -m.unit_distribution(&h, ex.dimension).unwrap()[ex.unit.0].ln();
        let mu = m.number_locations(&h).unwrap()[ex.dimension.0];
        let num = (ex.canonical.log10() - mu).abs();
        assert!((t.dimension - dim).abs() < 1e-12);
        assert!((t.unit - unit).abs() < 1e-12);
        assert!((t.number - num).abs() < 1e-12);
        assert!((m.joint_nll(&h, &ex).unwrap() - (dim + unit + num)).abs() < 1e-12);

        let uy = model(Variant::GemmUy);
        let mu = uy.number_locations(&h).unwrap()[ex.unit.0];
        assert!((uy.loss_terms(&h, &ex).unwrap().number - (ex.canonical.log10() - mu).abs()).abs() < 1e-12);

        let dd = model(Variant::DiscD);
        let t = dd.loss_terms(&h, &ex).unwrap();
        assert_eq!((t.unit, t.number), (0.0, 0.0));
    }

    #[test]
    fn disc_d_loss_vanishes_on_confident_prediction() {
        let mut m = model(Variant::DiscD);
        let reg = m.registry().clone();
        let ex = example(&reg, 1.0, "kg");
        let head = m.heads.dim.as_mut().unwrap();
        head.bias[ex.dimension.0] = 60.0;
        assert!(m.joint_nll(&[0.0; 6], &ex).unwrap() < 1e-20);
    }

    #[test]
    fn latdim_single_component_and_equal_components() {
        let reg1 = Arc::new(
            UnitRegistry::parse("dim length L1 M0 T0 I0 Θ0 N0 J0\nunit m length scale=1 offset=0").unwrap(),
        );
        let enc = HashedEncoder::new(EncoderConfig { feature_dim: 16, hidden_dim: 4, ..EncoderConfig::default() }, 0).unwrap();
        let m = Model::new(ModelSpec::new(Variant::LatDim, 4), enc, reg1, 1).unwrap();
        let h = random_h(5, 4);
        let mu = m.number_locations(&h).unwrap()[0];
        let ybar = 345.0;
        assert!((m.latdim_nll(&h, ybar).unwrap() - laplace_full_nll(ybar, mu).unwrap()).abs() < 1e-12);

        let mut m = model(Variant::LatDim);
        let head = m.heads.number.as_mut().unwrap();
        head.weight.fill(0.0);
        head.bias.fill(1.5);
        let h = random_h(6, 6);
        let full = laplace_full_nll(ybar, 1.5).unwrap();
        assert!((m.latdim_nll(&h, ybar).unwrap() - full).abs() < 1e-12);
    }

    #[test]
    fn latdim_matches_naive_sum() {
        let reg2 = Arc::new(
            UnitRegistry::parse(
                "dim length L1 M0 T0 I0 Θ0 N0 J0\ndim mass L0 M1 T0 I0 Θ0 N0 J0\n\
                 unit m length scale=1 offset=0\nunit kg mass scale=1 offset=0",
            )
            .unwrap(),
        );
        let enc = HashedEncoder::new(EncoderConfig { feature_dim: 16, hidden_dim: 4, ..EncoderConfig::default() }, 0).unwrap();
        let m = Model::new(ModelSpec::new(Variant::LatDim, 4), enc, reg2, 9).unwrap();
        for seed in 0..5 {
            let h = random_h(seed, 4);
            let ybar = 10f64.powf(0.3 + seed as f64 * 0.4);
            let p = m.dim_distribution(&h).unwrap();
            let mus = m.number_locations(&h).unwrap();
            // density of ȳ under each component, summed directly
            let dens: f64 = (0..2)
                .map(|d| {
                    let z = ybar.log10();
                    p[d] * 0.5 * (-(z - mus[d]).abs()).exp() / (ybar * std::f64::consts::LN_10)
                })
                .sum();
            assert!((m.latdim_nll(&h, ybar).unwrap() + dens.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_follows_conversion() {
        // μ = 3.00 with feet chosen → 1000 m = 3280.84 ft
        let mut m = model(Variant::Gemm);
        let reg = m.registry().clone();
        let length = reg.dimension_id("length").unwrap();
        let ft = reg.unit_id("ft").unwrap();
        let h = [0.0; 6];
        m.heads.dim.as_mut().unwrap().bias[length.0] = 5.0;
        m.heads.unit.as_mut().unwrap().bias[ft.0] = 5.0;
        m.heads.number.as_mut().unwrap().bias[length.0] = 3.0;
        let p = m.predict(&h).unwrap();
        assert_eq!(p.dimension, Some(length));
        assert_eq!(p.unit, Some(ft));
        assert!((p.canonical.unwrap() - 1000.0).abs() < 1e-9);
        assert!((p.number.unwrap() - 3280.84).abs() < 0.001);
    }

    #[test]
    fn predict_ties_break_low_and_units_match_dimension() {
        let mut m = model(Variant::Gemm);
        for head in [&mut m.heads.dim, &mut m.heads.unit, &mut m.heads.number] {
            head.as_mut().unwrap().weight.fill(0.0);
        }
        let p = m.predict(&[0.0; 6]).unwrap();
        assert_eq!(p.dimension, Some(DimId(0)));
        assert_eq!(p.unit, Some(m.registry().units_of(DimId(0)).unwrap()[0]));

        let m = model(Variant::GemmUy);
        for seed in 0..50 {
            let h = random_h(seed, 6);
            let p = m.predict(&h).unwrap();
            assert_eq!(m.registry().unit(p.unit.unwrap()).dimension, p.dimension.unwrap());
            assert_eq!(p, m.predict(&h).unwrap());
        }
    }

    #[test]
    fn single_dimension_single_unit_forces_prediction() {
        let reg1 = Arc::new(
            UnitRegistry::parse("dim length L1 M0 T0 I0 Θ0 N0 J0\nunit m length scale=1 offset=0").unwrap(),
        );
        let enc = HashedEncoder::new(EncoderConfig { feature_dim: 16, hidden_dim: 4, ..EncoderConfig::default() }, 0).unwrap();
        let m = Model::new(ModelSpec::new(Variant::Gemm, 4), enc, reg1, 1).unwrap();
        let p = m.predict(&random_h(1, 4)).unwrap();
        assert_eq!((p.dimension, p.unit), (Some(DimId(0)), Some(UnitId(0))));
        assert_eq!(p.dim_probs.unwrap(), vec![1.0]);
    }

    #[test]
    fn posterior_dim_bayes() {
        let mut m = model(Variant::GenYd);
        let nd = m.registry().num_dimensions();
        let h = [0.0; 6];
        m.heads.number.as_mut().unwrap().weight.fill(0.0);
        // uniform prior; dimension 3 predicts ȳ≈10^4, others 10^0
        m.heads.number.as_mut().unwrap().bias.fill(0.0);
        m.heads.number.as_mut().unwrap().bias[3] = 4.0;
        let post = m.posterior_dim(&h, 1e4).unwrap();
        assert_eq!(argmax(&post), 3);

        // equal densities → posterior equals prior
        m.heads.number.as_mut().unwrap().bias.fill(2.0);
        let hr = random_h(7, 6);
        m.heads.number.as_mut().unwrap().weight.fill(0.0);
        let prior = m.dim_distribution(&hr).unwrap();
        let post = m.posterior_dim(&hr, 55.0).unwrap();
        for (a, b) in prior.iter().zip(&post) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(post.len(), nd);

        assert!(matches!(model(Variant::Gemm).posterior_dim(&h, 1.0), Err(Error::MissingHead { .. })));
        assert!(matches!(model(Variant::GenYd).posterior_dim(&h, -1.0), Err(Error::NonPositiveNumber(_))));
    }

    #[test]
    fn posterior_dim_gemm_uy_matches_brute_force() {
        let m = model(Variant::GemmUy);
        let reg = m.registry().clone();
        let h = random_h(11, 6);
        let ybar: f64 = 3.3e3;
        let z = ybar.log10();
        let prior = m.dim_distribution(&h).unwrap();
        let mus = m.number_locations(&h).unwrap();
        let mut joint: Vec<f64> = (0..reg.num_dimensions())
            .map(|d| {
                let pu = m.unit_distribution(&h, DimId(d)).unwrap();
                let lik: f64 = reg
                    .units_of(DimId(d))
                    .unwrap()
                    .iter()
                    .map(|u| pu[u.0] * 0.5 * (-(z - mus[u.0]).abs()).exp())
                    .sum();
                prior[d] * lik
            })
            .collect();
        let s: f64 = joint.iter().sum();
        joint.iter_mut().for_each(|x| *x /= s);
        let post = m.posterior_dim(&h, ybar).unwrap();
        for (a, b) in joint.iter().zip(&post) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conditional_number_modes() {
        let mut m = model(Variant::GenYd);
        let h = [0.0; 6];
        let head = m.heads.number.as_mut().unwrap();
        head.weight.fill(0.0);
        head.bias[0] = 2.0;
        head.bias[1] = 5.0;
        let c = m.conditional_number(&h, NumberCondition::GoldDimension(DimId(1))).unwrap();
        assert!((c - 1e5).abs() < 1e-6);
        m.heads.dim.as_mut().unwrap().bias[1] = 3.0;
        let argmax_mode = m.conditional_number(&h, NumberCondition::Argmax).unwrap();
        assert_eq!(argmax_mode, c);
        assert_eq!(m.predict(&h).unwrap().canonical.unwrap(), argmax_mode);

        let uy = model(Variant::GemmUy);
        let hr = random_h(3, 6);
        assert_eq!(
            uy.conditional_number(&hr, NumberCondition::Argmax).unwrap(),
            uy.predict(&hr).unwrap().canonical.unwrap()
        );
        assert!(matches!(
            model(Variant::DiscY).conditional_number(&h, NumberCondition::Argmax),
            Err(Error::MissingHead { .. })
        ));
    }

    #[test]
    fn mixture_median_cases() {
        assert!((mixture_median(&[1.0], &[2.5]) - 2.5).abs() < 1e-9);
        assert!((mixture_median(&[0.5, 0.5], &[1.0, 3.0]) - 2.0).abs() < 1e-9);
        let med = mixture_median(&[0.9, 0.1], &[1.0, 10.0]);
        assert!(med > 1.0 && med < 1.3);
    }

    #[test]
    fn marginal_readout_differs_from_argmax() {
        let mut m = model(Variant::Gemm);
        m.spec.number_readout = NumberReadout::Marginal;
        let h = random_h(2, 6);
        let p = m.predict(&h).unwrap();
        let med = mixture_median(p.dim_probs.as_ref().unwrap(), p.number_locations.as_ref().unwrap());
        assert!((p.canonical.unwrap() - 10f64.powf(med)).abs() < 1e-9 * p.canonical.unwrap());
    }
}
