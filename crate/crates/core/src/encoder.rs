//! Text encoders mapping a masked sentence to the hidden vector `h`.
//!
//! [`TextEncoder`] is the seam for alternative encoders. The reference
//! [`HashedEncoder`] hashes word and character n-grams into `E` buckets,
//! L2-normalizes the counts and projects them with a trainable `E×M` matrix.

use std::io::Write;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{exponent_bin, tokenize, MeasurementExample};
use crate::error::{Error, Result};
use crate::units::UnitRegistry;

/// Encoder with parameters exposed as one flat slice for optimizers.
pub trait TextEncoder {
    /// Cached, parameter-independent representation of a text.
    type Features: Clone + Send + Sync;

    fn hidden_dim(&self) -> usize;
    fn features(&self, text: &str) -> Self::Features;
    fn forward(&self, x: &Self::Features) -> Vec<f64>;
    /// Accumulates `∂L/∂θ` into `grad` (laid out like [`Self::params`]) given `∂L/∂h`.
    fn backward(&self, x: &Self::Features, grad_h: &[f64], grad: &mut [f64]);
    /// Frozen encoders are never updated by training.
    fn frozen(&self) -> bool;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    fn encode(&self, text: &str) -> Vec<f64> {
        self.forward(&self.features(text))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Number of hash buckets `E`.
    pub feature_dim: usize,
    /// Width `M` of `h`.
    pub hidden_dim: usize,
    pub word_ngrams: Vec<usize>,
    pub char_ngrams: Vec<usize>,
    pub hash_seed: u64,
    pub frozen: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            feature_dim: 1 << 14,
            hidden_dim: 128,
            word_ngrams: vec![1, 2],
            char_ngrams: vec![3, 4],
            hash_seed: 0,
            frozen: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("feature_dim and hidden_dim must be >= 1".into()));
        }
        if self.feature_dim > u32::MAX as usize {
            return Err(Error::Config("feature_dim too large".into()));
        }
        if self.word_ngrams.iter().chain(&self.char_ngrams).any(|n| *n == 0) {
            return Err(Error::Config("n-gram orders must be >= 1".into()));
        }
        Ok(())
    }
}

/// Sparse vector with strictly increasing indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseVector {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, c: f64) -> SparseVector {
        SparseVector {
            indices: self.indices.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for (i, v) in self.indices.iter().zip(&self.values) {
            out[*i as usize] = *v;
        }
        out
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn fnv1a(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h = FNV_OFFSET ^ seed.wrapping_mul(GOLDEN);
    for part in parts {
        for b in *part {
            h ^= *b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
        h ^= 0xff;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Hashed n-gram featurizer followed by a linear projection `h = W_Sᵀ x`.
#[derive(Clone, Debug)]
pub struct HashedEncoder {
    config: EncoderConfig,
    /// `E×M`, row-major.
    projection: Array2<f64>,
}

impl HashedEncoder {
    /// `W_S` is drawn uniformly from `±1/√E`.
    pub fn new(config: EncoderConfig, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let (e, m) = (config.feature_dim, config.hidden_dim);
        let bound = 1.0 / (e as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let projection = Array2::from_shape_simple_fn((e, m), || rng.random_range(-bound..bound));
        Ok(HashedEncoder { config, projection })
    }

    pub fn from_parts(config: EncoderConfig, projection: Array2<f64>) -> Result<Self> {
        config.validate()?;
        if projection.dim() != (config.feature_dim, config.hidden_dim) {
            return Err(Error::ShapeMismatch(format!(
                "projection is {:?}, config wants ({}, {})",
                projection.dim(),
                config.feature_dim,
                config.hidden_dim
            )));
        }
        if !projection.is_standard_layout() {
            return Ok(HashedEncoder {
                config,
                projection: projection.as_standard_layout().into_owned(),
            });
        }
        Ok(HashedEncoder { config, projection })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn projection(&self) -> &Array2<f64> {
        &self.projection
    }

    fn bucket(&self, hash: u64) -> u32 {
        ((hash.wrapping_mul(GOLDEN) >> 16) % self.config.feature_dim as u64) as u32
    }

    /// Bucket of a word n-gram.
    pub fn word_gram_bucket(&self, words: &[&str]) -> u32 {
        let tag = [b'w', words.len() as u8];
        let mut parts: Vec<&[u8]> = vec![&tag];
        parts.extend(words.iter().map(|t| t.as_bytes()));
        self.bucket(fnv1a(self.config.hash_seed, &parts))
    }

    /// Bucket of a character n-gram (taken from a `<token>`-padded word).
    pub fn char_gram_bucket(&self, gram: &str) -> u32 {
        let tag = [b'c', gram.chars().count() as u8];
        self.bucket(fnv1a(self.config.hash_seed, &[&tag, gram.as_bytes()]))
    }

    /// The hashed n-gram buckets of `text`, one entry per n-gram occurrence.
    pub fn ngram_buckets(&self, text: &str) -> Vec<u32> {
        let lower = text.to_lowercase();
        let tokens = tokenize(&lower);
        let mut buckets = Vec::new();
        for &n in &self.config.word_ngrams {
            for window in tokens.windows(n) {
                buckets.push(self.word_gram_bucket(window));
            }
        }
        for token in &tokens {
            let padded: Vec<char> = std::iter::once('<')
                .chain(token.chars())
                .chain(std::iter::once('>'))
                .collect();
            for &n in &self.config.char_ngrams {
                for window in padded.windows(n) {
                    let gram: String = window.iter().collect();
                    buckets.push(self.char_gram_bucket(&gram));
                }
            }
        }
        buckets
    }

    /// L2-normalized n-gram counts.
    pub fn featurize(&self, text: &str) -> SparseVector {
        let mut buckets = self.ngram_buckets(text);
        buckets.sort_unstable();
        let mut out = SparseVector::default();
        for b in buckets {
            if out.indices.last() == Some(&b) {
                *out.values.last_mut().unwrap() += 1.0;
            } else {
                out.indices.push(b);
                out.values.push(1.0);
            }
        }
        let norm = out.norm();
        if norm > 0.0 {
            out.values.iter_mut().for_each(|v| *v /= norm);
        }
        out
    }

    /// `W_Sᵀ x` for an arbitrary sparse feature vector.
    pub fn project(&self, x: &SparseVector) -> Vec<f64> {
        let m = self.config.hidden_dim;
        let w = self.projection.as_slice().expect("standard layout");
        let mut h = vec![0.0; m];
        for (i, v) in x.indices.iter().zip(&x.values) {
            let row = &w[*i as usize * m..(*i as usize + 1) * m];
            for (hk, wk) in h.iter_mut().zip(row) {
                *hk += v * wk;
            }
        }
        h
    }
}

impl TextEncoder for HashedEncoder {
    type Features = SparseVector;

    fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    fn features(&self, text: &str) -> SparseVector {
        self.featurize(text)
    }

    fn forward(&self, x: &SparseVector) -> Vec<f64> {
        self.project(x)
    }

    fn backward(&self, x: &SparseVector, grad_h: &[f64], grad: &mut [f64]) {
        let m = self.config.hidden_dim;
        for (i, v) in x.indices.iter().zip(&x.values) {
            let row = &mut grad[*i as usize * m..(*i as usize + 1) * m];
            for (g, gh) in row.iter_mut().zip(grad_h) {
                *g += v * gh;
            }
        }
    }

    fn frozen(&self) -> bool {
        self.config.frozen
    }

    fn params(&self) -> &[f64] {
        self.projection.as_slice().expect("standard layout")
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.projection.as_slice_mut().expect("standard layout")
    }
}

/// Writes one TSV row per example: `h` followed by dimension, unit and
/// exponent-bin labels.
pub fn export_embeddings<E: TextEncoder, W: Write>(
    encoder: &E,
    examples: &[MeasurementExample],
    registry: &UnitRegistry,
    mut out: W,
) -> std::io::Result<()> {
    let m = encoder.hidden_dim();
    let header: Vec<String> = (0..m)
        .map(|i| format!("h_{i}"))
        .chain(["dimension".into(), "unit".into(), "exponent_bin".into()])
        .collect();
    writeln!(out, "{}", header.join("\t"))?;
    for ex in examples {
        let h = encoder.encode(&ex.text);
        let mut row: Vec<String> = h.iter().map(|v| v.to_string()).collect();
        row.push(registry.dimension(ex.dimension).name.clone());
        row.push(registry.unit(ex.unit).name.clone());
        row.push(exponent_bin(ex.canonical).to_string());
        writeln!(out, "{}", row.join("\t"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn small(frozen: bool) -> HashedEncoder {
        HashedEncoder::new(
            EncoderConfig {
                feature_dim: 1 << 12,
                hidden_dim: 8,
                frozen,
                ..EncoderConfig::default()
            },
            7,
        )
        .unwrap()
    }

    #[test]
    fn featurize_is_deterministic_and_normalized() {
        let enc = small(false);
        let a = enc.featurize("The river is [#NUM] [#UNIT] long.");
        assert_eq!(a, enc.featurize("The river is [#NUM] [#UNIT] long."));
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert!(a.indices.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(enc.featurize("").nnz(), 0);
    }

    #[test]
    fn one_word_change_touches_only_its_ngrams() {
        let enc = small(false);
        let counts = |s: &str| {
            let mut m = std::collections::BTreeMap::new();
            for b in enc.ngram_buckets(s) {
                *m.entry(b).or_insert(0) += 1;
            }
            m
        };
        // n-grams containing the swapped word, enumerated by hand
        let touched: BTreeSet<u32> = [
            enc.word_gram_bucket(&["cat"]),
            enc.word_gram_bucket(&["a", "cat"]),
            enc.word_gram_bucket(&["cat", "sat"]),
            enc.word_gram_bucket(&["dog"]),
            enc.word_gram_bucket(&["a", "dog"]),
            enc.word_gram_bucket(&["dog", "sat"]),
        ]
        .into_iter()
        .chain(
            ["<ca", "cat", "at>", "<cat", "cat>", "<do", "dog", "og>", "<dog", "dog>"]
                .iter()
                .map(|g| enc.char_gram_bucket(g)),
        )
        .collect();
        let a = counts("a cat sat");
        let b = counts("a dog sat");
        let keys: BTreeSet<u32> = a.keys().chain(b.keys()).copied().collect();
        for k in keys {
            if !touched.contains(&k) {
                assert_eq!(a.get(&k), b.get(&k), "bucket {k}");
            }
        }
        assert_ne!(a, b);
        // 3 unigrams + 2 bigrams + char 3/4-grams of <a>, <cat>, <sat>
        assert_eq!(enc.ngram_buckets("a cat sat").len(), 3 + 2 + 1 + (3 + 2) + (3 + 2));
    }

    #[test]
    fn encode_linearity_and_zero() {
        let enc = small(false);
        assert!(enc.project(&SparseVector::default()).iter().all(|v| *v == 0.0));
        let x = enc.featurize("a lake of [#NUM] [#UNIT]");
        let h = enc.project(&x);
        let h3 = enc.project(&x.scaled(3.0));
        for (a, b) in h.iter().zip(&h3) {
            assert!((3.0 * a - b).abs() < 1e-12);
        }
        assert_eq!(h, enc.encode("a lake of [#NUM] [#UNIT]"));
    }

    #[test]
    fn identity_projection_returns_features() {
        let config = EncoderConfig {
            feature_dim: 64,
            hidden_dim: 64,
            ..EncoderConfig::default()
        };
        let enc = HashedEncoder::from_parts(config, Array2::eye(64)).unwrap();
        let x = enc.featurize("some text here");
        assert_eq!(enc.encode("some text here"), x.to_dense(64));
    }

    #[test]
    fn projection_gradient_matches_finite_differences() {
        // L(W) = Σ_k c_k h_k(W), a linear scalar loss of h
        let mut enc = HashedEncoder::new(
            EncoderConfig { feature_dim: 32, hidden_dim: 3, ..EncoderConfig::default() },
            1,
        )
        .unwrap();
        let x = enc.featurize("two words");
        let c = [0.3, -1.2, 2.0];
        let loss = |e: &HashedEncoder| -> f64 { e.project(&x).iter().zip(&c).map(|(h, c)| h * c).sum() };
        let mut grad = vec![0.0; 32 * 3];
        enc.backward(&x, &c, &mut grad);
        let step = 1e-5;
        for i in 0..grad.len() {
            let orig = enc.params()[i];
            enc.params_mut()[i] = orig + step;
            let up = loss(&enc);
            enc.params_mut()[i] = orig - step;
            let down = loss(&enc);
            enc.params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * step);
            assert!((fd - grad[i]).abs() < 1e-8, "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let a = small(true);
        let b = small(true);
        assert_eq!(a.params(), b.params());
        let bound = 1.0 / ((1 << 12) as f64).sqrt();
        assert!(a.params().iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn export_shape_and_labels() {
        let reg = UnitRegistry::builtin();
        let enc = small(false);
        let report = crate::dataset::ingest(
            &[
                crate::dataset::RawRecord::new("a [#NUM] [#UNIT] road", 2.0, "km"),
                crate::dataset::RawRecord::new("a [#NUM] [#UNIT] cat", 4.5, "kg"),
            ],
            &reg,
        );
        let mut buf = Vec::new();
        export_embeddings(&enc, &report.examples, &reg, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("h_0\th_1"));
        assert!(lines[0].ends_with("h_7\tdimension\tunit\texponent_bin"));
        let row: Vec<&str> = lines[1].split('\t').collect();
        assert_eq!(row.len(), 8 + 3);
        assert_eq!(&row[8..], &["length", "km", "3"]);
        let row: Vec<&str> = lines[2].split('\t').collect();
        assert_eq!(&row[8..], &["mass", "kg", "0"]);
    }
}
