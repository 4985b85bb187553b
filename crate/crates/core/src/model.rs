//! Hashed bag-of-words text categorizer.
//!
//! Text is featurized with the hashing trick (FNV-1a 64-bit, modulo a
//! power-of-two dimension) and scored by a multinomial linear model with a
//! softmax output. The loss is mean cross-entropy and its gradient is exact,
//! which is what the federated trainer exchanges between clients.

use std::hash::Hasher;
use std::io::{Read, Write};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text;

/// Default hashed feature dimension.
pub const DEFAULT_FEATURE_DIM: usize = 4096;

const CHECKPOINT_MAGIC: &[u8; 4] = b"FFML";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("feature dimension must be a positive power of two, got {0}")]
    InvalidFeatureDim(usize),
    #[error("model must have at least one category")]
    NoCategories,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },
    #[error("weights must be finite (first bad entry at {0})")]
    NonFinite(usize),
    #[error("label {label} out of range for {num_categories} categories")]
    InvalidLabel { label: usize, num_categories: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("category set must be nonempty with unique labels: {0}")]
    InvalidCategorySet(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Ordered category labels; position is the category index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct CategorySet {
    names: Vec<String>,
}

impl CategorySet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, ModelError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(ModelError::InvalidCategorySet("empty".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() {
                return Err(ModelError::InvalidCategorySet("empty label".into()));
            }
            if names[..i].contains(n) {
                return Err(ModelError::InvalidCategorySet(format!("duplicate label {n:?}")));
            }
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index_of(name).is_some()
    }
}

impl Default for CategorySet {
    fn default() -> Self {
        Self::new([
            "news",
            "media",
            "politics",
            "sports",
            "community-services",
            "technology",
        ])
        .expect("default taxonomy is valid")
    }
}

impl TryFrom<Vec<String>> for CategorySet {
    type Error = ModelError;
    fn try_from(v: Vec<String>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<CategorySet> for Vec<String> {
    fn from(c: CategorySet) -> Self {
        c.names
    }
}

/// Sparse hashed term counts. Indices are strictly increasing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureVector {
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl FeatureVector {
    /// Builds a vector from unsorted `(index, value)` pairs, summing duplicates.
    pub fn from_pairs(mut pairs: Vec<(u32, f64)>) -> Self {
        pairs.sort_by_key(|&(i, _)| i);
        let mut fv = FeatureVector::default();
        for (i, v) in pairs {
            match fv.indices.last() {
                Some(&last) if last == i => *fv.values.last_mut().unwrap() += v,
                _ => {
                    fv.indices.push(i);
                    fv.values.push(v);
                }
            }
        }
        fv
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().map(|&i| i as usize).zip(self.values.iter().copied())
    }

    fn max_index(&self) -> Option<usize> {
        self.indices.last().map(|&i| i as usize)
    }
}

/// FNV-1a 64-bit hash of a token's UTF-8 bytes.
pub fn token_hash(token: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(token.as_bytes());
    h.finish()
}

/// Hashes lowercase alphanumeric tokens of `text` into `feature_dim` buckets.
pub fn featurize(text: &str, feature_dim: usize) -> Result<FeatureVector, ModelError> {
    if feature_dim == 0 || !feature_dim.is_power_of_two() {
        return Err(ModelError::InvalidFeatureDim(feature_dim));
    }
    let mask = feature_dim as u64 - 1;
    let pairs = text::tokens(text)
        .map(|t| ((token_hash(&t) & mask) as u32, 1.0))
        .collect();
    Ok(FeatureVector::from_pairs(pairs))
}

/// A labeled training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: FeatureVector,
    pub label: usize,
}

impl Example {
    pub fn new(features: FeatureVector, label: usize) -> Self {
        Self { features, label }
    }
}

/// Weight matrix of the categorizer, `num_categories × feature_dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    num_categories: usize,
    feature_dim: usize,
    weights: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(num_categories: usize, feature_dim: usize) -> Result<Self, ModelError> {
        Self::from_weights(num_categories, feature_dim, vec![0.0; num_categories * feature_dim])
    }

    pub fn from_weights(
        num_categories: usize,
        feature_dim: usize,
        weights: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if num_categories == 0 {
            return Err(ModelError::NoCategories);
        }
        if feature_dim == 0 || !feature_dim.is_power_of_two() {
            return Err(ModelError::InvalidFeatureDim(feature_dim));
        }
        if weights.len() != num_categories * feature_dim {
            return Err(ModelError::DimensionMismatch {
                expected: format!("{} weights", num_categories * feature_dim),
                got: format!("{} weights", weights.len()),
            });
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(ModelError::NonFinite(i));
        }
        Ok(Self { num_categories, feature_dim, weights })
    }

    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, category: usize, feature: usize) -> f64 {
        self.weights[category * self.feature_dim + feature]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.num_categories, self.feature_dim)
    }

    /// Two parameter sets can be averaged iff their shapes match.
    pub fn is_compatible(&self, other: &ModelParams) -> bool {
        self.shape() == other.shape()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    /// `self - learning_rate * gradient`, coordinate-wise.
    pub fn step(&self, gradient: &ModelParams, learning_rate: f64) -> Result<ModelParams, ModelError> {
        self.check_same_shape(gradient)?;
        let weights = self
            .weights
            .iter()
            .zip(&gradient.weights)
            .map(|(w, g)| w - learning_rate * g)
            .collect();
        ModelParams::from_weights(self.num_categories, self.feature_dim, weights)
    }

    fn check_same_shape(&self, other: &ModelParams) -> Result<(), ModelError> {
        if self.is_compatible(other) {
            Ok(())
        } else {
            Err(ModelError::DimensionMismatch {
                expected: format!("{}x{}", self.num_categories, self.feature_dim),
                got: format!("{}x{}", other.num_categories, other.feature_dim),
            })
        }
    }

    fn check_features(&self, features: &FeatureVector) -> Result<(), ModelError> {
        match features.max_index() {
            Some(i) if i >= self.feature_dim => Err(ModelError::DimensionMismatch {
                expected: format!("feature index < {}", self.feature_dim),
                got: format!("index {i}"),
            }),
            _ => Ok(()),
        }
    }

    fn logits(&self, features: &FeatureVector) -> Vec<f64> {
        (0..self.num_categories)
            .map(|k| {
                let row = &self.weights[k * self.feature_dim..(k + 1) * self.feature_dim];
                features.iter().map(|(j, v)| row[j] * v).sum()
            })
            .collect()
    }

    /// Writes the binary checkpoint: `FFML`, version, categories, dim (u32 LE), then f64 LE weights.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(self.num_categories as u32).to_le_bytes())?;
        out.write_all(&(self.feature_dim as u32).to_le_bytes())?;
        for w in &self.weights {
            out.write_all(&w.to_le_bytes())?;
        }
        out.flush()
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ModelParams, ModelError> {
        let io = |e: std::io::Error| ModelError::Checkpoint(e.to_string());
        let mut header = [0u8; 16];
        input.read_exact(&mut header).map_err(io)?;
        if &header[0..4] != CHECKPOINT_MAGIC {
            return Err(ModelError::Checkpoint("bad magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
        }
        let (k, d) = (word(8) as usize, word(12) as usize);
        let mut body = Vec::new();
        input.read_to_end(&mut body).map_err(io)?;
        if body.len() != k * d * 8 {
            return Err(ModelError::Checkpoint(format!(
                "expected {} weight bytes, found {}",
                k * d * 8,
                body.len()
            )));
        }
        let weights = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ModelParams::from_weights(k, d, weights)
    }
}

fn softmax_in_place(logits: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for z in logits.iter_mut() {
        *z /= sum;
    }
    // log-sum-exp of the original logits
    max + sum.ln()
}

/// Softmax probabilities over categories.
pub fn predict_category(params: &ModelParams, features: &FeatureVector) -> Result<Vec<f64>, ModelError> {
    params.check_features(features)?;
    let mut p = params.logits(features);
    softmax_in_place(&mut p);
    Ok(p)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy over `batch` and its exact gradient.
pub fn loss_and_gradient(
    params: &ModelParams,
    batch: &[Example],
) -> Result<(f64, ModelParams), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let (k, d) = params.shape();
    let mut grad = vec![0.0; k * d];
    let mut loss = 0.0;
    for ex in batch {
        if ex.label >= k {
            return Err(ModelError::InvalidLabel { label: ex.label, num_categories: k });
        }
        params.check_features(&ex.features)?;
        let mut p = params.logits(&ex.features);
        let label_logit = p[ex.label];
        let lse = softmax_in_place(&mut p);
        loss += lse - label_logit;
        for (c, &pc) in p.iter().enumerate() {
            let residual = pc - if c == ex.label { 1.0 } else { 0.0 };
            let row = &mut grad[c * d..(c + 1) * d];
            for (j, v) in ex.features.iter() {
                row[j] += residual * v;
            }
        }
    }
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, ModelParams::from_weights(k, d, grad)?))
}

/// Mean loss and argmax accuracy on a labeled set.
pub fn evaluate(params: &ModelParams, data: &[Example]) -> Result<(f64, f64), ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for ex in data {
        let p = predict_category(params, &ex.features)?;
        loss -= p[ex.label].max(f64::MIN_POSITIVE).ln();
        if argmax(&p) == ex.label {
            correct += 1;
        }
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}
