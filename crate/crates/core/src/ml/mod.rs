//! Logistic regression over hashed behavioral tokens.

mod dataset;
mod format;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::report::BehaviorReport;

pub use dataset::{load_labelled_dir, DatasetError, LABEL_DIRS};
pub use format::{load_model, model_from_str, model_to_string, save_model, FORMAT_HEADER};

pub const DEFAULT_DIMENSION: usize = 4096;
pub const MIN_DIMENSION: usize = 16;
pub const DEFAULT_HASH_SEED: u64 = 0x7072_6f62_6531;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Scores are kept strictly inside (0, 1).
const SCORE_FLOOR: f64 = 1e-12;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, thiserror::Error)]
pub enum MlError {
    #[error("dimension {0} is below the minimum of {MIN_DIMENSION}")]
    DimensionTooSmall(usize),
    #[error("training data is empty")]
    EmptyDataset,
    #[error("training data contains only {0} examples; both labels are required")]
    SingleClass(&'static str),
    #[error("model has dimension {model} but the features have dimension {features}")]
    DimensionMismatch { model: usize, features: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("model file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("unsupported model format version {0:?}")]
    UnsupportedVersion(String),
    #[error("model file i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Dense token counts, length D.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub counts: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainedOn {
    pub benign: usize,
    pub malicious: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub dimension: usize,
    pub hash_seed: u64,
    pub threshold: f64,
    pub trained_on: TrainedOn,
}

impl Model {
    pub fn zeros(dimension: usize, hash_seed: u64) -> Self {
        Model {
            weights: vec![0.0; dimension],
            bias: 0.0,
            dimension,
            hash_seed,
            threshold: DEFAULT_THRESHOLD,
            trained_on: TrainedOn::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub rng_seed: u64,
    pub l2: f64,
    pub hash_seed: u64,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 50,
            rng_seed: 42,
            l2: 1e-4,
            hash_seed: DEFAULT_HASH_SEED,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

/// Seeded FNV-1a: the seed's little-endian bytes are hashed before the token.
pub fn hash_token(token: &str, seed: u64, dimension: usize) -> usize {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes().iter().chain(token.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    (h % dimension as u64) as usize
}

/// Tokens drawn from every phase, with multiplicity.
pub fn tokens(report: &BehaviorReport) -> Vec<(String, u64)> {
    let mut out = Vec::new();
    for phase in report.phases.values() {
        for c in &phase.commands {
            out.extend(c.argv.iter().map(|a| (format!("cmd:{a}"), 1)));
        }
        for f in &phase.files {
            out.extend(
                f.path
                    .split('/')
                    .filter(|s| !s.is_empty())
                    .map(|s| (format!("file:{s}"), 1)),
            );
        }
        out.extend(phase.domains.iter().map(|d| (format!("dom:{}", d.name), 1)));
        out.extend(
            phase
                .endpoints
                .iter()
                .map(|e| (format!("ip:{}", e.address), 1)),
        );
        out.extend(
            phase
                .syscalls
                .counts
                .iter()
                .map(|(name, n)| (format!("sys:{name}"), *n)),
        );
    }
    out
}

pub fn featurize(
    report: &BehaviorReport,
    dimension: usize,
    hash_seed: u64,
) -> Result<FeatureVector, MlError> {
    if dimension < MIN_DIMENSION {
        return Err(MlError::DimensionTooSmall(dimension));
    }
    let mut counts = vec![0.0; dimension];
    for (token, n) in tokens(report) {
        counts[hash_token(&token, hash_seed, dimension)] += n as f64;
    }
    Ok(FeatureVector { counts })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

pub fn score_features(model: &Model, x: &FeatureVector) -> Result<f64, MlError> {
    if x.counts.len() != model.dimension || model.weights.len() != model.dimension {
        return Err(MlError::DimensionMismatch {
            model: model.dimension,
            features: x.counts.len(),
        });
    }
    let p = sigmoid(dot(&model.weights, &x.counts) + model.bias);
    Ok(p.clamp(SCORE_FLOOR, 1.0 - SCORE_FLOOR))
}

/// Probability that the report is malicious.
pub fn score(model: &Model, report: &BehaviorReport) -> Result<f64, MlError> {
    if model.weights.len() != model.dimension {
        return Err(MlError::DimensionMismatch {
            model: model.dimension,
            features: model.weights.len(),
        });
    }
    score_features(model, &featurize(report, model.dimension, model.hash_seed)?)
}

/// Mean log-loss plus `l2 / 2 * |w|^2`, and its gradient in (w, b).
pub fn loss_and_gradient(
    weights: &[f64],
    bias: f64,
    xs: &[FeatureVector],
    ys: &[bool],
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    let n = xs.len().max(1) as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; weights.len()];
    let mut gb = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let z = dot(weights, &x.counts) + bias;
        loss += if *y { softplus(-z) } else { softplus(z) };
        let g = sigmoid(z) - f64::from(u8::from(*y));
        for (gj, xj) in gw.iter_mut().zip(&x.counts) {
            *gj += g * xj;
        }
        gb += g;
    }
    loss /= n;
    gb /= n;
    for (gj, wj) in gw.iter_mut().zip(weights) {
        *gj = *gj / n + l2 * wj;
    }
    loss += 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    (loss, gw, gb)
}

/// Plain SGD over a featurized dataset; deterministic for fixed inputs.
pub fn train_features(
    xs: &[FeatureVector],
    ys: &[bool],
    config: &TrainConfig,
    dimension: usize,
) -> Result<Model, MlError> {
    if dimension < MIN_DIMENSION {
        return Err(MlError::DimensionTooSmall(dimension));
    }
    // Written so NaN is rejected too.
    let positive_lr = config.learning_rate > 0.0;
    let valid_l2 = config.l2 >= 0.0;
    if !positive_lr || config.epochs == 0 || !valid_l2 {
        return Err(MlError::InvalidConfig(
            "learning_rate > 0, epochs >= 1 and l2 >= 0 are required".into(),
        ));
    }
    if !(config.threshold > 0.0 && config.threshold < 1.0) {
        return Err(MlError::InvalidConfig(
            "threshold must lie strictly between 0 and 1".into(),
        ));
    }
    if xs.is_empty() {
        return Err(MlError::EmptyDataset);
    }
    if let Some(x) = xs.iter().find(|x| x.counts.len() != dimension) {
        return Err(MlError::DimensionMismatch {
            model: dimension,
            features: x.counts.len(),
        });
    }
    let malicious = ys.iter().filter(|y| **y).count();
    let benign = ys.len() - malicious;
    if malicious == 0 {
        return Err(MlError::SingleClass("benign"));
    }
    if benign == 0 {
        return Err(MlError::SingleClass("malicious"));
    }

    let mut model = Model::zeros(dimension, config.hash_seed);
    model.threshold = config.threshold;
    model.trained_on = TrainedOn { benign, malicious };
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let lr = config.learning_rate;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let x = &xs[i].counts;
            let g = sigmoid(dot(&model.weights, x) + model.bias) - f64::from(u8::from(ys[i]));
            for (w, xj) in model.weights.iter_mut().zip(x) {
                *w -= lr * (g * xj + config.l2 * *w);
            }
            model.bias -= lr * g;
        }
    }
    Ok(model)
}

/// Featurize and train. Labels: `true` is malicious.
pub fn train(
    dataset: &[(BehaviorReport, bool)],
    config: &TrainConfig,
    dimension: usize,
) -> Result<Model, MlError> {
    let xs = dataset
        .iter()
        .map(|(r, _)| featurize(r, dimension, config.hash_seed))
        .collect::<Result<Vec<_>, _>>()?;
    let ys: Vec<bool> = dataset.iter().map(|(_, y)| *y).collect();
    train_features(&xs, &ys, config, dimension)
}

/// Fraction of examples whose thresholded score matches the label.
pub fn accuracy(model: &Model, dataset: &[(BehaviorReport, bool)]) -> Result<f64, MlError> {
    let mut right = 0usize;
    for (r, y) in dataset {
        if (score(model, r)? >= model.threshold) == *y {
            right += 1;
        }
    }
    Ok(right as f64 / dataset.len().max(1) as f64)
}
