//! L2-regularised logistic regression trained by seeded mini-batch gradient
//! descent on standardised features.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{FeatureVector, FEATURE_SCHEMA_VERSION};
use super::labels::{LabeledExample, VoteLabel};
use super::VoterError;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub l2_lambda: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub confidence_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            l2_lambda: 1e-3,
            epochs: 200,
            learning_rate: 0.1,
            batch_size: 32,
            seed: 0,
            confidence_threshold: 0.7,
        }
    }
}

/// Mean logistic loss plus `lambda/2 * |w|^2` (bias unpenalised), with its
/// gradient. `xs` are already standardised; `ys` are 0/1 targets.
pub fn objective(
    weights: &[f64],
    bias: f64,
    xs: &[Vec<f64>],
    ys: &[f64],
    lambda: f64,
) -> (f64, Vec<f64>, f64) {
    let n = xs.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad_w = vec![0.0; weights.len()];
    let mut grad_b = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let z = bias + dot(weights, x);
        loss += softplus(z) - y * z;
        let err = sigmoid(z) - y;
        for (g, xi) in grad_w.iter_mut().zip(x) {
            *g += err * xi;
        }
        grad_b += err;
    }
    loss /= n;
    grad_b /= n;
    for (g, w) in grad_w.iter_mut().zip(weights) {
        *g = *g / n + lambda * w;
    }
    loss += 0.5 * lambda * weights.iter().map(|w| w * w).sum::<f64>();
    (loss, grad_w, grad_b)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoteClassifierModel {
    pub schema_version: u32,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2_lambda: f64,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub confidence_threshold: f64,
}

impl VoteClassifierModel {
    /// All-zero model: predicts 0.5 everywhere.
    pub fn zeros(len: usize, schema_version: u32) -> Self {
        Self {
            schema_version,
            weights: vec![0.0; len],
            bias: 0.0,
            l2_lambda: 0.0,
            means: vec![0.0; len],
            stds: vec![1.0; len],
            confidence_threshold: 0.7,
        }
    }

    pub fn feature_len(&self) -> usize {
        self.weights.len()
    }

    pub fn standardize(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    /// Probability that the crowd would upvote.
    pub fn predict_confidence(&self, features: &FeatureVector) -> Result<f64, VoterError> {
        if features.schema_version != self.schema_version || features.len() != self.weights.len() {
            return Err(VoterError::SchemaMismatch {
                model_version: self.schema_version,
                model_len: self.weights.len(),
                features_version: features.schema_version,
                features_len: features.len(),
            });
        }
        let x = self.standardize(&features.values);
        Ok(sigmoid(self.bias + dot(&self.weights, &x)))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), VoterError> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VoterError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

fn column_stats(xs: &[Vec<f64>], len: usize) -> (Vec<f64>, Vec<f64>) {
    let n = xs.len() as f64;
    let mut means = vec![0.0; len];
    for x in xs {
        for (m, v) in means.iter_mut().zip(x) {
            *m += v / n;
        }
    }
    let mut stds = vec![0.0; len];
    for x in xs {
        for ((s, v), m) in stds.iter_mut().zip(x).zip(&means) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for s in &mut stds {
        *s = s.sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    (means, stds)
}

/// Trains on raw feature rows with boolean targets (true = upvote).
pub fn train_raw(
    rows: &[Vec<f64>],
    targets: &[bool],
    schema_version: u32,
    cfg: &TrainConfig,
) -> Result<VoteClassifierModel, VoterError> {
    let positives = targets.iter().filter(|t| **t).count();
    if rows.is_empty() || positives == 0 || positives == targets.len() {
        return Err(VoterError::SingleClass);
    }
    let len = rows[0].len();
    if rows.iter().any(|r| r.len() != len) || rows.len() != targets.len() {
        return Err(VoterError::RaggedFeatures);
    }
    let (means, stds) = column_stats(rows, len);
    let xs: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            r.iter()
                .zip(means.iter().zip(&stds))
                .map(|(x, (m, s))| (x - m) / s)
                .collect()
        })
        .collect();
    let ys: Vec<f64> = targets.iter().map(|&t| f64::from(u8::from(t))).collect();

    let mut w = vec![0.0; len];
    let mut b = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let batch = cfg.batch_size.max(1);
    let mut bx = Vec::with_capacity(batch);
    let mut by = Vec::with_capacity(batch);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            bx.clear();
            by.clear();
            for &i in chunk {
                bx.push(xs[i].clone());
                by.push(ys[i]);
            }
            let (_, gw, gb) = objective(&w, b, &bx, &by, cfg.l2_lambda);
            for (wi, g) in w.iter_mut().zip(&gw) {
                *wi -= cfg.learning_rate * g;
            }
            b -= cfg.learning_rate * gb;
        }
    }
    Ok(VoteClassifierModel {
        schema_version,
        weights: w,
        bias: b,
        l2_lambda: cfg.l2_lambda,
        means,
        stds,
        confidence_threshold: cfg.confidence_threshold,
    })
}

pub fn train(
    examples: &[LabeledExample],
    cfg: &TrainConfig,
) -> Result<VoteClassifierModel, VoterError> {
    let version = examples
        .first()
        .map(|e| e.features.schema_version)
        .unwrap_or(FEATURE_SCHEMA_VERSION);
    if examples
        .iter()
        .any(|e| e.features.schema_version != version)
    {
        return Err(VoterError::RaggedFeatures);
    }
    let rows: Vec<Vec<f64>> = examples.iter().map(|e| e.features.values.clone()).collect();
    let targets: Vec<bool> = examples
        .iter()
        .map(|e| e.label == VoteLabel::Upvote)
        .collect();
    train_raw(&rows, &targets, version, cfg)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

impl ClassMetrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            support: tp + fn_,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub upvote: ClassMetrics,
    pub downvote: ClassMetrics,
    pub accuracy: f64,
}

/// Per-class precision/recall/F1 when predicting upvote iff
/// `confidence >= threshold`.
pub fn evaluate_scored(scored: &[(f64, bool)], threshold: f64) -> EvalReport {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for &(p, is_up) in scored {
        match (p >= threshold, is_up) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    EvalReport {
        threshold,
        upvote: ClassMetrics::from_counts(tp, fp, fn_),
        downvote: ClassMetrics::from_counts(tn, fn_, fp),
        accuracy: if scored.is_empty() {
            0.0
        } else {
            (tp + tn) as f64 / scored.len() as f64
        },
    }
}

/// `(confidence, is_upvote)` for every example.
pub fn score_examples(
    model: &VoteClassifierModel,
    examples: &[LabeledExample],
) -> Result<Vec<(f64, bool)>, VoterError> {
    examples
        .iter()
        .map(|e| {
            Ok((
                model.predict_confidence(&e.features)?,
                e.label == VoteLabel::Upvote,
            ))
        })
        .collect()
}

pub fn evaluate(
    model: &VoteClassifierModel,
    examples: &[LabeledExample],
    threshold: f64,
) -> Result<EvalReport, VoterError> {
    Ok(evaluate_scored(
        &score_examples(model, examples)?,
        threshold,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voter::features::RAW_SCHEMA_VERSION;
    use rand::Rng;

    #[test]
    fn zero_model_predicts_half() {
        let m = VoteClassifierModel::zeros(3, RAW_SCHEMA_VERSION);
        let p = m
            .predict_confidence(&FeatureVector::raw(vec![1.0, -2.0, 5.0]))
            .unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn features_at_mean_give_sigmoid_bias() {
        let mut m = VoteClassifierModel::zeros(2, RAW_SCHEMA_VERSION);
        m.weights = vec![3.0, -1.0];
        m.bias = 0.7;
        m.means = vec![2.0, 5.0];
        m.stds = vec![0.5, 4.0];
        let p = m
            .predict_confidence(&FeatureVector::raw(vec![2.0, 5.0]))
            .unwrap();
        assert!((p - sigmoid(0.7)).abs() < 1e-15);
        let higher = m
            .predict_confidence(&FeatureVector::raw(vec![2.1, 5.0]))
            .unwrap();
        assert!(higher > p);
    }

    #[test]
    fn schema_mismatch_rejected() {
        let m = VoteClassifierModel::zeros(2, FEATURE_SCHEMA_VERSION);
        assert!(matches!(
            m.predict_confidence(&FeatureVector::raw(vec![0.0, 0.0])),
            Err(VoterError::SchemaMismatch { .. })
        ));
        let m = VoteClassifierModel::zeros(3, RAW_SCHEMA_VERSION);
        assert!(m
            .predict_confidence(&FeatureVector::raw(vec![0.0]))
            .is_err());
    }

    #[test]
    fn single_class_rejected() {
        let rows = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            train_raw(&rows, &[true, true], 0, &TrainConfig::default()),
            Err(VoterError::SingleClass)
        ));
    }

    #[test]
    fn same_seed_same_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let targets: Vec<bool> = rows.iter().map(|r| r[0] + 0.3 * r[1] > 0.0).collect();
        let cfg = TrainConfig {
            epochs: 20,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train_raw(&rows, &targets, 0, &cfg).unwrap();
        let b = train_raw(&rows, &targets, 0, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            a.weights.iter().map(|w| w.to_bits()).collect::<Vec<_>>(),
            b.weights.iter().map(|w| w.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn metrics_from_counts() {
        let m = ClassMetrics::from_counts(8, 2, 0);
        assert!((m.precision - 0.8).abs() < 1e-12);
        assert_eq!(m.recall, 1.0);
        assert!((m.f1 - 16.0 / 18.0).abs() < 1e-12);
        let empty = ClassMetrics::from_counts(0, 0, 0);
        assert_eq!(empty.f1, 0.0);
    }
}
