//! Linear epsilon-insensitive support vector regression.
//!
//! Trained by deterministic epoch-based subgradient descent: samples are
//! visited in index order (no shuffling), the learning rate decays as 1/t per
//! epoch, the intercept starts at the label mean (unregularized), and the
//! parameters with the lowest objective seen after any epoch are the ones
//! returned.

use crate::pipeline::FEATURE_COUNT;

use super::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub struct SvrConfig {
    pub epsilon: f64,
    pub c: f64,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for SvrConfig {
    fn default() -> Self {
        SvrConfig {
            epsilon: 0.1,
            c: 1.0,
            epochs: 200,
            learning_rate: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvrParams {
    pub weights: [f64; FEATURE_COUNT],
    pub intercept: f64,
    pub config: SvrConfig,
}

impl SvrParams {
    pub fn predict(&self, x: &[f64; FEATURE_COUNT]) -> f64 {
        let mut acc = self.intercept;
        for i in 0..FEATURE_COUNT {
            acc += self.weights[i] * x[i];
        }
        acc
    }
}

/// Primal objective: ||w||^2 / (2 n C) + mean epsilon-insensitive loss.
pub fn objective(
    weights: &[f64; FEATURE_COUNT],
    intercept: f64,
    config: &SvrConfig,
    x: &[[f64; FEATURE_COUNT]],
    y: &[f64],
) -> f64 {
    let n = x.len() as f64;
    let mut loss = 0.0;
    for (row, &target) in x.iter().zip(y) {
        let mut pred = intercept;
        for i in 0..FEATURE_COUNT {
            pred += weights[i] * row[i];
        }
        let excess = (target - pred).abs() - config.epsilon;
        if excess > 0.0 {
            loss += excess;
        }
    }
    let mut norm_sq = 0.0;
    for w in weights {
        norm_sq += w * w;
    }
    norm_sq / (2.0 * n * config.c) + loss / n
}

pub fn train(
    x: &[[f64; FEATURE_COUNT]],
    y: &[f64],
    config: &SvrConfig,
) -> Result<SvrParams, ModelError> {
    if x.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    let n = x.len() as f64;
    let reg = 1.0 / (n * config.c);

    let mut weights = [0.0; FEATURE_COUNT];
    let mut intercept = y.iter().sum::<f64>() / n;
    let mut best_weights = weights;
    let mut best_intercept = intercept;
    let mut best_objective = objective(&weights, intercept, config, x, y);

    for epoch in 1..=config.epochs {
        let lr = config.learning_rate / epoch as f64;
        for (row, &target) in x.iter().zip(y) {
            let mut pred = intercept;
            for i in 0..FEATURE_COUNT {
                pred += weights[i] * row[i];
            }
            let residual = target - pred;
            let sign = if residual.abs() > config.epsilon {
                residual.signum()
            } else {
                0.0
            };
            for i in 0..FEATURE_COUNT {
                weights[i] += lr * (sign * row[i] - reg * weights[i]);
            }
            intercept += lr * sign;
        }
        let obj = objective(&weights, intercept, config, x, y);
        if obj < best_objective {
            best_objective = obj;
            best_weights = weights;
            best_intercept = intercept;
        }
    }

    Ok(SvrParams {
        weights: best_weights,
        intercept: best_intercept,
        config: config.clone(),
    })
}
