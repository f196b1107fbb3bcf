//! Algorithm selection: cross-validate candidates, score a chronological
//! holdout, train the winner on the full window.

use crate::pipeline::{FeatureVector, LabeledExample};
use crate::time::Timestamp;

use super::{
    cross_validate, fit_scaler, rmse, train, Algorithm, Hyperparameters, ModelArtifact,
    ModelError,
};

/// Deterministic seed derivation for a named component (FNV-1a fold).
pub fn mix_seed(base: u64, salt: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ base.rotate_left(17);
    for b in salt.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Fraction of samples used for training in the chronological holdout split.
pub const TEST_SPLIT_TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone)]
pub struct CandidateMetrics {
    pub algorithm: Algorithm,
    pub cv_rmse: Option<f64>,
    pub test_rmse: Option<f64>,
    pub error: Option<String>,
}

/// Cross-validates and holdout-scores each algorithm. Candidates that cannot
/// train (e.g. too little data for the hidden layer) carry an error instead
/// of metrics and are skipped by selection.
pub fn evaluate_algorithms(
    examples: &[LabeledExample],
    algorithms: &[Algorithm],
    k: usize,
    config: &Hyperparameters,
    seed: u64,
) -> Vec<CandidateMetrics> {
    algorithms
        .iter()
        .map(|&algorithm| {
            let algo_seed = mix_seed(seed, algorithm.name());
            match score_candidate(examples, algorithm, k, config, algo_seed) {
                Ok((cv, test)) => CandidateMetrics {
                    algorithm,
                    cv_rmse: Some(cv),
                    test_rmse: Some(test),
                    error: None,
                },
                Err(e) => CandidateMetrics {
                    algorithm,
                    cv_rmse: None,
                    test_rmse: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

fn score_candidate(
    examples: &[LabeledExample],
    algorithm: Algorithm,
    k: usize,
    config: &Hyperparameters,
    seed: u64,
) -> Result<(f64, f64), ModelError> {
    let (cv_rmse, _) = cross_validate(algorithm, examples, k, config, seed)?;
    let test_rmse = holdout_rmse(examples, algorithm, config, seed)?;
    Ok((cv_rmse, test_rmse))
}

/// RMSE on the chronologically last 20% after training on the first 80%.
pub fn holdout_rmse(
    examples: &[LabeledExample],
    algorithm: Algorithm,
    config: &Hyperparameters,
    seed: u64,
) -> Result<f64, ModelError> {
    let n = examples.len();
    let split = ((n as f64) * TEST_SPLIT_TRAIN_FRACTION) as usize;
    if split == 0 || split == n {
        return Err(ModelError::InsufficientData { needed: 5, got: n });
    }
    let (train_part, test_part) = examples.split_at(split);
    let features: Vec<FeatureVector> = train_part.iter().map(|e| e.features.clone()).collect();
    let labels: Vec<f64> = train_part.iter().map(|e| e.label).collect();
    let scaler = fit_scaler(&features)?;
    let scaled: Vec<[f64; 6]> = features.iter().map(|f| scaler.apply(&f.values)).collect();
    let model = train(algorithm, &scaled, &labels, config, seed)?;
    let predictions: Vec<f64> = test_part
        .iter()
        .map(|e| model.predict_scaled(&scaler.apply(&e.features.values)))
        .collect();
    let actuals: Vec<f64> = test_part.iter().map(|e| e.label).collect();
    rmse(&predictions, &actuals)
}

/// Lowest CV RMSE wins; ties go to the earlier algorithm in declaration
/// order (MLR before SVR before ELM before RFR).
pub fn select_best(candidates: &[CandidateMetrics]) -> Option<Algorithm> {
    let mut best: Option<(Algorithm, f64)> = None;
    let mut ordered: Vec<&CandidateMetrics> = candidates.iter().collect();
    ordered.sort_by_key(|c| c.algorithm);
    for c in ordered {
        if let Some(cv) = c.cv_rmse {
            if best.map_or(true, |(_, b)| cv < b) {
                best = Some((c.algorithm, cv));
            }
        }
    }
    best.map(|(a, _)| a)
}

/// Trains one algorithm on the full window and packages an (unregistered)
/// artifact with its CV and holdout metrics.
pub fn train_artifact(
    examples: &[LabeledExample],
    algorithm: Algorithm,
    k: usize,
    config: &Hyperparameters,
    seed: u64,
    room: &str,
    trained_at: Timestamp,
) -> Result<ModelArtifact, ModelError> {
    let algo_seed = mix_seed(seed, algorithm.name());
    let (cv_rmse, _) = cross_validate(algorithm, examples, k, config, algo_seed)?;
    let test_rmse = holdout_rmse(examples, algorithm, config, algo_seed)?;

    let features: Vec<FeatureVector> = examples.iter().map(|e| e.features.clone()).collect();
    let labels: Vec<f64> = examples.iter().map(|e| e.label).collect();
    let scaler = fit_scaler(&features)?;
    let scaled: Vec<[f64; 6]> = features.iter().map(|f| scaler.apply(&f.values)).collect();
    let params = train(algorithm, &scaled, &labels, config, algo_seed)?;

    let window = (
        examples.first().unwrap().features.timestamp,
        examples.last().unwrap().features.timestamp.add_millis(1),
    );
    Ok(ModelArtifact {
        version: 0,
        algorithm,
        scaler,
        params,
        trained_at,
        training_window: window,
        cv_rmse,
        test_rmse,
        room: room.to_string(),
    })
}
