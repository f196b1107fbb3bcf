//! K-fold cross-validation over contiguous index folds.
//!
//! Folds are contiguous slices in sample order (no shuffling). For each fold
//! the scaler and model are fitted on the remaining folds only, then scored
//! on the held-out fold.

use crate::pipeline::LabeledExample;

use super::{fit_algorithm, fit_scaler, rmse, Algorithm, Hyperparameters, ModelError};

/// Contiguous half-open index ranges partitioning `0..n` into `k` folds.
pub fn fold_bounds(n: usize, k: usize) -> Vec<(usize, usize)> {
    (0..k).map(|f| (f * n / k, (f + 1) * n / k)).collect()
}

/// Mean fold RMSE plus the individual fold scores.
pub fn cross_validate(
    algorithm: Algorithm,
    examples: &[LabeledExample],
    k: usize,
    config: &Hyperparameters,
    seed: u64,
) -> Result<(f64, Vec<f64>), ModelError> {
    let n = examples.len();
    if k < 2 || n < k {
        return Err(ModelError::InsufficientData { needed: k, got: n });
    }

    let mut fold_rmses = Vec::with_capacity(k);
    for (start, end) in fold_bounds(n, k) {
        let mut train_features = Vec::with_capacity(n - (end - start));
        let mut train_labels = Vec::with_capacity(n - (end - start));
        for (i, ex) in examples.iter().enumerate() {
            if i < start || i >= end {
                train_features.push(ex.features.clone());
                train_labels.push(ex.label);
            }
        }
        let params = fit_scaler(&train_features)?;
        let scaled: Vec<[f64; 6]> = train_features
            .iter()
            .map(|f| params.apply(&f.values))
            .collect();
        let model = fit_algorithm(algorithm, &scaled, &train_labels, config, seed)?;

        let mut predictions = Vec::with_capacity(end - start);
        let mut actuals = Vec::with_capacity(end - start);
        for ex in &examples[start..end] {
            predictions.push(model.predict_scaled(&params.apply(&ex.features.values)));
            actuals.push(ex.label);
        }
        fold_rmses.push(rmse(&predictions, &actuals)?);
    }

    let cv_rmse = fold_rmses.iter().sum::<f64>() / k as f64;
    Ok((cv_rmse, fold_rmses))
}
