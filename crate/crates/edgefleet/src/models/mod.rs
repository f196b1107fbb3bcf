//! Regression models, evaluation and the portable artifact format.
//!
//! Four algorithms share one training surface: multiple linear regression,
//! linear epsilon-insensitive SVR, an extreme learning machine and a random
//! forest. Training is a pure function of (algorithm, data, config, seed).

pub mod artifact;
pub mod cv;
pub mod elm;
mod linalg;
pub mod mlr;
pub mod rfr;
pub mod scaler;
pub mod selection;
pub mod svr;

use thiserror::Error;

use crate::pipeline::FEATURE_COUNT;

pub use artifact::ModelArtifact;
pub use cv::{cross_validate, fold_bounds};
pub use elm::{Activation, ElmConfig, ElmParams};
pub use mlr::MlrParams;
pub use rfr::{RfrConfig, RfrParams, Tree, TreeNode};
pub use scaler::{fit_scaler, ScalerParams};
pub use svr::{SvrConfig, SvrParams};

/// Minimum training-set size for any algorithm.
pub const MIN_TRAIN_SAMPLES: usize = 10;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("singular system after damping")]
    SingularSystem,
    #[error("unsupported artifact format version {0}")]
    FormatVersionMismatch(u64),
    #[error("corrupt artifact: {0}")]
    CorruptArtifact(String),
}

/// The four supported regression algorithms, in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Algorithm {
    Mlr,
    Svr,
    Elm,
    Rfr,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Mlr,
        Algorithm::Svr,
        Algorithm::Elm,
        Algorithm::Rfr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Mlr => "MLR",
            Algorithm::Svr => "SVR",
            Algorithm::Elm => "ELM",
            Algorithm::Rfr => "RFR",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MLR" => Some(Algorithm::Mlr),
            "SVR" => Some(Algorithm::Svr),
            "ELM" => Some(Algorithm::Elm),
            "RFR" => Some(Algorithm::Rfr),
            _ => None,
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Hyperparameters for every algorithm; `train` picks the relevant block.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Hyperparameters {
    pub svr: SvrConfig,
    pub elm: ElmConfig,
    pub rfr: RfrConfig,
}

/// Trained parameters for one algorithm.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Mlr(MlrParams),
    Svr(SvrParams),
    Elm(ElmParams),
    Rfr(RfrParams),
}

impl ModelParams {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            ModelParams::Mlr(_) => Algorithm::Mlr,
            ModelParams::Svr(_) => Algorithm::Svr,
            ModelParams::Elm(_) => Algorithm::Elm,
            ModelParams::Rfr(_) => Algorithm::Rfr,
        }
    }

    /// Forward pass on an already-scaled feature vector.
    pub fn predict_scaled(&self, x: &[f64; FEATURE_COUNT]) -> f64 {
        match self {
            ModelParams::Mlr(p) => p.predict(x),
            ModelParams::Svr(p) => p.predict(x),
            ModelParams::Elm(p) => p.predict(x),
            ModelParams::Rfr(p) => p.predict(x),
        }
    }
}

/// Trains one algorithm on scaled features. Deterministic given
/// (algorithm, x, y, config, seed).
pub fn train(
    algorithm: Algorithm,
    x: &[[f64; FEATURE_COUNT]],
    y: &[f64],
    config: &Hyperparameters,
    seed: u64,
) -> Result<ModelParams, ModelError> {
    if x.len() < MIN_TRAIN_SAMPLES {
        return Err(ModelError::InsufficientData {
            needed: MIN_TRAIN_SAMPLES,
            got: x.len(),
        });
    }
    fit_algorithm(algorithm, x, y, config, seed)
}

/// Training without the public sample floor; cross-validation folds may be
/// smaller than `MIN_TRAIN_SAMPLES`.
pub(crate) fn fit_algorithm(
    algorithm: Algorithm,
    x: &[[f64; FEATURE_COUNT]],
    y: &[f64],
    config: &Hyperparameters,
    seed: u64,
) -> Result<ModelParams, ModelError> {
    if x.len() != y.len() {
        return Err(ModelError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    match algorithm {
        Algorithm::Mlr => mlr::train(x, y).map(ModelParams::Mlr),
        Algorithm::Svr => svr::train(x, y, &config.svr).map(ModelParams::Svr),
        Algorithm::Elm => elm::train(x, y, &config.elm, seed).map(ModelParams::Elm),
        Algorithm::Rfr => rfr::train(x, y, &config.rfr, seed).map(ModelParams::Rfr),
    }
}

/// Root mean squared error between prediction and actual vectors.
pub fn rmse(predictions: &[f64], actuals: &[f64]) -> Result<f64, ModelError> {
    if predictions.len() != actuals.len() {
        return Err(ModelError::LengthMismatch {
            left: predictions.len(),
            right: actuals.len(),
        });
    }
    if predictions.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    let sum_sq: f64 = predictions
        .iter()
        .zip(actuals)
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    Ok((sum_sq / predictions.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_identical_vectors_is_zero() {
        assert_eq!(rmse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn rmse_hand_computed() {
        let v = rmse(&[3.0, 5.0], &[1.0, 1.0]).unwrap();
        assert!((v - 10.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rmse_constant_offset_equals_offset_magnitude() {
        let actuals = [4.0, 8.0, 15.0, 16.0, 23.0, 42.0];
        for c in [-3.25, 0.5, 10.0] {
            let preds: Vec<f64> = actuals.iter().map(|a| a + c).collect();
            let v = rmse(&preds, &actuals).unwrap();
            assert!((v - c.abs()) < 1e-12, "offset {c} -> rmse {v}");
        }
    }

    #[test]
    fn rmse_rejects_mismatch_and_empty() {
        assert!(matches!(
            rmse(&[1.0], &[1.0, 2.0]),
            Err(ModelError::LengthMismatch { .. })
        ));
        assert!(matches!(rmse(&[], &[]), Err(ModelError::EmptyInput)));
    }

    #[test]
    fn train_rejects_tiny_datasets() {
        let x = vec![[0.0; 6]; 4];
        let y = vec![0.0; 4];
        assert!(matches!(
            train(Algorithm::Mlr, &x, &y, &Hyperparameters::default(), 0),
            Err(ModelError::InsufficientData { .. })
        ));
    }

    #[test]
    fn tie_break_order_is_declaration_order() {
        assert!(Algorithm::Mlr < Algorithm::Svr);
        assert!(Algorithm::Svr < Algorithm::Elm);
        assert!(Algorithm::Elm < Algorithm::Rfr);
    }

    #[test]
    fn same_seed_trains_identical_params() {
        let x: Vec<[f64; 6]> = (0..120)
            .map(|i| {
                let v = i as f64 / 20.0;
                [v, v * v, -v, 0.5, v.cos(), 1.0]
            })
            .collect();
        let y: Vec<f64> = x.iter().map(|r| 2.0 * r[0] + 1.0).collect();
        let config = Hyperparameters::default();
        for algo in Algorithm::ALL {
            let a = train(algo, &x, &y, &config, 42).unwrap();
            let b = train(algo, &x, &y, &config, 42).unwrap();
            assert_eq!(a, b, "{algo} not deterministic");
        }
    }
}
