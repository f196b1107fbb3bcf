//! Standardization of the 6-feature input space.

use crate::pipeline::{FeatureVector, FEATURE_COUNT};

use super::ModelError;

/// Per-feature standardization parameters (mean / population std dev).
///
/// Zero-variance features keep their mean but get a std dev of 1.0, so they
/// transform to exactly zero instead of dividing by zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalerParams {
    pub means: [f64; FEATURE_COUNT],
    pub std_devs: [f64; FEATURE_COUNT],
}

impl ScalerParams {
    /// Identity transform: mean 0, std dev 1 on every feature.
    pub fn identity() -> Self {
        ScalerParams {
            means: [0.0; FEATURE_COUNT],
            std_devs: [1.0; FEATURE_COUNT],
        }
    }

    pub fn apply(&self, x: &[f64; FEATURE_COUNT]) -> [f64; FEATURE_COUNT] {
        let mut out = [0.0; FEATURE_COUNT];
        for i in 0..FEATURE_COUNT {
            out[i] = (x[i] - self.means[i]) / self.std_devs[i];
        }
        out
    }
}

/// Fits means and population std devs over a training matrix.
pub fn fit_scaler(features: &[FeatureVector]) -> Result<ScalerParams, ModelError> {
    if features.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    let n = features.len() as f64;
    let mut means = [0.0; FEATURE_COUNT];
    for f in features {
        for i in 0..FEATURE_COUNT {
            means[i] += f.values[i];
        }
    }
    for m in means.iter_mut() {
        *m /= n;
    }
    let mut std_devs = [0.0; FEATURE_COUNT];
    for f in features {
        for i in 0..FEATURE_COUNT {
            let d = f.values[i] - means[i];
            std_devs[i] += d * d;
        }
    }
    for s in std_devs.iter_mut() {
        *s = (*s / n).sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    Ok(ScalerParams { means, std_devs })
}
