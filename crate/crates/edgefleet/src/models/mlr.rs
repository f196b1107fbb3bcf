//! Multiple linear regression via the normal equations.

use crate::pipeline::FEATURE_COUNT;

use super::{linalg, ModelError};

/// Ridge damping applied to the Gram matrix diagonal so collinear feature
/// columns solve instead of erroring.
pub const GRAM_DAMPING: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct MlrParams {
    pub weights: [f64; FEATURE_COUNT],
    pub intercept: f64,
}

impl MlrParams {
    pub fn predict(&self, x: &[f64; FEATURE_COUNT]) -> f64 {
        let mut acc = self.intercept;
        for i in 0..FEATURE_COUNT {
            acc += self.weights[i] * x[i];
        }
        acc
    }
}

/// Least-squares fit of weights and intercept on scaled features.
pub fn train(x: &[[f64; FEATURE_COUNT]], y: &[f64]) -> Result<MlrParams, ModelError> {
    let n = x.len();
    let d = FEATURE_COUNT + 1; // features + bias column

    // Gram matrix X'X and moment vector X'y with an implicit trailing 1.0
    // bias column, damped on the diagonal.
    let mut gram = vec![0.0; d * d];
    let mut moment = vec![0.0; d];
    for (row, &target) in x.iter().zip(y) {
        for i in 0..FEATURE_COUNT {
            for j in i..FEATURE_COUNT {
                gram[i * d + j] += row[i] * row[j];
            }
            gram[i * d + FEATURE_COUNT] += row[i];
            moment[i] += row[i] * target;
        }
        moment[FEATURE_COUNT] += target;
    }
    gram[d * d - 1] = n as f64;
    for i in 0..d {
        for j in 0..i {
            gram[i * d + j] = gram[j * d + i];
        }
        gram[i * d + i] += GRAM_DAMPING;
    }

    let solution = linalg::solve(gram, moment, d)?;
    let mut weights = [0.0; FEATURE_COUNT];
    weights.copy_from_slice(&solution[..FEATURE_COUNT]);
    Ok(MlrParams {
        weights,
        intercept: solution[FEATURE_COUNT],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_noiseless_linear_function() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..50 {
            let v = i as f64 / 10.0 - 2.5;
            x.push([v, 0.0, 0.0, 0.0, 0.0, 0.0]);
            y.push(2.0 * v + 1.0);
        }
        let params = train(&x, &y).unwrap();
        assert!((params.weights[0] - 2.0).abs() < 1e-6);
        for w in &params.weights[1..] {
            assert!(w.abs() < 1e-6);
        }
        assert!((params.intercept - 1.0).abs() < 1e-6);
    }

    #[test]
    fn training_is_deterministic() {
        let x: Vec<[f64; 6]> = (0..30)
            .map(|i| {
                let v = i as f64;
                [v, v * 0.5, 3.0, v.sin(), 1.0, -v]
            })
            .collect();
        let y: Vec<f64> = x.iter().map(|r| r.iter().sum::<f64>() * 0.3 + 4.0).collect();
        let a = train(&x, &y).unwrap();
        let b = train(&x, &y).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn collinear_features_solve_under_damping() {
        // Feature 1 duplicates feature 0; damping must keep the system solvable.
        let x: Vec<[f64; 6]> = (0..40)
            .map(|i| {
                let v = i as f64 / 5.0;
                [v, v, 0.0, 0.0, 0.0, 0.0]
            })
            .collect();
        let y: Vec<f64> = x.iter().map(|r| 3.0 * r[0] + 1.0).collect();
        let params = train(&x, &y).unwrap();
        // Combined effect of the duplicated columns matches the generator.
        let for_one_unit = params.weights[0] + params.weights[1];
        assert!((for_one_unit - 3.0).abs() < 1e-5);
    }
}
