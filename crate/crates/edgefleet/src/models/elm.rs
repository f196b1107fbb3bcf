//! Extreme learning machine: a fixed random hidden layer with a ridge solve
//! for the output weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::pipeline::FEATURE_COUNT;

use super::{linalg, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElmConfig {
    pub hidden: usize,
    pub ridge_lambda: f64,
    pub activation: Activation,
}

impl Default for ElmConfig {
    fn default() -> Self {
        ElmConfig {
            hidden: 64,
            ridge_lambda: 1e-6,
            activation: Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElmParams {
    /// Hidden-layer input weights, row-major `hidden x FEATURE_COUNT`.
    pub input_weights: Vec<f64>,
    pub input_biases: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub activation: Activation,
    pub hidden: usize,
    pub seed: u64,
}

impl ElmParams {
    pub fn predict(&self, x: &[f64; FEATURE_COUNT]) -> f64 {
        let mut acc = 0.0;
        for h in 0..self.hidden {
            let mut pre = self.input_biases[h];
            let row = &self.input_weights[h * FEATURE_COUNT..(h + 1) * FEATURE_COUNT];
            for i in 0..FEATURE_COUNT {
                pre += row[i] * x[i];
            }
            acc += self.output_weights[h] * self.activation.apply(pre);
        }
        acc
    }
}

pub fn train(
    x: &[[f64; FEATURE_COUNT]],
    y: &[f64],
    config: &ElmConfig,
    seed: u64,
) -> Result<ElmParams, ModelError> {
    let n = x.len();
    let h = config.hidden;
    if n < h {
        return Err(ModelError::InsufficientData {
            needed: h,
            got: n,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut input_weights = vec![0.0; h * FEATURE_COUNT];
    for w in input_weights.iter_mut() {
        *w = rng.gen_range(-1.0..=1.0);
    }
    let mut input_biases = vec![0.0; h];
    for b in input_biases.iter_mut() {
        *b = rng.gen_range(-1.0..=1.0);
    }

    // Hidden activations, row per sample.
    let mut hidden = vec![0.0; n * h];
    for (s, row) in x.iter().enumerate() {
        for j in 0..h {
            let mut pre = input_biases[j];
            let w = &input_weights[j * FEATURE_COUNT..(j + 1) * FEATURE_COUNT];
            for i in 0..FEATURE_COUNT {
                pre += w[i] * row[i];
            }
            hidden[s * h + j] = config.activation.apply(pre);
        }
    }

    // Ridge solve: (H'H + lambda I) beta = H'y.
    let mut gram = vec![0.0; h * h];
    let mut moment = vec![0.0; h];
    for s in 0..n {
        let row = &hidden[s * h..(s + 1) * h];
        for i in 0..h {
            for j in i..h {
                gram[i * h + j] += row[i] * row[j];
            }
            moment[i] += row[i] * y[s];
        }
    }
    for i in 0..h {
        for j in 0..i {
            gram[i * h + j] = gram[j * h + i];
        }
        gram[i * h + i] += config.ridge_lambda;
    }

    let output_weights = linalg::solve(gram, moment, h)?;
    Ok(ElmParams {
        input_weights,
        input_biases,
        output_weights,
        activation: config.activation,
        hidden: h,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_data(n: usize) -> (Vec<[f64; 6]>, Vec<f64>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let v = (i as f64 / n as f64) * 2.0 - 1.0;
            x.push([v, 0.0, 0.0, 0.0, 0.0, 0.0]);
            y.push(v * v);
        }
        (x, y)
    }

    #[test]
    fn beats_global_mean_on_nonlinear_target() {
        let (x, y) = quadratic_data(300);
        let params = train(&x, &y, &ElmConfig::default(), 9).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let mut model_sq = 0.0;
        let mut mean_sq = 0.0;
        for (row, &target) in x.iter().zip(&y) {
            let err = params.predict(row) - target;
            model_sq += err * err;
            let base = mean - target;
            mean_sq += base * base;
        }
        assert!(model_sq < mean_sq * 0.05);
    }

    #[test]
    fn deterministic_given_seed() {
        let (x, y) = quadratic_data(200);
        let a = train(&x, &y, &ElmConfig::default(), 42).unwrap();
        let b = train(&x, &y, &ElmConfig::default(), 42).unwrap();
        assert_eq!(a, b);
        let c = train(&x, &y, &ElmConfig::default(), 43).unwrap();
        assert_ne!(a.input_weights, c.input_weights);
    }

    #[test]
    fn rejects_fewer_samples_than_hidden_units() {
        let (x, y) = quadratic_data(10);
        assert!(matches!(
            train(&x, &y, &ElmConfig::default(), 1),
            Err(ModelError::InsufficientData { .. })
        ));
    }

    #[test]
    fn output_weight_length_matches_hidden_size() {
        let (x, y) = quadratic_data(100);
        let config = ElmConfig {
            hidden: 32,
            ..ElmConfig::default()
        };
        let params = train(&x, &y, &config, 5).unwrap();
        assert_eq!(params.output_weights.len(), params.hidden);
    }
}
