//! Portable model artifact: a versioned, checksummed, self-describing text
//! format (`.mdl`) bundling scaler and model parameters with training
//! metadata. Floats are printed with round-trip-exact decimal precision, so
//! a deserialized artifact predicts bit-identically to the original.

use crate::pipeline::{FeatureVector, FEATURE_COUNT};
use crate::time::Timestamp;

use super::{
    Activation, Algorithm, ElmParams, MlrParams, ModelError, ModelParams, RfrConfig, RfrParams,
    ScalerParams, SvrConfig, SvrParams, Tree, TreeNode,
};

pub const FORMAT_VERSION: u64 = 1;

/// Versioned, immutable bundle of scaler + model parameters and training
/// metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    /// Registry-assigned version; 0 means not registered yet.
    pub version: u64,
    pub algorithm: Algorithm,
    pub scaler: ScalerParams,
    pub params: ModelParams,
    pub trained_at: Timestamp,
    pub training_window: (Timestamp, Timestamp),
    pub cv_rmse: f64,
    pub test_rmse: f64,
    pub room: String,
}

impl ModelArtifact {
    /// Full forward pass: standardize, then apply the model.
    pub fn predict(&self, features: &FeatureVector) -> f64 {
        self.predict_values(&features.values)
    }

    pub fn predict_values(&self, values: &[f64; FEATURE_COUNT]) -> f64 {
        let scaled = self.scaler.apply(values);
        self.params.predict_scaled(&scaled)
    }

    /// Structural validity: metric signs, window ordering, positive scaler
    /// std devs, well-formed parameter blocks.
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.cv_rmse >= 0.0) || !(self.test_rmse >= 0.0) {
            return Err(ModelError::CorruptArtifact("negative RMSE metric".into()));
        }
        if self.training_window.0 >= self.training_window.1 {
            return Err(ModelError::CorruptArtifact(
                "training window start not before end".into(),
            ));
        }
        if self.scaler.std_devs.iter().any(|s| !(*s > 0.0)) {
            return Err(ModelError::CorruptArtifact(
                "non-positive scaler std dev".into(),
            ));
        }
        match &self.params {
            ModelParams::Mlr(_) => {}
            ModelParams::Svr(_) => {}
            ModelParams::Elm(p) => {
                if p.output_weights.len() != p.hidden
                    || p.input_biases.len() != p.hidden
                    || p.input_weights.len() != p.hidden * FEATURE_COUNT
                {
                    return Err(ModelError::CorruptArtifact(
                        "hidden-layer dimensions disagree".into(),
                    ));
                }
            }
            ModelParams::Rfr(p) => {
                if p.trees.is_empty() || p.trees.iter().any(|t| !t.validate()) {
                    return Err(ModelError::CorruptArtifact("invalid tree encoding".into()));
                }
            }
        }
        if self.params.algorithm() != self.algorithm {
            return Err(ModelError::CorruptArtifact(
                "algorithm tag disagrees with parameters".into(),
            ));
        }
        Ok(())
    }

    /// Serializes to the `.mdl` text format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let body = self.body_text();
        let checksum = crc32(body.as_bytes());
        let mut out = String::new();
        out.push_str(&format!("format_version: {FORMAT_VERSION}\n"));
        out.push_str(&format!("algorithm: {}\n", self.algorithm.name()));
        out.push_str(&format!("version: {}\n", self.version));
        out.push_str(&format!("room: {}\n", self.room));
        out.push_str(&format!("trained_at: {}\n", self.trained_at.to_rfc3339()));
        out.push_str(&format!(
            "training_window_start: {}\n",
            self.training_window.0.to_rfc3339()
        ));
        out.push_str(&format!(
            "training_window_end: {}\n",
            self.training_window.1.to_rfc3339()
        ));
        out.push_str(&format!("cv_rmse: {}\n", self.cv_rmse));
        out.push_str(&format!("test_rmse: {}\n", self.test_rmse));
        out.push_str(&format!("checksum: {checksum}\n"));
        out.push('\n');
        out.push_str(&body);
        out.into_bytes()
    }

    fn body_text(&self) -> String {
        let mut body = String::new();
        body.push_str(&format!("scaler.means: {}\n", join_floats(&self.scaler.means)));
        body.push_str(&format!(
            "scaler.std_devs: {}\n",
            join_floats(&self.scaler.std_devs)
        ));
        match &self.params {
            ModelParams::Mlr(p) => {
                body.push_str(&format!("mlr.weights: {}\n", join_floats(&p.weights)));
                body.push_str(&format!("mlr.intercept: {}\n", p.intercept));
            }
            ModelParams::Svr(p) => {
                body.push_str(&format!("svr.weights: {}\n", join_floats(&p.weights)));
                body.push_str(&format!("svr.intercept: {}\n", p.intercept));
                body.push_str(&format!("svr.epsilon: {}\n", p.config.epsilon));
                body.push_str(&format!("svr.c: {}\n", p.config.c));
                body.push_str(&format!("svr.epochs: {}\n", p.config.epochs));
                body.push_str(&format!("svr.learning_rate: {}\n", p.config.learning_rate));
            }
            ModelParams::Elm(p) => {
                body.push_str(&format!("elm.hidden: {}\n", p.hidden));
                body.push_str(&format!("elm.activation: {}\n", p.activation.tag()));
                body.push_str(&format!("elm.seed: {}\n", p.seed));
                body.push_str(&format!(
                    "elm.input_weights: {}\n",
                    join_floats(&p.input_weights)
                ));
                body.push_str(&format!(
                    "elm.input_biases: {}\n",
                    join_floats(&p.input_biases)
                ));
                body.push_str(&format!(
                    "elm.output_weights: {}\n",
                    join_floats(&p.output_weights)
                ));
            }
            ModelParams::Rfr(p) => {
                body.push_str(&format!("rfr.seed: {}\n", p.seed));
                body.push_str(&format!("rfr.n_trees: {}\n", p.config.n_trees));
                body.push_str(&format!("rfr.max_depth: {}\n", p.config.max_depth));
                body.push_str(&format!(
                    "rfr.min_samples_leaf: {}\n",
                    p.config.min_samples_leaf
                ));
                body.push_str(&format!(
                    "rfr.feature_subset: {}\n",
                    p.config.feature_subset
                ));
                for (i, tree) in p.trees.iter().enumerate() {
                    body.push_str(&format!("rfr.tree.{i}: {}\n", encode_tree(tree)));
                }
            }
        }
        body
    }

    /// Parses and verifies bytes produced by `to_bytes`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let text = std::str::from_utf8(bytes)
            .map_err(|_| ModelError::CorruptArtifact("not valid UTF-8".into()))?;
        let (header_text, body) = text
            .split_once("\n\n")
            .ok_or_else(|| ModelError::CorruptArtifact("missing header separator".into()))?;

        let mut header = Vec::new();
        for line in header_text.lines() {
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| ModelError::CorruptArtifact(format!("bad header line {line:?}")))?;
            header.push((k.trim().to_string(), v.trim().to_string()));
        }
        let format_version: u64 = header_u64(&header, "format_version")?;
        if format_version != FORMAT_VERSION {
            return Err(ModelError::FormatVersionMismatch(format_version));
        }
        let declared_checksum = header_u64(&header, "checksum")? as u32;
        if crc32(body.as_bytes()) != declared_checksum {
            return Err(ModelError::CorruptArtifact("checksum mismatch".into()));
        }

        let algorithm = Algorithm::parse(&header_value(&header, "algorithm")?)
            .ok_or_else(|| ModelError::CorruptArtifact("unknown algorithm".into()))?;
        let version = header_u64(&header, "version")?;
        let room = header_value(&header, "room")?;
        let trained_at = header_time(&header, "trained_at")?;
        let window_start = header_time(&header, "training_window_start")?;
        let window_end = header_time(&header, "training_window_end")?;
        let cv_rmse = header_f64(&header, "cv_rmse")?;
        let test_rmse = header_f64(&header, "test_rmse")?;

        let mut blocks = Vec::new();
        for line in body.lines() {
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| ModelError::CorruptArtifact(format!("bad body line {line:?}")))?;
            blocks.push((k.trim().to_string(), v.trim().to_string()));
        }
        let scaler = ScalerParams {
            means: block_floats_fixed(&blocks, "scaler.means")?,
            std_devs: block_floats_fixed(&blocks, "scaler.std_devs")?,
        };
        let params = match algorithm {
            Algorithm::Mlr => ModelParams::Mlr(MlrParams {
                weights: block_floats_fixed(&blocks, "mlr.weights")?,
                intercept: block_f64(&blocks, "mlr.intercept")?,
            }),
            Algorithm::Svr => ModelParams::Svr(SvrParams {
                weights: block_floats_fixed(&blocks, "svr.weights")?,
                intercept: block_f64(&blocks, "svr.intercept")?,
                config: SvrConfig {
                    epsilon: block_f64(&blocks, "svr.epsilon")?,
                    c: block_f64(&blocks, "svr.c")?,
                    epochs: block_u64(&blocks, "svr.epochs")? as usize,
                    learning_rate: block_f64(&blocks, "svr.learning_rate")?,
                },
            }),
            Algorithm::Elm => {
                let hidden = block_u64(&blocks, "elm.hidden")? as usize;
                let activation = Activation::from_tag(&block_value(&blocks, "elm.activation")?)
                    .ok_or_else(|| ModelError::CorruptArtifact("unknown activation".into()))?;
                ModelParams::Elm(ElmParams {
                    hidden,
                    activation,
                    seed: block_u64(&blocks, "elm.seed")?,
                    input_weights: block_floats(&blocks, "elm.input_weights")?,
                    input_biases: block_floats(&blocks, "elm.input_biases")?,
                    output_weights: block_floats(&blocks, "elm.output_weights")?,
                })
            }
            Algorithm::Rfr => {
                let n_trees = block_u64(&blocks, "rfr.n_trees")? as usize;
                let config = RfrConfig {
                    n_trees,
                    max_depth: block_u64(&blocks, "rfr.max_depth")? as usize,
                    min_samples_leaf: block_u64(&blocks, "rfr.min_samples_leaf")? as usize,
                    feature_subset: block_u64(&blocks, "rfr.feature_subset")? as usize,
                };
                let mut trees = Vec::with_capacity(n_trees);
                for i in 0..n_trees {
                    let raw = block_value(&blocks, &format!("rfr.tree.{i}"))?;
                    trees.push(decode_tree(&raw)?);
                }
                ModelParams::Rfr(RfrParams {
                    trees,
                    config,
                    seed: block_u64(&blocks, "rfr.seed")?,
                })
            }
        };

        let artifact = ModelArtifact {
            version,
            algorithm,
            scaler,
            params,
            trained_at,
            training_window: (window_start, window_end),
            cv_rmse,
            test_rmse,
            room,
        };
        artifact.validate()?;
        Ok(artifact)
    }
}

fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn encode_tree(tree: &Tree) -> String {
    tree.nodes
        .iter()
        .map(|n| match n {
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => format!("S {feature} {threshold} {left} {right}"),
            TreeNode::Leaf { value } => format!("L {value}"),
        })
        .collect::<Vec<_>>()
        .join(";")
}

fn decode_tree(raw: &str) -> Result<Tree, ModelError> {
    let mut nodes = Vec::new();
    for part in raw.split(';') {
        let tokens: Vec<&str> = part.split_whitespace().collect();
        match tokens.as_slice() {
            ["L", value] => nodes.push(TreeNode::Leaf {
                value: parse_f64(value)?,
            }),
            ["S", feature, threshold, left, right] => nodes.push(TreeNode::Split {
                feature: parse_u64(feature)? as usize,
                threshold: parse_f64(threshold)?,
                left: parse_u64(left)? as usize,
                right: parse_u64(right)? as usize,
            }),
            _ => {
                return Err(ModelError::CorruptArtifact(format!(
                    "bad tree node {part:?}"
                )))
            }
        }
    }
    Ok(Tree { nodes })
}

fn header_value(header: &[(String, String)], key: &str) -> Result<String, ModelError> {
    header
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.clone())
        .ok_or_else(|| ModelError::CorruptArtifact(format!("missing header field {key}")))
}

fn header_u64(header: &[(String, String)], key: &str) -> Result<u64, ModelError> {
    parse_u64(&header_value(header, key)?)
}

fn header_f64(header: &[(String, String)], key: &str) -> Result<f64, ModelError> {
    parse_f64(&header_value(header, key)?)
}

fn header_time(header: &[(String, String)], key: &str) -> Result<Timestamp, ModelError> {
    let raw = header_value(header, key)?;
    Timestamp::parse_rfc3339(&raw)
        .map_err(|_| ModelError::CorruptArtifact(format!("bad timestamp in {key}")))
}

fn block_value(blocks: &[(String, String)], key: &str) -> Result<String, ModelError> {
    blocks
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.clone())
        .ok_or_else(|| ModelError::CorruptArtifact(format!("missing block {key}")))
}

fn block_f64(blocks: &[(String, String)], key: &str) -> Result<f64, ModelError> {
    parse_f64(&block_value(blocks, key)?)
}

fn block_u64(blocks: &[(String, String)], key: &str) -> Result<u64, ModelError> {
    parse_u64(&block_value(blocks, key)?)
}

fn block_floats(blocks: &[(String, String)], key: &str) -> Result<Vec<f64>, ModelError> {
    block_value(blocks, key)?
        .split_whitespace()
        .map(parse_f64)
        .collect()
}

fn block_floats_fixed(
    blocks: &[(String, String)],
    key: &str,
) -> Result<[f64; FEATURE_COUNT], ModelError> {
    let values = block_floats(blocks, key)?;
    if values.len() != FEATURE_COUNT {
        return Err(ModelError::CorruptArtifact(format!(
            "block {key} has {} values, expected {FEATURE_COUNT}",
            values.len()
        )));
    }
    let mut out = [0.0; FEATURE_COUNT];
    out.copy_from_slice(&values);
    Ok(out)
}

fn parse_f64(raw: &str) -> Result<f64, ModelError> {
    raw.parse::<f64>()
        .map_err(|_| ModelError::CorruptArtifact(format!("bad float {raw:?}")))
}

fn parse_u64(raw: &str) -> Result<u64, ModelError> {
    raw.parse::<u64>()
        .map_err(|_| ModelError::CorruptArtifact(format!("bad integer {raw:?}")))
}

/// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !crc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{fit_scaler, train, Hyperparameters};
    use crate::pipeline::FeatureVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trained_artifact(algorithm: Algorithm, seed: u64) -> ModelArtifact {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features: Vec<FeatureVector> = (0..120)
            .map(|i| FeatureVector {
                values: [
                    rng.gen_range(0.0..120.0),
                    rng.gen_range(0.0..500.0),
                    rng.gen_range(20.0..70.0),
                    3.0,
                    rng.gen_range(990.0..1030.0),
                    rng.gen_range(15.0..28.0),
                ],
                timestamp: Timestamp(i * 300_000),
                room: "A10".into(),
            })
            .collect();
        let labels: Vec<f64> = features
            .iter()
            .map(|f| f.values[0] * 0.9 + f.values[2] * 0.1 + rng.gen_range(-1.0..1.0))
            .collect();
        let scaler = fit_scaler(&features).unwrap();
        let scaled: Vec<[f64; 6]> = features.iter().map(|f| scaler.apply(&f.values)).collect();
        let params = train(algorithm, &scaled, &labels, &Hyperparameters::default(), seed).unwrap();
        ModelArtifact {
            version: 7,
            algorithm,
            scaler,
            params,
            trained_at: Timestamp(1_584_230_400_000),
            training_window: (Timestamp(0), Timestamp(1_584_230_400_000)),
            cv_rmse: 5.02,
            test_rmse: 5.875,
            room: "A10".into(),
        }
    }

    #[test]
    fn round_trip_predicts_identically_for_all_algorithms() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for algorithm in Algorithm::ALL {
            let artifact = trained_artifact(algorithm, 5);
            let restored = ModelArtifact::from_bytes(&artifact.to_bytes()).unwrap();
            assert_eq!(restored, artifact);
            for _ in 0..100 {
                let x = [
                    rng.gen_range(0.0..120.0),
                    rng.gen_range(0.0..500.0),
                    rng.gen_range(20.0..70.0),
                    rng.gen_range(0.0..4.0),
                    rng.gen_range(990.0..1030.0),
                    rng.gen_range(15.0..28.0),
                ];
                assert_eq!(
                    artifact.predict_values(&x),
                    restored.predict_values(&x),
                    "{algorithm} round-trip prediction drifted"
                );
            }
        }
    }

    #[test]
    fn flipped_body_byte_fails_checksum() {
        let artifact = trained_artifact(Algorithm::Mlr, 1);
        let mut bytes = artifact.to_bytes();
        let split = bytes.windows(2).position(|w| w == b"\n\n").unwrap() + 2;
        // Flip a digit inside the body.
        let pos = (split..bytes.len())
            .find(|&i| bytes[i].is_ascii_digit())
            .unwrap();
        bytes[pos] = if bytes[pos] == b'5' { b'6' } else { b'5' };
        assert!(matches!(
            ModelArtifact::from_bytes(&bytes),
            Err(ModelError::CorruptArtifact(_))
        ));
    }

    #[test]
    fn tampered_checksum_header_rejected() {
        let artifact = trained_artifact(Algorithm::Svr, 2);
        let text = String::from_utf8(artifact.to_bytes()).unwrap();
        let tampered = text.replacen("checksum: ", "checksum: 1", 1);
        assert!(matches!(
            ModelArtifact::from_bytes(tampered.as_bytes()),
            Err(ModelError::CorruptArtifact(_))
        ));
    }

    #[test]
    fn future_format_version_rejected() {
        let artifact = trained_artifact(Algorithm::Elm, 3);
        let text = String::from_utf8(artifact.to_bytes()).unwrap();
        let tampered = text.replacen("format_version: 1", "format_version: 999", 1);
        match ModelArtifact::from_bytes(tampered.as_bytes()) {
            Err(ModelError::FormatVersionMismatch(999)) => {}
            other => panic!("expected FormatVersionMismatch, got {other:?}"),
        }
    }

    #[test]
    fn crc32_known_vector() {
        // Standard check value for "123456789".
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
    }

    #[test]
    fn validate_rejects_mismatched_dimensions() {
        let mut artifact = trained_artifact(Algorithm::Elm, 4);
        if let ModelParams::Elm(p) = &mut artifact.params {
            p.output_weights.pop();
        }
        assert!(artifact.validate().is_err());
    }
}
