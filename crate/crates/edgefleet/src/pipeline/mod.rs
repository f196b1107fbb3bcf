//! Data plane: reading ingestion, cleaning, feature extraction, label
//! construction and the per-device prediction log.

mod log;

use thiserror::Error;

use crate::time::Timestamp;

pub use log::{read_prediction_log, PredictionLog, VersionDirectory};

/// Number of model input features.
pub const FEATURE_COUNT: usize = 6;

/// Label horizon: the forecast target is the air-quality value this many
/// readings ahead (15 minutes at the 5-minute cadence).
pub const LABEL_SHIFT: usize = 3;

/// Largest tolerated gap between consecutive readings inside a label run:
/// 1.5x the nominal 5-minute cadence.
pub const MAX_RUN_GAP_MS: i64 = 450_000;

/// Valid air-quality index range; values outside are discarded by cleaning.
pub const AQI_RANGE: (f64, f64) = (0.0, 500.0);

/// Input reading schema, in column order.
pub const READING_COLUMNS: [&str; 13] = [
    "timestamp",
    "name",
    "room",
    "room_type",
    "floor",
    "air_quality",
    "air_quality_static",
    "ambient_light",
    "humidity",
    "iaq_accuracy",
    "iaq_accuracy_static",
    "pressure",
    "temperature",
];

/// Prediction-log schema: the 13 reading columns plus forecast, producing
/// model version and prediction instant.
pub const PREDICTION_COLUMNS: [&str; 16] = [
    "timestamp",
    "name",
    "room",
    "room_type",
    "floor",
    "air_quality",
    "air_quality_static",
    "ambient_light",
    "humidity",
    "iaq_accuracy",
    "iaq_accuracy_static",
    "pressure",
    "temperature",
    "predicted_future_aq",
    "model_version",
    "predicted_at",
];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("malformed field `{field}`: {value:?}")]
    MalformedField { field: String, value: String },
    #[error("insufficient data: need at least {needed} readings, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("unknown model version {0}")]
    UnknownModelVersion(u64),
}

/// One timestamped multivariate sample from a room sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorReading {
    pub timestamp: Timestamp,
    pub name: String,
    pub room: String,
    pub room_type: String,
    pub floor: String,
    pub air_quality: f64,
    pub air_quality_static: f64,
    pub ambient_light: f64,
    pub humidity: f64,
    pub iaq_accuracy: f64,
    pub iaq_accuracy_static: f64,
    pub pressure: f64,
    pub temperature: f64,
}

impl SensorReading {
    /// Model inputs in the fixed feature order: air_quality_static,
    /// ambient_light, humidity, iaq_accuracy_static, pressure, temperature.
    pub fn feature_values(&self) -> [f64; FEATURE_COUNT] {
        [
            self.air_quality_static,
            self.ambient_light,
            self.humidity,
            self.iaq_accuracy_static,
            self.pressure,
            self.temperature,
        ]
    }

    pub fn features(&self) -> FeatureVector {
        FeatureVector {
            values: self.feature_values(),
            timestamp: self.timestamp,
            room: self.room.clone(),
        }
    }

    /// Passes the cleaning rules: finite features and in-range AQI.
    pub fn is_clean(&self) -> bool {
        self.feature_values().iter().all(|v| v.is_finite())
            && self.air_quality_static >= AQI_RANGE.0
            && self.air_quality_static <= AQI_RANGE.1
    }

    /// Field map in `READING_COLUMNS` order.
    pub fn to_field_map(&self) -> Vec<(String, String)> {
        vec![
            ("timestamp".into(), self.timestamp.to_rfc3339()),
            ("name".into(), self.name.clone()),
            ("room".into(), self.room.clone()),
            ("room_type".into(), self.room_type.clone()),
            ("floor".into(), self.floor.clone()),
            ("air_quality".into(), self.air_quality.to_string()),
            ("air_quality_static".into(), self.air_quality_static.to_string()),
            ("ambient_light".into(), self.ambient_light.to_string()),
            ("humidity".into(), self.humidity.to_string()),
            ("iaq_accuracy".into(), self.iaq_accuracy.to_string()),
            ("iaq_accuracy_static".into(), self.iaq_accuracy_static.to_string()),
            ("pressure".into(), self.pressure.to_string()),
            ("temperature".into(), self.temperature.to_string()),
        ]
    }
}

/// Ordered model inputs for one reading.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: [f64; FEATURE_COUNT],
    pub timestamp: Timestamp,
    pub room: String,
}

/// A feature vector paired with the air quality observed `LABEL_SHIFT`
/// readings later.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub features: FeatureVector,
    pub label: f64,
}

/// A reading joined with its forecast and the producing model version.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub reading: SensorReading,
    pub predicted_future_aq: f64,
    pub model_version: u64,
    pub predicted_at: Timestamp,
}

fn lookup<'a>(fields: &'a [(&str, &str)], name: &str) -> Result<&'a str, PipelineError> {
    fields
        .iter()
        .find(|(k, _)| *k == name)
        .map(|(_, v)| *v)
        .ok_or_else(|| PipelineError::MissingField(name.to_string()))
}

fn parse_float(fields: &[(&str, &str)], name: &str) -> Result<f64, PipelineError> {
    let raw = lookup(fields, name)?;
    raw.parse::<f64>().map_err(|_| PipelineError::MalformedField {
        field: name.to_string(),
        value: raw.to_string(),
    })
}

/// Parses a raw field map into a typed reading.
pub fn parse_reading(fields: &[(&str, &str)]) -> Result<SensorReading, PipelineError> {
    let raw_ts = lookup(fields, "timestamp")?;
    let timestamp =
        Timestamp::parse_rfc3339(raw_ts).map_err(|_| PipelineError::MalformedField {
            field: "timestamp".to_string(),
            value: raw_ts.to_string(),
        })?;
    Ok(SensorReading {
        timestamp,
        name: lookup(fields, "name")?.to_string(),
        room: lookup(fields, "room")?.to_string(),
        room_type: lookup(fields, "room_type")?.to_string(),
        floor: lookup(fields, "floor")?.to_string(),
        air_quality: parse_float(fields, "air_quality")?,
        air_quality_static: parse_float(fields, "air_quality_static")?,
        ambient_light: parse_float(fields, "ambient_light")?,
        humidity: parse_float(fields, "humidity")?,
        iaq_accuracy: parse_float(fields, "iaq_accuracy")?,
        iaq_accuracy_static: parse_float(fields, "iaq_accuracy_static")?,
        pressure: parse_float(fields, "pressure")?,
        temperature: parse_float(fields, "temperature")?,
    })
}

/// Cleans a series: sorts by timestamp, drops rows with non-finite features
/// or out-of-range AQI, and deduplicates timestamps keeping the first row.
/// The result is strictly increasing in timestamp.
pub fn clean(mut series: Vec<SensorReading>) -> Vec<SensorReading> {
    series.sort_by_key(|r| r.timestamp); // stable: preserves order among equals
    let mut out: Vec<SensorReading> = Vec::with_capacity(series.len());
    for reading in series {
        if !reading.is_clean() {
            continue;
        }
        if out.last().map_or(false, |prev| prev.timestamp == reading.timestamp) {
            continue;
        }
        out.push(reading);
    }
    out
}

/// Writes a reading series as a schema CSV (header row plus one line per
/// reading, columns in `READING_COLUMNS` order).
pub fn write_readings_csv(
    path: impl AsRef<std::path::Path>,
    series: &[SensorReading],
) -> Result<(), PipelineError> {
    use std::io::Write;
    let file = std::fs::File::create(path.as_ref())
        .map_err(|e| PipelineError::StorageFailure(e.to_string()))?;
    let mut writer = std::io::BufWriter::new(file);
    writeln!(writer, "{}", READING_COLUMNS.join(","))
        .map_err(|e| PipelineError::StorageFailure(e.to_string()))?;
    for reading in series {
        let fields: Vec<String> = reading.to_field_map().into_iter().map(|(_, v)| v).collect();
        writeln!(writer, "{}", fields.join(","))
            .map_err(|e| PipelineError::StorageFailure(e.to_string()))?;
    }
    writer
        .flush()
        .map_err(|e| PipelineError::StorageFailure(e.to_string()))
}

/// Reads a schema CSV of readings. The header must carry the 13 reading
/// column names; rows parse by header name.
pub fn read_readings_csv(
    path: impl AsRef<std::path::Path>,
) -> Result<Vec<SensorReading>, PipelineError> {
    let mut reader = csv::Reader::from_path(path.as_ref())
        .map_err(|e| PipelineError::StorageFailure(e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| PipelineError::StorageFailure(e.to_string()))?
        .clone();
    for required in READING_COLUMNS {
        if !headers.iter().any(|h| h == required) {
            return Err(PipelineError::MissingField(required.to_string()));
        }
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| PipelineError::StorageFailure(e.to_string()))?;
        let fields: Vec<(&str, &str)> = headers.iter().zip(record.iter()).collect();
        out.push(parse_reading(&fields)?);
    }
    Ok(out)
}

/// Builds labeled examples by shifting air quality `LABEL_SHIFT` rows ahead.
///
/// An example is emitted for index `i` only when readings `i..=i+LABEL_SHIFT`
/// form a consecutive run with every step gap at most `MAX_RUN_GAP_MS`, so a
/// 15-minute-ahead label never silently spans a long outage.
pub fn build_training_set(series: &[SensorReading]) -> Result<Vec<LabeledExample>, PipelineError> {
    let mut out = Vec::new();
    if series.len() > LABEL_SHIFT {
        for i in 0..series.len() - LABEL_SHIFT {
            let run = &series[i..=i + LABEL_SHIFT];
            let gaps_ok = run
                .windows(2)
                .all(|w| w[1].timestamp.millis() - w[0].timestamp.millis() <= MAX_RUN_GAP_MS);
            if gaps_ok {
                out.push(LabeledExample {
                    features: series[i].features(),
                    label: series[i + LABEL_SHIFT].air_quality_static,
                });
            }
        }
    }
    if out.is_empty() {
        return Err(PipelineError::InsufficientData {
            needed: LABEL_SHIFT + 1,
            got: series.len(),
        });
    }
    Ok(out)
}
