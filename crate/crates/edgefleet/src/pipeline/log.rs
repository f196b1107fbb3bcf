//! Append-only per-device prediction log (CSV).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::{parse_reading, PipelineError, PredictionRow, PREDICTION_COLUMNS};
use crate::time::Timestamp;

/// Lookup of registered model versions, implemented by the registry. Keeps
/// the log's referential-integrity guard decoupled from registry internals.
pub trait VersionDirectory: Send + Sync {
    fn is_registered(&self, version: u64) -> bool;
}

/// Single-writer CSV log of predictions for one device. Rows are appended,
/// flushed immediately and never rewritten.
pub struct PredictionLog {
    path: PathBuf,
    writer: BufWriter<File>,
    versions: Arc<dyn VersionDirectory>,
    rows_written: u64,
}

impl PredictionLog {
    pub fn create(
        path: impl AsRef<Path>,
        versions: Arc<dyn VersionDirectory>,
    ) -> Result<Self, PipelineError> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(storage)?;
        let mut writer = BufWriter::new(file);
        writeln!(writer, "{}", PREDICTION_COLUMNS.join(",")).map_err(storage)?;
        writer.flush().map_err(storage)?;
        Ok(PredictionLog {
            path,
            writer,
            versions,
            rows_written: 0,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn rows_written(&self) -> u64 {
        self.rows_written
    }

    /// Appends one row and flushes. Rejects rows referencing a model version
    /// the registry does not know.
    pub fn append(&mut self, row: &PredictionRow) -> Result<(), PipelineError> {
        if !self.versions.is_registered(row.model_version) {
            return Err(PipelineError::UnknownModelVersion(row.model_version));
        }
        let mut fields: Vec<String> = row
            .reading
            .to_field_map()
            .into_iter()
            .map(|(_, v)| v)
            .collect();
        fields.push(row.predicted_future_aq.to_string());
        fields.push(row.model_version.to_string());
        fields.push(row.predicted_at.to_rfc3339());
        writeln!(self.writer, "{}", fields.join(",")).map_err(storage)?;
        self.writer.flush().map_err(storage)?;
        self.rows_written += 1;
        Ok(())
    }
}

fn storage(e: std::io::Error) -> PipelineError {
    PipelineError::StorageFailure(e.to_string())
}

/// Reads a prediction log back into rows.
pub fn read_prediction_log(path: impl AsRef<Path>) -> Result<Vec<PredictionRow>, PipelineError> {
    let mut reader = csv::Reader::from_path(path.as_ref()).map_err(|e| {
        PipelineError::StorageFailure(e.to_string())
    })?;
    let headers = reader
        .headers()
        .map_err(|e| PipelineError::StorageFailure(e.to_string()))?
        .clone();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| PipelineError::StorageFailure(e.to_string()))?;
        let fields: Vec<(&str, &str)> = headers.iter().zip(record.iter()).collect();
        let reading = parse_reading(&fields)?;
        let predicted_future_aq = field(&fields, "predicted_future_aq")?
            .parse::<f64>()
            .map_err(|_| malformed("predicted_future_aq", &fields))?;
        let model_version = field(&fields, "model_version")?
            .parse::<u64>()
            .map_err(|_| malformed("model_version", &fields))?;
        let raw_at = field(&fields, "predicted_at")?;
        let predicted_at = Timestamp::parse_rfc3339(raw_at)
            .map_err(|_| malformed("predicted_at", &fields))?;
        rows.push(PredictionRow {
            reading,
            predicted_future_aq,
            model_version,
            predicted_at,
        });
    }
    Ok(rows)
}

fn field<'a>(fields: &'a [(&str, &str)], name: &str) -> Result<&'a str, PipelineError> {
    fields
        .iter()
        .find(|(k, _)| *k == name)
        .map(|(_, v)| *v)
        .ok_or_else(|| PipelineError::MissingField(name.to_string()))
}

fn malformed(name: &str, fields: &[(&str, &str)]) -> PipelineError {
    PipelineError::MalformedField {
        field: name.to_string(),
        value: field(fields, name).unwrap_or("").to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::SensorReading;

    struct StubDirectory {
        known: Vec<u64>,
    }

    impl VersionDirectory for StubDirectory {
        fn is_registered(&self, version: u64) -> bool {
            self.known.contains(&version)
        }
    }

    fn sample_row(ts_ms: i64, version: u64) -> PredictionRow {
        let reading = SensorReading {
            timestamp: Timestamp(ts_ms),
            name: "sensor-1".into(),
            room: "A10".into(),
            room_type: "Office room".into(),
            floor: "A".into(),
            air_quality: 60.0,
            air_quality_static: 61.92,
            ambient_light: 120.0,
            humidity: 45.0,
            iaq_accuracy: 3.0,
            iaq_accuracy_static: 3.0,
            pressure: 1013.25,
            temperature: 21.5,
        };
        PredictionRow {
            reading,
            predicted_future_aq: 63.125,
            model_version: version,
            predicted_at: Timestamp(ts_ms),
        }
    }

    #[test]
    fn appends_in_insertion_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let versions = Arc::new(StubDirectory { known: vec![1] });
        let mut log = PredictionLog::create(&path, versions).unwrap();
        for i in 0..3 {
            log.append(&sample_row(i * 300_000, 1)).unwrap();
        }
        let rows = read_prediction_log(&path).unwrap();
        assert_eq!(rows.len(), 3);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.reading.timestamp, Timestamp(i as i64 * 300_000));
        }
    }

    #[test]
    fn unregistered_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let versions = Arc::new(StubDirectory { known: vec![1] });
        let mut log = PredictionLog::create(&path, versions).unwrap();
        match log.append(&sample_row(0, 99)) {
            Err(PipelineError::UnknownModelVersion(99)) => {}
            other => panic!("expected UnknownModelVersion, got {other:?}"),
        }
        assert_eq!(log.rows_written(), 0);
    }

    #[test]
    fn row_count_matches_independent_counter() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let versions = Arc::new(StubDirectory { known: vec![7] });
        let mut log = PredictionLog::create(&path, versions).unwrap();
        let mut counter = 0u64;
        for i in 0..500 {
            log.append(&sample_row(i * 300_000, 7)).unwrap();
            counter += 1;
        }
        assert_eq!(log.rows_written(), counter);
        let line_count = std::fs::read_to_string(&path).unwrap().lines().count() as u64;
        assert_eq!(line_count, counter + 1); // plus header
    }

    #[test]
    fn rows_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let versions = Arc::new(StubDirectory { known: vec![3] });
        let mut log = PredictionLog::create(&path, versions).unwrap();
        let mut row = sample_row(1_584_230_400_123, 3);
        row.predicted_future_aq = 101.000001;
        log.append(&row).unwrap();
        let rows = read_prediction_log(&path).unwrap();
        assert_eq!(rows, vec![row]);
    }
}
