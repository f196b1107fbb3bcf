//! Supervision plane: threshold alarms, device telemetry collection and
//! fleet-level reporting.

pub mod report;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::registry::{AuditEvent, AuditLog, RegistryError};
use crate::time::Timestamp;
use crate::transport::{wire, TransportError};

pub use report::{
    build_fleet_report, write_report_files, ChannelSummary, DeviceInfo, DeviceReport, FleetReport,
};

/// Forecast level above which an air-quality alarm fires (strictly above).
pub const AQI_ALERT_THRESHOLD: f64 = 100.0;

/// Telemetry silence alarm threshold, in missed intervals.
pub const SILENCE_INTERVALS: i64 = 3;

pub const TELEMETRY_COLUMNS: [&str; 16] = [
    "device_id",
    "at",
    "accel_x",
    "accel_y",
    "accel_z",
    "gyro_x",
    "gyro_y",
    "gyro_z",
    "humidity",
    "mag_x",
    "mag_y",
    "mag_z",
    "pressure",
    "temperature",
    "dropped_readings",
    "inference_count",
];

#[derive(Debug, Error)]
pub enum SupervisionError {
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error("telemetry counters regressed for `{device}`")]
    CounterRegression { device: String },
    #[error("storage failure: {0}")]
    Storage(String),
    #[error(transparent)]
    Audit(#[from] RegistryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlarmKind {
    AirQuality,
    ModelDrift,
    DeployFailure,
    DeviceSilence,
}

impl AlarmKind {
    pub fn name(self) -> &'static str {
        match self {
            AlarmKind::AirQuality => "air_quality",
            AlarmKind::ModelDrift => "model_drift",
            AlarmKind::DeployFailure => "deploy_failure",
            AlarmKind::DeviceSilence => "device_silence",
        }
    }
}

/// A threshold crossing worth human attention. Alarms are persisted as audit
/// records; this struct is the in-process view.
#[derive(Debug, Clone, PartialEq)]
pub struct Alarm {
    pub at: Timestamp,
    pub kind: AlarmKind,
    /// Room for air-quality alarms, device id otherwise.
    pub target: String,
    pub value: f64,
    pub threshold: f64,
}

/// One device self-measurement sample plus runtime counters.
#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryRecord {
    pub device_id: String,
    pub at: Timestamp,
    pub accelerometer: [f64; 3],
    pub gyroscope: [f64; 3],
    pub humidity: f64,
    pub magnetometer: [f64; 3],
    pub pressure: f64,
    pub temperature: f64,
    /// Readings skipped by cleaning rules or duplicate delivery; monotone.
    pub dropped_readings: u64,
    pub inference_count: u64,
}

impl TelemetryRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.device_id,
            self.at.to_rfc3339(),
            self.accelerometer[0],
            self.accelerometer[1],
            self.accelerometer[2],
            self.gyroscope[0],
            self.gyroscope[1],
            self.gyroscope[2],
            self.humidity,
            self.magnetometer[0],
            self.magnetometer[1],
            self.magnetometer[2],
            self.pressure,
            self.temperature,
            self.dropped_readings,
            self.inference_count
        )
    }

    pub fn to_wire(&self) -> Vec<u8> {
        let vec3 = |v: &[f64; 3]| format!("{} {} {}", v[0], v[1], v[2]);
        wire::encode(
            "telemetry",
            &[
                ("device_id".into(), self.device_id.clone()),
                ("at".into(), self.at.to_rfc3339()),
                ("accelerometer".into(), vec3(&self.accelerometer)),
                ("gyroscope".into(), vec3(&self.gyroscope)),
                ("humidity".into(), self.humidity.to_string()),
                ("magnetometer".into(), vec3(&self.magnetometer)),
                ("pressure".into(), self.pressure.to_string()),
                ("temperature".into(), self.temperature.to_string()),
                ("dropped_readings".into(), self.dropped_readings.to_string()),
                ("inference_count".into(), self.inference_count.to_string()),
            ],
        )
    }

    pub fn from_wire(payload: &[u8]) -> Result<Self, TransportError> {
        let (kind, fields) = wire::decode(payload)?;
        if kind != "telemetry" {
            return Err(TransportError::DecodeError(format!(
                "expected telemetry payload, got {kind:?}"
            )));
        }
        let vec3 = |raw: &str| -> Result<[f64; 3], TransportError> {
            let parts: Vec<f64> = raw
                .split_whitespace()
                .map(|p| {
                    p.parse::<f64>()
                        .map_err(|_| TransportError::DecodeError(format!("bad vector {raw:?}")))
                })
                .collect::<Result<_, _>>()?;
            if parts.len() != 3 {
                return Err(TransportError::DecodeError(format!("bad vector {raw:?}")));
            }
            Ok([parts[0], parts[1], parts[2]])
        };
        let float = |name: &str| -> Result<f64, TransportError> {
            wire::field(&fields, name)?
                .parse::<f64>()
                .map_err(|_| TransportError::DecodeError(format!("bad float in {name}")))
        };
        let counter = |name: &str| -> Result<u64, TransportError> {
            wire::field(&fields, name)?
                .parse::<u64>()
                .map_err(|_| TransportError::DecodeError(format!("bad counter in {name}")))
        };
        Ok(TelemetryRecord {
            device_id: wire::field(&fields, "device_id")?.to_string(),
            at: Timestamp::parse_rfc3339(wire::field(&fields, "at")?)
                .map_err(|e| TransportError::DecodeError(e.to_string()))?,
            accelerometer: vec3(wire::field(&fields, "accelerometer")?)?,
            gyroscope: vec3(wire::field(&fields, "gyroscope")?)?,
            humidity: float("humidity")?,
            magnetometer: vec3(wire::field(&fields, "magnetometer")?)?,
            pressure: float("pressure")?,
            temperature: float("temperature")?,
            dropped_readings: counter("dropped_readings")?,
            inference_count: counter("inference_count")?,
        })
    }
}

struct DeviceState {
    room: String,
    last: Option<TelemetryRecord>,
    writer: Option<BufWriter<File>>,
    accepted: u64,
}

/// Collects telemetry, raises threshold alarms, and persists per-device
/// telemetry series.
pub struct Supervisor {
    audit: Arc<AuditLog>,
    aqi_threshold: f64,
    telemetry_interval_ms: i64,
    devices: Mutex<BTreeMap<String, DeviceState>>,
}

impl Supervisor {
    pub fn new(audit: Arc<AuditLog>, aqi_threshold: f64, telemetry_interval_ms: i64) -> Self {
        Supervisor {
            audit,
            aqi_threshold,
            telemetry_interval_ms,
            devices: Mutex::new(BTreeMap::new()),
        }
    }

    /// Registers a device; telemetry from unknown devices is rejected. When a
    /// path is given, accepted records stream to that CSV.
    pub fn register_device(
        &self,
        device_id: &str,
        room: &str,
        telemetry_path: Option<&Path>,
    ) -> Result<(), SupervisionError> {
        let writer = match telemetry_path {
            Some(path) => {
                let file =
                    File::create(path).map_err(|e| SupervisionError::Storage(e.to_string()))?;
                let mut writer = BufWriter::new(file);
                writeln!(writer, "{}", TELEMETRY_COLUMNS.join(","))
                    .map_err(|e| SupervisionError::Storage(e.to_string()))?;
                Some(writer)
            }
            None => None,
        };
        self.devices.lock().expect("supervisor lock").insert(
            device_id.to_string(),
            DeviceState {
                room: room.to_string(),
                last: None,
                writer,
                accepted: 0,
            },
        );
        Ok(())
    }

    /// Forecast alarm: strictly above the threshold. Fired alarms are
    /// appended to the audit trail.
    pub fn check_air_quality_alarm(
        &self,
        forecast: f64,
        room: &str,
        at: Timestamp,
    ) -> Result<Option<Alarm>, SupervisionError> {
        if !(forecast > self.aqi_threshold) {
            return Ok(None);
        }
        let alarm = Alarm {
            at,
            kind: AlarmKind::AirQuality,
            target: room.to_string(),
            value: forecast,
            threshold: self.aqi_threshold,
        };
        self.append_alarm(&alarm, None, room)?;
        Ok(Some(alarm))
    }

    /// Alarm for a drift evaluation that crossed the RMSE threshold.
    pub fn raise_model_drift(
        &self,
        device_id: &str,
        room: &str,
        rmse: f64,
        threshold: f64,
        at: Timestamp,
    ) -> Result<Alarm, SupervisionError> {
        let alarm = Alarm {
            at,
            kind: AlarmKind::ModelDrift,
            target: device_id.to_string(),
            value: rmse,
            threshold,
        };
        self.append_alarm(&alarm, Some(device_id), room)?;
        Ok(alarm)
    }

    /// Alarm for a refused or failed model deployment.
    pub fn raise_deploy_failure(
        &self,
        device_id: &str,
        room: &str,
        version: u64,
        at: Timestamp,
    ) -> Result<Alarm, SupervisionError> {
        let alarm = Alarm {
            at,
            kind: AlarmKind::DeployFailure,
            target: device_id.to_string(),
            value: version as f64,
            threshold: 0.0,
        };
        self.append_alarm(&alarm, Some(device_id), room)?;
        Ok(alarm)
    }

    fn append_alarm(
        &self,
        alarm: &Alarm,
        device_id: Option<&str>,
        room: &str,
    ) -> Result<(), SupervisionError> {
        self.audit.append(
            alarm.at,
            AuditEvent::Alarm,
            device_id,
            room,
            None,
            vec![
                ("kind".into(), alarm.kind.name().into()),
                ("value".into(), alarm.value.to_string()),
                ("threshold".into(), alarm.threshold.to_string()),
            ],
        )?;
        Ok(())
    }

    /// Stores one telemetry record. Counter regressions reject the record and
    /// leave a telemetry-anomaly note in the audit trail; a gap longer than
    /// `SILENCE_INTERVALS` telemetry intervals raises a device-silence alarm.
    pub fn ingest_telemetry(&self, record: TelemetryRecord) -> Result<(), SupervisionError> {
        let mut devices = self.devices.lock().expect("supervisor lock");
        let state = devices
            .get_mut(&record.device_id)
            .ok_or_else(|| SupervisionError::UnknownDevice(record.device_id.clone()))?;
        let room = state.room.clone();

        if let Some(last) = &state.last {
            if record.dropped_readings < last.dropped_readings
                || record.inference_count < last.inference_count
            {
                let device = record.device_id.clone();
                drop(devices);
                self.audit.append(
                    record.at,
                    AuditEvent::Alarm,
                    Some(&device),
                    &room,
                    None,
                    vec![
                        ("kind".into(), "telemetry_anomaly".into()),
                        ("reason".into(), "counter_regression".into()),
                    ],
                )?;
                return Err(SupervisionError::CounterRegression { device });
            }
            let gap = record.at.millis() - last.at.millis();
            if gap > SILENCE_INTERVALS * self.telemetry_interval_ms {
                let alarm = Alarm {
                    at: record.at,
                    kind: AlarmKind::DeviceSilence,
                    target: record.device_id.clone(),
                    value: gap as f64 / self.telemetry_interval_ms as f64,
                    threshold: SILENCE_INTERVALS as f64,
                };
                let device = record.device_id.clone();
                state.store(&record)?;
                drop(devices);
                self.append_alarm(&alarm, Some(&device), &room)?;
                return Ok(());
            }
        }
        state.store(&record)
    }

    /// Latest accepted counters for a device.
    pub fn device_counters(&self, device_id: &str) -> Option<(u64, u64)> {
        self.devices
            .lock()
            .expect("supervisor lock")
            .get(device_id)
            .and_then(|s| s.last.as_ref())
            .map(|r| (r.inference_count, r.dropped_readings))
    }

    pub fn accepted_count(&self, device_id: &str) -> u64 {
        self.devices
            .lock()
            .expect("supervisor lock")
            .get(device_id)
            .map(|s| s.accepted)
            .unwrap_or(0)
    }

    /// Flushes all telemetry writers.
    pub fn flush(&self) -> Result<(), SupervisionError> {
        let mut devices = self.devices.lock().expect("supervisor lock");
        for state in devices.values_mut() {
            if let Some(writer) = &mut state.writer {
                writer
                    .flush()
                    .map_err(|e| SupervisionError::Storage(e.to_string()))?;
            }
        }
        Ok(())
    }
}

impl DeviceState {
    fn store(&mut self, record: &TelemetryRecord) -> Result<(), SupervisionError> {
        if let Some(writer) = &mut self.writer {
            writeln!(writer, "{}", record.csv_line())
                .map_err(|e| SupervisionError::Storage(e.to_string()))?;
        }
        self.last = Some(record.clone());
        self.accepted += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (tempfile::TempDir, Arc<AuditLog>, Supervisor) {
        let dir = tempfile::tempdir().unwrap();
        let audit = Arc::new(AuditLog::create(dir.path().join("audit.csv")).unwrap());
        let supervisor = Supervisor::new(audit.clone(), AQI_ALERT_THRESHOLD, 60_000);
        (dir, audit, supervisor)
    }

    fn record(device: &str, at_ms: i64, inference: u64) -> TelemetryRecord {
        TelemetryRecord {
            device_id: device.to_string(),
            at: Timestamp(at_ms),
            accelerometer: [0.01, -0.02, 9.81],
            gyroscope: [0.001, 0.0, -0.001],
            humidity: 42.0,
            magnetometer: [21.0, 1.5, 43.0],
            pressure: 1013.0,
            temperature: 35.0,
            dropped_readings: 0,
            inference_count: inference,
        }
    }

    #[test]
    fn alarm_fires_strictly_above_threshold() {
        let (_d, audit, supervisor) = setup();
        assert!(supervisor
            .check_air_quality_alarm(100.0, "A10", Timestamp(0))
            .unwrap()
            .is_none());
        assert!(supervisor
            .check_air_quality_alarm(61.92, "A10", Timestamp(0))
            .unwrap()
            .is_none());
        let alarm = supervisor
            .check_air_quality_alarm(101.0, "A10", Timestamp(5))
            .unwrap()
            .expect("alarm");
        assert_eq!(alarm.kind, AlarmKind::AirQuality);
        assert_eq!(alarm.value, 101.0);
        let records = audit.records();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].event, AuditEvent::Alarm);
        assert_eq!(records[0].detail_value("kind"), Some("air_quality"));
    }

    #[test]
    fn barely_above_threshold_fires() {
        let (_d, _a, supervisor) = setup();
        assert!(supervisor
            .check_air_quality_alarm(100.000001, "A10", Timestamp(0))
            .unwrap()
            .is_some());
    }

    #[test]
    fn steady_telemetry_raises_no_alarm() {
        let (_d, audit, supervisor) = setup();
        supervisor.register_device("edge-A10", "A10", None).unwrap();
        for i in 0..10 {
            supervisor
                .ingest_telemetry(record("edge-A10", i * 60_000, i as u64))
                .unwrap();
        }
        assert_eq!(audit.len(), 0);
        assert_eq!(supervisor.accepted_count("edge-A10"), 10);
    }

    #[test]
    fn silence_gap_raises_alarm() {
        let (_d, audit, supervisor) = setup();
        supervisor.register_device("edge-A10", "A10", None).unwrap();
        supervisor.ingest_telemetry(record("edge-A10", 0, 1)).unwrap();
        // 4 intervals later: beyond the 3-interval threshold.
        supervisor
            .ingest_telemetry(record("edge-A10", 4 * 60_000, 2))
            .unwrap();
        let records = audit.records();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].detail_value("kind"), Some("device_silence"));
    }

    #[test]
    fn counter_regression_rejected_and_noted() {
        let (_d, audit, supervisor) = setup();
        supervisor.register_device("edge-A10", "A10", None).unwrap();
        supervisor.ingest_telemetry(record("edge-A10", 0, 5)).unwrap();
        let result = supervisor.ingest_telemetry(record("edge-A10", 60_000, 4));
        assert!(matches!(
            result,
            Err(SupervisionError::CounterRegression { .. })
        ));
        let records = audit.records();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].detail_value("kind"), Some("telemetry_anomaly"));
        // Rejected record is not stored.
        assert_eq!(supervisor.device_counters("edge-A10"), Some((5, 0)));
    }

    #[test]
    fn unknown_device_rejected() {
        let (_d, _a, supervisor) = setup();
        assert!(matches!(
            supervisor.ingest_telemetry(record("ghost", 0, 0)),
            Err(SupervisionError::UnknownDevice(_))
        ));
    }

    #[test]
    fn telemetry_wire_round_trips() {
        let r = record("edge-A10", 1_584_230_400_000, 17);
        let decoded = TelemetryRecord::from_wire(&r.to_wire()).unwrap();
        assert_eq!(decoded, r);
    }

    #[test]
    fn telemetry_csv_streamed_to_file() {
        let (dir, _a, supervisor) = setup();
        let path = dir.path().join("edge-A10_telemetry.csv");
        supervisor
            .register_device("edge-A10", "A10", Some(&path))
            .unwrap();
        for i in 0..3 {
            supervisor
                .ingest_telemetry(record("edge-A10", i * 60_000, i as u64))
                .unwrap();
        }
        supervisor.flush().unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("device_id,at,"));
    }
}
