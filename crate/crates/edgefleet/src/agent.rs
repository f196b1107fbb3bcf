//! Per-device runtime: streaming inference with the deployed model and the
//! daily drift evaluation that can trigger a model swap.
//!
//! Each device runs two cooperating activities. The first reacts to every
//! sensor reading: clean, featurize, forecast 15 minutes ahead, append to the
//! prediction log, check the forecast alarm. The second fires once per
//! simulated day: score the past day's matured forecasts against what
//! actually happened and report drift when the RMSE reaches the threshold.

use std::collections::{HashSet, VecDeque};
use std::sync::Arc;

use thiserror::Error;

use crate::models::ModelArtifact;
use crate::pipeline::{
    PipelineError, PredictionLog, PredictionRow, SensorReading, LABEL_SHIFT,
};
use crate::registry::{AuditEvent, Registry, RegistryError};
use crate::supervision::{Supervisor, SupervisionError};
use crate::time::{Timestamp, DAY_MS};
use crate::transport::{decode_reading, wire, Broker, Subscription, Topic, TransportError};

/// Daily drift threshold: an evaluation at or above this RMSE triggers.
pub const DRIFT_RMSE_THRESHOLD: f64 = 10.0;

/// Minimum matured predictions (one hour of samples) before a drift
/// evaluation may trigger.
pub const MIN_EVALUATED: u64 = 12;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("reading for room {got} delivered to agent for room {expected}")]
    RoomMismatch { expected: String, got: String },
    #[error("artifact verification failed: {0}")]
    ArtifactVerificationFailed(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Supervision(#[from] SupervisionError),
}

/// Outcome of one daily drift evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    pub device_id: String,
    pub evaluated_at: Timestamp,
    pub window: (Timestamp, Timestamp),
    /// NaN when no matured predictions existed in the window.
    pub daily_rmse: f64,
    /// Matured predictions scored; not carried on the wire.
    pub n_evaluated: u64,
    pub triggered: bool,
    pub model_version: u64,
}

impl DriftReport {
    pub fn to_wire(&self) -> Vec<u8> {
        wire::encode(
            "drift",
            &[
                ("rmse".into(), self.daily_rmse.to_string()),
                ("triggered".into(), self.triggered.to_string()),
                ("model_version".into(), self.model_version.to_string()),
            ],
        )
    }

    /// Rebuilds a report from the wire payload plus routing context (the
    /// device comes from the topic, the instant from the message stamp).
    pub fn from_wire(
        payload: &[u8],
        device_id: &str,
        published_at: Timestamp,
        window_ms: i64,
    ) -> Result<Self, TransportError> {
        let (kind, fields) = wire::decode(payload)?;
        if kind != "drift" {
            return Err(TransportError::DecodeError(format!(
                "expected drift payload, got {kind:?}"
            )));
        }
        let rmse: f64 = wire::field(&fields, "rmse")?
            .parse()
            .map_err(|_| TransportError::DecodeError("bad rmse".into()))?;
        let triggered = match wire::field(&fields, "triggered")? {
            "true" => true,
            "false" => false,
            other => {
                return Err(TransportError::DecodeError(format!(
                    "bad triggered flag {other:?}"
                )))
            }
        };
        let model_version: u64 = wire::field(&fields, "model_version")?
            .parse()
            .map_err(|_| TransportError::DecodeError("bad model_version".into()))?;
        Ok(DriftReport {
            device_id: device_id.to_string(),
            evaluated_at: published_at,
            window: (published_at.add_millis(-window_ms), published_at),
            daily_rmse: rmse,
            n_evaluated: 0,
            triggered,
            model_version,
        })
    }
}

/// Inclusive threshold: triggered iff rmse >= threshold, given enough
/// matured samples. NaN never triggers.
pub fn drift_triggered(rmse: f64, n_evaluated: u64, threshold: f64, min_evaluated: u64) -> bool {
    n_evaluated >= min_evaluated && rmse >= threshold
}

/// Deploy command carried on `fleet/<device>/control`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlCommand {
    pub model_version: u64,
}

impl ControlCommand {
    pub fn to_wire(&self) -> Vec<u8> {
        wire::encode(
            "control",
            &[
                ("command".into(), "deploy".into()),
                ("model_version".into(), self.model_version.to_string()),
            ],
        )
    }

    pub fn from_wire(payload: &[u8]) -> Result<Self, TransportError> {
        let (kind, fields) = wire::decode(payload)?;
        if kind != "control" {
            return Err(TransportError::DecodeError(format!(
                "expected control payload, got {kind:?}"
            )));
        }
        match wire::field(&fields, "command")? {
            "deploy" => Ok(ControlCommand {
                model_version: wire::field(&fields, "model_version")?
                    .parse()
                    .map_err(|_| TransportError::DecodeError("bad model_version".into()))?,
            }),
            other => Err(TransportError::DecodeError(format!(
                "unknown command {other:?}"
            ))),
        }
    }
}

struct PendingPrediction {
    accepted_index: u64,
    predicted_at: Timestamp,
    predicted: f64,
}

struct MaturedPrediction {
    predicted_at: Timestamp,
    predicted: f64,
    actual: f64,
}

pub struct AgentConfig {
    pub device_id: String,
    pub room: String,
    pub drift_threshold: f64,
    pub min_evaluated: u64,
    pub drift_window_ms: i64,
}

impl AgentConfig {
    pub fn new(device_id: &str, room: &str) -> Self {
        AgentConfig {
            device_id: device_id.to_string(),
            room: room.to_string(),
            drift_threshold: DRIFT_RMSE_THRESHOLD,
            min_evaluated: MIN_EVALUATED,
            drift_window_ms: DAY_MS,
        }
    }
}

/// One device's runtime state. Model swaps and inference are serialized
/// through `&mut self`, so every logged row carries exactly one version.
pub struct EdgeAgent {
    config: AgentConfig,
    current: ModelArtifact,
    log: PredictionLog,
    seen: HashSet<i64>,
    accepted: u64,
    pending: VecDeque<PendingPrediction>,
    matured: VecDeque<MaturedPrediction>,
    inference_count: u64,
    dropped_readings: u64,
    last_drift_check: Option<Timestamp>,
    broker: Arc<Broker>,
    registry: Arc<Registry>,
    supervisor: Arc<Supervisor>,
    readings_sub: Subscription,
    control_sub: Subscription,
    drift_topic: Topic,
}

impl EdgeAgent {
    pub fn new(
        config: AgentConfig,
        artifact: ModelArtifact,
        log: PredictionLog,
        broker: Arc<Broker>,
        registry: Arc<Registry>,
        supervisor: Arc<Supervisor>,
    ) -> Result<Self, AgentError> {
        if artifact.room != config.room {
            return Err(AgentError::ArtifactVerificationFailed(format!(
                "artifact for room {} deployed to agent for room {}",
                artifact.room, config.room
            )));
        }
        let readings_sub = broker.subscribe(&Topic::parse(&format!(
            "sensors/{}/readings",
            config.room
        ))?)?;
        let control_sub = broker.subscribe(&Topic::parse(&format!(
            "fleet/{}/control",
            config.device_id
        ))?)?;
        let drift_topic = Topic::parse(&format!("fleet/{}/drift", config.device_id))?;
        Ok(EdgeAgent {
            config,
            current: artifact,
            log,
            seen: HashSet::new(),
            accepted: 0,
            pending: VecDeque::new(),
            matured: VecDeque::new(),
            inference_count: 0,
            dropped_readings: 0,
            last_drift_check: None,
            broker,
            registry,
            supervisor,
            readings_sub,
            control_sub,
            drift_topic,
        })
    }

    pub fn device_id(&self) -> &str {
        &self.config.device_id
    }

    pub fn room(&self) -> &str {
        &self.config.room
    }

    pub fn current_version(&self) -> u64 {
        self.current.version
    }

    /// (inference_count, dropped_readings)
    pub fn counters(&self) -> (u64, u64) {
        (self.inference_count, self.dropped_readings)
    }

    pub fn log_path(&self) -> &std::path::Path {
        self.log.path()
    }

    /// Streaming inference for one reading. Readings failing the cleaning
    /// rules and duplicate (room, timestamp) deliveries are dropped
    /// idempotently and counted.
    pub fn process1_step(
        &mut self,
        reading: &SensorReading,
        now: Timestamp,
    ) -> Result<Option<PredictionRow>, AgentError> {
        if reading.room != self.config.room {
            return Err(AgentError::RoomMismatch {
                expected: self.config.room.clone(),
                got: reading.room.clone(),
            });
        }
        if !reading.is_clean() {
            self.dropped_readings += 1;
            return Ok(None);
        }
        if !self.seen.insert(reading.timestamp.millis()) {
            self.dropped_readings += 1;
            return Ok(None);
        }

        // This reading is the matured outcome for the prediction made
        // LABEL_SHIFT accepted readings ago.
        let index = self.accepted;
        self.accepted += 1;
        if let Some(front) = self.pending.front() {
            debug_assert!(front.accepted_index + LABEL_SHIFT as u64 >= index);
        }
        while let Some(front) = self.pending.front() {
            if front.accepted_index + LABEL_SHIFT as u64 == index {
                let p = self.pending.pop_front().expect("front exists");
                self.matured.push_back(MaturedPrediction {
                    predicted_at: p.predicted_at,
                    predicted: p.predicted,
                    actual: reading.air_quality_static,
                });
            } else {
                break;
            }
        }

        let predicted = self.current.predict(&reading.features());
        let row = PredictionRow {
            reading: reading.clone(),
            predicted_future_aq: predicted,
            model_version: self.current.version,
            predicted_at: now,
        };
        match self.log.append(&row) {
            Ok(()) => {}
            Err(PipelineError::StorageFailure(e)) => {
                self.dropped_readings += 1;
                return Err(AgentError::Pipeline(PipelineError::StorageFailure(e)));
            }
            Err(other) => return Err(AgentError::Pipeline(other)),
        }
        self.inference_count += 1;
        self.supervisor
            .check_air_quality_alarm(predicted, &self.config.room, now)?;
        self.pending.push_back(PendingPrediction {
            accepted_index: index,
            predicted_at: now,
            predicted,
        });
        Ok(Some(row))
    }

    /// Daily drift evaluation over the past day's matured predictions.
    /// Appends the drift audit record and publishes the report.
    pub fn process2_evaluate(&mut self, now: Timestamp) -> Result<DriftReport, AgentError> {
        let window_start = now.add_millis(-self.config.drift_window_ms);
        let mut predictions = Vec::new();
        let mut actuals = Vec::new();
        for m in &self.matured {
            if m.predicted_at > window_start && m.predicted_at <= now {
                predictions.push(m.predicted);
                actuals.push(m.actual);
            }
        }
        let n_evaluated = predictions.len() as u64;
        let daily_rmse = if n_evaluated == 0 {
            f64::NAN
        } else {
            crate::models::rmse(&predictions, &actuals).expect("lengths match")
        };
        let triggered = drift_triggered(
            daily_rmse,
            n_evaluated,
            self.config.drift_threshold,
            self.config.min_evaluated,
        );
        let report = DriftReport {
            device_id: self.config.device_id.clone(),
            evaluated_at: now,
            window: (window_start, now),
            daily_rmse,
            n_evaluated,
            triggered,
            model_version: self.current.version,
        };

        let mut detail = vec![
            ("rmse".into(), daily_rmse.to_string()),
            ("n".into(), n_evaluated.to_string()),
            ("triggered".into(), triggered.to_string()),
        ];
        if n_evaluated == 0 {
            detail.push(("insufficient".into(), "true".into()));
        }
        self.registry.audit().append(
            now,
            AuditEvent::Drift,
            Some(&self.config.device_id),
            &self.config.room,
            Some(self.current.version),
            detail,
        )?;
        if triggered {
            self.supervisor.raise_model_drift(
                &self.config.device_id,
                &self.config.room,
                daily_rmse,
                self.config.drift_threshold,
                now,
            )?;
        }
        self.broker.publish(&self.drift_topic, report.to_wire())?;

        // Scored entries are never needed again: the next window starts here.
        self.matured.retain(|m| m.predicted_at > now);
        self.last_drift_check = Some(now);
        Ok(report)
    }

    /// Atomically replaces the current model after verification. The old
    /// model stays on any failure.
    pub fn swap_model(&mut self, artifact: ModelArtifact, _now: Timestamp) -> Result<(), AgentError> {
        if artifact.room != self.config.room {
            return Err(AgentError::ArtifactVerificationFailed(format!(
                "artifact room {} does not match agent room {}",
                artifact.room, self.config.room
            )));
        }
        artifact
            .validate()
            .map_err(|e| AgentError::ArtifactVerificationFailed(e.to_string()))?;
        self.current = artifact;
        Ok(())
    }

    /// Fetch-verify-swap for a deploy command; the registry's deploy record
    /// is written only after the swap succeeds. Failures keep the old model,
    /// audit a failed deploy and raise an alarm.
    fn handle_control(&mut self, command: ControlCommand, now: Timestamp) -> Result<(), AgentError> {
        let version = command.model_version;
        let artifact = match self.registry.fetch_artifact(version) {
            Ok(a) => a,
            Err(e) => {
                self.audit_deploy_failure(version, &e.to_string(), now)?;
                return Ok(());
            }
        };
        match self.swap_model(artifact, now) {
            Ok(()) => {
                self.registry
                    .confirm_deploy(&self.config.device_id, version, now)?;
                Ok(())
            }
            Err(AgentError::ArtifactVerificationFailed(reason)) => {
                self.audit_deploy_failure(version, &reason, now)?;
                Ok(())
            }
            Err(other) => Err(other),
        }
    }

    fn audit_deploy_failure(
        &self,
        version: u64,
        reason: &str,
        now: Timestamp,
    ) -> Result<(), AgentError> {
        let sanitized: String = reason
            .chars()
            .map(|c| if c == ',' || c == ';' || c == '=' || c == '\n' { ' ' } else { c })
            .collect();
        self.registry.audit().append(
            now,
            AuditEvent::DeployFailed,
            Some(&self.config.device_id),
            &self.config.room,
            Some(version),
            vec![("reason".into(), sanitized)],
        )?;
        self.supervisor.raise_deploy_failure(
            &self.config.device_id,
            &self.config.room,
            version,
            now,
        )?;
        Ok(())
    }

    /// Drains queued sensor readings, then queued control commands.
    pub fn drain(&mut self, now: Timestamp) -> Result<(), AgentError> {
        while let Some(message) = self.readings_sub.try_recv() {
            let reading = decode_reading(&message.payload)?;
            self.process1_step(&reading, now)?;
        }
        while let Some(message) = self.control_sub.try_recv() {
            let command = ControlCommand::from_wire(&message.payload)?;
            self.handle_control(command, now)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::selection::train_artifact;
    use crate::models::{Algorithm, Hyperparameters};
    use crate::pipeline::{build_training_set, LabeledExample};
    use crate::registry::AuditLog;
    use crate::supervision::AQI_ALERT_THRESHOLD;
    use crate::time::{SimClock, MINUTE_MS};

    struct Harness {
        _dir: tempfile::TempDir,
        agent: EdgeAgent,
        registry: Arc<Registry>,
        supervisor: Arc<Supervisor>,
        broker: Arc<Broker>,
    }

    fn reading(ts_ms: i64, aq: f64) -> SensorReading {
        SensorReading {
            timestamp: Timestamp(ts_ms),
            name: "sensor-1".into(),
            room: "A10".into(),
            room_type: "Office room".into(),
            floor: "A".into(),
            air_quality: aq,
            air_quality_static: aq,
            ambient_light: 100.0,
            humidity: 45.0,
            iaq_accuracy: 3.0,
            iaq_accuracy_static: 3.0,
            pressure: 1013.0,
            temperature: 21.0,
        }
    }

    fn training_examples() -> Vec<LabeledExample> {
        let series: Vec<SensorReading> = (0..200)
            .map(|i| reading(i * 300_000, 50.0 + (i % 20) as f64))
            .collect();
        build_training_set(&series).unwrap()
    }

    fn harness() -> Harness {
        let dir = tempfile::tempdir().unwrap();
        let audit = Arc::new(AuditLog::create(dir.path().join("audit.csv")).unwrap());
        let registry = Arc::new(
            Registry::create(dir.path(), audit.clone(), Hyperparameters::default()).unwrap(),
        );
        let supervisor = Arc::new(Supervisor::new(audit, AQI_ALERT_THRESHOLD, MINUTE_MS));
        supervisor.register_device("edge-A10", "A10", None).unwrap();
        let clock = Arc::new(SimClock::new(Timestamp(0)));
        let broker = Arc::new(Broker::new(clock));

        let artifact = train_artifact(
            &training_examples(),
            Algorithm::Mlr,
            10,
            &Hyperparameters::default(),
            1,
            "A10",
            Timestamp(0),
        )
        .unwrap();
        let version = registry.register_model(&artifact, Timestamp(0)).unwrap();
        registry.confirm_deploy("edge-A10", version, Timestamp(0)).unwrap();
        let deployed = registry.fetch_artifact(version).unwrap();

        let log = PredictionLog::create(
            dir.path().join("edge-A10.csv"),
            registry.clone() as Arc<dyn crate::pipeline::VersionDirectory>,
        )
        .unwrap();
        let agent = EdgeAgent::new(
            AgentConfig::new("edge-A10", "A10"),
            deployed,
            log,
            broker.clone(),
            registry.clone(),
            supervisor.clone(),
        )
        .unwrap();
        Harness {
            _dir: dir,
            agent,
            registry,
            supervisor,
            broker,
        }
    }

    #[test]
    fn rows_are_stamped_with_current_version() {
        let mut h = harness();
        let row = h
            .agent
            .process1_step(&reading(0, 55.0), Timestamp(0))
            .unwrap()
            .expect("processed");
        assert_eq!(row.model_version, 1);
        assert_eq!(h.agent.counters(), (1, 0));
    }

    #[test]
    fn duplicate_timestamp_is_idempotent() {
        let mut h = harness();
        assert!(h
            .agent
            .process1_step(&reading(0, 55.0), Timestamp(0))
            .unwrap()
            .is_some());
        assert!(h
            .agent
            .process1_step(&reading(0, 57.0), Timestamp(0))
            .unwrap()
            .is_none());
        assert_eq!(h.agent.counters(), (1, 1));
        assert_eq!(h.agent.log.rows_written(), 1);
    }

    #[test]
    fn dirty_reading_dropped_and_counted() {
        let mut h = harness();
        let mut bad = reading(0, 55.0);
        bad.humidity = f64::NAN;
        assert!(h.agent.process1_step(&bad, Timestamp(0)).unwrap().is_none());
        let mut out_of_range = reading(300_000, 612.0);
        out_of_range.air_quality = 612.0;
        assert!(h
            .agent
            .process1_step(&out_of_range, Timestamp(300_000))
            .unwrap()
            .is_none());
        assert_eq!(h.agent.counters(), (0, 2));
    }

    #[test]
    fn high_forecast_raises_alarm() {
        let mut h = harness();
        // Force a high forecast by swapping in a model with a huge intercept.
        let mut artifact = h.registry.fetch_artifact(1).unwrap();
        if let crate::models::ModelParams::Mlr(p) = &mut artifact.params {
            p.intercept = 150.0;
            p.weights = [0.0; 6];
        }
        let v = h.registry.register_model(&artifact, Timestamp(0)).unwrap();
        h.registry.confirm_deploy("edge-A10", v, Timestamp(0)).unwrap();
        h.agent
            .swap_model(h.registry.fetch_artifact(v).unwrap(), Timestamp(0))
            .unwrap();
        h.agent
            .process1_step(&reading(0, 55.0), Timestamp(0))
            .unwrap();
        let records = h.registry.audit().records();
        let alarm = records
            .iter()
            .find(|r| r.event == AuditEvent::Alarm)
            .expect("alarm record");
        assert_eq!(alarm.detail_value("kind"), Some("air_quality"));
    }

    fn feed_constant_error(h: &mut Harness, n: usize, err: f64) {
        // Build matured predictions with a fixed error magnitude by swapping
        // in a model that predicts actual + err for a flat series.
        let mut artifact = h.registry.fetch_artifact(1).unwrap();
        if let crate::models::ModelParams::Mlr(p) = &mut artifact.params {
            p.intercept = 50.0 + err;
            p.weights = [0.0; 6];
        }
        let v = h.registry.register_model(&artifact, Timestamp(0)).unwrap();
        h.registry.confirm_deploy("edge-A10", v, Timestamp(0)).unwrap();
        h.agent
            .swap_model(h.registry.fetch_artifact(v).unwrap(), Timestamp(0))
            .unwrap();
        for i in 0..n {
            let t = (i as i64 + 1) * 300_000;
            h.agent
                .process1_step(&reading(t, 50.0), Timestamp(t))
                .unwrap();
        }
    }

    #[test]
    fn drift_threshold_is_inclusive_at_ten() {
        let mut h = harness();
        feed_constant_error(&mut h, 40, 10.0);
        let report = h.agent.process2_evaluate(Timestamp(DAY_MS)).unwrap();
        assert!(report.n_evaluated >= MIN_EVALUATED);
        assert_eq!(report.daily_rmse, 10.0);
        assert!(report.triggered);
    }

    #[test]
    fn just_below_threshold_does_not_trigger() {
        let mut h = harness();
        feed_constant_error(&mut h, 40, 9.99);
        let report = h.agent.process2_evaluate(Timestamp(DAY_MS)).unwrap();
        assert!((report.daily_rmse - 9.99).abs() < 1e-9);
        assert!(!report.triggered);
    }

    #[test]
    fn sixteen_point_rmse_triggers() {
        let mut h = harness();
        feed_constant_error(&mut h, 40, 16.39);
        let report = h.agent.process2_evaluate(Timestamp(DAY_MS)).unwrap();
        assert!(report.triggered);
    }

    #[test]
    fn too_few_matured_predictions_never_trigger() {
        let mut h = harness();
        feed_constant_error(&mut h, 10, 50.0); // only 7 matured (10 - 3)
        let report = h.agent.process2_evaluate(Timestamp(DAY_MS)).unwrap();
        assert_eq!(report.n_evaluated, 7);
        assert!(!report.triggered);
    }

    #[test]
    fn empty_window_records_insufficient() {
        let mut h = harness();
        let report = h.agent.process2_evaluate(Timestamp(DAY_MS)).unwrap();
        assert_eq!(report.n_evaluated, 0);
        assert!(report.daily_rmse.is_nan());
        assert!(!report.triggered);
        let records = h.registry.audit().records();
        let drift = records
            .iter()
            .find(|r| r.event == AuditEvent::Drift)
            .unwrap();
        assert_eq!(drift.detail_value("insufficient"), Some("true"));
    }

    #[test]
    fn drift_report_published_on_fleet_topic() {
        let mut h = harness();
        let sub = h
            .broker
            .subscribe(&Topic::parse("fleet/+/drift").unwrap())
            .unwrap();
        feed_constant_error(&mut h, 40, 12.0);
        h.agent.process2_evaluate(Timestamp(DAY_MS)).unwrap();
        let message = sub.try_recv().expect("drift message");
        let report =
            DriftReport::from_wire(&message.payload, "edge-A10", message.published_at, DAY_MS)
                .unwrap();
        assert!(report.triggered);
        assert!((report.daily_rmse - 12.0).abs() < 1e-9);
    }

    #[test]
    fn swap_keeps_old_model_on_corrupt_artifact() {
        let mut h = harness();
        let mut corrupt = h.registry.fetch_artifact(1).unwrap();
        corrupt.cv_rmse = -3.0;
        assert!(matches!(
            h.agent.swap_model(corrupt, Timestamp(0)),
            Err(AgentError::ArtifactVerificationFailed(_))
        ));
        assert_eq!(h.agent.current_version(), 1);
    }

    #[test]
    fn swap_refuses_other_rooms_artifact() {
        let mut h = harness();
        let mut other = h.registry.fetch_artifact(1).unwrap();
        other.room = "A29".into();
        assert!(h.agent.swap_model(other, Timestamp(0)).is_err());
    }

    #[test]
    fn deploy_command_swaps_and_confirms() {
        let mut h = harness();
        let artifact = h.registry.fetch_artifact(1).unwrap();
        let v2 = h.registry.register_model(&artifact, Timestamp(5)).unwrap();
        let control = Topic::parse("fleet/edge-A10/control").unwrap();
        h.broker
            .publish(&control, ControlCommand { model_version: v2 }.to_wire())
            .unwrap();
        h.agent.drain(Timestamp(10)).unwrap();
        assert_eq!(h.agent.current_version(), v2);
        assert_eq!(h.registry.deployed_version("A10"), Some(v2));
        let records = h.registry.audit().records();
        let last_deploy = records
            .iter()
            .filter(|r| r.event == AuditEvent::Deploy)
            .last()
            .unwrap();
        assert_eq!(last_deploy.model_version, Some(v2));
        assert_eq!(last_deploy.at, Timestamp(10));
    }

    #[test]
    fn failed_fetch_keeps_old_model_and_audits() {
        let mut h = harness();
        let control = Topic::parse("fleet/edge-A10/control").unwrap();
        h.broker
            .publish(&control, ControlCommand { model_version: 42 }.to_wire())
            .unwrap();
        h.agent.drain(Timestamp(10)).unwrap();
        assert_eq!(h.agent.current_version(), 1);
        let records = h.registry.audit().records();
        assert!(records.iter().any(|r| r.event == AuditEvent::DeployFailed));
        let alarm = records
            .iter()
            .find(|r| r.event == AuditEvent::Alarm)
            .unwrap();
        assert_eq!(alarm.detail_value("kind"), Some("deploy_failure"));
        // Supervisor was notified, old model still serving.
        assert!(h.supervisor.device_counters("edge-A10").is_none());
    }

    #[test]
    fn version_runs_in_log_are_contiguous() {
        let mut h = harness();
        for i in 0..5 {
            let t = i * 300_000;
            h.agent
                .process1_step(&reading(t, 50.0), Timestamp(t))
                .unwrap();
        }
        let artifact = h.registry.fetch_artifact(1).unwrap();
        let v2 = h.registry.register_model(&artifact, Timestamp(0)).unwrap();
        h.agent
            .swap_model(h.registry.fetch_artifact(v2).unwrap(), Timestamp(0))
            .unwrap();
        for i in 5..10 {
            let t = i * 300_000;
            h.agent
                .process1_step(&reading(t, 50.0), Timestamp(t))
                .unwrap();
        }
        let rows = crate::pipeline::read_prediction_log(h.agent.log_path()).unwrap();
        let versions: Vec<u64> = rows.iter().map(|r| r.model_version).collect();
        assert_eq!(versions, vec![1, 1, 1, 1, 1, 2, 2, 2, 2, 2]);
    }
}
