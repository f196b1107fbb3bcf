//! Scenario configuration and the end-to-end run loop.
//!
//! A run wires synthetic sensors, the broker, per-device agents, the
//! registry and the supervisor together, then advances a discrete-event
//! clock through the configured number of simulated days. Everything is a
//! pure function of the configuration (including its seeds): two runs of
//! the same config produce byte-identical audit trails.

use std::collections::BTreeMap;
use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rand::SeedableRng;
use thiserror::Error;

use crate::agent::{AgentConfig, AgentError, ControlCommand, DriftReport, EdgeAgent};
use crate::models::selection::{evaluate_algorithms, mix_seed, select_best, train_artifact};
use crate::models::{Algorithm, Hyperparameters, ModelError};
use crate::pipeline::{
    build_training_set, clean, write_readings_csv, PipelineError, SensorReading, VersionDirectory,
};
use crate::registry::{
    AuditEvent, AuditLog, AuditRecord, Registry, RegistryError,
};
use crate::supervision::{
    build_fleet_report, write_report_files, DeviceInfo, FleetReport, Supervisor, SupervisionError,
    TelemetryRecord,
};
use crate::time::{SimClock, Timestamp, DAY_MS, MINUTE_MS};
use crate::transport::{
    decode_reading, encode_reading, Broker, Subscription, Topic, TransportError,
};

use super::events::{EventKind, EventQueue};
use super::profile::{RegimeShift, RoomProfile};

/// Retraining window: labeled examples from the most recent 14 simulated
/// days feed each retrain.
pub const RETRAIN_WINDOW_MS: i64 = 14 * DAY_MS;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Supervision(#[from] SupervisionError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("consistency check failed: {0}")]
    Inconsistent(String),
}

/// One simulated room and the edge device serving it (1:1).
#[derive(Debug, Clone)]
pub struct RoomConfig {
    pub profile: RoomProfile,
    pub device_id: String,
}

/// Full scenario description. See the README for the config-file grammar.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub start: Timestamp,
    pub duration_days: u32,
    pub history_days: u32,
    pub sampling_interval_ms: i64,
    pub telemetry_interval_ms: i64,
    pub drift_threshold: f64,
    pub aqi_alert_threshold: f64,
    pub folds: usize,
    /// 0 = run as fast as possible; otherwise simulated seconds per wall
    /// second.
    pub time_acceleration: f64,
    pub seeds: BTreeMap<String, u64>,
    pub rooms: Vec<RoomConfig>,
}

pub const SEED_COMPONENTS: [&str; 4] = ["generator", "training", "retraining", "telemetry"];

fn valid_id(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl ScenarioConfig {
    /// Three calibrated rooms with one injected regime shift each (when
    /// `with_shifts`), seeded from a single master seed.
    pub fn three_rooms(
        start: Timestamp,
        duration_days: u32,
        history_days: u32,
        with_shifts: bool,
        master_seed: u64,
    ) -> Self {
        let mut rooms = vec![
            RoomConfig {
                profile: RoomProfile::office_busy("A10"),
                device_id: "edge-A10".into(),
            },
            RoomConfig {
                profile: RoomProfile::meeting_busy("A29"),
                device_id: "edge-A29".into(),
            },
            RoomConfig {
                profile: RoomProfile::meeting_quiet("A30"),
                device_id: "edge-A30".into(),
            },
        ];
        if with_shifts {
            // One shift per room, one hour past a daily boundary so the next
            // daily evaluation sees almost a full post-shift day.
            let day = |d: i64| start.add_millis(d * DAY_MS + MINUTE_MS * 60);
            let shift_days = [
                duration_days as i64 * 12 / 45,
                duration_days as i64 * 20 / 45,
                duration_days as i64 * 28 / 45,
            ];
            rooms[0]
                .profile
                .regime_shifts
                .push(RegimeShift::new(day(shift_days[0].max(1)), 5.0, 2.0, 11.0));
            rooms[1]
                .profile
                .regime_shifts
                .push(RegimeShift::new(day(shift_days[1].max(2)), 6.0, 2.2, 10.0));
            rooms[2]
                .profile
                .regime_shifts
                .push(RegimeShift::new(day(shift_days[2].max(3)), 4.0, 1.8, 11.0));
        }
        let mut seeds = BTreeMap::new();
        for component in SEED_COMPONENTS {
            seeds.insert(component.to_string(), mix_seed(master_seed, component));
        }
        ScenarioConfig {
            start,
            duration_days,
            history_days,
            sampling_interval_ms: 5 * MINUTE_MS,
            telemetry_interval_ms: MINUTE_MS,
            drift_threshold: 10.0,
            aqi_alert_threshold: 100.0,
            folds: 10,
            time_acceleration: 0.0,
            seeds,
            rooms,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.rooms.is_empty() {
            return Err(SimError::Config("no rooms configured".into()));
        }
        if self.duration_days == 0 || self.history_days == 0 {
            return Err(SimError::Config(
                "duration_days and history_days must be at least 1".into(),
            ));
        }
        if self.sampling_interval_ms <= 0 || self.telemetry_interval_ms <= 0 {
            return Err(SimError::Config("intervals must be positive".into()));
        }
        if !(self.drift_threshold > 0.0) || !(self.aqi_alert_threshold > 0.0) {
            return Err(SimError::Config("thresholds must be positive".into()));
        }
        if self.folds < 2 {
            return Err(SimError::Config("folds must be at least 2".into()));
        }
        if self.time_acceleration < 0.0 {
            return Err(SimError::Config("time_acceleration must not be negative".into()));
        }
        for component in SEED_COMPONENTS {
            if !self.seeds.contains_key(component) {
                return Err(SimError::Config(format!(
                    "missing seed for component `{component}`"
                )));
            }
        }
        let mut seen_rooms = std::collections::BTreeSet::new();
        let mut seen_devices = std::collections::BTreeSet::new();
        for rc in &self.rooms {
            if !valid_id(&rc.profile.room) || !valid_id(&rc.device_id) {
                return Err(SimError::Config(format!(
                    "room and device ids must be alphanumeric/dash/underscore: {} / {}",
                    rc.profile.room, rc.device_id
                )));
            }
            if !seen_rooms.insert(rc.profile.room.clone()) {
                return Err(SimError::Config(format!(
                    "duplicate room {}",
                    rc.profile.room
                )));
            }
            if !seen_devices.insert(rc.device_id.clone()) {
                return Err(SimError::Config(format!(
                    "duplicate device {}",
                    rc.device_id
                )));
            }
            for shift in &rc.profile.regime_shifts {
                if shift.at < self.start {
                    return Err(SimError::Config(format!(
                        "regime shift for {} predates scenario start",
                        rc.profile.room
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn end(&self) -> Timestamp {
        self.start.add_millis(self.duration_days as i64 * DAY_MS)
    }

    fn seed(&self, component: &str) -> u64 {
        *self.seeds.get(component).expect("validated seeds")
    }

    /// Parses the line-oriented `key = value` grammar with `[room NAME]`
    /// sections. `fallback_seed` stands in for a missing master `seed` key.
    pub fn parse(text: &str, fallback_seed: Option<u64>) -> Result<Self, SimError> {
        let bad = |line: &str, why: &str| SimError::Config(format!("{why}: {line:?}"));
        let mut top: Vec<(String, String)> = Vec::new();
        let mut sections: Vec<(String, Vec<(String, String)>)> = Vec::new();
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix("[room ").and_then(|r| r.strip_suffix(']')) {
                sections.push((name.trim().to_string(), Vec::new()));
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(line, "expected key = value"))?;
            let pair = (k.trim().to_string(), v.trim().to_string());
            match sections.last_mut() {
                Some((_, pairs)) => pairs.push(pair),
                None => top.push(pair),
            }
        }

        let take = |key: &str| top.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone());
        let parse_f64 = |key: &str, v: &str| {
            v.parse::<f64>()
                .map_err(|_| SimError::Config(format!("bad number for {key}: {v:?}")))
        };
        let parse_u64 = |key: &str, v: &str| {
            v.parse::<u64>()
                .map_err(|_| SimError::Config(format!("bad integer for {key}: {v:?}")))
        };

        let known_top = [
            "start",
            "duration_days",
            "history_days",
            "sampling_interval_min",
            "telemetry_interval_min",
            "drift_threshold",
            "aqi_alert_threshold",
            "folds",
            "time_acceleration",
            "seed",
        ];
        for (k, _) in &top {
            if !known_top.contains(&k.as_str()) && !k.starts_with("seed.") {
                return Err(SimError::Config(format!("unknown key `{k}`")));
            }
        }

        let start_raw = take("start").ok_or_else(|| SimError::Config("missing `start`".into()))?;
        let start = Timestamp::parse_rfc3339(&start_raw)
            .map_err(|e| SimError::Config(e.to_string()))?;
        let duration_days =
            parse_u64("duration_days", &take("duration_days").unwrap_or_else(|| "45".into()))?
                as u32;
        let history_days =
            parse_u64("history_days", &take("history_days").unwrap_or_else(|| "90".into()))? as u32;
        let sampling_interval_ms = parse_u64(
            "sampling_interval_min",
            &take("sampling_interval_min").unwrap_or_else(|| "5".into()),
        )? as i64
            * MINUTE_MS;
        let telemetry_interval_ms = parse_u64(
            "telemetry_interval_min",
            &take("telemetry_interval_min").unwrap_or_else(|| "1".into()),
        )? as i64
            * MINUTE_MS;
        let drift_threshold = parse_f64(
            "drift_threshold",
            &take("drift_threshold").unwrap_or_else(|| "10.0".into()),
        )?;
        let aqi_alert_threshold = parse_f64(
            "aqi_alert_threshold",
            &take("aqi_alert_threshold").unwrap_or_else(|| "100.0".into()),
        )?;
        let folds =
            parse_u64("folds", &take("folds").unwrap_or_else(|| "10".into()))? as usize;
        let time_acceleration = parse_f64(
            "time_acceleration",
            &take("time_acceleration").unwrap_or_else(|| "0".into()),
        )?;

        let master = match take("seed") {
            Some(v) => Some(parse_u64("seed", &v)?),
            None => fallback_seed,
        };
        let mut seeds = BTreeMap::new();
        for component in SEED_COMPONENTS {
            let key = format!("seed.{component}");
            let value = match top.iter().find(|(k, _)| *k == key) {
                Some((_, v)) => parse_u64(&key, v)?,
                None => match master {
                    Some(m) => mix_seed(m, component),
                    None => {
                        return Err(SimError::Config(format!(
                            "no seed for `{component}`: set `seed`, `{key}`, or EDGEFLEET_SEED"
                        )))
                    }
                },
            };
            seeds.insert(component.to_string(), value);
        }

        let mut rooms = Vec::new();
        for (name, pairs) in &sections {
            rooms.push(parse_room_section(name, pairs)?);
        }

        let config = ScenarioConfig {
            start,
            duration_days,
            history_days,
            sampling_interval_ms,
            telemetry_interval_ms,
            drift_threshold,
            aqi_alert_threshold,
            folds,
            time_acceleration,
            seeds,
            rooms,
        };
        config.validate()?;
        Ok(config)
    }

    /// Serializes back to the config grammar (all seeds made explicit).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("start = {}\n", self.start.to_rfc3339()));
        out.push_str(&format!("duration_days = {}\n", self.duration_days));
        out.push_str(&format!("history_days = {}\n", self.history_days));
        out.push_str(&format!(
            "sampling_interval_min = {}\n",
            self.sampling_interval_ms / MINUTE_MS
        ));
        out.push_str(&format!(
            "telemetry_interval_min = {}\n",
            self.telemetry_interval_ms / MINUTE_MS
        ));
        out.push_str(&format!("drift_threshold = {}\n", self.drift_threshold));
        out.push_str(&format!(
            "aqi_alert_threshold = {}\n",
            self.aqi_alert_threshold
        ));
        out.push_str(&format!("folds = {}\n", self.folds));
        out.push_str(&format!("time_acceleration = {}\n", self.time_acceleration));
        for (component, value) in &self.seeds {
            out.push_str(&format!("seed.{component} = {value}\n"));
        }
        for rc in &self.rooms {
            let p = &rc.profile;
            out.push_str(&format!("\n[room {}]\n", p.room));
            out.push_str(&format!("device = {}\n", rc.device_id));
            out.push_str(&format!("room_type = {}\n", p.room_type));
            out.push_str(&format!("floor = {}\n", p.floor));
            out.push_str(&format!("base_aqi = {}\n", p.base_aqi));
            out.push_str(&format!("daily_amplitude = {}\n", p.daily_amplitude));
            out.push_str(&format!("noise_std = {}\n", p.noise_std));
            out.push_str(&format!("spike_rate_per_day = {}\n", p.occupancy_spike_rate));
            out.push_str(&format!("spike_magnitude = {}\n", p.spike.magnitude));
            out.push_str(&format!(
                "spike_magnitude_jitter = {}\n",
                p.spike.magnitude_jitter
            ));
            out.push_str(&format!("spike_ramp_min = {}\n", p.spike.ramp_ms / MINUTE_MS));
            out.push_str(&format!(
                "spike_plateau_min = {}\n",
                p.spike.plateau_ms / MINUTE_MS
            ));
            out.push_str(&format!(
                "spike_plateau_jitter_min = {}\n",
                p.spike.plateau_jitter_ms / MINUTE_MS
            ));
            out.push_str(&format!(
                "coupling_temperature = {}\n",
                p.couplings.temperature
            ));
            out.push_str(&format!(
                "coupling_light_lux_per_aqi = {}\n",
                p.couplings.light_lux_per_aqi
            ));
            out.push_str(&format!("coupling_humidity = {}\n", p.couplings.humidity));
            out.push_str(&format!("humidity_base = {}\n", p.humidity_base));
            out.push_str(&format!("humidity_noise_std = {}\n", p.humidity_noise_std));
            out.push_str(&format!("temperature_base = {}\n", p.temperature_base));
            out.push_str(&format!("pressure_base = {}\n", p.pressure_base));
            for s in &p.regime_shifts {
                out.push_str(&format!(
                    "shift = {} offset={} humidity_coupling={} humidity_amplitude={} humidity_period_min={}\n",
                    s.at.to_rfc3339(),
                    s.aqi_offset,
                    s.humidity_coupling,
                    s.humidity_amplitude,
                    s.humidity_period_ms / MINUTE_MS
                ));
            }
        }
        out
    }
}

fn parse_room_section(name: &str, pairs: &[(String, String)]) -> Result<RoomConfig, SimError> {
    // Preset selects the starting profile; remaining keys override it.
    let preset = pairs
        .iter()
        .find(|(k, _)| k == "profile")
        .map(|(_, v)| v.as_str())
        .unwrap_or("office_busy");
    let mut profile = match preset {
        "office_busy" => RoomProfile::office_busy(name),
        "meeting_busy" => RoomProfile::meeting_busy(name),
        "meeting_quiet" => RoomProfile::meeting_quiet(name),
        other => {
            return Err(SimError::Config(format!(
                "unknown profile preset `{other}` for room {name}"
            )))
        }
    };
    let mut device_id = format!("edge-{name}");
    let f64_of = |k: &str, v: &str| {
        v.parse::<f64>()
            .map_err(|_| SimError::Config(format!("bad number for {k} in room {name}: {v:?}")))
    };
    let minutes_of = |k: &str, v: &str| {
        v.parse::<i64>()
            .map(|m| m * MINUTE_MS)
            .map_err(|_| SimError::Config(format!("bad minutes for {k} in room {name}: {v:?}")))
    };
    for (k, v) in pairs {
        match k.as_str() {
            "profile" => {}
            "device" => device_id = v.clone(),
            "room_type" => profile.room_type = v.clone(),
            "floor" => profile.floor = v.clone(),
            "sensor_name" => profile.sensor_name = v.clone(),
            "base_aqi" => profile.base_aqi = f64_of(k, v)?,
            "daily_amplitude" => profile.daily_amplitude = f64_of(k, v)?,
            "noise_std" => profile.noise_std = f64_of(k, v)?,
            "spike_rate_per_day" => profile.occupancy_spike_rate = f64_of(k, v)?,
            "spike_magnitude" => profile.spike.magnitude = f64_of(k, v)?,
            "spike_magnitude_jitter" => profile.spike.magnitude_jitter = f64_of(k, v)?,
            "spike_ramp_min" => profile.spike.ramp_ms = minutes_of(k, v)?,
            "spike_plateau_min" => profile.spike.plateau_ms = minutes_of(k, v)?,
            "spike_plateau_jitter_min" => profile.spike.plateau_jitter_ms = minutes_of(k, v)?,
            "coupling_temperature" => profile.couplings.temperature = f64_of(k, v)?,
            "coupling_light_lux_per_aqi" => profile.couplings.light_lux_per_aqi = f64_of(k, v)?,
            "coupling_humidity" => profile.couplings.humidity = f64_of(k, v)?,
            "humidity_base" => profile.humidity_base = f64_of(k, v)?,
            "humidity_noise_std" => profile.humidity_noise_std = f64_of(k, v)?,
            "temperature_base" => profile.temperature_base = f64_of(k, v)?,
            "pressure_base" => profile.pressure_base = f64_of(k, v)?,
            "shift" => profile.regime_shifts.push(parse_shift(name, v)?),
            other => {
                return Err(SimError::Config(format!(
                    "unknown key `{other}` in room {name}"
                )))
            }
        }
    }
    Ok(RoomConfig { profile, device_id })
}

fn parse_shift(room: &str, raw: &str) -> Result<RegimeShift, SimError> {
    let mut parts = raw.split_whitespace();
    let at_raw = parts
        .next()
        .ok_or_else(|| SimError::Config(format!("empty shift in room {room}")))?;
    let at = Timestamp::parse_rfc3339(at_raw)
        .map_err(|_| SimError::Config(format!("bad shift instant {at_raw:?} in room {room}")))?;
    let mut shift = RegimeShift::new(at, 0.0, 0.0, 0.0);
    for part in parts {
        let (k, v) = part.split_once('=').ok_or_else(|| {
            SimError::Config(format!("bad shift field {part:?} in room {room}"))
        })?;
        let value = v
            .parse::<f64>()
            .map_err(|_| SimError::Config(format!("bad shift value {part:?} in room {room}")))?;
        match k {
            "offset" => shift.aqi_offset = value,
            "humidity_coupling" => shift.humidity_coupling = value,
            "humidity_amplitude" => shift.humidity_amplitude = value,
            "humidity_period_min" => shift.humidity_period_ms = value as i64 * MINUTE_MS,
            other => {
                return Err(SimError::Config(format!(
                    "unknown shift field `{other}` in room {room}"
                )))
            }
        }
    }
    Ok(shift)
}

/// Everything a finished run leaves behind.
#[derive(Debug)]
pub struct ScenarioResult {
    pub run_dir: PathBuf,
    /// Deploy timeline per room: (instant, version).
    pub timelines: BTreeMap<String, Vec<(Timestamp, u64)>>,
    pub drift_events: Vec<AuditRecord>,
    pub retrain_events: Vec<AuditRecord>,
    pub alarms: Vec<AuditRecord>,
    pub report: FleetReport,
    pub files: Vec<PathBuf>,
}

/// Per-device synthetic telemetry source.
struct TelemetrySim {
    device_id: String,
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl TelemetrySim {
    fn new(device_id: &str, seed: u64) -> Self {
        TelemetrySim {
            device_id: device_id.to_string(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, 1.0).expect("unit normal"),
        }
    }

    fn sample(&mut self, at: Timestamp, counters: (u64, u64)) -> TelemetryRecord {
        let mut draw = |std: f64| self.normal.sample(&mut self.rng) * std;
        TelemetryRecord {
            device_id: self.device_id.clone(),
            at,
            accelerometer: [draw(0.02), draw(0.02), 9.81 + draw(0.02)],
            gyroscope: [draw(0.005), draw(0.005), draw(0.005)],
            humidity: 40.0 + draw(1.0),
            magnetometer: [21.0 + draw(0.2), 1.5 + draw(0.2), 43.0 + draw(0.2)],
            pressure: 1012.0 + draw(0.5),
            temperature: 35.0 + draw(0.8),
            inference_count: counters.0,
            dropped_readings: counters.1,
        }
    }
}

/// Cloud-side controller: tracks recent data per room and answers triggered
/// drift reports with retrain + deploy dispatch.
struct FleetController {
    registry: Arc<Registry>,
    supervisor: Arc<Supervisor>,
    broker: Arc<Broker>,
    readings_sub: Subscription,
    drift_sub: Subscription,
    room_of_device: BTreeMap<String, String>,
    history: BTreeMap<String, VecDeque<SensorReading>>,
    retrain_seed: u64,
    retrain_counter: u64,
    drift_window_ms: i64,
}

impl FleetController {
    fn absorb_readings(&mut self) -> Result<(), SimError> {
        while let Some(message) = self.readings_sub.try_recv() {
            let reading = decode_reading(&message.payload)?;
            let window = self
                .history
                .entry(reading.room.clone())
                .or_default();
            let cutoff = reading.timestamp.millis() - RETRAIN_WINDOW_MS;
            window.push_back(reading);
            while window
                .front()
                .map_or(false, |r| r.timestamp.millis() < cutoff)
            {
                window.pop_front();
            }
        }
        Ok(())
    }

    fn collect_triggered_drifts(&mut self) -> Result<Vec<DriftReport>, SimError> {
        let mut out = Vec::new();
        while let Some(message) = self.drift_sub.try_recv() {
            let device = message
                .topic
                .segment(1)
                .ok_or_else(|| SimError::Inconsistent("drift topic without device".into()))?
                .to_string();
            let report = DriftReport::from_wire(
                &message.payload,
                &device,
                message.published_at,
                self.drift_window_ms,
            )?;
            if report.triggered {
                out.push(report);
            }
        }
        Ok(out)
    }

    /// Retrains and dispatches a deploy for each triggered report, in
    /// arrival order.
    fn handle_drifts(&mut self, reports: Vec<DriftReport>, now: Timestamp) -> Result<(), SimError> {
        for report in reports {
            let room = self
                .room_of_device
                .get(&report.device_id)
                .cloned()
                .ok_or_else(|| {
                    SimError::Inconsistent(format!("drift from unknown device {}", report.device_id))
                })?;
            let series: Vec<SensorReading> = self
                .history
                .get(&room)
                .map(|w| w.iter().cloned().collect())
                .unwrap_or_default();
            let examples = match build_training_set(&clean(series)) {
                Ok(examples) => examples,
                Err(PipelineError::InsufficientData { .. }) => Vec::new(),
                Err(e) => return Err(e.into()),
            };
            let seed = mix_seed(
                self.retrain_seed,
                &format!("{room}:{}", self.retrain_counter),
            );
            self.retrain_counter += 1;
            match self.registry.handle_drift(&report, &room, &examples, seed, now) {
                Ok(version) => {
                    let topic = Topic::parse(&format!("fleet/{}/control", report.device_id))?;
                    self.broker
                        .publish(&topic, ControlCommand { model_version: version }.to_wire())?;
                }
                Err(RegistryError::InsufficientData { .. }) => {
                    // Deployment skipped; the registry audited it, raise the alarm.
                    self.supervisor.raise_deploy_failure(
                        &report.device_id,
                        &room,
                        report.model_version,
                        now,
                    )?;
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    }
}

/// Runs a scenario under `out_dir` (`data/`, `registry/`, `logs/`,
/// `report/`). Deterministic given the config, including all seeds.
pub fn run_scenario(config: &ScenarioConfig, out_dir: impl AsRef<Path>) -> Result<ScenarioResult, SimError> {
    config.validate()?;
    let out_dir = out_dir.as_ref().to_path_buf();
    let io = |e: std::io::Error| SimError::Io(e.to_string());
    for sub in ["data", "registry", "logs", "report"] {
        std::fs::create_dir_all(out_dir.join(sub)).map_err(io)?;
    }
    std::fs::write(out_dir.join("config.txt"), config.to_text()).map_err(io)?;

    let start = config.start;
    let end = config.end();
    let interval = config.sampling_interval_ms;
    let hyper = Hyperparameters::default();

    let clock = SimClock::new(start);
    let audit = Arc::new(AuditLog::create(out_dir.join("registry").join("audit.csv"))?);
    let registry = Arc::new(Registry::create(
        out_dir.join("registry"),
        audit.clone(),
        hyper.clone(),
    )?);
    let supervisor = Arc::new(Supervisor::new(
        audit.clone(),
        config.aqi_alert_threshold,
        config.telemetry_interval_ms,
    ));
    let broker = Arc::new(Broker::new(Arc::new(clock.clone())));

    // Generate each room's full series (history + live), train and deploy
    // the initial model, stand up the agent.
    let mut live_series: Vec<Vec<SensorReading>> = Vec::new();
    let mut agents: Vec<EdgeAgent> = Vec::new();
    let mut telemetry_sims: Vec<TelemetrySim> = Vec::new();
    let mut device_infos: Vec<DeviceInfo> = Vec::new();
    let mut controller_history: BTreeMap<String, VecDeque<SensorReading>> = BTreeMap::new();

    for rc in &config.rooms {
        let room = rc.profile.room.clone();
        let gen_seed = mix_seed(config.seed("generator"), &room);
        let total_ms = (config.history_days + config.duration_days) as i64 * DAY_MS;
        let series = super::profile::generate_room_series(
            &rc.profile,
            gen_seed,
            start.add_millis(-(config.history_days as i64) * DAY_MS),
            total_ms,
            interval,
        );
        write_readings_csv(out_dir.join("data").join(format!("{room}.csv")), &series)?;
        let split_at = series.partition_point(|r| r.timestamp < start);
        let (history, live) = series.split_at(split_at);

        let examples = build_training_set(&clean(history.to_vec()))?;
        let training_seed = mix_seed(config.seed("training"), &room);
        let candidates =
            evaluate_algorithms(&examples, &Algorithm::ALL, config.folds, &hyper, training_seed);
        let best = select_best(&candidates).ok_or_else(|| {
            SimError::Config(format!("no trainable algorithm for room {room}"))
        })?;
        let artifact = train_artifact(
            &examples,
            best,
            config.folds,
            &hyper,
            training_seed,
            &room,
            start,
        )?;
        let version = registry.register_model(&artifact, start)?;
        registry.confirm_deploy(&rc.device_id, version, start)?;
        let deployed = registry.fetch_artifact(version)?;

        let telemetry_path = out_dir
            .join("logs")
            .join(format!("{}_telemetry.csv", rc.device_id));
        supervisor.register_device(&rc.device_id, &room, Some(&telemetry_path))?;
        let log_path = out_dir.join("logs").join(format!("{}.csv", rc.device_id));
        let log = crate::pipeline::PredictionLog::create(
            &log_path,
            registry.clone() as Arc<dyn VersionDirectory>,
        )?;
        let agent = EdgeAgent::new(
            AgentConfig {
                device_id: rc.device_id.clone(),
                room: room.clone(),
                drift_threshold: config.drift_threshold,
                min_evaluated: crate::agent::MIN_EVALUATED,
                drift_window_ms: DAY_MS,
            },
            deployed,
            log,
            broker.clone(),
            registry.clone(),
            supervisor.clone(),
        )?;

        // Seed the controller's recent-data window with the history tail so
        // early retrains still see a full window.
        let tail_cutoff = start.millis() - RETRAIN_WINDOW_MS;
        controller_history.insert(
            room.clone(),
            history
                .iter()
                .filter(|r| r.timestamp.millis() >= tail_cutoff)
                .cloned()
                .collect(),
        );

        telemetry_sims.push(TelemetrySim::new(
            &rc.device_id,
            mix_seed(config.seed("telemetry"), &rc.device_id),
        ));
        device_infos.push(DeviceInfo {
            device_id: rc.device_id.clone(),
            room: room.clone(),
            log_path,
            telemetry_path: Some(telemetry_path),
        });
        agents.push(agent);
        live_series.push(live.to_vec());
    }

    let telemetry_sub = broker.subscribe(&Topic::parse("sensors/+/telemetry")?)?;
    let mut controller = FleetController {
        registry: registry.clone(),
        supervisor: supervisor.clone(),
        broker: broker.clone(),
        readings_sub: broker.subscribe(&Topic::parse("sensors/+/readings")?)?,
        drift_sub: broker.subscribe(&Topic::parse("fleet/+/drift")?)?,
        room_of_device: config
            .rooms
            .iter()
            .map(|rc| (rc.device_id.clone(), rc.profile.room.clone()))
            .collect(),
        history: controller_history,
        retrain_seed: config.seed("retraining"),
        retrain_counter: 0,
        drift_window_ms: DAY_MS,
    };

    // Schedule everything: sensor readings, telemetry ticks, daily triggers.
    let mut queue = EventQueue::new();
    for (r, live) in live_series.iter().enumerate() {
        for (k, reading) in live.iter().enumerate() {
            queue.schedule(reading.timestamp, EventKind::Sensor, r, k);
        }
    }
    let telemetry_ticks = (config.duration_days as i64 * DAY_MS) / config.telemetry_interval_ms;
    for d in 0..config.rooms.len() {
        for k in 0..telemetry_ticks {
            queue.schedule(
                start.add_millis(k * config.telemetry_interval_ms),
                EventKind::Telemetry,
                d,
                k as usize,
            );
        }
        for day in 1..=config.duration_days {
            queue.schedule(
                start.add_millis(day as i64 * DAY_MS),
                EventKind::DailyTrigger,
                d,
                day as usize,
            );
        }
    }

    let reading_topics: Vec<Topic> = config
        .rooms
        .iter()
        .map(|rc| Topic::parse(&format!("sensors/{}/readings", rc.profile.room)))
        .collect::<Result<_, _>>()?;
    let telemetry_topics: Vec<Topic> = config
        .rooms
        .iter()
        .map(|rc| Topic::parse(&format!("sensors/{}/telemetry", rc.profile.room)))
        .collect::<Result<_, _>>()?;

    let mut published = vec![0u64; config.rooms.len()];
    let wall_start = std::time::Instant::now();
    while let Some(at) = queue.next_at() {
        if config.time_acceleration > 0.0 {
            let sim_elapsed_ms = (at.millis() - start.millis()) as f64;
            let target_wall = sim_elapsed_ms / 1000.0 / config.time_acceleration;
            let actual_wall = wall_start.elapsed().as_secs_f64();
            if target_wall > actual_wall {
                std::thread::sleep(std::time::Duration::from_secs_f64(target_wall - actual_wall));
            }
        }
        // Fire every event scheduled at this instant, in tie-break order.
        while let Some(event) = queue.pop_until(at) {
            clock.set(event.at);
            match event.kind {
                EventKind::Sensor => {
                    let reading = &live_series[event.target][event.index];
                    broker.publish(&reading_topics[event.target], encode_reading(reading))?;
                    published[event.target] += 1;
                }
                EventKind::Telemetry => {
                    let counters = agents[event.target].counters();
                    let record = telemetry_sims[event.target].sample(event.at, counters);
                    broker.publish(&telemetry_topics[event.target], record.to_wire())?;
                }
                EventKind::DailyTrigger => {
                    agents[event.target].process2_evaluate(event.at)?;
                }
            }
            for agent in agents.iter_mut() {
                agent.drain(event.at)?;
            }
            while let Some(message) = telemetry_sub.try_recv() {
                supervisor.ingest_telemetry(TelemetryRecord::from_wire(&message.payload)?)?;
            }
            controller.absorb_readings()?;
        }
        // Retrains land one millisecond after the trigger instant, so model
        // handover never shares a timestamp with an inference.
        let pending = controller.collect_triggered_drifts()?;
        if !pending.is_empty() {
            let deploy_at = at.add_millis(1);
            clock.set(deploy_at);
            controller.handle_drifts(pending, deploy_at)?;
            for agent in agents.iter_mut() {
                agent.drain(deploy_at)?;
            }
        }
    }
    clock.set(end);
    supervisor.flush()?;

    // Conservation: every published reading was either processed or dropped.
    for (i, agent) in agents.iter().enumerate() {
        let (inferences, dropped) = agent.counters();
        if inferences + dropped != published[i] {
            return Err(SimError::Inconsistent(format!(
                "device {}: published {} != processed {} + dropped {}",
                agent.device_id(),
                published[i],
                inferences,
                dropped
            )));
        }
    }

    let records = audit.records();
    verify_traceability(&records, &device_infos)?;

    let report = build_fleet_report((start, end), &records, &device_infos, interval)?;
    let mut files = write_report_files(&report, &records, &device_infos, &out_dir.join("report"), false)?;
    files.push(out_dir.join("registry").join("audit.csv"));
    files.push(out_dir.join("config.txt"));
    for info in &device_infos {
        files.push(info.log_path.clone());
        if let Some(p) = &info.telemetry_path {
            files.push(p.clone());
        }
    }
    for rc in &config.rooms {
        files.push(out_dir.join("data").join(format!("{}.csv", rc.profile.room)));
    }

    let mut timelines: BTreeMap<String, Vec<(Timestamp, u64)>> = BTreeMap::new();
    for r in &records {
        if r.event == AuditEvent::Deploy {
            if let Some(v) = r.model_version {
                timelines.entry(r.room.clone()).or_default().push((r.at, v));
            }
        }
    }
    let drift_events = records
        .iter()
        .filter(|r| r.event == AuditEvent::Drift && r.detail_value("triggered") == Some("true"))
        .cloned()
        .collect();
    let retrain_events = records
        .iter()
        .filter(|r| r.event == AuditEvent::Retrain)
        .cloned()
        .collect();
    let alarms = records
        .iter()
        .filter(|r| r.event == AuditEvent::Alarm)
        .cloned()
        .collect();

    Ok(ScenarioResult {
        run_dir: out_dir,
        timelines,
        drift_events,
        retrain_events,
        alarms,
        report,
        files,
    })
}

/// Replays every prediction log against the audit deploy timeline: each row
/// must carry exactly the version that was live for its room at that instant.
fn verify_traceability(records: &[AuditRecord], devices: &[DeviceInfo]) -> Result<(), SimError> {
    for info in devices {
        let mut deploys: Vec<(Timestamp, u64)> = records
            .iter()
            .filter(|r| r.event == AuditEvent::Deploy && r.room == info.room)
            .filter_map(|r| r.model_version.map(|v| (r.at, v)))
            .collect();
        deploys.sort_by_key(|(at, _)| *at);
        let rows = crate::pipeline::read_prediction_log(&info.log_path)?;
        for row in &rows {
            let live = deploys
                .partition_point(|(at, _)| *at <= row.predicted_at)
                .checked_sub(1)
                .map(|i| deploys[i].1);
            if live != Some(row.model_version) {
                return Err(SimError::Inconsistent(format!(
                    "device {}: row at {} stamped v{} but audit says {:?}",
                    info.device_id,
                    row.predicted_at.to_rfc3339(),
                    row.model_version,
                    live
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn start() -> Timestamp {
        Timestamp::parse_rfc3339("2020-03-15T00:00:00Z").unwrap()
    }

    #[test]
    fn three_room_config_validates() {
        let config = ScenarioConfig::three_rooms(start(), 45, 90, true, 42);
        config.validate().unwrap();
        assert_eq!(config.rooms.len(), 3);
        assert!(config.rooms.iter().all(|r| r.profile.regime_shifts.len() == 1));
    }

    #[test]
    fn config_text_round_trips() {
        let config = ScenarioConfig::three_rooms(start(), 10, 20, true, 7);
        let text = config.to_text();
        let parsed = ScenarioConfig::parse(&text, None).unwrap();
        assert_eq!(parsed.duration_days, 10);
        assert_eq!(parsed.history_days, 20);
        assert_eq!(parsed.seeds, config.seeds);
        assert_eq!(parsed.rooms.len(), 3);
        for (a, b) in parsed.rooms.iter().zip(&config.rooms) {
            assert_eq!(a.profile, b.profile);
            assert_eq!(a.device_id, b.device_id);
        }
    }

    #[test]
    fn missing_seed_is_config_error() {
        let text = "start = 2020-03-15T00:00:00Z\n[room A10]\n";
        match ScenarioConfig::parse(text, None) {
            Err(SimError::Config(msg)) => assert!(msg.contains("seed"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
        // Fallback seed fills the gap.
        assert!(ScenarioConfig::parse(text, Some(1)).is_ok());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = "start = 2020-03-15T00:00:00Z\nseed = 1\nbogus = 2\n[room A10]\n";
        assert!(matches!(
            ScenarioConfig::parse(text, None),
            Err(SimError::Config(_))
        ));
        let text2 = "start = 2020-03-15T00:00:00Z\nseed = 1\n[room A10]\nwhatever = 3\n";
        assert!(matches!(
            ScenarioConfig::parse(text2, None),
            Err(SimError::Config(_))
        ));
    }

    #[test]
    fn short_smoke_run_is_consistent() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = ScenarioConfig::three_rooms(start(), 2, 4, false, 11);
        config.rooms.truncate(2);
        let result = run_scenario(&config, dir.path()).unwrap();
        // 2 rooms x 2 days x 288 readings.
        let per_device: Vec<u64> = result
            .report
            .devices
            .iter()
            .map(|d| d.readings_logged)
            .collect();
        assert_eq!(per_device, vec![576, 576]);
        assert!(result.report.devices.iter().all(|d| d.uptime == 1.0));
        // 2 daily evaluations per device.
        assert!(result
            .report
            .devices
            .iter()
            .all(|d| d.daily_rmse.len() == 2));
        assert!(result.run_dir.join("registry").join("audit.csv").exists());
        assert!(result.run_dir.join("report").join("summary.txt").exists());
        assert!(result.run_dir.join("config.txt").exists());
    }
}
