//! Fleet-level report assembly and rendering.
//!
//! Reports are derived purely from stored data (audit trail, prediction
//! logs, telemetry series), so they can be rebuilt offline from a run
//! directory and cross-checked against the audit records.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::pipeline::read_prediction_log;
use crate::registry::{AuditEvent, AuditRecord};
use crate::time::Timestamp;

use super::SupervisionError;

/// Where to find one device's stored series.
#[derive(Debug, Clone)]
pub struct DeviceInfo {
    pub device_id: String,
    pub room: String,
    pub log_path: PathBuf,
    pub telemetry_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSummary {
    pub channel: String,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DailyRmsePoint {
    pub at: Timestamp,
    /// NaN when the evaluation had no matured predictions.
    pub rmse: f64,
    pub n_evaluated: u64,
    pub triggered: bool,
}

#[derive(Debug, Clone)]
pub struct DeviceReport {
    pub device_id: String,
    pub room: String,
    /// Deploy instants and versions affecting this room, oldest first.
    pub timeline: Vec<(Timestamp, u64, String)>,
    pub daily_rmse: Vec<DailyRmsePoint>,
    pub drift_count: u64,
    pub retrain_count: u64,
    pub alarm_counts: BTreeMap<String, u64>,
    pub telemetry: Vec<ChannelSummary>,
    pub telemetry_samples: u64,
    pub readings_logged: u64,
    pub readings_dropped: u64,
    pub expected_readings: u64,
    pub uptime: f64,
}

#[derive(Debug, Clone)]
pub struct FleetReport {
    pub period: (Timestamp, Timestamp),
    pub devices: Vec<DeviceReport>,
    pub total_drift: u64,
    pub total_retrains: u64,
    pub total_alarms: u64,
}

/// Builds the report for `period` from audit records and per-device files.
pub fn build_fleet_report(
    period: (Timestamp, Timestamp),
    records: &[AuditRecord],
    devices: &[DeviceInfo],
    sampling_interval_ms: i64,
) -> Result<FleetReport, SupervisionError> {
    let in_period = |at: Timestamp| at >= period.0 && at <= period.1;
    // Algorithm names by version, from registration records.
    let mut algorithms: BTreeMap<u64, String> = BTreeMap::new();
    for r in records {
        if r.event == AuditEvent::Register {
            if let (Some(v), Some(algo)) = (r.model_version, r.detail_value("algorithm")) {
                algorithms.insert(v, algo.to_string());
            }
        }
    }

    let mut reports = Vec::new();
    for device in devices {
        let mut timeline = Vec::new();
        let mut daily_rmse = Vec::new();
        let mut drift_count = 0;
        let mut retrain_count = 0;
        let mut alarm_counts: BTreeMap<String, u64> = BTreeMap::new();
        for r in records {
            let matches_device = r.device_id.as_deref() == Some(device.device_id.as_str())
                || (r.device_id.is_none() && r.room == device.room);
            match r.event {
                AuditEvent::Deploy if r.room == device.room && r.at <= period.1 => {
                    if let Some(v) = r.model_version {
                        let algo = algorithms.get(&v).cloned().unwrap_or_default();
                        timeline.push((r.at, v, algo));
                    }
                }
                AuditEvent::Drift if matches_device && in_period(r.at) => {
                    let rmse = r
                        .detail_value("rmse")
                        .and_then(|v| v.parse::<f64>().ok())
                        .unwrap_or(f64::NAN);
                    let n_evaluated = r
                        .detail_value("n")
                        .and_then(|v| v.parse::<u64>().ok())
                        .unwrap_or(0);
                    let triggered = r.detail_value("triggered") == Some("true");
                    if triggered {
                        drift_count += 1;
                    }
                    daily_rmse.push(DailyRmsePoint {
                        at: r.at,
                        rmse,
                        n_evaluated,
                        triggered,
                    });
                }
                AuditEvent::Retrain if matches_device && in_period(r.at) => {
                    retrain_count += 1;
                }
                AuditEvent::Alarm if matches_device && in_period(r.at) => {
                    let kind = r.detail_value("kind").unwrap_or("unknown").to_string();
                    *alarm_counts.entry(kind).or_insert(0) += 1;
                }
                _ => {}
            }
        }

        let rows = read_prediction_log(&device.log_path)
            .map_err(|e| SupervisionError::Storage(e.to_string()))?;
        let readings_logged = rows
            .iter()
            .filter(|r| in_period(r.predicted_at))
            .count() as u64;

        let (telemetry, telemetry_samples, dropped) = device
            .telemetry_path
            .as_deref()
            .map(|p| summarize_telemetry(p, period))
            .transpose()?
            .unwrap_or((Vec::new(), 0, 0));

        let expected_readings = if period.1 > period.0 {
            ((period.1.millis() - period.0.millis()) / sampling_interval_ms) as u64
        } else {
            0
        };
        let uptime = if expected_readings == 0 {
            0.0
        } else {
            (readings_logged + dropped) as f64 / expected_readings as f64
        };

        reports.push(DeviceReport {
            device_id: device.device_id.clone(),
            room: device.room.clone(),
            timeline,
            daily_rmse,
            drift_count,
            retrain_count,
            alarm_counts,
            telemetry,
            telemetry_samples,
            readings_logged,
            readings_dropped: dropped,
            expected_readings,
            uptime,
        });
    }

    let total_drift = reports.iter().map(|d| d.drift_count).sum();
    let total_retrains = reports.iter().map(|d| d.retrain_count).sum();
    let total_alarms = reports
        .iter()
        .map(|d| d.alarm_counts.values().sum::<u64>())
        .sum();
    Ok(FleetReport {
        period,
        devices: reports,
        total_drift,
        total_retrains,
        total_alarms,
    })
}

const TELEMETRY_CHANNELS: [&str; 12] = [
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
];

/// Min/mean/max per telemetry channel plus the final dropped counter seen in
/// the period.
fn summarize_telemetry(
    path: &Path,
    period: (Timestamp, Timestamp),
) -> Result<(Vec<ChannelSummary>, u64, u64), SupervisionError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| SupervisionError::Storage(e.to_string()))?;
    let mut mins = [f64::INFINITY; 12];
    let mut maxs = [f64::NEG_INFINITY; 12];
    let mut sums = [0.0f64; 12];
    let mut count = 0u64;
    let mut dropped = 0u64;
    for line in text.lines().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 16 {
            return Err(SupervisionError::Storage(format!(
                "bad telemetry line {line:?}"
            )));
        }
        let at = Timestamp::parse_rfc3339(parts[1])
            .map_err(|e| SupervisionError::Storage(e.to_string()))?;
        if at < period.0 || at > period.1 {
            continue;
        }
        for (i, raw) in parts[2..14].iter().enumerate() {
            let v = raw
                .parse::<f64>()
                .map_err(|_| SupervisionError::Storage(format!("bad telemetry value {raw:?}")))?;
            mins[i] = mins[i].min(v);
            maxs[i] = maxs[i].max(v);
            sums[i] += v;
        }
        dropped = parts[14]
            .parse::<u64>()
            .map_err(|_| SupervisionError::Storage("bad dropped counter".into()))?;
        count += 1;
    }
    if count == 0 {
        return Ok((Vec::new(), 0, 0));
    }
    let summaries = TELEMETRY_CHANNELS
        .iter()
        .enumerate()
        .map(|(i, name)| ChannelSummary {
            channel: name.to_string(),
            min: mins[i],
            mean: sums[i] / count as f64,
            max: maxs[i],
        })
        .collect();
    Ok((summaries, count, dropped))
}

/// Renders `summary.txt`, `drift_events.csv`, per-device telemetry copies and
/// (optionally) plottable series under `report_dir`.
pub fn write_report_files(
    report: &FleetReport,
    records: &[AuditRecord],
    devices: &[DeviceInfo],
    report_dir: &Path,
    emit_plot_data: bool,
) -> Result<Vec<PathBuf>, SupervisionError> {
    std::fs::create_dir_all(report_dir).map_err(|e| SupervisionError::Storage(e.to_string()))?;
    let mut written = Vec::new();

    let summary_path = report_dir.join("summary.txt");
    write_summary(report, &summary_path)?;
    written.push(summary_path);

    let drift_path = report_dir.join("drift_events.csv");
    write_drift_events(records, report.period, &drift_path)?;
    written.push(drift_path);

    for device in devices {
        if let Some(src) = &device.telemetry_path {
            let dst = report_dir.join(format!("device_{}_telemetry.csv", device.device_id));
            copy_telemetry_in_period(src, &dst, report.period)?;
            written.push(dst);
        }
    }

    if emit_plot_data {
        for dev in &report.devices {
            let path = report_dir.join(format!("plot_{}_daily_rmse.csv", dev.device_id));
            let file = File::create(&path).map_err(|e| SupervisionError::Storage(e.to_string()))?;
            let mut w = BufWriter::new(file);
            writeln!(w, "at,rmse,n_evaluated,triggered")
                .map_err(|e| SupervisionError::Storage(e.to_string()))?;
            for p in &dev.daily_rmse {
                writeln!(
                    w,
                    "{},{},{},{}",
                    p.at.to_rfc3339(),
                    p.rmse,
                    p.n_evaluated,
                    p.triggered
                )
                .map_err(|e| SupervisionError::Storage(e.to_string()))?;
            }
            w.flush().map_err(|e| SupervisionError::Storage(e.to_string()))?;
            written.push(path);
        }
    }
    Ok(written)
}

fn write_summary(report: &FleetReport, path: &Path) -> Result<(), SupervisionError> {
    let file = File::create(path).map_err(|e| SupervisionError::Storage(e.to_string()))?;
    let mut w = BufWriter::new(file);
    let io = |e: std::io::Error| SupervisionError::Storage(e.to_string());
    writeln!(w, "fleet report").map_err(io)?;
    writeln!(
        w,
        "period: {} .. {}",
        report.period.0.to_rfc3339(),
        report.period.1.to_rfc3339()
    )
    .map_err(io)?;
    writeln!(w, "devices: {}", report.devices.len()).map_err(io)?;
    writeln!(w, "triggered drift events: {}", report.total_drift).map_err(io)?;
    writeln!(w, "retrain deploys: {}", report.total_retrains).map_err(io)?;
    writeln!(w, "alarms: {}", report.total_alarms).map_err(io)?;
    for dev in &report.devices {
        writeln!(w).map_err(io)?;
        writeln!(w, "device {} (room {})", dev.device_id, dev.room).map_err(io)?;
        writeln!(
            w,
            "  uptime: {:.4} ({} logged + {} dropped of {} expected readings)",
            dev.uptime, dev.readings_logged, dev.readings_dropped, dev.expected_readings
        )
        .map_err(io)?;
        let timeline = dev
            .timeline
            .iter()
            .map(|(at, v, algo)| format!("v{v}({algo})@{}", at.to_rfc3339()))
            .collect::<Vec<_>>()
            .join(", ");
        writeln!(w, "  deployed: {timeline}").map_err(io)?;
        writeln!(
            w,
            "  drift: {} triggered of {} daily evaluations; retrains: {}",
            dev.drift_count,
            dev.daily_rmse.len(),
            dev.retrain_count
        )
        .map_err(io)?;
        let evaluated: Vec<f64> = dev
            .daily_rmse
            .iter()
            .filter(|p| p.n_evaluated > 0)
            .map(|p| p.rmse)
            .collect();
        if !evaluated.is_empty() {
            let min = evaluated.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = evaluated.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mean = evaluated.iter().sum::<f64>() / evaluated.len() as f64;
            writeln!(
                w,
                "  daily rmse: min {min:.4} mean {mean:.4} max {max:.4}"
            )
            .map_err(io)?;
        }
        let alarms = dev
            .alarm_counts
            .iter()
            .map(|(k, c)| format!("{k}={c}"))
            .collect::<Vec<_>>()
            .join(", ");
        writeln!(
            w,
            "  alarms: {}",
            if alarms.is_empty() { "none" } else { &alarms }
        )
        .map_err(io)?;
        if dev.telemetry_samples > 0 {
            writeln!(w, "  telemetry ({} samples):", dev.telemetry_samples).map_err(io)?;
            for ch in &dev.telemetry {
                writeln!(
                    w,
                    "    {}: min {:.4} mean {:.4} max {:.4}",
                    ch.channel, ch.min, ch.mean, ch.max
                )
                .map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

/// Triggered drift events joined with the retrain that answered them,
/// mirroring the run-time monitoring table shape.
fn write_drift_events(
    records: &[AuditRecord],
    period: (Timestamp, Timestamp),
    path: &Path,
) -> Result<(), SupervisionError> {
    let file = File::create(path).map_err(|e| SupervisionError::Storage(e.to_string()))?;
    let mut w = BufWriter::new(file);
    let io = |e: std::io::Error| SupervisionError::Storage(e.to_string());
    writeln!(w, "s_no,date,device,deployed_model,drift_rmse,retrain_rmse").map_err(io)?;
    let mut s_no = 0u64;
    for (i, r) in records.iter().enumerate() {
        if r.event != AuditEvent::Drift
            || r.detail_value("triggered") != Some("true")
            || r.at < period.0
            || r.at > period.1
        {
            continue;
        }
        s_no += 1;
        let device = r.device_id.as_deref().unwrap_or("");
        // The retrain answering this drift is the next retrain for the same
        // device before its next drift evaluation.
        let mut deployed_model = String::new();
        let mut retrain_rmse = String::new();
        for later in &records[i + 1..] {
            if later.device_id.as_deref() != Some(device) {
                continue;
            }
            match later.event {
                AuditEvent::Retrain => {
                    deployed_model = later.detail_value("algorithm").unwrap_or("").to_string();
                    retrain_rmse = later.detail_value("new_cv_rmse").unwrap_or("").to_string();
                    break;
                }
                AuditEvent::Drift => break,
                _ => {}
            }
        }
        writeln!(
            w,
            "{s_no},{},{device},{deployed_model},{},{retrain_rmse}",
            r.at.date_string(),
            r.detail_value("rmse").unwrap_or("")
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

fn copy_telemetry_in_period(
    src: &Path,
    dst: &Path,
    period: (Timestamp, Timestamp),
) -> Result<(), SupervisionError> {
    let text = std::fs::read_to_string(src).map_err(|e| SupervisionError::Storage(e.to_string()))?;
    let file = File::create(dst).map_err(|e| SupervisionError::Storage(e.to_string()))?;
    let mut w = BufWriter::new(file);
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            writeln!(w, "{line}").map_err(|e| SupervisionError::Storage(e.to_string()))?;
            continue;
        }
        let at_raw = line.split(',').nth(1).unwrap_or_default();
        let at = Timestamp::parse_rfc3339(at_raw)
            .map_err(|e| SupervisionError::Storage(e.to_string()))?;
        if at >= period.0 && at <= period.1 {
            writeln!(w, "{line}").map_err(|e| SupervisionError::Storage(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| SupervisionError::Storage(e.to_string()))
}
