//! Append-only audit trail (CSV-backed).
//!
//! Every lifecycle event — registration, deployment, drift evaluation,
//! retraining, alarms, failed deploys — lands here with a gapless sequence
//! number. The file is flushed per record so it survives aborts, and it is
//! byte-stable across identical seeded runs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::time::Timestamp;

use super::RegistryError;

pub const AUDIT_COLUMNS: [&str; 7] = [
    "seq",
    "at",
    "event",
    "device_id",
    "room",
    "model_version",
    "detail",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditEvent {
    Register,
    Deploy,
    Drift,
    Retrain,
    Alarm,
    DeployFailed,
}

impl AuditEvent {
    pub fn name(self) -> &'static str {
        match self {
            AuditEvent::Register => "register",
            AuditEvent::Deploy => "deploy",
            AuditEvent::Drift => "drift",
            AuditEvent::Retrain => "retrain",
            AuditEvent::Alarm => "alarm",
            AuditEvent::DeployFailed => "deploy_failed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "register" => Some(AuditEvent::Register),
            "deploy" => Some(AuditEvent::Deploy),
            "drift" => Some(AuditEvent::Drift),
            "retrain" => Some(AuditEvent::Retrain),
            "alarm" => Some(AuditEvent::Alarm),
            "deploy_failed" => Some(AuditEvent::DeployFailed),
            _ => None,
        }
    }
}

impl std::fmt::Display for AuditEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One immutable audit record.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRecord {
    pub seq: u64,
    pub at: Timestamp,
    pub event: AuditEvent,
    pub device_id: Option<String>,
    pub room: String,
    pub model_version: Option<u64>,
    /// Free-form key=value pairs, insertion-ordered.
    pub detail: Vec<(String, String)>,
}

impl AuditRecord {
    pub fn detail_value(&self, key: &str) -> Option<&str> {
        self.detail
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn detail_text(&self) -> String {
        self.detail
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.seq,
            self.at.to_rfc3339(),
            self.event,
            self.device_id.as_deref().unwrap_or(""),
            self.room,
            self.model_version.map(|v| v.to_string()).unwrap_or_default(),
            self.detail_text()
        )
    }
}

struct AuditInner {
    writer: BufWriter<File>,
    records: Vec<AuditRecord>,
    next_seq: u64,
}

/// Shared append-only log. Appends are linearized; reads take a snapshot.
pub struct AuditLog {
    path: PathBuf,
    inner: Mutex<AuditInner>,
}

impl AuditLog {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(storage)?;
        let mut writer = BufWriter::new(file);
        writeln!(writer, "{}", AUDIT_COLUMNS.join(",")).map_err(storage)?;
        writer.flush().map_err(storage)?;
        Ok(AuditLog {
            path,
            inner: Mutex::new(AuditInner {
                writer,
                records: Vec::new(),
                next_seq: 1,
            }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one record; seq numbers are gapless and start at 1.
    ///
    /// Identifier and detail text must stay free of CSV structure; callers
    /// build them from validated ids and numeric values.
    pub fn append(
        &self,
        at: Timestamp,
        event: AuditEvent,
        device_id: Option<&str>,
        room: &str,
        model_version: Option<u64>,
        detail: Vec<(String, String)>,
    ) -> Result<AuditRecord, RegistryError> {
        debug_assert!(detail
            .iter()
            .all(|(k, v)| !k.contains([',', ';', '=', '\n']) && !v.contains([',', ';', '\n'])));
        let mut inner = self.inner.lock().expect("audit lock");
        let record = AuditRecord {
            seq: inner.next_seq,
            at,
            event,
            device_id: device_id.map(str::to_string),
            room: room.to_string(),
            model_version,
            detail,
        };
        writeln!(inner.writer, "{}", record.to_csv_line()).map_err(storage)?;
        inner.writer.flush().map_err(storage)?;
        inner.next_seq += 1;
        inner.records.push(record.clone());
        Ok(record)
    }

    /// Snapshot of all records in sequence order.
    pub fn records(&self) -> Vec<AuditRecord> {
        self.inner.lock().expect("audit lock").records.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("audit lock").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn storage(e: std::io::Error) -> RegistryError {
    RegistryError::Storage(e.to_string())
}

/// Loads an audit CSV written by `AuditLog`.
pub fn load_audit_csv(path: impl AsRef<Path>) -> Result<Vec<AuditRecord>, RegistryError> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(storage)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != AUDIT_COLUMNS.join(",") {
        return Err(RegistryError::Storage(format!(
            "unexpected audit header {header:?}"
        )));
    }
    let mut records = Vec::new();
    for line in lines {
        let parts: Vec<&str> = line.splitn(7, ',').collect();
        if parts.len() != 7 {
            return Err(RegistryError::Storage(format!("bad audit line {line:?}")));
        }
        let seq = parts[0]
            .parse::<u64>()
            .map_err(|_| RegistryError::Storage(format!("bad seq in {line:?}")))?;
        let at = Timestamp::parse_rfc3339(parts[1])
            .map_err(|_| RegistryError::Storage(format!("bad timestamp in {line:?}")))?;
        let event = AuditEvent::parse(parts[2])
            .ok_or_else(|| RegistryError::Storage(format!("bad event in {line:?}")))?;
        let device_id = if parts[3].is_empty() {
            None
        } else {
            Some(parts[3].to_string())
        };
        let room = parts[4].to_string();
        let model_version = if parts[5].is_empty() {
            None
        } else {
            Some(parts[5].parse::<u64>().map_err(|_| {
                RegistryError::Storage(format!("bad model version in {line:?}"))
            })?)
        };
        let mut detail = Vec::new();
        if !parts[6].is_empty() {
            for pair in parts[6].split(';') {
                let (k, v) = pair.split_once('=').ok_or_else(|| {
                    RegistryError::Storage(format!("bad detail pair {pair:?}"))
                })?;
                detail.push((k.to_string(), v.to_string()));
            }
        }
        records.push(AuditRecord {
            seq,
            at,
            event,
            device_id,
            room,
            model_version,
            detail,
        });
    }
    Ok(records)
}

/// Query filter; all present fields must match.
#[derive(Debug, Clone, Default)]
pub struct AuditFilter {
    pub room: Option<String>,
    pub device: Option<String>,
    pub event: Option<AuditEvent>,
    pub from: Option<Timestamp>,
    pub to: Option<Timestamp>,
}

/// Matching records in sequence order.
pub fn query<'a>(records: &'a [AuditRecord], filter: &AuditFilter) -> Vec<&'a AuditRecord> {
    records
        .iter()
        .filter(|r| {
            filter.room.as_deref().map_or(true, |room| r.room == room)
                && filter
                    .device
                    .as_deref()
                    .map_or(true, |d| r.device_id.as_deref() == Some(d))
                && filter.event.map_or(true, |e| r.event == e)
                && filter.from.map_or(true, |t| r.at >= t)
                && filter.to.map_or(true, |t| r.at <= t)
        })
        .collect()
}

/// The model version live for `room` at instant `t`: the latest deploy with
/// `at <= t`. A deploy taking effect exactly at `t` owns that instant.
pub fn model_at(records: &[AuditRecord], room: &str, t: Timestamp) -> Option<u64> {
    records
        .iter()
        .filter(|r| r.event == AuditEvent::Deploy && r.room == room && r.at <= t)
        .last()
        .and_then(|r| r.model_version)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log() -> (tempfile::TempDir, AuditLog) {
        let dir = tempfile::tempdir().unwrap();
        let log = AuditLog::create(dir.path().join("audit.csv")).unwrap();
        (dir, log)
    }

    #[test]
    fn seq_is_gapless_from_one() {
        let (_dir, log) = log();
        for i in 0..5 {
            let r = log
                .append(Timestamp(i * 100), AuditEvent::Register, None, "A10", Some(i as u64 + 1), vec![])
                .unwrap();
            assert_eq!(r.seq, i as u64 + 1);
        }
        let records = log.records();
        for (i, r) in records.iter().enumerate() {
            assert_eq!(r.seq, i as u64 + 1);
        }
    }

    #[test]
    fn append_extends_prefix() {
        let (_dir, log) = log();
        log.append(Timestamp(0), AuditEvent::Register, None, "A10", Some(1), vec![])
            .unwrap();
        let before = log.records();
        log.append(Timestamp(1), AuditEvent::Deploy, Some("edge-A10"), "A10", Some(1), vec![])
            .unwrap();
        let after = log.records();
        assert_eq!(&after[..before.len()], &before[..]);
        assert_eq!(after.len(), before.len() + 1);
    }

    #[test]
    fn csv_round_trips() {
        let (dir, log) = log();
        log.append(
            Timestamp(1_584_230_400_000),
            AuditEvent::Drift,
            Some("edge-A10"),
            "A10",
            Some(7),
            vec![
                ("rmse".into(), "16.39".into()),
                ("n".into(), "241".into()),
                ("triggered".into(), "true".into()),
            ],
        )
        .unwrap();
        log.append(Timestamp(1_584_230_400_001), AuditEvent::Alarm, None, "A29", None, vec![])
            .unwrap();
        let loaded = load_audit_csv(dir.path().join("audit.csv")).unwrap();
        assert_eq!(loaded, log.records());
        assert_eq!(loaded[0].detail_value("rmse"), Some("16.39"));
    }

    #[test]
    fn model_at_boundary_belongs_to_new_deploy() {
        let (_dir, log) = log();
        log.append(Timestamp(0), AuditEvent::Deploy, Some("d"), "A10", Some(1), vec![])
            .unwrap();
        log.append(Timestamp(100), AuditEvent::Deploy, Some("d"), "A10", Some(2), vec![])
            .unwrap();
        let records = log.records();
        assert_eq!(model_at(&records, "A10", Timestamp(50)), Some(1));
        assert_eq!(model_at(&records, "A10", Timestamp(100)), Some(2));
        assert_eq!(model_at(&records, "A10", Timestamp(150)), Some(2));
        assert_eq!(model_at(&records, "A10", Timestamp(0)), Some(1));
        assert_eq!(model_at(&records, "A29", Timestamp(50)), None);
    }

    #[test]
    fn empty_filter_returns_everything() {
        let (_dir, log) = log();
        for i in 0..4 {
            log.append(Timestamp(i), AuditEvent::Register, None, "A10", Some(i as u64 + 1), vec![])
                .unwrap();
        }
        let records = log.records();
        assert_eq!(query(&records, &AuditFilter::default()).len(), 4);
    }

    #[test]
    fn filters_compose() {
        let (_dir, log) = log();
        log.append(Timestamp(0), AuditEvent::Drift, Some("d1"), "A10", Some(1), vec![])
            .unwrap();
        log.append(Timestamp(10), AuditEvent::Drift, Some("d2"), "A29", Some(2), vec![])
            .unwrap();
        log.append(Timestamp(20), AuditEvent::Deploy, Some("d1"), "A10", Some(3), vec![])
            .unwrap();
        let records = log.records();
        let filter = AuditFilter {
            event: Some(AuditEvent::Drift),
            device: Some("d1".into()),
            ..Default::default()
        };
        let hits = query(&records, &filter);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].seq, 1);
        let ranged = AuditFilter {
            from: Some(Timestamp(5)),
            to: Some(Timestamp(15)),
            ..Default::default()
        };
        assert_eq!(query(&records, &ranged).len(), 1);
    }
}
