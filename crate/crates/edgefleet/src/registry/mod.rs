//! Versioned model repository with drift-driven retraining and the fleet's
//! append-only audit trail.
//!
//! Artifacts live as `.mdl` files under `<dir>/models/`; the audit trail is
//! `<dir>/audit.csv`. Registration and deployment are serialized through a
//! single writer so version ids stay monotone and the audit seq gapless.

pub mod audit;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::agent::DriftReport;
use crate::models::selection::{evaluate_algorithms, select_best, train_artifact};
use crate::models::{Algorithm, Hyperparameters, ModelArtifact, ModelError};
use crate::pipeline::{LabeledExample, VersionDirectory};
use crate::time::Timestamp;

pub use audit::{load_audit_csv, model_at, query, AuditEvent, AuditFilter, AuditLog, AuditRecord};

/// Minimum labeled examples required before a retrain is attempted.
pub const MIN_RETRAIN_EXAMPLES: usize = 100;

/// Cross-validation folds used for model selection.
pub const SELECTION_FOLDS: usize = 10;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("artifact verification failed: {0}")]
    ArtifactVerificationFailed(String),
    #[error("unknown model version {0}")]
    UnknownVersion(u64),
    #[error("corrupt artifact: {0}")]
    CorruptArtifact(String),
    #[error("insufficient data: need at least {needed} examples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("registry storage failure: {0}")]
    Storage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryStatus {
    Candidate,
    Deployed,
    Retired,
}

/// Registry bookkeeping for one stored artifact.
#[derive(Debug, Clone)]
pub struct RegistryEntry {
    pub version: u64,
    pub room: String,
    pub algorithm: Algorithm,
    pub cv_rmse: f64,
    pub test_rmse: f64,
    pub registered_at: Timestamp,
    pub status: EntryStatus,
    pub path: PathBuf,
}

struct RegistryInner {
    entries: BTreeMap<u64, RegistryEntry>,
    deployed: BTreeMap<String, u64>,
    next_version: u64,
}

/// The model repository: versioned artifact files plus deployment state.
pub struct Registry {
    models_dir: PathBuf,
    audit: Arc<AuditLog>,
    config: Hyperparameters,
    inner: Mutex<RegistryInner>,
}

impl Registry {
    /// Creates a fresh registry under `dir` (makes `dir/models/`), sharing
    /// the given audit log.
    pub fn create(
        dir: impl AsRef<Path>,
        audit: Arc<AuditLog>,
        config: Hyperparameters,
    ) -> Result<Self, RegistryError> {
        let models_dir = dir.as_ref().join("models");
        std::fs::create_dir_all(&models_dir).map_err(|e| RegistryError::Storage(e.to_string()))?;
        Ok(Registry {
            models_dir,
            audit,
            config,
            inner: Mutex::new(RegistryInner {
                entries: BTreeMap::new(),
                deployed: BTreeMap::new(),
                next_version: 1,
            }),
        })
    }

    pub fn audit(&self) -> &Arc<AuditLog> {
        &self.audit
    }

    /// Stores a verified artifact under the next version id and audits the
    /// registration. A failed verification consumes no version.
    pub fn register_model(
        &self,
        artifact: &ModelArtifact,
        now: Timestamp,
    ) -> Result<u64, RegistryError> {
        artifact
            .validate()
            .map_err(|e| RegistryError::ArtifactVerificationFailed(e.to_string()))?;
        let mut inner = self.inner.lock().expect("registry lock");
        let version = inner.next_version;
        let mut stamped = artifact.clone();
        stamped.version = version;
        let path = self.models_dir.join(format!("v{version}.mdl"));
        std::fs::write(&path, stamped.to_bytes())
            .map_err(|e| RegistryError::Storage(e.to_string()))?;
        inner.entries.insert(
            version,
            RegistryEntry {
                version,
                room: stamped.room.clone(),
                algorithm: stamped.algorithm,
                cv_rmse: stamped.cv_rmse,
                test_rmse: stamped.test_rmse,
                registered_at: now,
                status: EntryStatus::Candidate,
                path,
            },
        );
        inner.next_version += 1;
        drop(inner);
        self.audit.append(
            now,
            AuditEvent::Register,
            None,
            &stamped.room,
            Some(version),
            vec![
                ("algorithm".into(), stamped.algorithm.name().into()),
                ("cv_rmse".into(), stamped.cv_rmse.to_string()),
                ("test_rmse".into(), stamped.test_rmse.to_string()),
            ],
        )?;
        Ok(version)
    }

    /// Reads a registered artifact back, re-verifying its checksum.
    pub fn fetch_artifact(&self, version: u64) -> Result<ModelArtifact, RegistryError> {
        let path = {
            let inner = self.inner.lock().expect("registry lock");
            inner
                .entries
                .get(&version)
                .ok_or(RegistryError::UnknownVersion(version))?
                .path
                .clone()
        };
        let bytes = std::fs::read(&path).map_err(|e| RegistryError::Storage(e.to_string()))?;
        ModelArtifact::from_bytes(&bytes).map_err(|e| match e {
            ModelError::FormatVersionMismatch(v) => {
                RegistryError::CorruptArtifact(format!("format version {v}"))
            }
            other => RegistryError::CorruptArtifact(other.to_string()),
        })
    }

    /// Marks `version` as the live model for its room, retiring the previous
    /// one, and appends the deploy audit record (with old and new versions).
    /// Called once the target device has verified and swapped the artifact.
    pub fn confirm_deploy(
        &self,
        device_id: &str,
        version: u64,
        now: Timestamp,
    ) -> Result<(), RegistryError> {
        let mut inner = self.inner.lock().expect("registry lock");
        let room = inner
            .entries
            .get(&version)
            .ok_or(RegistryError::UnknownVersion(version))?
            .room
            .clone();
        let old = inner.deployed.insert(room.clone(), version);
        if let Some(old_version) = old {
            if let Some(entry) = inner.entries.get_mut(&old_version) {
                entry.status = EntryStatus::Retired;
            }
        }
        if let Some(entry) = inner.entries.get_mut(&version) {
            entry.status = EntryStatus::Deployed;
        }
        drop(inner);
        let mut detail = vec![(
            "old_version".into(),
            old.map(|v| v.to_string()).unwrap_or_else(|| "none".into()),
        )];
        detail.push(("new_version".into(), version.to_string()));
        self.audit.append(
            now,
            AuditEvent::Deploy,
            Some(device_id),
            &room,
            Some(version),
            detail,
        )?;
        Ok(())
    }

    /// The version currently deployed for a room.
    pub fn deployed_version(&self, room: &str) -> Option<u64> {
        self.inner
            .lock()
            .expect("registry lock")
            .deployed
            .get(room)
            .copied()
    }

    pub fn entry(&self, version: u64) -> Option<RegistryEntry> {
        self.inner
            .lock()
            .expect("registry lock")
            .entries
            .get(&version)
            .cloned()
    }

    pub fn entries(&self) -> Vec<RegistryEntry> {
        self.inner
            .lock()
            .expect("registry lock")
            .entries
            .values()
            .cloned()
            .collect()
    }

    /// Drift response: cross-validates all four algorithms on the recent
    /// window, trains the best one on the whole window, registers it and
    /// audits the retrain. Returns the new version; the caller dispatches
    /// the deploy to the device, which confirms via `confirm_deploy`.
    pub fn handle_drift(
        &self,
        report: &DriftReport,
        room: &str,
        recent: &[LabeledExample],
        seed: u64,
        now: Timestamp,
    ) -> Result<u64, RegistryError> {
        debug_assert!(report.triggered);
        if recent.len() < MIN_RETRAIN_EXAMPLES {
            self.audit.append(
                now,
                AuditEvent::DeployFailed,
                Some(&report.device_id),
                room,
                None,
                vec![
                    ("reason".into(), "insufficient_data".into()),
                    ("examples".into(), recent.len().to_string()),
                ],
            )?;
            return Err(RegistryError::InsufficientData {
                needed: MIN_RETRAIN_EXAMPLES,
                got: recent.len(),
            });
        }

        let candidates =
            evaluate_algorithms(recent, &Algorithm::ALL, SELECTION_FOLDS, &self.config, seed);
        let best = match select_best(&candidates) {
            Some(algorithm) => algorithm,
            None => {
                self.audit.append(
                    now,
                    AuditEvent::DeployFailed,
                    Some(&report.device_id),
                    room,
                    None,
                    vec![("reason".into(), "no_trainable_algorithm".into())],
                )?;
                return Err(RegistryError::InsufficientData {
                    needed: MIN_RETRAIN_EXAMPLES,
                    got: recent.len(),
                });
            }
        };
        let artifact = train_artifact(
            recent,
            best,
            SELECTION_FOLDS,
            &self.config,
            seed,
            room,
            now,
        )
        .map_err(|e| RegistryError::ArtifactVerificationFailed(e.to_string()))?;

        let old_version = self.deployed_version(room);
        let old_cv = old_version
            .and_then(|v| self.entry(v))
            .map(|e| e.cv_rmse);
        let version = self.register_model(&artifact, now)?;
        self.audit.append(
            now,
            AuditEvent::Retrain,
            Some(&report.device_id),
            room,
            Some(version),
            vec![
                ("algorithm".into(), best.name().into()),
                ("drift_rmse".into(), report.daily_rmse.to_string()),
                (
                    "old_version".into(),
                    old_version
                        .map(|v| v.to_string())
                        .unwrap_or_else(|| "none".into()),
                ),
                (
                    "old_cv_rmse".into(),
                    old_cv.map(|v| v.to_string()).unwrap_or_else(|| "none".into()),
                ),
                ("new_cv_rmse".into(), artifact.cv_rmse.to_string()),
            ],
        )?;
        Ok(version)
    }
}

impl VersionDirectory for Registry {
    fn is_registered(&self, version: u64) -> bool {
        self.inner
            .lock()
            .expect("registry lock")
            .entries
            .contains_key(&version)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{fit_scaler, train, ModelParams};
    use crate::pipeline::FeatureVector;

    fn make_artifact(room: &str) -> ModelArtifact {
        let features: Vec<FeatureVector> = (0..50)
            .map(|i| FeatureVector {
                values: [i as f64, 1.0, 2.0, 3.0, 4.0, 5.0],
                timestamp: Timestamp(i * 300_000),
                room: room.to_string(),
            })
            .collect();
        let labels: Vec<f64> = features.iter().map(|f| f.values[0] * 2.0 + 1.0).collect();
        let scaler = fit_scaler(&features).unwrap();
        let scaled: Vec<[f64; 6]> = features.iter().map(|f| scaler.apply(&f.values)).collect();
        let params = train(
            Algorithm::Mlr,
            &scaled,
            &labels,
            &Hyperparameters::default(),
            0,
        )
        .unwrap();
        ModelArtifact {
            version: 0,
            algorithm: Algorithm::Mlr,
            scaler,
            params,
            trained_at: Timestamp(0),
            training_window: (Timestamp(0), Timestamp(1)),
            cv_rmse: 1.0,
            test_rmse: 1.0,
            room: room.to_string(),
        }
    }

    fn setup() -> (tempfile::TempDir, Registry) {
        let dir = tempfile::tempdir().unwrap();
        let audit = Arc::new(AuditLog::create(dir.path().join("audit.csv")).unwrap());
        let registry = Registry::create(dir.path(), audit, Hyperparameters::default()).unwrap();
        (dir, registry)
    }

    #[test]
    fn versions_are_monotone_from_one() {
        let (_dir, registry) = setup();
        let artifact = make_artifact("A10");
        for expected in 1..=3u64 {
            let v = registry.register_model(&artifact, Timestamp(0)).unwrap();
            assert_eq!(v, expected);
        }
    }

    #[test]
    fn identical_bytes_get_distinct_versions() {
        let (_dir, registry) = setup();
        let artifact = make_artifact("A10");
        let v1 = registry.register_model(&artifact, Timestamp(0)).unwrap();
        let v2 = registry.register_model(&artifact, Timestamp(1)).unwrap();
        assert_ne!(v1, v2);
        let a = registry.fetch_artifact(v1).unwrap();
        let b = registry.fetch_artifact(v2).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.version, v1);
        assert_eq!(b.version, v2);
    }

    #[test]
    fn invalid_artifact_consumes_no_version() {
        let (_dir, registry) = setup();
        let mut bad = make_artifact("A10");
        bad.cv_rmse = -1.0;
        assert!(matches!(
            registry.register_model(&bad, Timestamp(0)),
            Err(RegistryError::ArtifactVerificationFailed(_))
        ));
        let v = registry
            .register_model(&make_artifact("A10"), Timestamp(0))
            .unwrap();
        assert_eq!(v, 1);
    }

    #[test]
    fn fetch_returns_exact_artifact() {
        let (_dir, registry) = setup();
        for _ in 0..3 {
            registry
                .register_model(&make_artifact("A10"), Timestamp(0))
                .unwrap();
        }
        let fetched = registry.fetch_artifact(2).unwrap();
        assert_eq!(fetched.version, 2);
    }

    #[test]
    fn unknown_version_rejected() {
        let (_dir, registry) = setup();
        assert!(matches!(
            registry.fetch_artifact(99),
            Err(RegistryError::UnknownVersion(99))
        ));
    }

    #[test]
    fn bit_rot_detected_on_fetch() {
        let (_dir, registry) = setup();
        let v = registry
            .register_model(&make_artifact("A10"), Timestamp(0))
            .unwrap();
        let path = registry.entry(v).unwrap().path;
        let mut text = std::fs::read_to_string(&path).unwrap();
        // Corrupt a digit in the body.
        let body_start = text.find("\n\n").unwrap() + 2;
        let target = text[body_start..]
            .find(|c: char| c.is_ascii_digit())
            .unwrap()
            + body_start;
        let original = text.as_bytes()[target];
        let replacement = if original == b'5' { '6' } else { '5' };
        text.replace_range(target..target + 1, &replacement.to_string());
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            registry.fetch_artifact(v),
            Err(RegistryError::CorruptArtifact(_))
        ));
    }

    #[test]
    fn deploy_retires_previous_and_audits_both_versions() {
        let (_dir, registry) = setup();
        let v1 = registry
            .register_model(&make_artifact("A10"), Timestamp(0))
            .unwrap();
        let v2 = registry
            .register_model(&make_artifact("A10"), Timestamp(0))
            .unwrap();
        registry.confirm_deploy("edge-A10", v1, Timestamp(10)).unwrap();
        registry.confirm_deploy("edge-A10", v2, Timestamp(20)).unwrap();
        assert_eq!(registry.deployed_version("A10"), Some(v2));
        assert_eq!(registry.entry(v1).unwrap().status, EntryStatus::Retired);
        assert_eq!(registry.entry(v2).unwrap().status, EntryStatus::Deployed);
        let records = registry.audit().records();
        let deploys: Vec<_> = records
            .iter()
            .filter(|r| r.event == AuditEvent::Deploy)
            .collect();
        assert_eq!(deploys.len(), 2);
        assert_eq!(deploys[1].detail_value("old_version"), Some("1"));
        assert_eq!(deploys[1].detail_value("new_version"), Some("2"));
    }

    #[test]
    fn retrain_with_thin_window_is_refused_and_audited() {
        let (_dir, registry) = setup();
        let report = DriftReport {
            device_id: "edge-A10".into(),
            evaluated_at: Timestamp(0),
            window: (Timestamp(0), Timestamp(1)),
            daily_rmse: 14.0,
            n_evaluated: 50,
            triggered: true,
            model_version: 1,
        };
        let examples: Vec<LabeledExample> = (0..10)
            .map(|i| LabeledExample {
                features: FeatureVector {
                    values: [i as f64, 0.0, 0.0, 0.0, 0.0, 0.0],
                    timestamp: Timestamp(i * 300_000),
                    room: "A10".into(),
                },
                label: i as f64,
            })
            .collect();
        assert!(matches!(
            registry.handle_drift(&report, "A10", &examples, 1, Timestamp(5)),
            Err(RegistryError::InsufficientData { .. })
        ));
        let records = registry.audit().records();
        assert_eq!(records.last().unwrap().event, AuditEvent::DeployFailed);
        assert_eq!(
            records.last().unwrap().detail_value("reason"),
            Some("insufficient_data")
        );
    }

    #[test]
    fn version_directory_tracks_registrations() {
        let (_dir, registry) = setup();
        assert!(!registry.is_registered(1));
        registry
            .register_model(&make_artifact("A10"), Timestamp(0))
            .unwrap();
        assert!(registry.is_registered(1));
    }

    #[test]
    fn second_deploy_for_same_room_keeps_single_live_version() {
        let (_dir, registry) = setup();
        let v1 = registry
            .register_model(&make_artifact("A10"), Timestamp(0))
            .unwrap();
        let other = registry
            .register_model(&make_artifact("A29"), Timestamp(0))
            .unwrap();
        registry.confirm_deploy("edge-A10", v1, Timestamp(1)).unwrap();
        registry.confirm_deploy("edge-A29", other, Timestamp(1)).unwrap();
        assert_eq!(registry.deployed_version("A10"), Some(v1));
        assert_eq!(registry.deployed_version("A29"), Some(other));
    }

    #[test]
    fn artifact_params_survive_registry_round_trip() {
        let (_dir, registry) = setup();
        let artifact = make_artifact("A10");
        let v = registry.register_model(&artifact, Timestamp(0)).unwrap();
        let fetched = registry.fetch_artifact(v).unwrap();
        match (&artifact.params, &fetched.params) {
            (ModelParams::Mlr(a), ModelParams::Mlr(b)) => assert_eq!(a, b),
            _ => panic!("unexpected params variant"),
        }
    }
}
