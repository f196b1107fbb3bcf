//! Operator command-line surface: offline training, scenario runs, audit
//! queries, report generation and artifact inspection.
//!
//! Exit codes: 0 success, 2 input error, 3 data insufficiency, 4 internal
//! failure. Failures print one `error[<code>]: <message>` line on stderr.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::models::selection::{
    evaluate_algorithms, select_best, train_artifact, CandidateMetrics,
};
use crate::models::{Algorithm, Hyperparameters, ModelArtifact, ModelError, ModelParams};
use crate::pipeline::{build_training_set, clean, read_readings_csv, PipelineError};
use crate::registry::{load_audit_csv, model_at, query, AuditEvent, AuditFilter, AuditRecord};
use crate::registry::audit::AUDIT_COLUMNS;
use crate::simulator::{run_scenario, ScenarioConfig, SimError};
use crate::supervision::{build_fleet_report, write_report_files, DeviceInfo};
use crate::time::Timestamp;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INSUFFICIENT: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

/// Global seed fallback when a command does not set one explicitly.
pub const SEED_ENV: &str = "EDGEFLEET_SEED";

#[derive(Parser)]
#[command(
    name = "edgefleet",
    about = "Edge fleet analytics: train forecasters, run scenarios, query audits"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Train models offline from a readings CSV and write .mdl artifacts.
    Train {
        /// Readings CSV (13-column schema).
        #[arg(long)]
        data: PathBuf,
        /// Room to train for (rows for other rooms are ignored).
        #[arg(long)]
        room: String,
        /// mlr | svr | elm | rfr | best
        #[arg(long)]
        algo: String,
        /// Output directory for .mdl files.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Cross-validation folds.
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Run a simulated fleet scenario from a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Run directory (data/, registry/, logs/, report/ created inside).
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild report files for a completed run.
    Report {
        #[arg(long)]
        run: PathBuf,
        /// Restrict to `start..end` (RFC 3339 instants).
        #[arg(long)]
        period: Option<String>,
        /// Also export per-device daily-RMSE series for charting.
        #[arg(long)]
        emit_plot_data: bool,
    },
    /// Query the audit trail of a completed run.
    Audit {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        room: Option<String>,
        #[arg(long)]
        device: Option<String>,
        /// Print the model version live at this instant, per room.
        #[arg(long)]
        at: Option<String>,
        /// register | deploy | drift | retrain | alarm | deploy_failed
        #[arg(long)]
        event: Option<String>,
    },
    /// Print the header and parameter shape of a .mdl artifact.
    InspectModel {
        #[arg(long)]
        file: PathBuf,
    },
}

enum CliError {
    Input(String),
    Insufficient(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Insufficient(_) => EXIT_INSUFFICIENT,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Insufficient(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::InsufficientData { .. } => CliError::Insufficient(e.to_string()),
            PipelineError::MissingField(_) | PipelineError::MalformedField { .. } => {
                CliError::Input(e.to_string())
            }
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InsufficientData { .. } | ModelError::EmptyInput => {
                CliError::Insufficient(e.to_string())
            }
            ModelError::CorruptArtifact(_) | ModelError::FormatVersionMismatch(_) => {
                CliError::Input(e.to_string())
            }
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) => CliError::Input(e.to_string()),
            SimError::Pipeline(PipelineError::InsufficientData { .. }) => {
                CliError::Insufficient(e.to_string())
            }
            SimError::Model(ModelError::InsufficientData { .. }) => {
                CliError::Insufficient(e.to_string())
            }
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<crate::registry::RegistryError> for CliError {
    fn from(e: crate::registry::RegistryError) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<crate::supervision::SupervisionError> for CliError {
    fn from(e: crate::supervision::SupervisionError) -> Self {
        CliError::Internal(e.to_string())
    }
}

/// Runs a parsed command, printing results to stdout; returns the exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Train {
            data,
            room,
            algo,
            out,
            seed,
            folds,
        } => cmd_train(&data, &room, &algo, &out, seed, folds),
        Command::Simulate { config, out } => cmd_simulate(&config, &out),
        Command::Report {
            run,
            period,
            emit_plot_data,
        } => cmd_report(&run, period.as_deref(), emit_plot_data),
        Command::Audit {
            run,
            room,
            device,
            at,
            event,
        } => cmd_audit(&run, room.as_deref(), device.as_deref(), at.as_deref(), event.as_deref()),
        Command::InspectModel { file } => cmd_inspect_model(&file),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code(), e.message());
            e.code()
        }
    }
}

fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(raw) => raw
            .parse::<u64>()
            .map(Some)
            .map_err(|_| CliError::Input(format!("bad {SEED_ENV} value {raw:?}"))),
        Err(_) => Ok(None),
    }
}

fn resolve_seed(explicit: Option<u64>) -> Result<u64, CliError> {
    Ok(explicit.or(env_seed()?).unwrap_or(42))
}

fn cmd_train(
    data: &Path,
    room: &str,
    algo: &str,
    out: &Path,
    seed: Option<u64>,
    folds: Option<usize>,
) -> Result<(), CliError> {
    let seed = resolve_seed(seed)?;
    let folds = folds.unwrap_or(10);
    let algorithms: Vec<Algorithm> = match algo {
        "best" => Algorithm::ALL.to_vec(),
        other => vec![Algorithm::parse(other)
            .ok_or_else(|| CliError::Input(format!("unknown algorithm {other:?}")))?],
    };
    if !data.is_file() {
        return Err(CliError::Input(format!(
            "data file {} does not exist",
            data.display()
        )));
    }
    let readings = read_readings_csv(data)?;
    let room_rows: Vec<_> = readings
        .into_iter()
        .filter(|r| r.room == room)
        .collect();
    if room_rows.is_empty() {
        return Err(CliError::Insufficient(format!(
            "no readings for room {room} in {}",
            data.display()
        )));
    }
    let examples = build_training_set(&clean(room_rows))?;
    let hyper = Hyperparameters::default();
    let trained_at = examples.last().expect("non-empty").features.timestamp;
    let candidates = evaluate_algorithms(&examples, &algorithms, folds, &hyper, seed);
    let selected = select_best(&candidates).ok_or_else(|| {
        CliError::Insufficient(format!(
            "no algorithm could be trained: {}",
            first_error(&candidates)
        ))
    })?;

    std::fs::create_dir_all(out).map_err(|e| CliError::Internal(e.to_string()))?;
    println!("room,algorithm,cv_rmse,test_rmse,selected");
    for c in &candidates {
        match (c.cv_rmse, c.test_rmse) {
            (Some(cv), Some(test)) => {
                let marker = if c.algorithm == selected { "*" } else { "" };
                println!("{room},{},{cv:.4},{test:.4},{marker}", c.algorithm);
            }
            _ => println!("{room},{},,,", c.algorithm),
        }
    }
    for c in &candidates {
        if c.error.is_some() {
            continue;
        }
        let artifact = train_artifact(&examples, c.algorithm, folds, &hyper, seed, room, trained_at)?;
        let path = out.join(format!("{room}_{}.mdl", c.algorithm.name().to_lowercase()));
        std::fs::write(&path, artifact.to_bytes())
            .map_err(|e| CliError::Internal(e.to_string()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn first_error(candidates: &[CandidateMetrics]) -> String {
    candidates
        .iter()
        .filter_map(|c| c.error.clone())
        .next()
        .unwrap_or_else(|| "no candidates".into())
}

fn cmd_simulate(config_path: &Path, out: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", config_path.display())))?;
    let config = ScenarioConfig::parse(&text, env_seed()?)?;
    let result = run_scenario(&config, out)?;
    println!("run_dir,{}", result.run_dir.display());
    println!("triggered_drift_events,{}", result.drift_events.len());
    println!("retrain_deploys,{}", result.retrain_events.len());
    println!("alarms,{}", result.alarms.len());
    for (room, timeline) in &result.timelines {
        let versions = timeline
            .iter()
            .map(|(at, v)| format!("v{v}@{}", at.to_rfc3339()))
            .collect::<Vec<_>>()
            .join(" ");
        println!("timeline,{room},{versions}");
    }
    println!("report,{}", result.run_dir.join("report").join("summary.txt").display());
    Ok(())
}

/// Loads what a report needs from a run directory: audit records, device
/// infos and the scenario config.
fn load_run(
    run: &Path,
) -> Result<(Vec<AuditRecord>, Vec<DeviceInfo>, ScenarioConfig), CliError> {
    if !run.is_dir() {
        return Err(CliError::Input(format!(
            "run directory {} does not exist",
            run.display()
        )));
    }
    let audit_path = run.join("registry").join("audit.csv");
    let records = load_audit_csv(&audit_path)
        .map_err(|e| CliError::Input(format!("cannot load {}: {e}", audit_path.display())))?;
    let config_text = std::fs::read_to_string(run.join("config.txt"))
        .map_err(|e| CliError::Input(format!("cannot read run config: {e}")))?;
    let config = ScenarioConfig::parse(&config_text, Some(0))?;
    let mut devices: BTreeMap<String, String> = BTreeMap::new();
    for r in &records {
        if let Some(device) = &r.device_id {
            devices.entry(device.clone()).or_insert_with(|| r.room.clone());
        }
    }
    let infos = devices
        .into_iter()
        .map(|(device_id, room)| {
            let telemetry = run.join("logs").join(format!("{device_id}_telemetry.csv"));
            DeviceInfo {
                log_path: run.join("logs").join(format!("{device_id}.csv")),
                telemetry_path: telemetry.exists().then_some(telemetry),
                device_id,
                room,
            }
        })
        .collect();
    Ok((records, infos, config))
}

fn cmd_report(run: &Path, period: Option<&str>, emit_plot_data: bool) -> Result<(), CliError> {
    let (records, devices, config) = load_run(run)?;
    let period = match period {
        Some(raw) => {
            let (a, b) = raw
                .split_once("..")
                .ok_or_else(|| CliError::Input(format!("bad period {raw:?}, want a..b")))?;
            (
                Timestamp::parse_rfc3339(a.trim()).map_err(|e| CliError::Input(e.to_string()))?,
                Timestamp::parse_rfc3339(b.trim()).map_err(|e| CliError::Input(e.to_string()))?,
            )
        }
        None => (config.start, config.end()),
    };
    let report = build_fleet_report(period, &records, &devices, config.sampling_interval_ms)?;
    let files = write_report_files(
        &report,
        &records,
        &devices,
        &run.join("report"),
        emit_plot_data,
    )?;
    for f in &files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn cmd_audit(
    run: &Path,
    room: Option<&str>,
    device: Option<&str>,
    at: Option<&str>,
    event: Option<&str>,
) -> Result<(), CliError> {
    if !run.is_dir() {
        return Err(CliError::Input(format!(
            "run directory {} does not exist",
            run.display()
        )));
    }
    let records = load_audit_csv(run.join("registry").join("audit.csv"))
        .map_err(|e| CliError::Input(e.to_string()))?;

    if let Some(raw) = at {
        let instant =
            Timestamp::parse_rfc3339(raw).map_err(|e| CliError::Input(e.to_string()))?;
        let mut rooms: Vec<String> = records
            .iter()
            .filter(|r| r.event == AuditEvent::Deploy)
            .map(|r| r.room.clone())
            .collect();
        rooms.sort();
        rooms.dedup();
        if let Some(filter_room) = room {
            rooms.retain(|r| r == filter_room);
        }
        println!("room,model_version");
        for r in &rooms {
            match model_at(&records, r, instant) {
                Some(v) => println!("{r},{v}"),
                None => println!("{r},"),
            }
        }
        return Ok(());
    }

    let event = match event {
        Some(raw) => Some(
            AuditEvent::parse(raw)
                .ok_or_else(|| CliError::Input(format!("unknown event {raw:?}")))?,
        ),
        None => None,
    };
    let filter = AuditFilter {
        room: room.map(str::to_string),
        device: device.map(str::to_string),
        event,
        from: None,
        to: None,
    };
    println!("{}", AUDIT_COLUMNS.join(","));
    for record in query(&records, &filter) {
        println!("{}", record.to_csv_line());
    }
    Ok(())
}

fn cmd_inspect_model(file: &Path) -> Result<(), CliError> {
    let bytes = std::fs::read(file)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", file.display())))?;
    let artifact = ModelArtifact::from_bytes(&bytes)?;
    println!("file,{}", file.display());
    println!("algorithm,{}", artifact.algorithm);
    println!("version,{}", artifact.version);
    println!("room,{}", artifact.room);
    println!("trained_at,{}", artifact.trained_at.to_rfc3339());
    println!(
        "training_window,{}..{}",
        artifact.training_window.0.to_rfc3339(),
        artifact.training_window.1.to_rfc3339()
    );
    println!("cv_rmse,{}", artifact.cv_rmse);
    println!("test_rmse,{}", artifact.test_rmse);
    match &artifact.params {
        ModelParams::Mlr(p) => {
            println!("params,mlr weights=6 intercept={}", p.intercept);
        }
        ModelParams::Svr(p) => {
            println!(
                "params,svr weights=6 intercept={} epsilon={} c={} epochs={}",
                p.intercept, p.config.epsilon, p.config.c, p.config.epochs
            );
        }
        ModelParams::Elm(p) => {
            println!(
                "params,elm hidden={} activation={} seed={}",
                p.hidden,
                p.activation.tag(),
                p.seed
            );
        }
        ModelParams::Rfr(p) => {
            let nodes: usize = p.trees.iter().map(|t| t.nodes.len()).sum();
            println!(
                "params,rfr trees={} total_nodes={} max_depth={} seed={}",
                p.trees.len(),
                p.config.max_depth,
                nodes,
                p.seed
            );
        }
    }
    Ok(())
}
