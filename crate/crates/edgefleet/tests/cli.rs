//! End-to-end tests of the command-line binary.

use std::path::Path;
use std::process::{Command, Output};

use edgefleet::pipeline::write_readings_csv;
use edgefleet::simulator::{generate_room_series, RoomProfile};
use edgefleet::time::{Timestamp, DAY_MS, MINUTE_MS};

fn edgefleet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgefleet"))
        .args(args)
        .env_remove("EDGEFLEET_SEED")
        .output()
        .expect("binary runs")
}

fn write_sample_readings(path: &Path, days: i64) {
    let profile = RoomProfile::office_busy("A10");
    let series = generate_room_series(&profile, 9, Timestamp(0), days * DAY_MS, 5 * MINUTE_MS);
    write_readings_csv(path, &series).unwrap();
}

#[test]
fn train_single_algorithm_writes_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("readings.csv");
    write_sample_readings(&data, 3);
    let out = dir.path().join("models");
    let result = edgefleet(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--room",
        "A10",
        "--algo",
        "mlr",
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "42",
    ]);
    assert!(result.status.success(), "{result:?}");
    let stdout = String::from_utf8(result.stdout).unwrap();
    assert!(stdout.starts_with("room,algorithm,cv_rmse,test_rmse,selected"));
    assert!(stdout.contains("A10,MLR,"));
    assert!(out.join("A10_mlr.mdl").exists());
}

#[test]
fn train_best_prints_all_four_rows_and_marks_selection() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("readings.csv");
    write_sample_readings(&data, 3);
    let out = dir.path().join("models");
    let result = edgefleet(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--room",
        "A10",
        "--algo",
        "best",
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "42",
    ]);
    assert!(result.status.success());
    let stdout = String::from_utf8(result.stdout).unwrap();
    for algo in ["MLR", "SVR", "ELM", "RFR"] {
        assert!(stdout.contains(&format!("A10,{algo},")), "missing {algo} row");
    }
    let starred = stdout.lines().filter(|l| l.ends_with(",*")).count();
    assert_eq!(starred, 1, "exactly one selected row:\n{stdout}");
}

#[test]
fn train_is_byte_deterministic_given_seed() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("readings.csv");
    write_sample_readings(&data, 3);
    let run = |out: &Path| {
        edgefleet(&[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--room",
            "A10",
            "--algo",
            "best",
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "42",
        ])
    };
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let result_a = run(&out_a);
    let result_b = run(&out_b);
    // Stdout differs only in output paths; compare the metrics table.
    let table = |raw: &[u8]| {
        String::from_utf8(raw.to_vec())
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("wrote "))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(table(&result_a.stdout), table(&result_b.stdout));
    let bytes_a = std::fs::read(out_a.join("A10_mlr.mdl")).unwrap();
    let bytes_b = std::fs::read(out_b.join("A10_mlr.mdl")).unwrap();
    assert_eq!(bytes_a, bytes_b);
}

#[test]
fn train_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // Missing file: input error.
    let missing = edgefleet(&[
        "train",
        "--data",
        dir.path().join("nope.csv").to_str().unwrap(),
        "--room",
        "A10",
        "--algo",
        "mlr",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(missing.status.code(), Some(2), "{missing:?}");

    // Schema mismatch: input error (2).
    let bad_schema = dir.path().join("bad.csv");
    std::fs::write(&bad_schema, "a,b,c\n1,2,3\n").unwrap();
    let result = edgefleet(&[
        "train",
        "--data",
        bad_schema.to_str().unwrap(),
        "--room",
        "A10",
        "--algo",
        "mlr",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2), "{result:?}");
    let stderr = String::from_utf8(result.stderr).unwrap();
    assert!(stderr.starts_with("error[2]:"), "{stderr}");
    assert_eq!(stderr.lines().count(), 1);

    // Too little data: exit 3.
    let tiny = dir.path().join("tiny.csv");
    let profile = RoomProfile::office_busy("A10");
    let series = generate_room_series(&profile, 1, Timestamp(0), 10 * MINUTE_MS, 5 * MINUTE_MS);
    write_readings_csv(&tiny, &series).unwrap();
    let result = edgefleet(&[
        "train",
        "--data",
        tiny.to_str().unwrap(),
        "--room",
        "A10",
        "--algo",
        "mlr",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(3), "{result:?}");

    // Unknown algorithm: exit 2.
    let result = edgefleet(&[
        "train",
        "--data",
        tiny.to_str().unwrap(),
        "--room",
        "A10",
        "--algo",
        "gbm",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));

    // Unknown flag: clap rejects with exit 2.
    let result = edgefleet(&["train", "--bogus"]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn env_seed_fallback_matches_explicit_seed() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("readings.csv");
    write_sample_readings(&data, 3);
    let explicit = edgefleet(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--room",
        "A10",
        "--algo",
        "mlr",
        "--out",
        dir.path().join("a").to_str().unwrap(),
        "--seed",
        "4242",
    ]);
    let via_env = Command::new(env!("CARGO_BIN_EXE_edgefleet"))
        .args([
            "train",
            "--data",
            data.to_str().unwrap(),
            "--room",
            "A10",
            "--algo",
            "mlr",
            "--out",
            dir.path().join("b").to_str().unwrap(),
        ])
        .env("EDGEFLEET_SEED", "4242")
        .output()
        .unwrap();
    assert!(explicit.status.success() && via_env.status.success());
    let bytes_a = std::fs::read(dir.path().join("a").join("A10_mlr.mdl")).unwrap();
    let bytes_b = std::fs::read(dir.path().join("b").join("A10_mlr.mdl")).unwrap();
    assert_eq!(bytes_a, bytes_b);
}

#[test]
fn inspect_model_prints_header() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("readings.csv");
    write_sample_readings(&data, 3);
    let out = dir.path().join("models");
    edgefleet(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--room",
        "A10",
        "--algo",
        "elm",
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "7",
    ]);
    let result = edgefleet(&[
        "inspect-model",
        "--file",
        out.join("A10_elm.mdl").to_str().unwrap(),
    ]);
    assert!(result.status.success());
    let stdout = String::from_utf8(result.stdout).unwrap();
    assert!(stdout.contains("algorithm,ELM"));
    assert!(stdout.contains("room,A10"));
    assert!(stdout.contains("params,elm hidden=64 activation=tanh"));

    // Tampered artifact: input error.
    let raw = std::fs::read_to_string(out.join("A10_elm.mdl")).unwrap();
    let tampered_path = dir.path().join("tampered.mdl");
    std::fs::write(&tampered_path, raw.replacen("format_version: 1", "format_version: 9", 1))
        .unwrap();
    let result = edgefleet(&["inspect-model", "--file", tampered_path.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn audit_queries_handcrafted_run() {
    use edgefleet::registry::{AuditEvent, AuditLog};
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    std::fs::create_dir_all(run.join("registry")).unwrap();
    let audit = AuditLog::create(run.join("registry").join("audit.csv")).unwrap();
    let t0 = Timestamp::parse_rfc3339("2020-03-15T00:00:00Z").unwrap();
    audit
        .append(t0, AuditEvent::Register, None, "A10", Some(1), vec![])
        .unwrap();
    audit
        .append(t0, AuditEvent::Deploy, Some("edge-A10"), "A10", Some(1), vec![])
        .unwrap();
    audit
        .append(
            t0.add_millis(DAY_MS),
            AuditEvent::Drift,
            Some("edge-A10"),
            "A10",
            Some(1),
            vec![
                ("rmse".into(), "12.5".into()),
                ("n".into(), "280".into()),
                ("triggered".into(), "true".into()),
            ],
        )
        .unwrap();
    audit
        .append(
            t0.add_millis(DAY_MS + 1),
            AuditEvent::Deploy,
            Some("edge-A10"),
            "A10",
            Some(2),
            vec![],
        )
        .unwrap();

    // Model live between the deploys is v1.
    let at = t0.add_millis(DAY_MS / 2);
    let result = edgefleet(&[
        "audit",
        "--run",
        run.to_str().unwrap(),
        "--at",
        &at.to_rfc3339(),
    ]);
    assert!(result.status.success());
    let stdout = String::from_utf8(result.stdout).unwrap();
    assert!(stdout.contains("A10,1"), "{stdout}");

    // At the second deploy instant, the new model owns the boundary.
    let result = edgefleet(&[
        "audit",
        "--run",
        run.to_str().unwrap(),
        "--at",
        &t0.add_millis(DAY_MS + 1).to_rfc3339(),
    ]);
    let stdout = String::from_utf8(result.stdout).unwrap();
    assert!(stdout.contains("A10,2"), "{stdout}");

    // Event filter returns exactly the drift records.
    let result = edgefleet(&[
        "audit",
        "--run",
        run.to_str().unwrap(),
        "--event",
        "drift",
    ]);
    let stdout = String::from_utf8(result.stdout).unwrap();
    let rows: Vec<&str> = stdout.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].contains(",drift,"));

    // Full log passthrough: rows equal file lines minus header.
    let result = edgefleet(&["audit", "--run", run.to_str().unwrap()]);
    let stdout = String::from_utf8(result.stdout).unwrap();
    let file_lines = std::fs::read_to_string(run.join("registry").join("audit.csv"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(stdout.lines().count() - 1, file_lines - 1);

    // Missing run directory: exit 2.
    let result = edgefleet(&[
        "audit",
        "--run",
        dir.path().join("missing").to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn simulate_then_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("scenario.txt");
    std::fs::write(
        &config_path,
        "start = 2020-03-15T00:00:00Z\n\
         duration_days = 2\n\
         history_days = 4\n\
         seed = 11\n\
         [room A10]\n\
         profile = office_busy\n\
         [room A30]\n\
         profile = meeting_quiet\n",
    )
    .unwrap();
    let run = dir.path().join("run");
    let result = edgefleet(&[
        "simulate",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
    ]);
    assert!(result.status.success(), "{result:?}");
    let stdout = String::from_utf8(result.stdout).unwrap();
    assert!(stdout.contains("triggered_drift_events,0"), "{stdout}");
    assert!(run.join("report").join("summary.txt").exists());
    assert!(run.join("report").join("drift_events.csv").exists());
    assert!(run.join("logs").join("edge-A10.csv").exists());
    assert!(run.join("data").join("A10.csv").exists());

    let summary_before = std::fs::read(run.join("report").join("summary.txt")).unwrap();
    let result = edgefleet(&[
        "report",
        "--run",
        run.to_str().unwrap(),
        "--emit-plot-data",
    ]);
    assert!(result.status.success(), "{result:?}");
    let summary_after = std::fs::read(run.join("report").join("summary.txt")).unwrap();
    assert_eq!(summary_before, summary_after, "report rebuild is reproducible");
    assert!(run
        .join("report")
        .join("plot_edge-A10_daily_rmse.csv")
        .exists());

    // Period-restricted report still renders.
    let result = edgefleet(&[
        "report",
        "--run",
        run.to_str().unwrap(),
        "--period",
        "2020-03-15T00:00:00Z..2020-03-16T00:00:00Z",
    ]);
    assert!(result.status.success(), "{result:?}");

    // Config parse failure: exit 2.
    let broken = dir.path().join("broken.txt");
    std::fs::write(&broken, "start = not-a-time\nseed = 1\n[room A10]\n").unwrap();
    let result = edgefleet(&[
        "simulate",
        "--config",
        broken.to_str().unwrap(),
        "--out",
        dir.path().join("run2").to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
}
