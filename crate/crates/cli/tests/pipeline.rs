//! Drives the binary end to end: generate, ingest, fit, train, evaluate,
//! report, plus the exit-code contract.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_slotsched")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn slotsched")
}

fn assert_ok(out: &Output, context: &str) {
    assert!(
        out.status.success(),
        "{context} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(path: &Path) {
    let text = "\
# tiny end-to-end run
seed = 5
slot_count = 6
state_dim = 6
embed_dim = 8
window = 3
buffer_size = 4
episodes = 2
horizon = 8
actor_hidden = 5
q_hidden = 5
importance_hidden = 4
gtrxl_layers = 1
gtrxl_heads = 2
trials = 2
emulator_epochs = 3
emulator_hidden = 8
emulator_batch = 8
synth_viewers = 40
synth_events = 60
synth_mixture = tz_a:0.6:1:0.75,tz_b:0.4:4:0.75
";
    std::fs::write(path, text).unwrap();
}

#[test]
fn full_pipeline_produces_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = root.join("run.conf");
    write_config(&config);
    let cfg = config.to_str().unwrap();

    let raw = root.join("raw");
    assert_ok(
        &run(&["--config", cfg, "generate", "--out-dir", raw.to_str().unwrap()]),
        "generate",
    );
    assert!(raw.join("sessions.csv").exists());
    assert!(raw.join("event_meta.csv").exists());

    let log = root.join("events.csv");
    assert_ok(
        &run(&[
            "--config", cfg,
            "ingest",
            "--sessions", raw.join("sessions.csv").to_str().unwrap(),
            "--meta", raw.join("event_meta.csv").to_str().unwrap(),
            "--out", log.to_str().unwrap(),
        ]),
        "ingest",
    );
    assert!(log.exists());

    let model = root.join("behaviour.bin");
    assert_ok(
        &run(&[
            "--config", cfg,
            "fit-emulator",
            "--log", log.to_str().unwrap(),
            "--out", model.to_str().unwrap(),
        ]),
        "fit-emulator",
    );
    assert!(model.exists());

    let agent = root.join("agent.bin");
    let curves = root.join("curves.csv");
    assert_ok(
        &run(&[
            "--config", cfg,
            "train",
            "--log", log.to_str().unwrap(),
            "--model", model.to_str().unwrap(),
            "--out", agent.to_str().unwrap(),
            "--curves", curves.to_str().unwrap(),
        ]),
        "train",
    );
    assert!(agent.exists());
    let curve_text = std::fs::read_to_string(&curves).unwrap();
    // header + episodes x tasks
    assert_eq!(curve_text.lines().count(), 1 + 2 * 2);

    let metrics = root.join("metrics.json");
    let baseline = root.join("baseline.json");
    let eval_out = run(&[
        "--config", cfg,
        "evaluate",
        "--log", log.to_str().unwrap(),
        "--model", model.to_str().unwrap(),
        "--agent", agent.to_str().unwrap(),
        "--out", metrics.to_str().unwrap(),
        "--baseline-out", baseline.to_str().unwrap(),
    ]);
    assert_ok(&eval_out, "evaluate");
    let metrics_text = std::fs::read_to_string(&metrics).unwrap();
    assert!(metrics_text.contains("eng_ncis"));
    assert!(metrics_text.contains("config_hash"));
    assert!(baseline.exists());

    let report_dir = root.join("report");
    assert_ok(
        &run(&[
            "--config", cfg,
            "report",
            "--metrics", metrics.to_str().unwrap(),
            "--curves", curves.to_str().unwrap(),
            "--out-dir", report_dir.to_str().unwrap(),
        ]),
        "report",
    );
    for name in ["metrics.json", "curves.csv", "reward_engagement.svg", "reward_adoption.svg"] {
        assert!(report_dir.join(name).exists(), "{name} missing from report");
    }

    // same seed: re-running evaluate reproduces the metrics byte for byte
    let metrics2 = root.join("metrics2.json");
    assert_ok(
        &run(&[
            "--config", cfg,
            "evaluate",
            "--log", log.to_str().unwrap(),
            "--model", model.to_str().unwrap(),
            "--agent", agent.to_str().unwrap(),
            "--out", metrics2.to_str().unwrap(),
        ]),
        "evaluate again",
    );
    assert_eq!(metrics_text, std::fs::read_to_string(&metrics2).unwrap());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.conf");
    std::fs::write(&config, "no_such_key = 1\n").unwrap();
    let out = run(&[
        "--config",
        config.to_str().unwrap(),
        "generate",
        "--out-dir",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config"));
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "fit-emulator",
        "--log",
        dir.path().join("missing.csv").to_str().unwrap(),
        "--out",
        dir.path().join("m.bin").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn malformed_csv_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let sessions = dir.path().join("sessions.csv");
    std::fs::write(&sessions, "event_id,viewer_id,join_offset\n1,2,3\n").unwrap();
    let meta = dir.path().join("meta.csv");
    std::fs::write(&meta, "event_id,slot,duration_min,date_index\n").unwrap();
    let out = run(&[
        "ingest",
        "--sessions", sessions.to_str().unwrap(),
        "--meta", meta.to_str().unwrap(),
        "--out", dir.path().join("log.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}
