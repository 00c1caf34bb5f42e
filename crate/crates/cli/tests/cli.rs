use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fesloop::decoder::{CalibrationSet, Model, ModelKind};
use fesloop::session::{Event, SessionLog};
use fesloop::Movement;

fn fesloop(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fesloop"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = fesloop(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Calibration set and model trained on the S1 fixture.
fn trained(dir: &Path) -> PathBuf {
    ok(
        dir,
        &[
            "--fixture",
            "synthetic_s1",
            "calibrate",
            "--out",
            "cal.fescal",
        ],
    );
    let text = ok(
        dir,
        &[
            "--fixture",
            "synthetic_s1",
            "--model",
            "lda",
            "train",
            "--calibration",
            "cal.fescal",
            "--out",
            "m.fesmodel",
        ],
    );
    assert!(text.contains("offline_accuracy"), "{text}");
    dir.join("m.fesmodel")
}

#[test]
fn calibrate_train_simulate_replay_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);

    let text = ok(
        d,
        &[
            "--fixture",
            "synthetic_s1",
            "simulate",
            "--model-file",
            "m.fesmodel",
            "--duration",
            "12",
            "--out",
            "s.feslog",
        ],
    );
    assert!(text.contains("nmae_mean"), "{text}");
    let log = SessionLog::load(&d.join("s.feslog")).unwrap();
    assert_eq!(log.header.fixture, "synthetic_s1");
    assert!(log.count("feature") >= 12 * 111);

    let text = ok(d, &["replay", "s.feslog", "--model-file", "m.fesmodel"]);
    assert!(text.contains("0 mismatched"), "{text}");

    let text = ok(d, &["eval", "s.feslog", "--out", "report"]);
    assert!(text.contains("trials:"));
    let report = d.join("report");
    assert_eq!(
        std::fs::read_to_string(report.join("report.txt")).unwrap(),
        text
    );

    let mut cursor = csv::Reader::from_path(report.join("cursor.csv")).unwrap();
    assert_eq!(
        cursor.headers().unwrap(),
        vec!["t_s", "ref_x", "ref_y", "x", "y", "intent"]
    );
    assert_eq!(cursor.records().count(), log.count("cursor"));
    let mut plant = csv::Reader::from_path(report.join("plant.csv")).unwrap();
    assert_eq!(
        plant.headers().unwrap(),
        vec!["t_s", "angle_deg", "current_ma"]
    );
    assert_eq!(plant.records().count(), log.count("angle"));
}

#[test]
fn same_seed_same_log_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    let run = |seed: &str, out: &str| {
        ok(
            d,
            &[
                "--fixture",
                "synthetic_s1",
                "--seed",
                seed,
                "simulate",
                "--model-file",
                "m.fesmodel",
                "--duration",
                "3",
                "--out",
                out,
            ],
        );
        std::fs::read(d.join(out)).unwrap()
    };
    assert_eq!(run("4", "a.feslog"), run("4", "b.feslog"));
    assert_ne!(run("4", "a.feslog"), run("5", "c.feslog"));
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    assert_eq!(code(&fesloop(d, &["--fixture", "nobody", "calibrate"])), 2);
    assert_eq!(code(&fesloop(d, &["--model", "svm", "train"])), 2);
    assert_eq!(
        code(&fesloop(d, &["--config", "missing.toml", "calibrate"])),
        2
    );

    std::fs::write(d.join("bad.toml"), "[stim]\ncontroller_speed = 11\n").unwrap();
    let out = fesloop(d, &["--config", "bad.toml", "config"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));

    std::fs::write(d.join("typo.toml"), "sede = 3\n").unwrap();
    assert_eq!(code(&fesloop(d, &["--config", "typo.toml", "config"])), 2);

    assert_eq!(
        code(&fesloop(d, &["simulate", "--model-file", "none.fesmodel"])),
        2
    );
    assert_eq!(code(&fesloop(d, &["simulate", "--duration", "-1"])), 2);
}

#[test]
fn printed_config_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let text = ok(
        d,
        &[
            "--fixture",
            "synthetic_s2",
            "--seed",
            "9",
            "--model",
            "gbdt",
            "config",
        ],
    );
    std::fs::write(d.join("run.toml"), &text).unwrap();
    assert_eq!(ok(d, &["--config", "run.toml", "config"]), text);
    assert!(
        text.contains("synthetic_s2") && text.contains("seed = 9"),
        "{text}"
    );
}

#[test]
fn model_from_another_pipeline_aborts_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // a 3-feature model cannot decode 32-channel features
    let mut set = CalibrationSet::new(vec![Movement::Rest, Movement::Dorsiflexion]);
    for i in 0..200 {
        let label = if i % 2 == 0 {
            Movement::Rest
        } else {
            Movement::Dorsiflexion
        };
        let x = if i % 2 == 0 { 0.0 } else { 5.0 } + (i as f64 * 0.37).sin();
        set.push(vec![x, -x, 0.5 * x], label, i as u64 * 9_000);
    }
    let model = Model::train(ModelKind::Lda, &set).unwrap();
    model
        .write_to(std::fs::File::create(d.join("wrong.fesmodel")).unwrap())
        .unwrap();

    let out = fesloop(
        d,
        &[
            "simulate",
            "--model-file",
            "wrong.fesmodel",
            "--duration",
            "1",
            "--out",
            "s.feslog",
        ],
    );
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let log = SessionLog::load(&d.join("s.feslog")).unwrap();
    assert!(matches!(log.events.last(), Some(Event::Abort { .. })));
}

#[test]
fn replay_rejects_a_different_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    ok(
        d,
        &[
            "--fixture",
            "synthetic_s1",
            "simulate",
            "--model-file",
            "m.fesmodel",
            "--duration",
            "1",
            "--out",
            "s.feslog",
        ],
    );
    ok(
        d,
        &[
            "--fixture",
            "synthetic_s1",
            "--seed",
            "2",
            "train",
            "--out",
            "other.fesmodel",
        ],
    );
    assert_eq!(
        code(&fesloop(
            d,
            &["replay", "s.feslog", "--model-file", "other.fesmodel"]
        )),
        2
    );
    assert!(ok(d, &["replay", "s.feslog"]).contains("trials:"));
}

#[test]
fn run_serves_and_records() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    let text = ok(
        d,
        &[
            "--fixture",
            "synthetic_s1",
            "run",
            "--model-file",
            "m.fesmodel",
            "--duration",
            "2",
            "--pace",
            "10",
            "--ws",
            "127.0.0.1:0",
            "--tcp",
            "127.0.0.1:0",
            "--out",
            "r.feslog",
        ],
    );
    assert!(text.starts_with("serving ws://127.0.0.1:"), "{text}");
    let log = SessionLog::load(&d.join("r.feslog")).unwrap();
    log.check_monotone().unwrap();
    assert!(
        log.count("feature").abs_diff(223) <= 1,
        "{}",
        log.count("feature")
    );

    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let out = fesloop(
        d,
        &[
            "run",
            "--model-file",
            "m.fesmodel",
            "--duration",
            "1",
            "--ws",
            &addr,
            "--out",
            "x.feslog",
        ],
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot bind"));
}
