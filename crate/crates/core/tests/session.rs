use fesloop::cursor::ReferenceSpec;
use fesloop::decoder::{Model, ModelKind};
use fesloop::emg::{PipelineConfig, SEGMENT_PERIOD_US};
use fesloop::plant::ParticipantProfile;
use fesloop::session::*;
use fesloop::Movement;

fn healthy_model() -> Model {
    let cfg = RunConfig {
        fixture: "synthetic_healthy".into(),
        ..Default::default()
    };
    calibrate_and_train(&cfg).unwrap().model
}

fn short_run(seconds: f64) -> RunConfig {
    RunConfig {
        fixture: "synthetic_healthy".into(),
        duration_s: Some(seconds),
        stim_enabled: false,
        log_frames: true,
        ..Default::default()
    }
}

#[test]
fn default_protocol_yields_fifty_seconds_of_features() {
    let profile = ParticipantProfile::fixture("synthetic_healthy").unwrap();
    let protocol = CalibrationProtocol::default();
    let schedule = protocol.schedule(&profile.movements);
    let total: f64 = schedule.iter().map(|b| b.1).sum();
    assert_eq!(total, 50.0);

    let cal = run_calibration(
        &profile,
        &protocol,
        &profile.movements,
        &PipelineConfig::default(),
        1,
    )
    .unwrap();
    // one feature per 9 ms segment over 50 s
    let expected = (50_000_000 / SEGMENT_PERIOD_US) as usize;
    assert!(
        cal.len().abs_diff(expected) <= 1,
        "{} vs {expected}",
        cal.len()
    );
    assert_eq!(cal.classes.len(), 5);
    assert!(cal
        .class_counts()
        .iter()
        .all(|&n| n.abs_diff(expected / 5) <= 1));
}

#[test]
fn reduced_movement_set_has_three_labels() {
    let profile = ParticipantProfile::fixture("synthetic_healthy").unwrap();
    let movements = [Movement::Dorsiflexion, Movement::Inversion];
    let cal = run_calibration(
        &profile,
        &CalibrationProtocol::default(),
        &movements,
        &PipelineConfig::default(),
        1,
    )
    .unwrap();
    assert_eq!(
        cal.classes,
        vec![Movement::Rest, Movement::Dorsiflexion, Movement::Inversion]
    );
    let labels: std::collections::BTreeSet<_> = cal.samples.iter().map(|s| s.label).collect();
    assert_eq!(labels.len(), 3);
}

#[test]
fn alternating_protocol_trains() {
    let cfg = RunConfig {
        fixture: "synthetic_healthy".into(),
        calibration: CalibrationConfig {
            protocol: CalibrationProtocol::alternating(),
            movements: vec![],
        },
        ..Default::default()
    };
    let trained = calibrate_and_train(&cfg).unwrap();
    assert!(trained.offline_accuracy > 0.9);
}

#[test]
fn empty_protocol_is_insufficient_data() {
    let profile = ParticipantProfile::fixture("synthetic_healthy").unwrap();
    let protocol = CalibrationProtocol::Standard {
        rest_s: 0.0,
        contraction_s: 0.0,
    };
    let err = run_calibration(
        &profile,
        &protocol,
        &profile.movements,
        &PipelineConfig::default(),
        1,
    )
    .unwrap_err();
    assert!(matches!(err, SessionError::InsufficientData(_)));
}

#[test]
fn one_second_covers_feature_and_angle_rates() {
    let sim = simulate(&short_run(1.0), healthy_model()).unwrap();
    assert!(sim.error.is_none());
    assert!(
        sim.log.count("feature") >= 111,
        "{}",
        sim.log.count("feature")
    );
    assert!(sim.log.count("angle") >= 120, "{}", sim.log.count("angle"));
    assert!(sim.log.count("frame") >= 111);
    sim.log.check_monotone().unwrap();
}

#[test]
fn log_round_trips_through_bytes_and_files() {
    let sim = simulate(&short_run(2.0), healthy_model()).unwrap();
    let again = SessionLog::from_bytes(&sim.log.to_bytes().unwrap()).unwrap();
    assert_eq!(again, sim.log);
    assert_eq!(sim.log.to_bytes().unwrap(), sim.bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.feslog");
    sim.log.save(&path).unwrap();
    assert_eq!(SessionLog::load(&path).unwrap(), sim.log);
}

#[test]
fn torn_tail_keeps_complete_records() {
    let sim = simulate(&short_run(1.0), healthy_model()).unwrap();
    let cut = &sim.bytes[..sim.bytes.len() - 3];
    let log = SessionLog::from_bytes(cut).unwrap();
    assert_eq!(log.events.len(), sim.log.events.len() - 1);
}

#[test]
fn replayed_log_gives_identical_metrics() {
    let cfg = RunConfig {
        duration_s: Some(20.0),
        log_frames: false,
        ..short_run(20.0)
    };
    let sim = simulate(&cfg, healthy_model()).unwrap();
    let a = evaluate(&sim.log).unwrap();
    let b = evaluate(&SessionLog::from_bytes(&sim.bytes).unwrap()).unwrap();
    assert_eq!(a, b);
    assert!(a.nmae_mean.is_some());
}

#[test]
fn closed_sinks_reject_writes() {
    let header = SessionHeader::for_run(&RunConfig::default(), None).unwrap();
    let ev = Event::Abort {
        t_us: 0,
        reason: "x".into(),
    };

    let mut w = LogWriter::new(Vec::new(), &header).unwrap();
    w.record(&ev).unwrap();
    w.close().unwrap();
    assert!(matches!(w.record(&ev), Err(SessionError::IoFailure(_))));

    let mut m = MemorySink::default();
    m.close().unwrap();
    assert!(matches!(m.record(&ev), Err(SessionError::IoFailure(_))));
}

#[test]
fn identical_seeds_give_identical_bytes() {
    let cfg = RunConfig {
        stim_enabled: true,
        ..short_run(5.0)
    };
    let a = simulate(&cfg, healthy_model()).unwrap();
    let b = simulate(&cfg, healthy_model()).unwrap();
    assert_eq!(a.bytes, b.bytes);

    let other = RunConfig {
        seed: cfg.seed + 1,
        ..cfg.clone()
    };
    let c = simulate(&other, healthy_model()).unwrap();
    assert_ne!(a.bytes, c.bytes);
}

#[test]
fn parameter_change_is_logged_and_applied() {
    let cfg = RunConfig {
        fixture: "synthetic_s1".into(),
        ..RunConfig::default()
    };
    let model = calibrate_and_train(&cfg).unwrap().model;
    let profile = cfg.participant().unwrap();
    let mut lp = ClosedLoop::new(&cfg, profile, model).unwrap();
    for _ in 0..10 {
        lp.advance().unwrap();
    }
    let update = ParamUpdate {
        pulse_freq_hz: Some(15.0),
        ..Default::default()
    };
    lp.apply_param_update(&update, 7).unwrap();
    assert_eq!(lp.params().stim.pulse_freq_hz, 15.0);
    assert_eq!(lp.fsm().params().pulse_freq_hz, 15.0);

    let bad = ParamUpdate {
        controller_speed: Some(11),
        ..Default::default()
    };
    assert!(matches!(
        lp.apply_param_update(&bad, 8),
        Err(SessionError::Validation(_))
    ));
    assert_eq!(lp.params().stim.controller_speed, 8);
}

#[test]
fn scripted_trapezoid_reports_zone_accuracy() {
    let mut cfg = short_run(0.0);
    cfg.duration_s = None;
    cfg.log_frames = false;
    cfg.reference.script = vec![ReferenceSpec::two_stage_trapezoid(Movement::Dorsiflexion)];
    let sim = simulate(&cfg, healthy_model()).unwrap();
    let report = evaluate(&sim.log).unwrap();
    assert_eq!(report.trials.len(), 1);
    let zone = report.trials[0].zone_accuracy.unwrap();
    assert!((0.0..=1.0).contains(&zone));
}

#[test]
fn model_kind_is_recorded_in_header() {
    let cfg = RunConfig {
        model: ModelKind::Lda,
        ..short_run(0.5)
    };
    let sim = simulate(&cfg, healthy_model()).unwrap();
    assert_eq!(sim.log.header.model_kind, Some(ModelKind::Lda));
    assert_eq!(
        sim.log.header.model_hash.as_ref().map(String::len),
        Some(64)
    );
}
