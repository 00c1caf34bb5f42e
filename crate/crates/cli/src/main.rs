//! `fesloop`: calibration, training, closed-loop runs, replay and evaluation.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use fesloop::decoder::{split_offline, CalibrationSet, Model, ModelKind};
use fesloop::emg::SEGMENT_PERIOD_US;
use fesloop::session::{
    cursor_series, evaluate, plant_series, run_calibration, simulate, ClosedLoop, Event, LogWriter,
    RunConfig, SessionError, SessionHeader, SessionLog,
};
use fesloop_gateway::{serve, GatewayConfig, LoopRunner, Pace, RunnerOptions};

const CALIBRATION_MAGIC: &[u8] = b"FESCAL 1\n";

#[derive(Parser)]
#[command(
    name = "fesloop",
    version,
    about = "Closed-loop EMG decoding and stimulation engine"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML); flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream in the session.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Participant fixture: synthetic_healthy, synthetic_s1 or synthetic_s2.
    #[arg(long, global = true)]
    fixture: Option<String>,
    /// Decoder: lda or gbdt.
    #[arg(long, global = true)]
    model: Option<ModelKind>,
    /// Output file (directory for `eval`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Record a labelled calibration set.
    Calibrate,
    /// Train a decoder and report its offline accuracy.
    Train {
        /// Calibration set from `calibrate`; recorded afresh when absent.
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Closed loop paced in real time, served over the gateway.
    Run {
        #[command(flatten)]
        loop_args: LoopArgs,
        /// Speed-up over real time.
        #[arg(long, default_value_t = 1.0)]
        pace: f64,
        /// WebSocket bind address (default from FESLOOP_GATEWAY_ADDR).
        #[arg(long)]
        ws: Option<String>,
        /// TCP bind address (default from FESLOOP_GATEWAY_TCP_ADDR).
        #[arg(long)]
        tcp: Option<String>,
        /// Broadcast a state update every N ticks.
        #[arg(long, default_value_t = 3)]
        decimation: u64,
    },
    /// Closed loop as fast as possible on the simulated clock.
    Simulate {
        #[command(flatten)]
        loop_args: LoopArgs,
    },
    /// Re-decode a session log's features and check them against its predictions.
    Replay {
        log: PathBuf,
        #[arg(long)]
        model_file: Option<PathBuf>,
    },
    /// Metrics report and CSV series for a session log.
    Eval { log: PathBuf },
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Args)]
struct LoopArgs {
    /// Trained model from `train`; a model is trained first when absent.
    #[arg(long)]
    model_file: Option<PathBuf>,
    /// Session length in seconds; defaults to the reference script.
    #[arg(long)]
    duration: Option<f64>,
    /// Disable stimulation.
    #[arg(long)]
    no_stim: bool,
    /// Record raw EMG frames.
    #[arg(long)]
    log_frames: bool,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Config(m) => Failure::Config(m),
            SessionError::Validation(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("aborted: {m}");
            ExitCode::from(3)
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(f) = &common.fixture {
        cfg.fixture = f.clone();
        cfg.profile = None;
    }
    if let Some(m) = common.model {
        cfg.model = m;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_path(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let common = &cli.common;
    match cli.command {
        Command::Config => {
            print!("{}", load_config(common)?.to_toml());
            Ok(())
        }
        Command::Calibrate => {
            let cfg = load_config(common)?;
            let cal = record_calibration(&cfg)?;
            let out = out_path(common, "calibration.fescal");
            save_calibration(&cal, &out)?;
            println!(
                "calibration: {} samples, classes {:?} -> {}",
                cal.len(),
                cal.classes,
                out.display()
            );
            Ok(())
        }
        Command::Train { calibration } => {
            let cfg = load_config(common)?;
            let cal = match calibration {
                Some(p) => load_calibration(&p)?,
                None => record_calibration(&cfg)?,
            };
            let (model, accuracy) = train(&cfg, &cal)?;
            let out = out_path(common, "model.fesmodel");
            model
                .write_to(BufWriter::new(File::create(&out).map_err(runtime)?))
                .map_err(runtime)?;
            println!(
                "model: {} offline_accuracy {accuracy:.4} hash {} -> {}",
                cfg.model,
                model.hash(),
                out.display()
            );
            Ok(())
        }
        Command::Simulate { loop_args } => {
            let cfg = loop_config(common, &loop_args)?;
            let model = obtain_model(&cfg, loop_args.model_file.as_deref())?;
            let sim = simulate(&cfg, model)?;
            let out = out_path(common, "session.feslog");
            std::fs::write(&out, &sim.bytes).map_err(runtime)?;
            if let Some(e) = sim.error {
                return Err(runtime(format!("{e} (partial log in {})", out.display())));
            }
            println!("session: {} ticks -> {}", sim.stats.ticks, out.display());
            print!("{}", evaluate(&sim.log)?.to_text());
            Ok(())
        }
        Command::Run {
            loop_args,
            pace,
            ws,
            tcp,
            decimation,
        } => {
            let cfg = loop_config(common, &loop_args)?;
            if !(pace > 0.0) {
                return Err(Failure::Config(format!(
                    "pace must be positive, got {pace}"
                )));
            }
            let model = obtain_model(&cfg, loop_args.model_file.as_deref())?;
            let mut gateway = GatewayConfig::from_env();
            if let Some(a) = ws {
                gateway.ws_addr = a;
            }
            if let Some(a) = tcp {
                gateway.tcp_addr = Some(a);
            }
            let pace = if pace == 1.0 {
                Pace::RealTime
            } else {
                Pace::Accelerated(pace)
            };
            let out = out_path(common, "session.feslog");
            run_served(&cfg, model, &gateway, pace, decimation, &out)?;
            let log = SessionLog::load(&out)?;
            print!("{}", evaluate(&log)?.to_text());
            Ok(())
        }
        Command::Replay { log, model_file } => replay(&log, model_file.as_deref()),
        Command::Eval { log } => {
            let log = SessionLog::load(&log)?;
            let report = evaluate(&log)?;
            let dir = out_path(common, ".");
            std::fs::create_dir_all(&dir).map_err(runtime)?;
            std::fs::write(dir.join("report.txt"), report.to_text()).map_err(runtime)?;
            write_csv(&dir.join("cursor.csv"), cursor_series(&log))?;
            write_csv(&dir.join("plant.csv"), plant_series(&log))?;
            print!("{}", report.to_text());
            Ok(())
        }
    }
}

fn loop_config(common: &Common, args: &LoopArgs) -> Result<RunConfig, Failure> {
    let mut cfg = load_config(common)?;
    if let Some(d) = args.duration {
        cfg.duration_s = Some(d);
    }
    if args.no_stim {
        cfg.stim_enabled = false;
    }
    cfg.log_frames |= args.log_frames;
    if let Some(p) = &args.model_file {
        cfg.model_path = Some(p.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn record_calibration(cfg: &RunConfig) -> Result<CalibrationSet, Failure> {
    let profile = cfg.participant()?;
    let movements = cfg.calibration_movements(&profile);
    Ok(run_calibration(
        &profile,
        &cfg.calibration.protocol,
        &movements,
        &cfg.pipeline,
        cfg.seed,
    )?)
}

fn train(cfg: &RunConfig, cal: &CalibrationSet) -> Result<(Model, f64), Failure> {
    let (train, test) = split_offline(cal).map_err(runtime)?;
    let model = Model::train(cfg.model, &train).map_err(runtime)?;
    let accuracy = model.accuracy(&test).map_err(runtime)?;
    Ok((model, accuracy))
}

fn obtain_model(cfg: &RunConfig, path: Option<&Path>) -> Result<Model, Failure> {
    match path.or(cfg.model_path.as_deref()) {
        Some(p) => load_model(p),
        None => {
            let (model, accuracy) = train(cfg, &record_calibration(cfg)?)?;
            log::info!(
                "trained {} decoder, offline accuracy {accuracy:.4}",
                cfg.model
            );
            Ok(model)
        }
    }
}

fn load_model(path: &Path) -> Result<Model, Failure> {
    let f = File::open(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    Model::read_from(BufReader::new(f))
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn save_calibration(cal: &CalibrationSet, path: &Path) -> Result<(), Failure> {
    let mut w = BufWriter::new(File::create(path).map_err(runtime)?);
    w.write_all(CALIBRATION_MAGIC).map_err(runtime)?;
    bincode::serialize_into(&mut w, cal).map_err(runtime)?;
    w.flush().map_err(runtime)
}

fn load_calibration(path: &Path) -> Result<CalibrationSet, Failure> {
    let bad = |m: String| Failure::Config(format!("{}: {m}", path.display()));
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| bad(e.to_string()))?;
    let body = bytes
        .strip_prefix(CALIBRATION_MAGIC)
        .ok_or_else(|| bad("not a calibration file".into()))?;
    bincode::deserialize(body).map_err(|e| bad(e.to_string()))
}

fn write_csv<T: serde::Serialize>(path: &Path, rows: Vec<T>) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(runtime)?;
    for r in rows {
        w.serialize(r).map_err(runtime)?;
    }
    w.flush().map_err(runtime)
}

fn run_served(
    cfg: &RunConfig,
    model: Model,
    gateway: &GatewayConfig,
    pace: Pace,
    decimation: u64,
    out: &Path,
) -> Result<(), Failure> {
    let profile = cfg.participant()?;
    let ticks = {
        let script_s = cfg.script(&profile).duration_s();
        let seconds = cfg.duration_s.unwrap_or(script_s);
        (seconds * 1e6 / SEGMENT_PERIOD_US as f64).ceil() as u64
    };
    let header = SessionHeader::for_run(cfg, Some(&model))?;
    let writer = LogWriter::new(BufWriter::new(File::create(out).map_err(runtime)?), &header)?;
    let lp = ClosedLoop::new(cfg, profile, model)?.with_sink(Box::new(writer));

    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    let options = RunnerOptions {
        pace,
        decimation,
        max_ticks: Some(ticks),
        ..Default::default()
    };
    let outcome = rt.block_on(async {
        let runner = LoopRunner::spawn(lp, options);
        let handle = runner.handle();
        let server = match serve(gateway, handle.clone()).await {
            Ok(s) => s,
            Err(e) => {
                runner.stop();
                return Err(Failure::Config(e.to_string()));
            }
        };
        println!(
            "serving ws://{} tcp {:?} for {ticks} ticks",
            server.ws_addr, server.tcp_addr
        );
        while handle.is_running() {
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
        drop(server);
        Ok(runner.stop())
    })?;
    match outcome.error {
        Some(e) => Err(runtime(e)),
        None => Ok(()),
    }
}

fn replay(path: &Path, model_file: Option<&Path>) -> Result<(), Failure> {
    let log = SessionLog::load(path)?;
    log.check_monotone()?;
    let Some(model_path) = model_file else {
        print!("{}", evaluate(&log)?.to_text());
        return Ok(());
    };
    let model = load_model(model_path)?;
    if log
        .header
        .model_hash
        .as_deref()
        .is_some_and(|h| h != model.hash())
    {
        return Err(Failure::Config(
            "model does not match the log header hash".into(),
        ));
    }
    let mut checked = 0usize;
    let mut mismatched = 0usize;
    let mut pending: Option<(u64, Vec<f64>)> = None;
    for event in &log.events {
        match event {
            Event::Feature { t_us, rms, .. } => pending = Some((*t_us, rms.clone())),
            Event::Prediction {
                t_us,
                label,
                scores,
            } => {
                let Some((ft, rms)) = pending.take().filter(|(ft, _)| ft == t_us) else {
                    return Err(runtime(format!("prediction at {t_us} us has no feature")));
                };
                let again = model.predict(&rms).map_err(runtime)?;
                checked += 1;
                if again.label != *label || again.scores != *scores {
                    mismatched += 1;
                    log::warn!(
                        "prediction at {ft} us differs: {label:?} vs {:?}",
                        again.label
                    );
                }
            }
            _ => {}
        }
    }
    println!("replay: {checked} predictions, {mismatched} mismatched");
    if mismatched > 0 {
        return Err(runtime(format!(
            "{mismatched} predictions differ from the log"
        )));
    }
    Ok(())
}
