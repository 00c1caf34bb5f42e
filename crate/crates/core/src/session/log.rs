use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{ParamUpdate, RunConfig, SessionError};
use crate::cursor::ReferenceSpec;
use crate::decoder::{Model, ModelKind};
use crate::emg::EmgFrame;
use crate::movement::Movement;
use crate::stim::{FsmState, SafetyViolation, StimCommand, StimParams};

const LOG_MAGIC: &str = "FESLOG 1";
pub const LOG_VERSION: u32 = 1;
const FLUSH_INTERVAL: Duration = Duration::from_secs(1);
const FLUSH_INTERVAL_US: u64 = 1_000_000;

/// Session metadata; written once as a JSON line. Holds no wall-clock data
/// so that identical runs produce identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub version: u32,
    pub config: RunConfig,
    pub seed: u64,
    pub fixture: String,
    pub model_kind: Option<ModelKind>,
    pub model_hash: Option<String>,
    /// Stimulation parameters in force at the start of the session.
    pub stim: StimParams,
}

impl SessionHeader {
    pub fn for_run(config: &RunConfig, model: Option<&Model>) -> Result<Self, SessionError> {
        let profile = config.participant()?;
        Ok(SessionHeader {
            version: LOG_VERSION,
            config: config.clone(),
            seed: config.seed,
            fixture: profile.id.clone(),
            model_kind: model.map(Model::kind),
            model_hash: model.map(Model::hash),
            stim: profile.stim,
        })
    }
}

/// Everything the loop records, stamped with session time in microseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Event {
    TrialStart {
        t_us: u64,
        cycle: usize,
        spec: ReferenceSpec,
    },
    Frame(Box<EmgFrame>),
    Feature {
        t_us: u64,
        rms: Vec<f64>,
        blank_fraction: f64,
        held: bool,
    },
    Prediction {
        t_us: u64,
        label: Movement,
        scores: Vec<f64>,
    },
    Cursor {
        t_us: u64,
        x: f64,
        y: f64,
        ref_x: f64,
        ref_y: f64,
        intent: f64,
    },
    Fsm {
        t_us: u64,
        state: FsmState,
    },
    Stim {
        t_us: u64,
        command: StimCommand,
    },
    Safety {
        t_us: u64,
        violation: SafetyViolation,
    },
    Angle {
        t_us: u64,
        angle_deg: f64,
        current_ma: f64,
    },
    ParamChange {
        t_us: u64,
        seq: u64,
        update: ParamUpdate,
    },
    Abort {
        t_us: u64,
        reason: String,
    },
}

impl Event {
    pub fn t_us(&self) -> u64 {
        match self {
            Event::Frame(f) => f.timestamp_us,
            Event::TrialStart { t_us, .. }
            | Event::Feature { t_us, .. }
            | Event::Prediction { t_us, .. }
            | Event::Cursor { t_us, .. }
            | Event::Fsm { t_us, .. }
            | Event::Stim { t_us, .. }
            | Event::Safety { t_us, .. }
            | Event::Angle { t_us, .. }
            | Event::ParamChange { t_us, .. }
            | Event::Abort { t_us, .. } => *t_us,
        }
    }

    /// Stream name used for per-stream ordering checks.
    pub fn stream(&self) -> &'static str {
        match self {
            Event::TrialStart { .. } => "trial",
            Event::Frame(_) => "frame",
            Event::Feature { .. } => "feature",
            Event::Prediction { .. } => "prediction",
            Event::Cursor { .. } => "cursor",
            Event::Fsm { .. } => "fsm",
            Event::Stim { .. } => "stim",
            Event::Safety { .. } => "safety",
            Event::Angle { .. } => "angle",
            Event::ParamChange { .. } => "param",
            Event::Abort { .. } => "abort",
        }
    }
}

/// Destination for loop events.
pub trait EventSink: Send {
    fn record(&mut self, event: &Event) -> Result<(), SessionError>;
    fn close(&mut self) -> Result<(), SessionError>;
}

/// Collects events in memory.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub events: Vec<Event>,
    closed: bool,
}

impl EventSink for MemorySink {
    fn record(&mut self, event: &Event) -> Result<(), SessionError> {
        if self.closed {
            return Err(SessionError::IoFailure("sink closed".into()));
        }
        self.events.push(event.clone());
        Ok(())
    }

    fn close(&mut self) -> Result<(), SessionError> {
        self.closed = true;
        Ok(())
    }
}

/// Append-only log writer: magic line, JSON header line, then records of
/// `u32` little-endian length followed by a bincode `Event`. Flushes at
/// least once per second of session or wall time.
pub struct LogWriter<W: Write> {
    out: Option<W>,
    closed: bool,
    last_flush_us: u64,
    last_flush: Instant,
}

impl<W: Write> LogWriter<W> {
    pub fn new(mut out: W, header: &SessionHeader) -> Result<Self, SessionError> {
        let json =
            serde_json::to_string(header).map_err(|e| SessionError::IoFailure(e.to_string()))?;
        writeln!(out, "{LOG_MAGIC}")
            .and_then(|_| writeln!(out, "{json}"))
            .map_err(io)?;
        out.flush().map_err(io)?;
        Ok(LogWriter {
            out: Some(out),
            closed: false,
            last_flush_us: 0,
            last_flush: Instant::now(),
        })
    }

    /// Closes the log and hands back the underlying writer.
    pub fn finish(mut self) -> Result<W, SessionError> {
        if !self.closed {
            self.shut()?;
        }
        self.out
            .take()
            .ok_or_else(|| SessionError::IoFailure("writer already taken".into()))
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    fn shut(&mut self) -> Result<(), SessionError> {
        if self.closed {
            return Err(SessionError::IoFailure("log already closed".into()));
        }
        if let Some(out) = self.out.as_mut() {
            out.flush().map_err(io)?;
        }
        self.closed = true;
        Ok(())
    }
}

impl<W: Write> Drop for LogWriter<W> {
    fn drop(&mut self) {
        if let Some(out) = self.out.as_mut() {
            let _ = out.flush();
        }
    }
}

fn io(e: std::io::Error) -> SessionError {
    SessionError::IoFailure(e.to_string())
}

impl<W: Write + Send> EventSink for LogWriter<W> {
    fn record(&mut self, event: &Event) -> Result<(), SessionError> {
        let out = match self.out.as_mut() {
            Some(out) if !self.closed => out,
            _ => return Err(SessionError::IoFailure("write to closed log".into())),
        };
        let body = bincode::serialize(event).map_err(|e| SessionError::IoFailure(e.to_string()))?;
        out.write_all(&(body.len() as u32).to_le_bytes())
            .map_err(io)?;
        out.write_all(&body).map_err(io)?;
        let t = event.t_us();
        if t >= self.last_flush_us + FLUSH_INTERVAL_US
            || self.last_flush.elapsed() >= FLUSH_INTERVAL
        {
            out.flush().map_err(io)?;
            self.last_flush_us = t;
            self.last_flush = Instant::now();
        }
        Ok(())
    }

    fn close(&mut self) -> Result<(), SessionError> {
        self.shut()
    }
}

/// A parsed session log.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub header: SessionHeader,
    pub events: Vec<Event>,
}

impl SessionLog {
    pub fn new(header: SessionHeader) -> Self {
        SessionLog {
            header,
            events: Vec::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, SessionError> {
        let mut w = LogWriter::new(Vec::new(), &self.header)?;
        for e in &self.events {
            w.record(e)?;
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SessionError> {
        SessionLog::read_from(bytes)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, SessionError> {
        let mut r = BufReader::new(r);
        let magic = read_line(&mut r)?;
        if magic != LOG_MAGIC {
            return Err(SessionError::Format("not a session log".into()));
        }
        let header: SessionHeader = serde_json::from_str(&read_line(&mut r)?)
            .map_err(|e| SessionError::Format(e.to_string()))?;
        if header.version != LOG_VERSION {
            return Err(SessionError::Format(format!(
                "unsupported log version {}",
                header.version
            )));
        }
        let mut events = Vec::new();
        loop {
            let mut len = [0u8; 4];
            match r.read_exact(&mut len) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(io(e)),
            }
            let mut body = vec![0u8; u32::from_le_bytes(len) as usize];
            // a torn final record (crash mid-write) ends the log
            if r.read_exact(&mut body).is_err() {
                break;
            }
            events.push(
                bincode::deserialize(&body).map_err(|e| SessionError::Format(e.to_string()))?,
            );
        }
        Ok(SessionLog { header, events })
    }

    pub fn load(path: &Path) -> Result<Self, SessionError> {
        SessionLog::read_from(File::open(path).map_err(io)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), SessionError> {
        let mut f = BufWriter::new(File::create(path).map_err(io)?);
        f.write_all(&self.to_bytes()?).map_err(io)?;
        f.flush().map_err(io)
    }

    /// Checks that timestamps never decrease within a stream.
    pub fn check_monotone(&self) -> Result<(), SessionError> {
        let mut last: std::collections::BTreeMap<&str, u64> = Default::default();
        for e in &self.events {
            let t = e.t_us();
            let prev = last.entry(e.stream()).or_insert(0);
            if t < *prev {
                return Err(SessionError::Format(format!(
                    "{} stream goes back in time at {t} us",
                    e.stream()
                )));
            }
            *prev = t;
        }
        Ok(())
    }

    pub fn count(&self, stream: &str) -> usize {
        self.events.iter().filter(|e| e.stream() == stream).count()
    }
}

fn read_line<R: std::io::BufRead>(r: &mut R) -> Result<String, SessionError> {
    let mut s = String::new();
    r.read_line(&mut s).map_err(io)?;
    if !s.ends_with('\n') {
        return Err(SessionError::Format("truncated log header".into()));
    }
    s.pop();
    Ok(s)
}

/// Cloneable in-memory byte sink, for keeping a handle on a log that is
/// being written by a loop that owns its writer.
#[derive(Debug, Clone, Default)]
pub struct SharedBuffer(std::sync::Arc<std::sync::Mutex<Vec<u8>>>);

impl SharedBuffer {
    pub fn bytes(&self) -> Vec<u8> {
        self.0.lock().expect("buffer lock").clone()
    }
}

impl Write for SharedBuffer {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().expect("buffer lock").extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}
