//! Session recording, configuration, calibration and the closed loop.

mod calibration;
mod closed_loop;
mod config;
mod log;
mod report;

use thiserror::Error;

use crate::decoder::DecoderError;
use crate::emg::EmgError;
use crate::eval::EvalError;

pub use calibration::{calibrate_and_train, run_calibration, TrainedModel};
pub use closed_loop::{
    run_closed_loop, simulate, ClosedLoop, IntentSource, Simulation, SinkError, TickSnapshot,
    TickStats,
};
pub use config::{
    CalibrationConfig, CalibrationProtocol, CursorConfig, LiveParams, Mode, ParamUpdate,
    ReferenceConfig, RunConfig,
};
pub use log::{
    Event, EventSink, LogWriter, MemorySink, SessionHeader, SessionLog, SharedBuffer, LOG_VERSION,
};
pub use report::{
    cursor_series, evaluate, plant_series, CursorRow, PlantRow, SessionReport, TrialMetrics,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("i/o failure: {0}")]
    IoFailure(String),
    #[error("malformed log: {0}")]
    Format(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("rejected: {0}")]
    Validation(String),
    #[error(transparent)]
    Emg(#[from] EmgError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}
