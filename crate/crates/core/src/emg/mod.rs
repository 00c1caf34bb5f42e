//! EMG ingestion: segment framing, filtering, artifact blanking and RMS
//! feature extraction.

mod filter;
mod window;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use filter::{Biquad, Sos, SosBank};
pub use window::{EmgPipeline, FeatureVector, FeatureWindow, FilterState, PipelineConfig};

pub const CHANNELS: usize = 32;
pub const SAMPLE_RATE_HZ: f64 = 2000.0;
pub const SEGMENT_LEN: usize = 18;
/// Segment period in microseconds (18 samples at 2 kHz).
pub const SEGMENT_PERIOD_US: u64 = 9_000;
pub const SAMPLE_PERIOD_US: u64 = 500;
/// Blanking span before a detected artifact: 7.5 ms at 2 kHz.
pub const BLANK_PRE: usize = 15;
/// Blanking span after a detected artifact: 15 ms at 2 kHz.
pub const BLANK_POST: usize = 30;
/// Minimum number of channels above threshold to flag an artifact.
pub const BLANK_MIN_CHANNELS: usize = CHANNELS / 2;

pub type Sample = [i16; CHANNELS];

/// One acquisition segment: 18 consecutive samples on 32 channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmgFrame {
    pub seq: u64,
    /// Session time of the first sample, microseconds.
    pub timestamp_us: u64,
    pub samples: [Sample; SEGMENT_LEN],
}

impl EmgFrame {
    pub fn zeros(seq: u64, timestamp_us: u64) -> Self {
        EmgFrame {
            seq,
            timestamp_us,
            samples: [[0; CHANNELS]; SEGMENT_LEN],
        }
    }

    /// Session time of sample `i` within the segment.
    pub fn sample_time_us(&self, i: usize) -> u64 {
        self.timestamp_us + i as u64 * SAMPLE_PERIOD_US
    }

    pub fn last_sample_time_us(&self) -> u64 {
        self.sample_time_us(SEGMENT_LEN - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmgError {
    #[error("segment gap: expected seq {expected}")]
    GapDetected { expected: u64 },
    #[error("segment seq {got} does not follow {last}")]
    OutOfOrder { last: u64, got: u64 },
    #[error("window not full ({filled}/{len} samples)")]
    WindowNotFull { filled: usize, len: usize },
    #[error("channel {channel} fully blanked and no previous value to hold")]
    AllBlanked { channel: usize },
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
}
