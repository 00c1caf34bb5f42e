//! Closed-loop neuroprosthetic control engine.
//!
//! Multi-channel surface EMG is filtered, blanked around stimulation
//! artifacts and summarised as per-channel RMS features. A classifier
//! (LDA or gradient-boosted trees) turns each feature vector into a
//! movement label, the label drives an exponentially smoothed 2D cursor,
//! and the cursor's vertical position proportionally drives a three-state
//! stimulation controller acting on a simulated ankle.
//!
//! ```text
//! EmgFrame (32 ch x 18 samples, 111 Hz)
//!   -> band-pass 10-500 Hz -> notch 50 Hz -> EMA baseline removal
//!   -> artifact blanking -> RMS over 252 ms window
//!   -> LDA / GBDT -> Prediction
//!   -> cursor smoothing -> StimFsm -> StimCommand -> AnklePlant
//! ```
//!
//! The [`session`] module wires everything into calibration, training,
//! closed-loop and replay runs and owns the on-disk session log format.

pub mod cursor;
pub mod decoder;
pub mod emg;
pub mod eval;
pub mod movement;
pub mod plant;
pub mod session;
pub mod stim;

pub use movement::{Axis, Direction, Movement};
