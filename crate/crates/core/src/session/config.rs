use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SessionError;
use crate::cursor::{CursorError, ReferenceScript, ReferenceSpec, TaskMapping};
use crate::decoder::ModelKind;
use crate::emg::PipelineConfig;
use crate::movement::Movement;
use crate::plant::ParticipantProfile;
use crate::stim::StimParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Calibrate,
    Run,
    Replay,
    Simulate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CursorConfig {
    pub decay_factor: f64,
    pub mapping: TaskMapping,
}

impl Default for CursorConfig {
    fn default() -> Self {
        CursorConfig {
            decay_factor: 50.0,
            mapping: TaskMapping::default(),
        }
    }
}

/// Calibration instruction sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CalibrationProtocol {
    /// One rest block, then one sustained contraction per movement.
    Standard { rest_s: f64, contraction_s: f64 },
    /// Short contraction/rest pairs, repeated per movement.
    Alternating {
        contraction_s: f64,
        rest_s: f64,
        repetitions: usize,
    },
}

impl Default for CalibrationProtocol {
    fn default() -> Self {
        CalibrationProtocol::Standard {
            rest_s: 10.0,
            contraction_s: 10.0,
        }
    }
}

impl CalibrationProtocol {
    pub fn alternating() -> Self {
        CalibrationProtocol::Alternating {
            contraction_s: 2.0,
            rest_s: 2.0,
            repetitions: 5,
        }
    }

    /// Instruction blocks `(label, seconds)` for the given movements.
    pub fn schedule(&self, movements: &[Movement]) -> Vec<(Movement, f64)> {
        match *self {
            CalibrationProtocol::Standard {
                rest_s,
                contraction_s,
            } => std::iter::once((Movement::Rest, rest_s))
                .chain(movements.iter().map(|&m| (m, contraction_s)))
                .collect(),
            CalibrationProtocol::Alternating {
                contraction_s,
                rest_s,
                repetitions,
            } => movements
                .iter()
                .flat_map(|&m| {
                    (0..repetitions)
                        .flat_map(move |_| [(m, contraction_s), (Movement::Rest, rest_s)])
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub protocol: CalibrationProtocol,
    /// Movements to calibrate; empty means the participant's full set.
    pub movements: Vec<Movement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    pub template: ReferenceSpec,
    /// Movements to cycle through; empty means the participant's set.
    pub movements: Vec<Movement>,
    pub cycles_per_movement: usize,
    /// Explicit cycle list; overrides template, movements and cycle count.
    pub script: Vec<ReferenceSpec>,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig {
            template: ReferenceSpec::ramp(Movement::Dorsiflexion),
            movements: Vec::new(),
            cycles_per_movement: 5,
            script: Vec::new(),
        }
    }
}

/// Everything a run needs; read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub fixture: String,
    /// Participant profile file; overrides `fixture` when set.
    pub profile: Option<PathBuf>,
    pub seed: u64,
    pub model: ModelKind,
    pub model_path: Option<PathBuf>,
    pub stim_enabled: bool,
    /// Record raw EMG frames in the session log.
    pub log_frames: bool,
    /// Stop after this many seconds; defaults to the reference script length.
    pub duration_s: Option<f64>,
    /// Overrides the participant's visual-feedback gain.
    pub feedback_gain: Option<f64>,
    pub pipeline: PipelineConfig,
    pub cursor: CursorConfig,
    /// Overrides the participant's stimulation preset.
    pub stim: Option<StimParams>,
    pub reference: ReferenceConfig,
    pub calibration: CalibrationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Simulate,
            fixture: "synthetic_healthy".into(),
            profile: None,
            seed: 1,
            model: ModelKind::Lda,
            model_path: None,
            stim_enabled: true,
            log_frames: false,
            duration_s: None,
            feedback_gain: None,
            pipeline: PipelineConfig::default(),
            cursor: CursorConfig::default(),
            stim: None,
            reference: ReferenceConfig::default(),
            calibration: CalibrationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, SessionError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| SessionError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SessionError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SessionError::Config(format!("{}: {e}", path.display())))?;
        RunConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        let cfg = |e: String| SessionError::Config(e);
        self.pipeline.validate().map_err(|e| cfg(e.to_string()))?;
        if self.cursor.decay_factor < 1.0 {
            return Err(cfg(
                CursorError::DecayFactor(self.cursor.decay_factor).to_string()
            ));
        }
        self.cursor
            .mapping
            .validate()
            .map_err(|e| cfg(e.to_string()))?;
        if let Some(s) = &self.stim {
            s.validate().map_err(|e| cfg(e.to_string()))?;
        }
        if let Some(d) = self.duration_s {
            if !(d > 0.0) {
                return Err(cfg(format!("duration_s must be positive, got {d}")));
            }
        }
        if let Some(g) = self.feedback_gain {
            if g < 0.0 {
                return Err(cfg("feedback_gain must be non-negative".into()));
            }
        }
        for p in [&self.profile, &self.model_path].into_iter().flatten() {
            if !p.exists() {
                return Err(cfg(format!("{} does not exist", p.display())));
            }
        }
        if self.profile.is_none() {
            ParticipantProfile::fixture(&self.fixture).map_err(|e| cfg(e.to_string()))?;
        }
        let profile = self.participant()?;
        self.script(&profile)
            .validate()
            .map_err(|e| cfg(e.to_string()))?;
        Ok(())
    }

    /// Participant profile with config overrides applied.
    pub fn participant(&self) -> Result<ParticipantProfile, SessionError> {
        let mut p = match &self.profile {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| SessionError::Config(e.to_string()))?;
                ParticipantProfile::from_toml(&text)
                    .map_err(|e| SessionError::Config(e.to_string()))?
            }
            None => ParticipantProfile::fixture(&self.fixture)
                .map_err(|e| SessionError::Config(e.to_string()))?,
        };
        if let Some(s) = self.stim {
            p.stim = s;
        }
        if let Some(g) = self.feedback_gain {
            p.feedback_gain = g;
        }
        Ok(p)
    }

    /// Reference script for the run.
    pub fn script(&self, profile: &ParticipantProfile) -> ReferenceScript {
        if !self.reference.script.is_empty() {
            return ReferenceScript {
                cycles: self.reference.script.clone(),
            };
        }
        let movements = if self.reference.movements.is_empty() {
            &profile.movements
        } else {
            &self.reference.movements
        };
        ReferenceScript::per_movement(
            &self.reference.template,
            movements,
            self.reference.cycles_per_movement,
        )
    }

    pub fn calibration_movements(&self, profile: &ParticipantProfile) -> Vec<Movement> {
        if self.calibration.movements.is_empty() {
            profile.movements.clone()
        } else {
            self.calibration.movements.clone()
        }
    }
}

/// Live parameter change from an operator; absent fields stay unchanged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamUpdate {
    pub max_current_dorsiflexion_ma: Option<f64>,
    pub max_current_plantarflexion_ma: Option<f64>,
    pub start_threshold_pct: Option<f64>,
    pub stim_time_s: Option<f64>,
    pub wait_time_s: Option<f64>,
    pub pulse_freq_hz: Option<f64>,
    /// Wide integer so out-of-range values reach validation.
    pub controller_speed: Option<i64>,
    pub decay_factor: Option<f64>,
    pub stim_enabled: Option<bool>,
    pub mapping: Option<TaskMapping>,
}

/// Parameter groups a `ParamUpdate` can change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiveParams {
    pub stim: StimParams,
    pub decay_factor: f64,
    pub stim_enabled: bool,
    pub mapping: TaskMapping,
}

impl ParamUpdate {
    pub fn is_empty(&self) -> bool {
        *self == ParamUpdate::default()
    }

    /// New parameter set with the update applied, or the validation error.
    /// `current` is never modified.
    pub fn apply_to(&self, current: &LiveParams) -> Result<LiveParams, String> {
        let mut next = *current;
        let s = &mut next.stim;
        if let Some(v) = self.max_current_dorsiflexion_ma {
            s.max_current_ma.dorsiflexion = v;
        }
        if let Some(v) = self.max_current_plantarflexion_ma {
            s.max_current_ma.plantarflexion = v;
        }
        if let Some(v) = self.start_threshold_pct {
            s.start_threshold_pct = v;
        }
        if let Some(v) = self.stim_time_s {
            s.stim_time_s = v;
        }
        if let Some(v) = self.wait_time_s {
            s.wait_time_s = v;
        }
        if let Some(v) = self.pulse_freq_hz {
            s.pulse_freq_hz = v;
        }
        if let Some(v) = self.controller_speed {
            if !(1..=10).contains(&v) {
                return Err(format!("controller_speed {v} outside 1-10"));
            }
            s.controller_speed = v as u8;
        }
        s.validate().map_err(|e| e.to_string())?;
        if let Some(d) = self.decay_factor {
            if !(d >= 1.0 && d.is_finite()) {
                return Err(CursorError::DecayFactor(d).to_string());
            }
            next.decay_factor = d;
        }
        if let Some(m) = self.mapping {
            m.validate().map_err(|e| e.to_string())?;
            next.mapping = m;
        }
        if let Some(e) = self.stim_enabled {
            next.stim_enabled = e;
        }
        Ok(next)
    }
}
