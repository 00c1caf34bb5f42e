//! Three-state stimulation controller (reading, stimulation, waiting).
//!
//! The vertical cursor position selects the channel by sign (up:
//! dorsiflexion, down: plantarflexion) and sets the current as a fraction of
//! the channel maximum. A command is emitted only on the Reading to
//! Stimulation transition; afterwards the controller dwells for the
//! stimulation and waiting times, with the cursor frozen, before reading
//! again. After waiting, the cursor gets `controller_speed` catch-up updates
//! whose step is boosted by `1/m` and decays geometrically back to 1.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fixed pulse width of the biphasic symmetric waveform.
pub const PULSE_WIDTH_US: f64 = 300.0;
/// Duration of the emulated trigger pulse sent to the stimulator.
pub const TRIGGER_PULSE_US: f64 = 5.0;
pub const DEFAULT_LOAD_OHM: f64 = 1000.0;
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StimChannel {
    Dorsiflexion,
    Plantarflexion,
}

impl StimChannel {
    pub fn for_cursor(y: f64) -> Self {
        if y < 0.0 {
            StimChannel::Plantarflexion
        } else {
            StimChannel::Dorsiflexion
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelCurrents {
    pub dorsiflexion: f64,
    pub plantarflexion: f64,
}

impl ChannelCurrents {
    pub fn get(&self, ch: StimChannel) -> f64 {
        match ch {
            StimChannel::Dorsiflexion => self.dorsiflexion,
            StimChannel::Plantarflexion => self.plantarflexion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StimError {
    #[error("invalid stimulation parameter: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StimParams {
    pub max_current_ma: ChannelCurrents,
    pub start_threshold_pct: f64,
    pub stim_time_s: f64,
    pub wait_time_s: f64,
    pub pulse_freq_hz: f64,
    pub controller_speed: u8,
    pub pulse_width_us: f64,
    pub energy_limit_mj: f64,
    pub load_ohm: f64,
}

impl Default for StimParams {
    fn default() -> Self {
        StimParams::s1_sustained()
    }
}

impl StimParams {
    /// Participant S1, sustained contraction test.
    pub fn s1_sustained() -> Self {
        StimParams {
            max_current_ma: ChannelCurrents {
                dorsiflexion: 53.0,
                plantarflexion: 42.0,
            },
            start_threshold_pct: 50.0,
            stim_time_s: 1.2,
            wait_time_s: 0.5,
            pulse_freq_hz: 25.0,
            controller_speed: 8,
            pulse_width_us: PULSE_WIDTH_US,
            energy_limit_mj: 300.0,
            load_ohm: DEFAULT_LOAD_OHM,
        }
    }

    /// Participant S1, proportional control test.
    pub fn s1_proportional() -> Self {
        StimParams {
            max_current_ma: ChannelCurrents {
                dorsiflexion: 55.0,
                plantarflexion: 42.0,
            },
            start_threshold_pct: 10.0,
            stim_time_s: 0.5,
            wait_time_s: 0.3,
            pulse_freq_hz: 35.0,
            ..StimParams::s1_sustained()
        }
    }

    /// Participant S2 (dorsiflexion only, no speed boost).
    pub fn s2_sustained() -> Self {
        StimParams {
            max_current_ma: ChannelCurrents {
                dorsiflexion: 90.0,
                plantarflexion: 0.0,
            },
            start_threshold_pct: 50.0,
            stim_time_s: 1.2,
            wait_time_s: 0.7,
            pulse_freq_hz: 15.0,
            controller_speed: 1,
            ..StimParams::s1_sustained()
        }
    }

    pub fn validate(&self) -> Result<(), StimError> {
        let bad = |m: String| Err(StimError::Invalid(m));
        let c = self.max_current_ma;
        if !(c.dorsiflexion >= 0.0 && c.plantarflexion >= 0.0) {
            return bad("currents must be non-negative".into());
        }
        if !(self.start_threshold_pct > 0.0 && self.start_threshold_pct <= 100.0) {
            return bad(format!(
                "start threshold {} outside (0, 100]",
                self.start_threshold_pct
            ));
        }
        if !(self.stim_time_s > 0.0 && self.wait_time_s > 0.0) {
            return bad("stimulation and waiting times must be positive".into());
        }
        if !(self.pulse_freq_hz > 0.0) {
            return bad("pulse frequency must be positive".into());
        }
        if !(1..=10).contains(&self.controller_speed) {
            return bad(format!(
                "controller speed {} outside 1-10",
                self.controller_speed
            ));
        }
        if self.pulse_width_us != PULSE_WIDTH_US {
            return bad(format!("pulse width fixed at {PULSE_WIDTH_US} us"));
        }
        if !(self.energy_limit_mj > 0.0 && self.load_ohm > 0.0) {
            return bad("energy limit and load must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimCommand {
    pub channel: StimChannel,
    pub current_ma: f64,
    pub pulse_freq_hz: f64,
    pub pulse_width_us: f64,
    pub duration_s: f64,
    /// Session time the command was issued, seconds.
    pub issued_at_s: f64,
    pub trigger_pulse_us: f64,
}

impl StimCommand {
    pub fn is_active_at(&self, t: f64) -> bool {
        t >= self.issued_at_s && t < self.issued_at_s + self.duration_s
    }

    /// Pulse times (seconds) delivered in `[from, to)`.
    pub fn pulse_times(&self, from: f64, to: f64) -> Vec<f64> {
        let period = 1.0 / self.pulse_freq_hz;
        let end = to.min(self.issued_at_s + self.duration_s);
        let first = ((from - self.issued_at_s) / period).ceil().max(0.0) as u64;
        (first..)
            .map(|k| self.issued_at_s + k as f64 * period)
            .take_while(|&t| t < end)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SafetyViolation {
    Energy,
    Current,
}

/// Energy of one biphasic pulse pair into a resistive load, millijoules.
pub fn pulse_energy_mj(current_ma: f64, pulse_width_us: f64, load_ohm: f64) -> f64 {
    let i = current_ma * 1e-3;
    i * i * load_ohm * 2.0 * pulse_width_us * 1e-6 * 1e3
}

pub fn check_safety(cmd: &StimCommand, params: &StimParams) -> Result<(), SafetyViolation> {
    if cmd.current_ma < 0.0 || cmd.current_ma > params.max_current_ma.get(cmd.channel) + 1e-9 {
        return Err(SafetyViolation::Current);
    }
    if pulse_energy_mj(cmd.current_ma, cmd.pulse_width_us, params.load_ohm) > params.energy_limit_mj
    {
        return Err(SafetyViolation::Energy);
    }
    Ok(())
}

/// Linear map of |y| onto 0..max of the channel selected by the sign of y.
pub fn map_current(cursor_y: f64, params: &StimParams) -> f64 {
    let max = params.max_current_ma.get(StimChannel::for_cursor(cursor_y));
    (cursor_y.abs().min(1.0) * max).clamp(0.0, max)
}

/// Step multiplier `m`, exact for every integer speed.
pub fn speed_multiplier(controller_speed: u8) -> f64 {
    // (11 - s) / 10 == 1 - (s - 1) * 0.1, without the rounding of the latter
    let s = controller_speed.clamp(1, 10);
    f64::from(11 - s) / 10.0
}

/// Cursor step scale at a given reading iteration: `1/m` at iteration 0,
/// geometrically back to 1 at iteration `controller_speed`.
pub fn speed_schedule(controller_speed: u8, reading_iteration: u32) -> f64 {
    let speed = u32::from(controller_speed.max(1));
    let m = speed_multiplier(controller_speed);
    let progress = f64::from(reading_iteration.min(speed)) / f64::from(speed);
    (1.0 / m).powf(1.0 - progress)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FsmState {
    Reading,
    Stimulation,
    Waiting,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FsmOutput {
    pub command: Option<StimCommand>,
    /// Multiplier for the next cursor update; 0 freezes the cursor.
    pub step_scale: f64,
    pub violation: Option<SafetyViolation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimFsm {
    state: FsmState,
    state_entry_s: f64,
    reading_iteration: u32,
    params: StimParams,
}

impl StimFsm {
    /// Starts in Reading with the catch-up phase already complete.
    pub fn new(params: StimParams) -> Self {
        StimFsm {
            state: FsmState::Reading,
            state_entry_s: 0.0,
            reading_iteration: u32::from(params.controller_speed),
            params,
        }
    }

    pub fn state(&self) -> FsmState {
        self.state
    }

    pub fn params(&self) -> &StimParams {
        &self.params
    }

    pub fn reading_iteration(&self) -> u32 {
        self.reading_iteration
    }

    /// Replaces parameters between ticks; the current state is kept.
    pub fn set_params(&mut self, params: StimParams) {
        self.params = params;
    }

    fn enter(&mut self, state: FsmState, at: f64) {
        self.state = state;
        self.state_entry_s = at;
    }

    fn reading_step(&mut self) -> f64 {
        let s = speed_schedule(self.params.controller_speed, self.reading_iteration);
        self.reading_iteration = self.reading_iteration.saturating_add(1);
        s
    }

    /// Advances the controller by one tick at session time `now`.
    pub fn step(&mut self, cursor_y: f64, now: f64) -> FsmOutput {
        let mut out = FsmOutput {
            command: None,
            step_scale: 0.0,
            violation: None,
        };
        match self.state {
            FsmState::Reading => {
                let settled = self.reading_iteration >= u32::from(self.params.controller_speed);
                if settled && cursor_y.abs() * 100.0 >= self.params.start_threshold_pct {
                    let cmd = StimCommand {
                        channel: StimChannel::for_cursor(cursor_y),
                        current_ma: map_current(cursor_y, &self.params),
                        pulse_freq_hz: self.params.pulse_freq_hz,
                        pulse_width_us: self.params.pulse_width_us,
                        duration_s: self.params.stim_time_s,
                        issued_at_s: now,
                        trigger_pulse_us: TRIGGER_PULSE_US,
                    };
                    match check_safety(&cmd, &self.params) {
                        Ok(()) => {
                            out.command = Some(cmd);
                            self.enter(FsmState::Stimulation, now);
                        }
                        Err(v) => {
                            out.violation = Some(v);
                            self.enter(FsmState::Waiting, now);
                        }
                    }
                } else {
                    out.step_scale = self.reading_step();
                }
            }
            FsmState::Stimulation => {
                let deadline = self.state_entry_s + self.params.stim_time_s;
                if now + TIME_EPS >= deadline {
                    self.enter(FsmState::Waiting, deadline);
                }
            }
            FsmState::Waiting => {
                let deadline = self.state_entry_s + self.params.wait_time_s;
                if now + TIME_EPS >= deadline {
                    self.enter(FsmState::Reading, deadline);
                    self.reading_iteration = 0;
                    out.step_scale = self.reading_step();
                }
            }
        }
        out
    }
}

/// Convenience wrapper matching the functional form of the controller.
pub fn fsm_step(fsm: &StimFsm, cursor_y: f64, now: f64) -> (StimFsm, FsmOutput) {
    let mut next = fsm.clone();
    let out = next.step(cursor_y, now);
    (next, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn below_threshold_stays_reading() {
        let (fsm, out) = fsm_step(&StimFsm::new(StimParams::s1_sustained()), 0.49, 0.0);
        assert_eq!(fsm.state(), FsmState::Reading);
        assert!(out.command.is_none());
        assert_eq!(out.step_scale, 1.0);
    }

    #[test]
    fn dorsiflexion_command_is_proportional() {
        let (fsm, out) = fsm_step(&StimFsm::new(StimParams::s1_sustained()), 0.6, 1.0);
        let cmd = out.command.unwrap();
        assert_eq!(fsm.state(), FsmState::Stimulation);
        assert_eq!(cmd.channel, StimChannel::Dorsiflexion);
        assert!((cmd.current_ma - 0.6 * 53.0).abs() < 1e-12);
        assert!((cmd.current_ma - 31.8).abs() < 1e-9);
        assert_eq!(cmd.duration_s, 1.2);
        assert_eq!(cmd.pulse_freq_hz, 25.0);
        assert_eq!(cmd.pulse_width_us, 300.0);
        assert_eq!(out.step_scale, 0.0);
    }

    #[test]
    fn plantarflexion_command_is_proportional() {
        let (_, out) = fsm_step(&StimFsm::new(StimParams::s1_sustained()), -0.8, 1.0);
        let cmd = out.command.unwrap();
        assert_eq!(cmd.channel, StimChannel::Plantarflexion);
        assert!((cmd.current_ma - 33.6).abs() < 1e-9);
    }

    #[test]
    fn map_current_examples() {
        let p = StimParams::s1_sustained();
        assert_eq!(map_current(0.0, &p), 0.0);
        assert_eq!(map_current(1.0, &p), 53.0);
        let p90 = StimParams::s2_sustained();
        assert_eq!(map_current(0.5, &p90), 45.0);
        assert_eq!(map_current(1.7, &p), 53.0);
    }

    #[test]
    fn speed_multiplier_endpoints() {
        assert_eq!(speed_multiplier(1), 1.0);
        assert_eq!(speed_multiplier(8), 0.3);
        assert_eq!(speed_multiplier(10), 0.1);
        assert!((speed_schedule(8, 0) - 1.0 / 0.3).abs() < 1e-12);
        assert_eq!(speed_schedule(8, 8), 1.0);
        assert_eq!(speed_schedule(8, 20), 1.0);
        for i in 0..5 {
            assert_eq!(speed_schedule(1, i), 1.0);
        }
    }

    #[test]
    fn safety_examples() {
        assert!((pulse_energy_mj(90.0, 300.0, 1000.0) - 4.86).abs() < 1e-9);
        let mut p = StimParams::s2_sustained();
        let cmd = StimCommand {
            channel: StimChannel::Dorsiflexion,
            current_ma: 90.0,
            pulse_freq_hz: 15.0,
            pulse_width_us: 300.0,
            duration_s: 1.2,
            issued_at_s: 0.0,
            trigger_pulse_us: TRIGGER_PULSE_US,
        };
        assert_eq!(check_safety(&cmd, &p), Ok(()));
        let over = StimCommand {
            current_ma: 90.1,
            ..cmd.clone()
        };
        assert_eq!(check_safety(&over, &p), Err(SafetyViolation::Current));
        // raise the channel ceiling so only the energy limit can trip
        p.max_current_ma.dorsiflexion = 2000.0;
        // I = sqrt(0.3 J / (1000 ohm * 600 us)) ~ 707.1 mA
        let limit_ma = (0.3f64 / (1000.0 * 600e-6)).sqrt() * 1e3;
        assert!((limit_ma - 707.1).abs() < 0.1);
        let at = StimCommand {
            current_ma: 707.0,
            ..cmd.clone()
        };
        assert_eq!(check_safety(&at, &p), Ok(()));
        let hot = StimCommand {
            current_ma: 708.0,
            ..cmd
        };
        assert_eq!(check_safety(&hot, &p), Err(SafetyViolation::Energy));
    }

    #[test]
    fn violation_forces_waiting_without_command() {
        let mut p = StimParams::s1_sustained();
        p.energy_limit_mj = 1.0; // 53 mA gives ~1.7 mJ
        let (fsm, out) = fsm_step(&StimFsm::new(p), 1.0, 0.0);
        assert!(out.command.is_none());
        assert_eq!(out.violation, Some(SafetyViolation::Energy));
        assert_eq!(fsm.state(), FsmState::Waiting);
    }

    #[test]
    fn dwell_and_catch_up_sequence() {
        let tick = 0.009;
        let mut fsm = StimFsm::new(StimParams::s1_sustained());
        let mut states = Vec::new();
        let mut scales = Vec::new();
        for k in 0..400 {
            let out = fsm.step(0.9, k as f64 * tick);
            states.push(fsm.state());
            scales.push(out.step_scale);
        }
        // stim: ticks 0..=133 (1.2 s / 9 ms = 133.3), then waiting
        assert_eq!(states[133], FsmState::Stimulation);
        assert_eq!(states[134], FsmState::Waiting);
        // waiting ends at the first tick >= 1.7 s: tick 189
        assert_eq!(states[188], FsmState::Waiting);
        assert_eq!(states[189], FsmState::Reading);
        assert!((scales[189] - 1.0 / 0.3).abs() < 1e-12);
        // 8 catch-up iterations then the next trigger
        for k in 190..197 {
            assert_eq!(states[k], FsmState::Reading);
            assert!(scales[k] > 1.0 && scales[k] < scales[k - 1]);
        }
        assert_eq!(states[197], FsmState::Stimulation);
    }

    #[test]
    fn params_validation() {
        assert!(StimParams::s1_sustained().validate().is_ok());
        assert!(StimParams::s1_proportional().validate().is_ok());
        assert!(StimParams::s2_sustained().validate().is_ok());
        assert!(StimParams {
            controller_speed: 11,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(StimParams {
            controller_speed: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(StimParams {
            wait_time_s: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(StimParams {
            pulse_width_us: 200.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn pulse_train_count() {
        let cmd = StimCommand {
            channel: StimChannel::Dorsiflexion,
            current_ma: 10.0,
            pulse_freq_hz: 25.0,
            pulse_width_us: 300.0,
            duration_s: 1.0,
            issued_at_s: 2.0,
            trigger_pulse_us: TRIGGER_PULSE_US,
        };
        assert_eq!(cmd.pulse_times(0.0, 10.0).len(), 25);
        let split = cmd.pulse_times(2.0, 2.5).len() + cmd.pulse_times(2.5, 3.0).len();
        assert_eq!(split, 25);
    }

    proptest! {
        #[test]
        fn current_is_monotone_in_cursor(a in 0.0f64..=1.0, b in 0.0f64..=1.0, sign in prop::bool::ANY) {
            let p = StimParams::s1_sustained();
            let s = if sign { 1.0 } else { -1.0 };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(map_current(s * lo, &p) <= map_current(s * hi, &p));
        }

        #[test]
        fn state_sequence_is_regular(ys in prop::collection::vec(-1.0f64..=1.0, 1..800), speed in 1u8..=10) {
            let p = StimParams { controller_speed: speed, ..StimParams::s1_proportional() };
            let mut fsm = StimFsm::new(p);
            let mut prev = fsm.state();
            for (k, y) in ys.iter().enumerate() {
                let out = fsm.step(*y, k as f64 * 0.009);
                let cur = fsm.state();
                let ok = matches!(
                    (prev, cur),
                    (FsmState::Reading, FsmState::Reading)
                        | (FsmState::Reading, FsmState::Stimulation)
                        | (FsmState::Stimulation, FsmState::Stimulation)
                        | (FsmState::Stimulation, FsmState::Waiting)
                        | (FsmState::Waiting, FsmState::Waiting)
                        | (FsmState::Waiting, FsmState::Reading)
                );
                prop_assert!(ok, "{:?} -> {:?}", prev, cur);
                prop_assert_eq!(out.command.is_some(), prev == FsmState::Reading && cur == FsmState::Stimulation);
                if let Some(cmd) = &out.command {
                    prop_assert!(check_safety(cmd, &p).is_ok());
                }
                if cur != FsmState::Reading || out.command.is_some() {
                    prop_assert_eq!(out.step_scale, 0.0);
                }
                prev = cur;
            }
        }
    }
}
