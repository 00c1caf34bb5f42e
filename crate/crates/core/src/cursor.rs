//! Predicted-cursor smoothing, reference trajectories and position labelling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::movement::{Axis, Direction, Movement};

/// Label threshold on either axis; strictly greater means active.
pub const LABEL_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CursorError {
    #[error("movement {0} mapped to more than one direction")]
    DuplicateMapping(Movement),
    #[error("rest cannot be mapped to a direction")]
    RestMapped,
    #[error("invalid reference: {0}")]
    Reference(String),
    #[error("decay factor must be >= 1, got {0}")]
    DecayFactor(f64),
}

/// Assignment of cursor directions to movement labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskMapping {
    pub up: Option<Movement>,
    pub down: Option<Movement>,
    pub left: Option<Movement>,
    pub right: Option<Movement>,
}

impl Default for TaskMapping {
    fn default() -> Self {
        TaskMapping {
            up: Some(Movement::Dorsiflexion),
            down: Some(Movement::Plantarflexion),
            right: Some(Movement::Inversion),
            left: Some(Movement::Eversion),
        }
    }
}

impl TaskMapping {
    pub fn movement_at(&self, dir: Direction) -> Option<Movement> {
        match dir {
            Direction::Up => self.up,
            Direction::Down => self.down,
            Direction::Left => self.left,
            Direction::Right => self.right,
        }
    }

    pub fn direction_of(&self, movement: Movement) -> Option<Direction> {
        Direction::ALL
            .into_iter()
            .find(|&d| self.movement_at(d) == Some(movement))
    }

    /// Cursor end position for a label; rest and unmapped labels target the origin.
    pub fn target(&self, movement: Movement) -> (f64, f64) {
        self.direction_of(movement)
            .map_or((0.0, 0.0), Direction::unit)
    }

    pub fn validate(&self) -> Result<(), CursorError> {
        let mut seen = Vec::new();
        for m in Direction::ALL.iter().filter_map(|&d| self.movement_at(d)) {
            if m.is_rest() {
                return Err(CursorError::RestMapped);
            }
            if seen.contains(&m) {
                return Err(CursorError::DuplicateMapping(m));
            }
            seen.push(m);
        }
        Ok(())
    }

    /// Signed position of `pos` along the direction assigned to `movement`.
    pub fn along(&self, movement: Movement, pos: (f64, f64)) -> f64 {
        match self.direction_of(movement) {
            Some(d) => d.sign() * d.axis().component(pos),
            None => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CursorState {
    pub x: f64,
    pub y: f64,
    pub decay_factor: f64,
    pub last_update_us: u64,
}

impl CursorState {
    pub fn new(decay_factor: f64) -> Self {
        CursorState {
            x: 0.0,
            y: 0.0,
            decay_factor,
            last_update_us: 0,
        }
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

impl Default for CursorState {
    fn default() -> Self {
        CursorState::new(50.0)
    }
}

/// One smoothing step toward the target of `label`.
///
/// Both axes move by `step_scale / decay_factor` of their remaining
/// distance; the off-target axis therefore decays toward zero.
pub fn update_cursor(
    state: &CursorState,
    label: Movement,
    mapping: &TaskMapping,
    step_scale: f64,
    now_us: u64,
) -> CursorState {
    let (tx, ty) = mapping.target(label);
    let k = (step_scale / state.decay_factor).clamp(0.0, 1.0);
    CursorState {
        x: (state.x + k * (tx - state.x)).clamp(-1.0, 1.0),
        y: (state.y + k * (ty - state.y)).clamp(-1.0, 1.0),
        decay_factor: state.decay_factor,
        last_update_us: now_us,
    }
}

/// Movement label of a cursor position: the dominant axis decides, and
/// only magnitudes strictly above 0.5 count as active.
pub fn label_reference(x: f64, y: f64, mapping: &TaskMapping) -> Movement {
    let (v, dir_pos, dir_neg) = if y.abs() >= x.abs() {
        (y, Direction::Up, Direction::Down)
    } else {
        (x, Direction::Right, Direction::Left)
    };
    if v.abs() <= LABEL_THRESHOLD {
        return Movement::Rest;
    }
    let dir = if v > 0.0 { dir_pos } else { dir_neg };
    mapping.movement_at(dir).unwrap_or(Movement::Rest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    Ramp,
    TwoStageTrapezoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Rise,
    Hold,
    Fall,
    Rest,
}

/// Reference cursor trajectory for one movement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceSpec {
    pub kind: ReferenceKind,
    pub movement: Movement,
    /// Ramp cycle rate; one ramp cycle lasts `1 / rate_hz`.
    pub rate_hz: f64,
    pub hold_s: f64,
    pub rest_s: f64,
    /// Ramp peak (first entry) or trapezoid plateaus in order.
    pub levels: Vec<f64>,
    pub level_hold_s: f64,
    /// Trapezoid transition duration between levels.
    pub transition_s: f64,
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        ReferenceSpec::ramp(Movement::Dorsiflexion)
    }
}

impl ReferenceSpec {
    /// 0.1 Hz ramp with 0.5 s hold and 0.5 s rest at full level.
    pub fn ramp(movement: Movement) -> Self {
        ReferenceSpec {
            kind: ReferenceKind::Ramp,
            movement,
            rate_hz: 0.1,
            hold_s: 0.5,
            rest_s: 0.5,
            levels: vec![1.0],
            level_hold_s: 10.0,
            transition_s: 2.0,
        }
    }

    /// Two-stage trapezoid at half then full activation, 10 s per level.
    pub fn two_stage_trapezoid(movement: Movement) -> Self {
        ReferenceSpec {
            kind: ReferenceKind::TwoStageTrapezoid,
            levels: vec![0.5, 1.0],
            rest_s: 10.0,
            ..ReferenceSpec::ramp(movement)
        }
    }

    pub fn with_level(mut self, level: f64) -> Self {
        self.levels = vec![level];
        self
    }

    pub fn validate(&self) -> Result<(), CursorError> {
        let bad = |m: &str| Err(CursorError::Reference(m.to_string()));
        if self.movement.is_rest() {
            return bad("reference movement must be active");
        }
        if self.levels.is_empty() || self.levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return bad("levels must be non-empty and within [0, 1]");
        }
        if self.hold_s < 0.0 || self.rest_s < 0.0 {
            return bad("hold and rest must be non-negative");
        }
        match self.kind {
            ReferenceKind::Ramp => {
                if !(self.rate_hz > 0.0) {
                    return bad("rate must be positive");
                }
                if self.ramp_edge_s() < 0.0 {
                    return bad("hold + rest exceed the ramp cycle");
                }
            }
            ReferenceKind::TwoStageTrapezoid => {
                if self.level_hold_s <= 0.0 || self.transition_s <= 0.0 {
                    return bad("trapezoid level hold and transition must be positive");
                }
            }
        }
        Ok(())
    }

    /// Rise (and fall) duration of a ramp.
    fn ramp_edge_s(&self) -> f64 {
        (1.0 / self.rate_hz - self.hold_s - self.rest_s) / 2.0
    }

    pub fn cycle_s(&self) -> f64 {
        match self.kind {
            ReferenceKind::Ramp => 1.0 / self.rate_hz,
            ReferenceKind::TwoStageTrapezoid => {
                self.levels.len() as f64 * (self.transition_s + self.level_hold_s)
                    + self.transition_s
                    + self.rest_s
            }
        }
    }

    /// Activation level in [0, 1] and phase at time `t` (periodic).
    pub fn level_at(&self, t: f64) -> (f64, Phase) {
        let tc = t.max(0.0).rem_euclid(self.cycle_s());
        match self.kind {
            ReferenceKind::Ramp => {
                let peak = self.levels[0];
                let edge = self.ramp_edge_s();
                if tc < edge {
                    (peak * tc / edge, Phase::Rise)
                } else if tc < edge + self.hold_s {
                    (peak, Phase::Hold)
                } else if tc < 2.0 * edge + self.hold_s {
                    (peak * (1.0 - (tc - edge - self.hold_s) / edge), Phase::Fall)
                } else {
                    (0.0, Phase::Rest)
                }
            }
            ReferenceKind::TwoStageTrapezoid => {
                let mut start = 0.0;
                let mut prev = 0.0;
                for &lvl in &self.levels {
                    if tc < start + self.transition_s {
                        let f = (tc - start) / self.transition_s;
                        return (
                            prev + (lvl - prev) * f,
                            if lvl >= prev {
                                Phase::Rise
                            } else {
                                Phase::Fall
                            },
                        );
                    }
                    start += self.transition_s;
                    if tc < start + self.level_hold_s {
                        return (lvl, Phase::Hold);
                    }
                    start += self.level_hold_s;
                    prev = lvl;
                }
                if tc < start + self.transition_s {
                    (prev * (1.0 - (tc - start) / self.transition_s), Phase::Fall)
                } else {
                    (0.0, Phase::Rest)
                }
            }
        }
    }

    /// Hold intervals `[start, end)` within one cycle, in cycle time.
    pub fn hold_intervals(&self) -> Vec<(f64, f64, f64)> {
        match self.kind {
            ReferenceKind::Ramp => {
                let e = self.ramp_edge_s();
                vec![(e, e + self.hold_s, self.levels[0])]
            }
            ReferenceKind::TwoStageTrapezoid => {
                let mut out = Vec::new();
                let mut start = 0.0;
                for &lvl in &self.levels {
                    start += self.transition_s;
                    out.push((start, start + self.level_hold_s, lvl));
                    start += self.level_hold_s;
                }
                out
            }
        }
    }
}

/// Reference position and label at time `t`.
pub fn reference_position(
    spec: &ReferenceSpec,
    mapping: &TaskMapping,
    t: f64,
) -> (f64, f64, Movement) {
    let (level, _) = spec.level_at(t);
    let (ux, uy) = mapping.target(spec.movement);
    let (x, y) = (level * ux, level * uy);
    (x, y, label_reference(x, y, mapping))
}

/// A sequence of reference cycles, each with its own movement and level,
/// played back to back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceScript {
    pub cycles: Vec<ReferenceSpec>,
}

/// Where the script is at a given time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptPoint {
    pub cycle: usize,
    pub movement: Movement,
    pub level: f64,
    pub phase: Phase,
    /// Time since the start of the current cycle.
    pub cycle_time: f64,
}

impl ReferenceScript {
    pub fn repeat(spec: ReferenceSpec, cycles: usize) -> Self {
        ReferenceScript {
            cycles: vec![spec; cycles],
        }
    }

    /// `cycles` repetitions of `template` for each movement in turn.
    pub fn per_movement(template: &ReferenceSpec, movements: &[Movement], cycles: usize) -> Self {
        let mut out = Vec::with_capacity(movements.len() * cycles);
        for &m in movements {
            for _ in 0..cycles {
                out.push(ReferenceSpec {
                    movement: m,
                    ..template.clone()
                });
            }
        }
        ReferenceScript { cycles: out }
    }

    pub fn duration_s(&self) -> f64 {
        self.cycles.iter().map(ReferenceSpec::cycle_s).sum()
    }

    pub fn cycle_start_s(&self, cycle: usize) -> f64 {
        self.cycles[..cycle]
            .iter()
            .map(ReferenceSpec::cycle_s)
            .sum()
    }

    pub fn validate(&self) -> Result<(), CursorError> {
        if self.cycles.is_empty() {
            return Err(CursorError::Reference("script has no cycles".into()));
        }
        self.cycles.iter().try_for_each(ReferenceSpec::validate)
    }

    /// Script state at `t`; past the end the last cycle's rest is held.
    pub fn at(&self, t: f64) -> ScriptPoint {
        let mut start = 0.0;
        for (i, spec) in self.cycles.iter().enumerate() {
            let len = spec.cycle_s();
            if t < start + len || i + 1 == self.cycles.len() {
                let ct = (t - start).max(0.0);
                let (level, phase) = if ct >= len {
                    (0.0, Phase::Rest)
                } else {
                    spec.level_at(ct)
                };
                return ScriptPoint {
                    cycle: i,
                    movement: spec.movement,
                    level,
                    phase,
                    cycle_time: ct,
                };
            }
            start += len;
        }
        unreachable!("script validated non-empty")
    }

    pub fn position(&self, mapping: &TaskMapping, t: f64) -> (f64, f64) {
        let p = self.at(t);
        let (ux, uy) = mapping.target(p.movement);
        (p.level * ux, p.level * uy)
    }
}

/// Axis the movement is displayed on under `mapping`.
pub fn task_axis(mapping: &TaskMapping, movement: Movement) -> Option<Axis> {
    mapping.direction_of(movement).map(Direction::axis)
}
