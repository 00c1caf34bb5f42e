use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    Event, EventSink, LiveParams, LogWriter, MemorySink, ParamUpdate, RunConfig, SessionError,
    SessionHeader, SessionLog, SharedBuffer,
};
use crate::cursor::{update_cursor, CursorState, ReferenceScript, ReferenceSpec};
use crate::decoder::Model;
use crate::emg::{EmgPipeline, SEGMENT_LEN, SEGMENT_PERIOD_US};
use crate::movement::Movement;
use crate::plant::{
    inject_artifact, synth_emg, AnklePlant, Intent, ParticipantProfile, PLANT_RATE_HZ,
};
use crate::stim::{FsmState, StimChannel, StimCommand, StimFsm};

/// Separates the closed-loop noise stream from the calibration one.
const LOOP_STREAM: u64 = 0x100F;

/// Where the simulated participant's effort comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum IntentSource {
    /// Follows the reference script, correcting by visual feedback.
    Scripted,
    /// Held at a value set from outside (operator or UI).
    Manual(Intent),
}

/// Loop state after one EMG tick, as broadcast to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickSnapshot {
    pub tick: u64,
    pub t_us: u64,
    pub cursor: (f64, f64),
    pub reference: (f64, f64),
    pub label: Option<Movement>,
    pub fsm_state: FsmState,
    pub current_ma: f64,
    /// Command in force at the tick, if any.
    pub command: Option<StimCommand>,
    pub angle_deg: f64,
    pub intent: Intent,
}

/// Single-owner simulation of the full pipeline on a common microsecond
/// clock: EMG segments every 9 ms, plant steps at 120 Hz.
pub struct ClosedLoop {
    profile: ParticipantProfile,
    model: Model,
    params: LiveParams,
    pipeline: EmgPipeline,
    cursor: CursorState,
    fsm: StimFsm,
    plant: AnklePlant,
    rng: ChaCha8Rng,
    script: ReferenceScript,
    script_offset_us: u64,
    intent_source: IntentSource,
    intent: Intent,
    commands: Vec<StimCommand>,
    /// Ticks so far; frame sequence numbers continue after the priming frames.
    seq: u64,
    prime: u64,
    plant_steps: u64,
    step_scale: f64,
    label: Option<Movement>,
    trial: Option<usize>,
    logged_fsm: Option<FsmState>,
    log_frames: bool,
    sink: Box<dyn EventSink>,
    now_us: u64,
}

impl ClosedLoop {
    /// Builds a loop that records into memory; see [`ClosedLoop::with_sink`].
    pub fn new(
        config: &RunConfig,
        profile: ParticipantProfile,
        model: Model,
    ) -> Result<Self, SessionError> {
        let mut pipeline = EmgPipeline::new(config.pipeline.clone())
            .map_err(|e| SessionError::Config(e.to_string()))?;
        let script = config.script(&profile);
        script
            .validate()
            .map_err(|e| SessionError::Config(e.to_string()))?;
        let params = LiveParams {
            stim: profile.stim,
            decay_factor: config.cursor.decay_factor,
            stim_enabled: config.stim_enabled,
            mapping: config.cursor.mapping,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(LOOP_STREAM);
        // fill the feature window with rest EMG so the first tick yields a feature
        let prime = config.pipeline.window_len().div_ceil(SEGMENT_LEN) as u64;
        for seq in 0..prime {
            pipeline.push(&synth_emg(&Intent::REST, &profile.muscle, seq, 0, &mut rng))?;
        }
        Ok(ClosedLoop {
            plant: AnklePlant::new(profile.ankle.clone()),
            fsm: StimFsm::new(profile.stim),
            cursor: CursorState::new(config.cursor.decay_factor),
            profile,
            model,
            params,
            pipeline,
            rng,
            script,
            script_offset_us: 0,
            intent_source: IntentSource::Scripted,
            intent: Intent::REST,
            commands: Vec::new(),
            seq: 0,
            prime,
            plant_steps: 0,
            step_scale: 1.0,
            label: None,
            trial: None,
            logged_fsm: None,
            log_frames: config.log_frames,
            sink: Box::new(MemorySink::default()),
            now_us: 0,
        })
    }

    pub fn with_sink(mut self, sink: Box<dyn EventSink>) -> Self {
        self.sink = sink;
        self
    }

    pub fn now_us(&self) -> u64 {
        self.now_us
    }

    pub fn params(&self) -> &LiveParams {
        &self.params
    }

    pub fn cursor(&self) -> &CursorState {
        &self.cursor
    }

    pub fn fsm(&self) -> &StimFsm {
        &self.fsm
    }

    pub fn script(&self) -> &ReferenceScript {
        &self.script
    }

    /// Script time in seconds for session time `t_us`.
    fn script_time(&self, t_us: u64) -> f64 {
        t_us.saturating_sub(self.script_offset_us) as f64 * 1e-6
    }

    pub fn script_finished(&self) -> bool {
        self.script_time(self.now_us) >= self.script.duration_s() - 1e-9
    }

    pub fn reference_position(&self, t_us: u64) -> (f64, f64) {
        self.script
            .position(&self.params.mapping, self.script_time(t_us))
    }

    pub fn set_intent_source(&mut self, source: IntentSource) {
        self.intent_source = source;
    }

    /// Replaces the reference with `spec` repeated from the current time.
    pub fn set_reference(
        &mut self,
        spec: ReferenceSpec,
        cycles: usize,
    ) -> Result<(), SessionError> {
        spec.validate()
            .map_err(|e| SessionError::Config(e.to_string()))?;
        self.script = ReferenceScript::repeat(spec, cycles.max(1));
        self.script_offset_us = self.now_us;
        self.trial = None;
        Ok(())
    }

    /// Validates and applies an operator update in one step; on error the
    /// loop is untouched. Applied updates are logged with their sequence.
    pub fn apply_param_update(
        &mut self,
        update: &ParamUpdate,
        seq: u64,
    ) -> Result<(), SessionError> {
        let next = update
            .apply_to(&self.params)
            .map_err(SessionError::Validation)?;
        self.params = next;
        self.fsm.set_params(next.stim);
        self.cursor.decay_factor = next.decay_factor;
        self.sink.record(&Event::ParamChange {
            t_us: self.now_us,
            seq,
            update: update.clone(),
        })
    }

    fn active_command(&self, t_s: f64) -> Option<&StimCommand> {
        self.commands.iter().rev().find(|c| c.is_active_at(t_s))
    }

    fn plant_time_us(step: u64) -> u64 {
        step * 1_000_000 / PLANT_RATE_HZ as u64
    }

    fn plant_step(&mut self) -> Result<(), SessionError> {
        self.plant_steps += 1;
        let t_us = Self::plant_time_us(self.plant_steps);
        let t_s = t_us as f64 * 1e-6;
        let (current, channel) = self
            .active_command(t_s)
            .map_or((0.0, StimChannel::Dorsiflexion), |c| {
                (c.current_ma, c.channel)
            });
        let angle = self
            .plant
            .step(&self.intent, current, channel, 1.0 / PLANT_RATE_HZ);
        self.now_us = self.now_us.max(t_us);
        self.sink.record(&Event::Angle {
            t_us,
            angle_deg: angle,
            current_ma: current,
        })
    }

    fn update_intent(&mut self, t_us: u64) {
        self.intent = match self.intent_source {
            IntentSource::Manual(i) => i,
            IntentSource::Scripted => {
                let p = self.script.at(self.script_time(t_us));
                if p.movement.is_rest() || !self.profile.movements.contains(&p.movement) {
                    Intent::REST
                } else {
                    let along = self
                        .params
                        .mapping
                        .along(p.movement, self.cursor.position());
                    let effort = p.level + self.profile.feedback_gain * (p.level - along);
                    Intent::new(p.movement, effort)
                }
            }
        };
    }

    fn emg_tick(&mut self) -> Result<TickSnapshot, SessionError> {
        let start_us = self.seq * SEGMENT_PERIOD_US;
        let t_us = start_us + SEGMENT_PERIOD_US;
        let t_s = t_us as f64 * 1e-6;

        let p = self.script.at(self.script_time(start_us));
        if self.trial != Some(p.cycle) {
            self.trial = Some(p.cycle);
            let cycle_start =
                self.script_offset_us + (self.script.cycle_start_s(p.cycle) * 1e6).round() as u64;
            let spec = self.script.cycles[p.cycle].clone();
            self.sink.record(&Event::TrialStart {
                t_us: cycle_start.max(start_us),
                cycle: p.cycle,
                spec,
            })?;
        }

        self.update_intent(start_us);
        let mut frame = synth_emg(
            &self.intent,
            &self.profile.muscle,
            self.prime + self.seq,
            start_us,
            &mut self.rng,
        );
        let horizon = 5.0 * self.profile.artifact.tail_tau_s;
        self.commands
            .retain(|c| c.issued_at_s + c.duration_s + horizon > start_us as f64 * 1e-6);
        if !self.commands.is_empty() {
            frame = inject_artifact(&frame, &self.commands, &self.profile.artifact);
        }
        if self.log_frames {
            self.sink.record(&Event::Frame(Box::new(frame.clone())))?;
        }
        self.seq += 1;
        self.now_us = t_us;

        if let Some(fv) = self.pipeline.push(&frame)? {
            let pred = self.model.predict(&fv.rms)?;
            self.sink.record(&Event::Feature {
                t_us,
                rms: fv.rms,
                blank_fraction: fv.blank_fraction,
                held: fv.held,
            })?;
            self.sink.record(&Event::Prediction {
                t_us,
                label: pred.label,
                scores: pred.scores,
            })?;
            self.cursor = update_cursor(
                &self.cursor,
                pred.label,
                &self.params.mapping,
                self.step_scale,
                t_us,
            );
            self.label = Some(pred.label);
        }

        if self.params.stim_enabled {
            let out = self.fsm.step(self.cursor.y, t_s);
            self.step_scale = out.step_scale;
            if let Some(cmd) = out.command {
                self.sink.record(&Event::Stim {
                    t_us,
                    command: cmd.clone(),
                })?;
                self.commands.push(cmd);
            }
            if let Some(v) = out.violation {
                self.sink.record(&Event::Safety { t_us, violation: v })?;
            }
        } else {
            self.step_scale = 1.0;
        }
        let state = self.fsm_state();
        if self.logged_fsm != Some(state) {
            self.logged_fsm = Some(state);
            self.sink.record(&Event::Fsm { t_us, state })?;
        }

        let reference = self.reference_position(t_us);
        self.sink.record(&Event::Cursor {
            t_us,
            x: self.cursor.x,
            y: self.cursor.y,
            ref_x: reference.0,
            ref_y: reference.1,
            intent: self.intent.level,
        })?;

        let active = self.active_command(t_s);
        Ok(TickSnapshot {
            tick: self.seq,
            t_us,
            cursor: self.cursor.position(),
            reference,
            label: self.label,
            fsm_state: state,
            current_ma: active.map_or(0.0, |c| c.current_ma),
            command: active.cloned(),
            angle_deg: self.plant.angle_deg,
            intent: self.intent,
        })
    }

    fn fsm_state(&self) -> FsmState {
        if self.params.stim_enabled {
            self.fsm.state()
        } else {
            FsmState::Reading
        }
    }

    /// Runs plant steps due up to the next EMG tick, then the tick itself.
    pub fn advance(&mut self) -> Result<TickSnapshot, SessionError> {
        let next_emg = (self.seq + 1) * SEGMENT_PERIOD_US;
        while Self::plant_time_us(self.plant_steps + 1) <= next_emg {
            self.plant_step()?;
        }
        self.emg_tick()
    }

    /// Steps the plant alone up to session time `t_us`.
    pub fn settle_until(&mut self, t_us: u64) -> Result<(), SessionError> {
        while Self::plant_time_us(self.plant_steps + 1) <= t_us {
            self.plant_step()?;
        }
        Ok(())
    }

    /// Records an abort marker and closes the sink.
    pub fn abort(&mut self, reason: &str) {
        let _ = self.sink.record(&Event::Abort {
            t_us: self.now_us,
            reason: reason.to_string(),
        });
        let _ = self.sink.close();
    }

    pub fn close(&mut self) -> Result<(), SessionError> {
        self.sink.close()
    }

    pub fn into_sink(self) -> Box<dyn EventSink> {
        self.sink
    }
}

/// A failed run's sink, still holding the partial log, and the cause.
pub type SinkError = (Box<dyn EventSink>, SessionError);

/// Per-tick wall-clock cost of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TickStats {
    pub ticks: usize,
    pub durations_us: Vec<u64>,
}

impl TickStats {
    pub fn percentile_us(&self, q: f64) -> u64 {
        if self.durations_us.is_empty() {
            return 0;
        }
        let mut d = self.durations_us.clone();
        d.sort_unstable();
        let i = ((q * d.len() as f64).ceil() as usize).clamp(1, d.len()) - 1;
        d[i]
    }
}

/// Runs the loop until `duration_s` (or the end of the reference script),
/// recording into `sink`. On a module error an abort marker is written and
/// the error returned; events recorded so far stay in the sink.
pub fn run_closed_loop(
    config: &RunConfig,
    model: Model,
    sink: Box<dyn EventSink>,
) -> Result<(Box<dyn EventSink>, TickStats), SinkError> {
    let profile = match config.participant() {
        Ok(p) => p,
        Err(e) => return Err((sink, e)),
    };
    let duration = config
        .duration_s
        .unwrap_or_else(|| config.script(&profile).duration_s());
    let end_us = (duration * 1e6).round() as u64;
    let mut lp = match ClosedLoop::new(config, profile, model) {
        Ok(lp) => lp.with_sink(sink),
        Err(e) => return Err((sink, e)),
    };
    let mut stats = TickStats::default();
    while lp.now_us() + SEGMENT_PERIOD_US <= end_us {
        let t0 = Instant::now();
        if let Err(e) = lp.advance() {
            lp.abort(&e.to_string());
            return Err((lp.into_sink(), e));
        }
        stats.durations_us.push(t0.elapsed().as_micros() as u64);
        stats.ticks += 1;
    }
    if let Err(e) = lp.settle_until(end_us).and_then(|_| lp.close()) {
        return Err((lp.into_sink(), e));
    }
    Ok((lp.into_sink(), stats))
}

/// Result of an in-memory simulated session.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub log: SessionLog,
    pub bytes: Vec<u8>,
    pub stats: TickStats,
    pub error: Option<SessionError>,
}

/// Runs the loop with a log held in memory; a module error still yields
/// the partial log.
pub fn simulate(config: &RunConfig, model: Model) -> Result<Simulation, SessionError> {
    let header = SessionHeader::for_run(config, Some(&model))?;
    let buf = SharedBuffer::default();
    let writer = LogWriter::new(buf.clone(), &header)?;
    let (stats, error) = match run_closed_loop(config, model, Box::new(writer)) {
        Ok((_, stats)) => (stats, None),
        Err((_, e)) => (TickStats::default(), Some(e)),
    };
    let bytes = buf.bytes();
    let log = SessionLog::from_bytes(&bytes)?;
    Ok(Simulation {
        log,
        bytes,
        stats,
        error,
    })
}
