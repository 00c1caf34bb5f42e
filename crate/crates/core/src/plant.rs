//! Simulated participant: intent to synthetic EMG, stimulation artifacts,
//! and a first-order ankle plant driven by voluntary effort and FES.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emg::{EmgFrame, CHANNELS, SAMPLE_PERIOD_US, SEGMENT_LEN};
use crate::movement::Movement;
use crate::stim::{ChannelCurrents, StimChannel, StimCommand, StimParams};

pub const PLANT_RATE_HZ: f64 = 120.0;
/// Anatomical clamp on the dorsi/plantarflexion angle.
pub const ANGLE_LIMIT_DEG: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("invalid participant profile: {0}")]
    Profile(String),
    #[error("unknown fixture '{0}'")]
    UnknownFixture(String),
    #[error("profile io: {0}")]
    Io(String),
}

/// Single active movement with an activation level in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intent {
    pub movement: Movement,
    pub level: f64,
}

impl Intent {
    pub const REST: Intent = Intent {
        movement: Movement::Rest,
        level: 0.0,
    };

    pub fn new(movement: Movement, level: f64) -> Self {
        if movement.is_rest() {
            Intent::REST
        } else {
            Intent {
                movement,
                level: level.clamp(0.0, 1.0),
            }
        }
    }

    /// Activation of `m`; zero for every other movement.
    pub fn activation(&self, m: Movement) -> f64 {
        if m == self.movement && !m.is_rest() {
            self.level
        } else {
            0.0
        }
    }
}

/// Spatial gain model of the EMG bracelet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuscleModel {
    /// Rows: dorsiflexion, plantarflexion, inversion, eversion.
    pub gains: Vec<Vec<f64>>,
    pub baseline_noise_adu: f64,
    pub activation_noise: f64,
    /// Blend of each movement's gain toward its channel mean, in [0, 1).
    pub crosstalk: f64,
}

impl MuscleModel {
    /// Disjoint 8-channel blocks, one per movement, bell-shaped around the
    /// block centre with the given peak gain.
    pub fn disjoint_blocks(peak: f64, baseline_noise_adu: f64, activation_noise: f64) -> Self {
        let shape = [0.35, 0.6, 0.85, 1.0, 1.0, 0.85, 0.6, 0.35];
        let gains = (0..4)
            .map(|m| {
                (0..CHANNELS)
                    .map(|c| if c / 8 == m { peak * shape[c % 8] } else { 0.0 })
                    .collect()
            })
            .collect();
        MuscleModel {
            gains,
            baseline_noise_adu,
            activation_noise,
            crosstalk: 0.0,
        }
    }

    /// Same gain row for every movement: no spatial information.
    pub fn fully_overlapping(peak: f64, baseline_noise_adu: f64, activation_noise: f64) -> Self {
        MuscleModel {
            gains: vec![vec![peak; CHANNELS]; 4],
            baseline_noise_adu,
            activation_noise,
            crosstalk: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let bad = |m: &str| Err(PlantError::Profile(m.to_string()));
        if self.gains.len() != 4 || self.gains.iter().any(|r| r.len() != CHANNELS) {
            return bad("gain matrix must be 4 x 32");
        }
        if self
            .gains
            .iter()
            .flatten()
            .any(|g| *g < 0.0 || !g.is_finite())
        {
            return bad("gains must be non-negative");
        }
        if self.baseline_noise_adu < 0.0 || self.activation_noise < 0.0 {
            return bad("noise levels must be non-negative");
        }
        if !(0.0..1.0).contains(&self.crosstalk) {
            return bad("crosstalk must be in [0, 1)");
        }
        Ok(())
    }

    fn effective_gain(&self, row: usize, c: usize) -> f64 {
        let g = &self.gains[row];
        if self.crosstalk == 0.0 {
            return g[c];
        }
        let mean = g.iter().sum::<f64>() / CHANNELS as f64;
        (1.0 - self.crosstalk) * g[c] + self.crosstalk * mean
    }

    /// Noise standard deviation of channel `c` under `intent`, ADU.
    pub fn channel_std(&self, intent: &Intent, c: usize) -> f64 {
        let drive: f64 = Movement::ACTIVE
            .iter()
            .enumerate()
            .map(|(row, &m)| self.effective_gain(row, c) * intent.activation(m))
            .sum();
        self.baseline_noise_adu + drive * self.activation_noise
    }
}

/// Amplitude-modulated Gaussian noise, one segment at a time.
pub fn synth_emg<R: Rng + ?Sized>(
    intent: &Intent,
    model: &MuscleModel,
    seq: u64,
    timestamp_us: u64,
    rng: &mut R,
) -> EmgFrame {
    let std: Vec<f64> = (0..CHANNELS)
        .map(|c| model.channel_std(intent, c))
        .collect();
    let mut frame = EmgFrame::zeros(seq, timestamp_us);
    for row in frame.samples.iter_mut() {
        for (v, s) in row.iter_mut().zip(&std) {
            let z: f64 = StandardNormal.sample(rng);
            *v = quantize(z * s);
        }
    }
    frame
}

fn quantize(x: f64) -> i16 {
    x.round().clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16
}

/// Stimulation artifact shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArtifactModel {
    /// Phase amplitude of the biphasic spike, ADU: `+spike` on the pulse
    /// sample, `-spike` on the next.
    pub spike_adu: f64,
    /// Initial amplitude of the discharge tail, ADU.
    pub tail_adu: f64,
    pub tail_tau_s: f64,
}

impl Default for ArtifactModel {
    fn default() -> Self {
        ArtifactModel {
            spike_adu: 600.0,
            tail_adu: 30.0,
            tail_tau_s: 0.002,
        }
    }
}

impl ArtifactModel {
    /// Per-channel spike scale; every channel is at least 1.
    pub fn channel_scale(c: usize) -> f64 {
        1.0 + 0.25 * (c as f64).sin().abs()
    }

    fn horizon_s(&self) -> f64 {
        5.0 * self.tail_tau_s
    }
}

/// Adds spikes and discharge tails of every pulse in `commands` that can
/// reach the frame. Pulse `k` of a command has polarity `(-1)^k`.
pub fn inject_artifact(
    frame: &EmgFrame,
    commands: &[StimCommand],
    model: &ArtifactModel,
) -> EmgFrame {
    let mut out = frame.clone();
    let t0 = frame.timestamp_us as f64 * 1e-6;
    let t_end = t0 + (SEGMENT_LEN as u64 * SAMPLE_PERIOD_US) as f64 * 1e-6;
    let dt = SAMPLE_PERIOD_US as f64 * 1e-6;
    let mut add = [[0.0f64; CHANNELS]; SEGMENT_LEN];

    for cmd in commands {
        let period = 1.0 / cmd.pulse_freq_hz;
        for tp in cmd.pulse_times(t0 - model.horizon_s(), t_end) {
            let k = ((tp - cmd.issued_at_s) / period).round() as i64;
            let polarity = if k % 2 == 0 { 1.0 } else { -1.0 };
            // spike lands on the first sample at or after the pulse
            let spike_idx = ((tp - t0) / dt - 1e-9).ceil();
            for (i, row) in add.iter_mut().enumerate() {
                let ts = t0 + i as f64 * dt;
                let since = ts - tp;
                if since < -1e-9 {
                    continue;
                }
                let mut v = model.tail_adu * (-since.max(0.0) / model.tail_tau_s).exp();
                if i as f64 == spike_idx {
                    v += model.spike_adu;
                } else if i as f64 == spike_idx + 1.0 {
                    v -= model.spike_adu;
                }
                for (c, a) in row.iter_mut().enumerate() {
                    *a += polarity * v * ArtifactModel::channel_scale(c);
                }
            }
        }
    }
    for (row, extra) in out.samples.iter_mut().zip(&add) {
        for (v, a) in row.iter_mut().zip(extra) {
            *v = quantize(f64::from(*v) + a);
        }
    }
    out
}

/// Normalised sigmoid recruitment: 0 at zero current, 1 at saturation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recruitment {
    pub threshold_ma: f64,
    pub slope_per_ma: f64,
}

impl Recruitment {
    pub fn fraction(&self, current_ma: f64) -> f64 {
        if current_ma <= 0.0 {
            return 0.0;
        }
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let floor = sig(-self.slope_per_ma * self.threshold_ma);
        ((sig(self.slope_per_ma * (current_ma - self.threshold_ma)) - floor) / (1.0 - floor))
            .clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnkleParams {
    /// Voluntary angle at full activation, dorsiflexion and plantarflexion, degrees.
    pub voluntary_gain_deg: ChannelCurrents,
    pub recruitment: [Recruitment; 2],
    /// Stimulated angle at full recruitment, per channel, degrees.
    pub stim_gain_deg: ChannelCurrents,
    pub time_constant_s: f64,
}

impl AnkleParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        let v = self.voluntary_gain_deg;
        let s = self.stim_gain_deg;
        if [
            v.dorsiflexion,
            v.plantarflexion,
            s.dorsiflexion,
            s.plantarflexion,
        ]
        .iter()
        .any(|g| *g < 0.0)
        {
            return Err(PlantError::Profile(
                "plant gains must be non-negative".into(),
            ));
        }
        if !(self.time_constant_s > 0.0) {
            return Err(PlantError::Profile("time constant must be positive".into()));
        }
        if self
            .recruitment
            .iter()
            .any(|r| r.slope_per_ma <= 0.0 || r.threshold_ma < 0.0)
        {
            return Err(PlantError::Profile(
                "recruitment needs positive slope".into(),
            ));
        }
        Ok(())
    }
}

/// First-order ankle response; dorsiflexion positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnklePlant {
    pub params: AnkleParams,
    pub angle_deg: f64,
}

impl AnklePlant {
    pub fn new(params: AnkleParams) -> Self {
        AnklePlant {
            params,
            angle_deg: 0.0,
        }
    }

    /// Angle the plant settles to under constant input.
    pub fn target_angle(&self, intent: &Intent, current_ma: f64, channel: StimChannel) -> f64 {
        let p = &self.params;
        let voluntary = p.voluntary_gain_deg.dorsiflexion
            * intent.activation(Movement::Dorsiflexion)
            - p.voluntary_gain_deg.plantarflexion * intent.activation(Movement::Plantarflexion);
        let stim = match channel {
            StimChannel::Dorsiflexion => {
                p.stim_gain_deg.dorsiflexion * p.recruitment[0].fraction(current_ma)
            }
            StimChannel::Plantarflexion => {
                -p.stim_gain_deg.plantarflexion * p.recruitment[1].fraction(current_ma)
            }
        };
        (voluntary + stim).clamp(-ANGLE_LIMIT_DEG, ANGLE_LIMIT_DEG)
    }

    /// Relaxes the angle toward the target over `dt` seconds (exact
    /// discretisation of the first-order lag).
    pub fn step(&mut self, intent: &Intent, current_ma: f64, channel: StimChannel, dt: f64) -> f64 {
        assert!(dt > 0.0, "dt must be positive");
        let target = self.target_angle(intent, current_ma, channel);
        let k = 1.0 - (-dt / self.params.time_constant_s).exp();
        self.angle_deg = (self.angle_deg + k * (target - self.angle_deg))
            .clamp(-ANGLE_LIMIT_DEG, ANGLE_LIMIT_DEG);
        self.angle_deg
    }
}

pub fn plant_step(
    plant: &mut AnklePlant,
    intent: &Intent,
    current_ma: f64,
    channel: StimChannel,
    dt: f64,
) -> f64 {
    plant.step(intent, current_ma, channel, dt)
}

/// Everything needed to simulate one participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantProfile {
    pub id: String,
    pub muscle: MuscleModel,
    pub ankle: AnkleParams,
    pub artifact: ArtifactModel,
    pub stim: StimParams,
    /// Movements the participant can attempt (rest is implied).
    pub movements: Vec<Movement>,
    /// Correction of effort from visual feedback: effort =
    /// reference + gain * (reference - cursor along the task direction).
    pub feedback_gain: f64,
}

pub const FIXTURES: [&str; 3] = ["synthetic_healthy", "synthetic_s1", "synthetic_s2"];

impl ParticipantProfile {
    pub fn fixture(name: &str) -> Result<Self, PlantError> {
        match name {
            "synthetic_healthy" => Ok(Self::synthetic_healthy()),
            "synthetic_s1" => Ok(Self::synthetic_s1()),
            "synthetic_s2" => Ok(Self::synthetic_s2()),
            other => Err(PlantError::UnknownFixture(other.to_string())),
        }
    }

    /// Strong, well separated EMG and a full-range healthy ankle
    /// (20 deg dorsiflexion, 16 deg plantarflexion).
    pub fn synthetic_healthy() -> Self {
        ParticipantProfile {
            id: "synthetic_healthy".into(),
            muscle: MuscleModel::disjoint_blocks(4.0, 10.0, 10.0),
            ankle: AnkleParams {
                voluntary_gain_deg: ChannelCurrents {
                    dorsiflexion: 20.0,
                    plantarflexion: 16.0,
                },
                recruitment: [Recruitment {
                    threshold_ma: 15.0,
                    slope_per_ma: 0.5,
                }; 2],
                stim_gain_deg: ChannelCurrents {
                    dorsiflexion: 0.0,
                    plantarflexion: 0.0,
                },
                time_constant_s: 0.15,
            },
            artifact: ArtifactModel::default(),
            stim: StimParams::s1_sustained(),
            movements: Movement::ACTIVE.to_vec(),
            feedback_gain: 2.0,
        }
    }

    /// Drop-foot analog: 1 deg voluntary dorsiflexion, stimulation adds up
    /// to 6.72 deg (recruitment saturates above ~25 mA).
    pub fn synthetic_s1() -> Self {
        ParticipantProfile {
            id: "synthetic_s1".into(),
            muscle: MuscleModel {
                crosstalk: 0.1,
                ..MuscleModel::disjoint_blocks(2.0, 10.0, 10.0)
            },
            ankle: AnkleParams {
                voluntary_gain_deg: ChannelCurrents {
                    dorsiflexion: 1.0,
                    plantarflexion: 4.0,
                },
                recruitment: [
                    Recruitment {
                        threshold_ma: 12.0,
                        slope_per_ma: 0.6,
                    },
                    Recruitment {
                        threshold_ma: 12.0,
                        slope_per_ma: 0.6,
                    },
                ],
                stim_gain_deg: ChannelCurrents {
                    dorsiflexion: 6.72,
                    plantarflexion: 1.06,
                },
                time_constant_s: 0.15,
            },
            artifact: ArtifactModel::default(),
            stim: StimParams::s1_sustained(),
            movements: Movement::ACTIVE.to_vec(),
            feedback_gain: 2.0,
        }
    }

    /// Second drop-foot analog: dorsiflexion stimulation only, 8 deg from FES.
    pub fn synthetic_s2() -> Self {
        ParticipantProfile {
            id: "synthetic_s2".into(),
            muscle: MuscleModel {
                crosstalk: 0.1,
                ..MuscleModel::disjoint_blocks(2.0, 10.0, 10.0)
            },
            ankle: AnkleParams {
                voluntary_gain_deg: ChannelCurrents {
                    dorsiflexion: 0.5,
                    plantarflexion: 1.0,
                },
                recruitment: [
                    Recruitment {
                        threshold_ma: 20.0,
                        slope_per_ma: 0.4,
                    },
                    Recruitment {
                        threshold_ma: 20.0,
                        slope_per_ma: 0.4,
                    },
                ],
                stim_gain_deg: ChannelCurrents {
                    dorsiflexion: 8.0,
                    plantarflexion: 0.0,
                },
                time_constant_s: 0.15,
            },
            artifact: ArtifactModel::default(),
            stim: StimParams::s2_sustained(),
            movements: vec![Movement::Dorsiflexion, Movement::Plantarflexion],
            feedback_gain: 2.0,
        }
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        self.muscle.validate()?;
        self.ankle.validate()?;
        self.stim
            .validate()
            .map_err(|e| PlantError::Profile(e.to_string()))?;
        if self.movements.is_empty() || self.movements.iter().any(|m| m.is_rest()) {
            return Err(PlantError::Profile(
                "movements must be non-empty and exclude rest".into(),
            ));
        }
        if self.feedback_gain < 0.0 {
            return Err(PlantError::Profile(
                "feedback gain must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, PlantError> {
        let p: ParticipantProfile =
            toml::from_str(text).map_err(|e| PlantError::Io(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("profile serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn channel_rms(frames: &[EmgFrame], c: usize) -> f64 {
        let (sum, n) = frames
            .iter()
            .flat_map(|f| f.samples.iter())
            .fold((0.0, 0usize), |(s, n), row| {
                (s + f64::from(row[c]).powi(2), n + 1)
            });
        (sum / n as f64).sqrt()
    }

    fn frames(intent: Intent, model: &MuscleModel, seconds: f64, seed: u64) -> Vec<EmgFrame> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (seconds * 2000.0 / SEGMENT_LEN as f64).ceil() as u64;
        (0..n)
            .map(|s| synth_emg(&intent, model, s, s * 9000, &mut rng))
            .collect()
    }

    #[test]
    fn rest_noise_rms_matches_baseline() {
        let m = MuscleModel::disjoint_blocks(3.0, 10.0, 10.0);
        let f = frames(Intent::REST, &m, 1.0, 1);
        for c in [0, 13, 31] {
            let r = channel_rms(&f, c);
            assert!((r - 10.0).abs() / 10.0 < 0.05, "ch {c}: {r}");
        }
    }

    #[test]
    fn full_activation_rms() {
        let mut m = MuscleModel::fully_overlapping(0.0, 10.0, 10.0);
        m.gains[0] = vec![3.0; CHANNELS];
        let f = frames(Intent::new(Movement::Dorsiflexion, 1.0), &m, 1.0, 2);
        let r = channel_rms(&f, 5);
        assert!((r - 40.0).abs() / 40.0 < 0.05, "{r}");
    }

    #[test]
    fn zero_noise_gives_zero_frames() {
        let m = MuscleModel::disjoint_blocks(3.0, 0.0, 0.0);
        for f in frames(Intent::new(Movement::Inversion, 1.0), &m, 0.1, 3) {
            assert!(f.samples.iter().flatten().all(|&v| v == 0));
        }
    }

    #[test]
    fn synthesis_is_deterministic() {
        let m = MuscleModel::disjoint_blocks(3.0, 10.0, 10.0);
        let i = Intent::new(Movement::Eversion, 0.4);
        assert_eq!(frames(i, &m, 0.2, 9), frames(i, &m, 0.2, 9));
        assert_ne!(frames(i, &m, 0.2, 9), frames(i, &m, 0.2, 10));
    }

    fn pulse_cmd(issued: f64, freq: f64, dur: f64) -> StimCommand {
        StimCommand {
            channel: StimChannel::Dorsiflexion,
            current_ma: 30.0,
            pulse_freq_hz: freq,
            pulse_width_us: 300.0,
            duration_s: dur,
            issued_at_s: issued,
            trigger_pulse_us: crate::stim::TRIGGER_PULSE_US,
        }
    }

    #[test]
    fn single_pulse_spikes_most_channels() {
        let clean = EmgFrame::zeros(0, 0);
        let model = ArtifactModel::default();
        let out = inject_artifact(&clean, &[pulse_cmd(0.0021, 25.0, 0.01)], &model);
        let over = (0..CHANNELS)
            .filter(|&c| out.samples.iter().map(|r| r[c].abs()).max().unwrap() >= 600)
            .count();
        assert!(over >= 16, "{over}");
        // spike lands on the first sample at or after 2.1 ms -> index 5
        assert!(out.samples[5][0] >= 600);
        assert!(out.samples[4][0] == 0);
    }

    #[test]
    fn pulse_train_produces_one_spike_per_pulse() {
        let cmd = pulse_cmd(0.0, 25.0, 1.0);
        let model = ArtifactModel::default();
        let mut spikes = 0;
        for s in 0..112u64 {
            let f = inject_artifact(
                &EmgFrame::zeros(s, s * 9000),
                std::slice::from_ref(&cmd),
                &model,
            );
            spikes += f.samples.iter().filter(|r| r[0].abs() >= 600).count();
        }
        assert_eq!(spikes, 25);
    }

    #[test]
    fn tail_crosses_frame_boundary() {
        let model = ArtifactModel::default();
        let cmd = pulse_cmd(0.0085, 1.0, 0.001);
        let next = inject_artifact(&EmgFrame::zeros(1, 9000), &[cmd], &model);
        // second phase of the biphasic spike, then tail only
        let first = model.tail_adu * (-(0.0005f64) / model.tail_tau_s).exp() - model.spike_adu;
        let second = model.tail_adu * (-(0.0010f64) / model.tail_tau_s).exp();
        assert!((f64::from(next.samples[0][0]) - first).abs() <= 0.5);
        assert!((f64::from(next.samples[1][0]) - second).abs() <= 0.5);
    }

    #[test]
    fn plant_equilibrium_and_time_constant() {
        let mut p = AnklePlant::new(ParticipantProfile::synthetic_s1().ankle);
        for _ in 0..500 {
            p.step(&Intent::REST, 0.0, StimChannel::Dorsiflexion, 1.0 / 120.0);
        }
        assert_eq!(p.angle_deg, 0.0);

        let mut params = ParticipantProfile::synthetic_healthy().ankle;
        params.time_constant_s = 0.25;
        let mut p = AnklePlant::new(params);
        let full = Intent::new(Movement::Dorsiflexion, 1.0);
        p.step(&full, 0.0, StimChannel::Dorsiflexion, 0.25);
        assert!((p.angle_deg / 20.0 - (1.0 - (-1f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn half_recruitment_gives_half_stim_gain() {
        let rec = Recruitment {
            threshold_ma: 20.0,
            slope_per_ma: 0.3,
        };
        // bisection oracle for the current that yields 50% recruitment
        let (mut lo, mut hi) = (0.0f64, 200.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if rec.fraction(mid) < 0.5 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let params = AnkleParams {
            voluntary_gain_deg: ChannelCurrents {
                dorsiflexion: 1.0,
                plantarflexion: 1.0,
            },
            recruitment: [rec; 2],
            stim_gain_deg: ChannelCurrents {
                dorsiflexion: 13.44,
                plantarflexion: 0.0,
            },
            time_constant_s: 0.1,
        };
        let mut p = AnklePlant::new(params);
        for _ in 0..600 {
            p.step(&Intent::REST, lo, StimChannel::Dorsiflexion, 1.0 / 120.0);
        }
        assert!((p.angle_deg - 6.72).abs() < 1e-6, "{}", p.angle_deg);
        assert!((6.72f64 / 20.0 - 0.336).abs() < 1e-12);
    }

    #[test]
    fn steady_state_is_monotone_in_current() {
        let p = AnklePlant::new(ParticipantProfile::synthetic_s1().ankle);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=120 {
            let a = p.target_angle(&Intent::REST, i as f64 * 0.5, StimChannel::Dorsiflexion);
            assert!(a >= prev);
            prev = a;
        }
    }

    #[test]
    fn fixtures_validate_and_round_trip() {
        for name in FIXTURES {
            let p = ParticipantProfile::fixture(name).unwrap();
            p.validate().unwrap();
            assert_eq!(ParticipantProfile::from_toml(&p.to_toml()).unwrap(), p);
        }
        assert!(ParticipantProfile::fixture("nobody").is_err());
    }
}
