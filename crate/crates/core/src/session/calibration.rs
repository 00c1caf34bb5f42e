use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CalibrationProtocol, RunConfig, SessionError};
use crate::decoder::{split_offline, CalibrationSet, Model};
use crate::emg::{EmgPipeline, PipelineConfig, SEGMENT_PERIOD_US};
use crate::movement::Movement;
use crate::plant::{synth_emg, Intent, ParticipantProfile};

/// Separates the calibration noise stream from the closed-loop one.
const CALIBRATION_STREAM: u64 = 0xCA11;

/// Records labelled features while the simulated participant follows the
/// protocol at full effort. The pipeline is primed with rest EMG first so
/// that the labelled stream covers the whole protocol.
pub fn run_calibration(
    profile: &ParticipantProfile,
    protocol: &CalibrationProtocol,
    movements: &[Movement],
    pipeline: &PipelineConfig,
    seed: u64,
) -> Result<CalibrationSet, SessionError> {
    let schedule = protocol.schedule(movements);
    let total_us: f64 = schedule.iter().map(|b| b.1 * 1e6).sum();
    let segments = (total_us / SEGMENT_PERIOD_US as f64).round() as u64;

    let mut classes = vec![Movement::Rest];
    classes.extend(movements.iter().copied().filter(|m| !m.is_rest()));
    let mut cal = CalibrationSet::new(classes);
    if segments == 0 {
        return Err(SessionError::InsufficientData(
            "empty calibration protocol".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(CALIBRATION_STREAM);
    let mut pipe =
        EmgPipeline::new(pipeline.clone()).map_err(|e| SessionError::Config(e.to_string()))?;
    let prime = pipeline.window_len().div_ceil(crate::emg::SEGMENT_LEN) as u64;
    for seq in 0..prime {
        let frame = synth_emg(
            &Intent::REST,
            &profile.muscle,
            seq,
            seq * SEGMENT_PERIOD_US,
            &mut rng,
        );
        pipe.push(&frame)?;
    }

    let mut block = 0;
    let mut block_end_us = schedule[0].1 * 1e6;
    for k in 0..segments {
        let t_us = k * SEGMENT_PERIOD_US;
        while t_us as f64 >= block_end_us - 1e-6 && block + 1 < schedule.len() {
            block += 1;
            block_end_us += schedule[block].1 * 1e6;
        }
        let label = schedule[block].0;
        let intent = Intent::new(label, 1.0);
        let seq = prime + k;
        let frame = synth_emg(
            &intent,
            &profile.muscle,
            seq,
            seq * SEGMENT_PERIOD_US,
            &mut rng,
        );
        if let Some(fv) = pipe.push(&frame)? {
            cal.push(fv.rms, label, t_us + SEGMENT_PERIOD_US);
        }
    }

    for (c, n) in cal.classes.iter().zip(cal.class_counts()) {
        if n == 0 {
            return Err(SessionError::InsufficientData(format!(
                "no samples for {c}"
            )));
        }
    }
    Ok(cal)
}

/// A model trained from a simulated calibration run.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Model,
    pub calibration: CalibrationSet,
    /// Accuracy on the held-out middle fifth of every calibration segment.
    pub offline_accuracy: f64,
}

/// Calibrates the configured participant, trains on the outer three fifths
/// of each segment and scores the middle fifth.
pub fn calibrate_and_train(config: &RunConfig) -> Result<TrainedModel, SessionError> {
    let profile = config.participant()?;
    let calibration = run_calibration(
        &profile,
        &config.calibration.protocol,
        &config.calibration_movements(&profile),
        &config.pipeline,
        config.seed,
    )?;
    let (train, test) = split_offline(&calibration)?;
    let model = Model::train(config.model, &train)?;
    let offline_accuracy = model.accuracy(&test)?;
    Ok(TrainedModel {
        model,
        calibration,
        offline_accuracy,
    })
}
