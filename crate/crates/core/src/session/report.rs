use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Event, LiveParams, SessionError, SessionLog};
use crate::cursor::{label_reference, task_axis, ReferenceKind, ReferenceSpec};
use crate::eval::{
    lowpass_angles, nmae, online_accuracy, rms_jsd, rom, stim_level_bins, target_zone,
    target_zone_accuracy, AccuracyReport, RampWindow, RomReport, StimLevels, TrajectoryPair,
};
use crate::movement::Movement;
use crate::plant::PLANT_RATE_HZ;
use crate::stim::StimChannel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub cycle: usize,
    pub movement: Movement,
    pub start_us: u64,
    pub end_us: u64,
    /// `None` when the trial's reference is flat or unmapped.
    pub nmae: Option<f64>,
    /// Fraction of hold samples within +-0.2 of the level (trapezoids only).
    pub zone_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub trials: Vec<TrialMetrics>,
    pub nmae_mean: Option<f64>,
    pub accuracy: Option<AccuracyReport>,
    pub rom: RomReport,
    pub commands: usize,
    pub stim_levels: Vec<(StimChannel, StimLevels)>,
    /// JSD between channel-mean RMS at rest and during each movement.
    pub separability: Vec<(Movement, f64)>,
}

impl SessionReport {
    pub fn nmae_for(&self, m: Movement) -> Option<f64> {
        let v: Vec<f64> = self
            .trials
            .iter()
            .filter(|t| t.movement == m)
            .filter_map(|t| t.nmae)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn levels(&self, ch: StimChannel) -> Option<&StimLevels> {
        self.stim_levels
            .iter()
            .find(|(c, _)| *c == ch)
            .map(|(_, l)| l)
    }

    /// Structured text, one `key: value` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        out.push_str(&format!("trials: {}\n", self.trials.len()));
        out.push_str(&format!("nmae_mean: {}\n", opt(self.nmae_mean)));
        for m in Movement::ACTIVE {
            if let Some(v) = self.nmae_for(m) {
                out.push_str(&format!("nmae_{}: {v:.4}\n", m.short_name()));
            }
        }
        if let Some(a) = &self.accuracy {
            out.push_str(&format!("accuracy_overall: {:.4}\n", a.overall));
            for c in &a.per_class {
                if let Some(v) = c.accuracy() {
                    out.push_str(&format!("accuracy_{}: {v:.4}\n", c.movement.short_name()));
                }
            }
        }
        for m in [Movement::Dorsiflexion, Movement::Plantarflexion] {
            if let Some(v) = self.rom.mean_pct(m) {
                out.push_str(&format!("rom_{}_pct_trom: {v:.2}\n", m.short_name()));
            }
        }
        out.push_str(&format!("stim_commands: {}\n", self.commands));
        for (ch, l) in &self.stim_levels {
            let name = match ch {
                StimChannel::Dorsiflexion => "df",
                StimChannel::Plantarflexion => "pf",
            };
            out.push_str(&format!(
                "stim_levels_{name}: {:?} stable {:?}\n",
                l.counts, l.stable
            ));
        }
        for (m, j) in &self.separability {
            out.push_str(&format!("jsd_rest_{}: {j:.4}\n", m.short_name()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CursorRow {
    pub t_s: f64,
    pub ref_x: f64,
    pub ref_y: f64,
    pub x: f64,
    pub y: f64,
    pub intent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantRow {
    pub t_s: f64,
    pub angle_deg: f64,
    pub current_ma: f64,
}

pub fn cursor_series(log: &SessionLog) -> Vec<CursorRow> {
    log.events
        .iter()
        .filter_map(|e| match *e {
            Event::Cursor {
                t_us,
                x,
                y,
                ref_x,
                ref_y,
                intent,
            } => Some(CursorRow {
                t_s: t_us as f64 * 1e-6,
                ref_x,
                ref_y,
                x,
                y,
                intent,
            }),
            _ => None,
        })
        .collect()
}

pub fn plant_series(log: &SessionLog) -> Vec<PlantRow> {
    log.events
        .iter()
        .filter_map(|e| match *e {
            Event::Angle {
                t_us,
                angle_deg,
                current_ma,
            } => Some(PlantRow {
                t_s: t_us as f64 * 1e-6,
                angle_deg,
                current_ma,
            }),
            _ => None,
        })
        .collect()
}

struct Trial<'a> {
    cycle: usize,
    start_us: u64,
    end_us: u64,
    spec: &'a ReferenceSpec,
}

fn trials(log: &SessionLog) -> Vec<Trial<'_>> {
    let starts: Vec<(u64, usize, &ReferenceSpec)> = log
        .events
        .iter()
        .filter_map(|e| match e {
            Event::TrialStart { t_us, cycle, spec } => Some((*t_us, *cycle, spec)),
            _ => None,
        })
        .collect();
    let last_t = log.events.iter().map(Event::t_us).max().unwrap_or(0);
    starts
        .iter()
        .enumerate()
        .map(|(i, &(start_us, cycle, spec))| {
            let natural = start_us + (spec.cycle_s() * 1e6).round() as u64;
            let next = starts.get(i + 1).map_or(u64::MAX, |s| s.0);
            Trial {
                cycle,
                start_us,
                end_us: natural.min(next).min(last_t + 1),
                spec,
            }
        })
        .collect()
}

type Xy = (f64, f64);

/// Recomputes every metric from the events of a session log.
pub fn evaluate(log: &SessionLog) -> Result<SessionReport, SessionError> {
    let mapping = log.header.config.cursor.mapping;
    let cursor: Vec<(u64, Xy, Xy)> = log
        .events
        .iter()
        .filter_map(|e| match *e {
            Event::Cursor {
                t_us,
                x,
                y,
                ref_x,
                ref_y,
                ..
            } => Some((t_us, (ref_x, ref_y), (x, y))),
            _ => None,
        })
        .collect();

    let trial_list = trials(log);
    let mut trial_metrics = Vec::new();
    for tr in &trial_list {
        let samples: Vec<_> = cursor
            .iter()
            .filter(|c| c.0 >= tr.start_us && c.0 < tr.end_us)
            .collect();
        let pair = TrajectoryPair::new(
            samples.iter().map(|c| c.1).collect(),
            samples.iter().map(|c| c.2).collect(),
        )?;
        let axis = task_axis(&mapping, tr.spec.movement);
        let nmae_v = match axis {
            Some(a) if !pair.is_empty() => nmae(&pair, a).ok(),
            _ => None,
        };
        let zone_accuracy = match (tr.spec.kind, axis) {
            (ReferenceKind::TwoStageTrapezoid, Some(_)) => {
                let mut inside = Vec::new();
                for (h0, h1, level) in tr.spec.hold_intervals() {
                    let (lo, hi) = target_zone(level);
                    let along: Vec<f64> = samples
                        .iter()
                        .filter(|c| {
                            let ct = (c.0 - tr.start_us) as f64 * 1e-6;
                            ct >= h0 && ct < h1
                        })
                        .map(|c| mapping.along(tr.spec.movement, c.2))
                        .collect();
                    if !along.is_empty() {
                        inside.push((target_zone_accuracy(&along, (lo, hi))?, along.len()));
                    }
                }
                let n: usize = inside.iter().map(|v| v.1).sum();
                (n > 0).then(|| inside.iter().map(|(a, k)| a * *k as f64).sum::<f64>() / n as f64)
            }
            _ => None,
        };
        trial_metrics.push(TrialMetrics {
            cycle: tr.cycle,
            movement: tr.spec.movement,
            start_us: tr.start_us,
            end_us: tr.end_us,
            nmae: nmae_v,
            zone_accuracy,
        });
    }
    let scored: Vec<f64> = trial_metrics.iter().filter_map(|t| t.nmae).collect();
    let nmae_mean = (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64);

    let accuracy = if cursor.is_empty() {
        None
    } else {
        let pair = TrajectoryPair::new(
            cursor.iter().map(|c| c.1).collect(),
            cursor.iter().map(|c| c.2).collect(),
        )?;
        Some(online_accuracy(&pair, &mapping)?)
    };

    let rom_report = rom_from_log(log, &trial_list)?;

    // stimulation levels, following parameter changes in order
    let mut live = LiveParams {
        stim: log.header.stim,
        decay_factor: log.header.config.cursor.decay_factor,
        stim_enabled: log.header.config.stim_enabled,
        mapping,
    };
    // fraction of the channel maximum in force when each command was issued
    let mut fractions: BTreeMap<u8, (StimChannel, Vec<f64>)> = BTreeMap::new();
    let mut commands = 0;
    for e in &log.events {
        match e {
            Event::ParamChange { update, .. } => {
                if let Ok(next) = update.apply_to(&live) {
                    live = next;
                }
            }
            Event::Stim { command, .. } => {
                commands += 1;
                let max = live.stim.max_current_ma.get(command.channel);
                if max > 0.0 {
                    let entry = fractions
                        .entry(command.channel as u8)
                        .or_insert((command.channel, Vec::new()));
                    entry.1.push(command.current_ma / max);
                }
            }
            _ => {}
        }
    }
    let stim_levels = fractions
        .into_values()
        .map(|(ch, f)| (ch, stim_level_bins(&f, 1.0)))
        .collect();

    Ok(SessionReport {
        trials: trial_metrics,
        nmae_mean,
        accuracy,
        rom: rom_report,
        commands,
        stim_levels,
        separability: separability(log, &mapping),
    })
}

fn rom_from_log(log: &SessionLog, trials: &[Trial<'_>]) -> Result<RomReport, SessionError> {
    let angles: Vec<(u64, f64)> = log
        .events
        .iter()
        .filter_map(|e| match *e {
            Event::Angle {
                t_us, angle_deg, ..
            } => Some((t_us, angle_deg)),
            _ => None,
        })
        .collect();
    if angles.is_empty() {
        return Ok(RomReport { ramps: Vec::new() });
    }
    let filtered = lowpass_angles(
        &angles.iter().map(|a| a.1).collect::<Vec<_>>(),
        PLANT_RATE_HZ,
    );
    let index_at = |t_us: u64| angles.partition_point(|a| a.0 < t_us);
    let mut windows = Vec::new();
    for tr in trials {
        if !matches!(
            tr.spec.movement,
            Movement::Dorsiflexion | Movement::Plantarflexion
        ) {
            continue;
        }
        let holds = tr.spec.hold_intervals();
        let (Some(first), Some(last)) = (holds.first(), holds.last()) else {
            continue;
        };
        let start = index_at(tr.start_us);
        let end = index_at(tr.end_us).saturating_sub(1);
        let at = |s: f64| index_at(tr.start_us + (s * 1e6).round() as u64);
        let (hold_start, hold_end) = (at(first.0), at(last.1).min(end + 1));
        if start < end && hold_start < hold_end && end < filtered.len() {
            windows.push(RampWindow {
                movement: tr.spec.movement,
                start,
                end,
                hold_start,
                hold_end,
            });
        }
    }
    Ok(rom(&filtered, &windows)?)
}

fn separability(log: &SessionLog, mapping: &crate::cursor::TaskMapping) -> Vec<(Movement, f64)> {
    let mut labels: BTreeMap<u64, Movement> = BTreeMap::new();
    for e in &log.events {
        if let Event::Cursor {
            t_us, ref_x, ref_y, ..
        } = *e
        {
            labels.insert(t_us, label_reference(ref_x, ref_y, mapping));
        }
    }
    let mut by_class: BTreeMap<Movement, Vec<f64>> = BTreeMap::new();
    for e in &log.events {
        if let Event::Feature { t_us, rms, .. } = e {
            if let Some(&m) = labels.get(t_us) {
                by_class
                    .entry(m)
                    .or_default()
                    .push(rms.iter().sum::<f64>() / rms.len() as f64);
            }
        }
    }
    let Some(rest) = by_class.get(&Movement::Rest) else {
        return Vec::new();
    };
    Movement::ACTIVE
        .iter()
        .filter_map(|m| {
            by_class
                .get(m)
                .and_then(|v| rms_jsd(rest, v).ok())
                .map(|j| (*m, j))
        })
        .collect()
}
