//! Offline metrics over recorded trajectories, EMG features, angles and
//! stimulation commands.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cursor::{label_reference, TaskMapping};
use crate::emg::Sos;
use crate::movement::{Axis, Movement};

/// Reference range of motion, degrees.
pub const TROM_DORSIFLEXION_DEG: f64 = 20.0;
pub const TROM_PLANTARFLEXION_DEG: f64 = 16.0;
pub const JSD_BINS: usize = 50;
/// Half-width of a target zone in axis units.
pub const ZONE_HALF_WIDTH: f64 = 0.2;
pub const STABLE_LEVEL_MIN_COUNT: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("empty series")]
    Empty,
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("reference range is zero")]
    ZeroRange,
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("histograms use different bins")]
    BinMismatch,
    #[error("window {start}..{end} outside series of length {len}")]
    WindowOutOfRange {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("no reference range of motion for {0}")]
    NoReference(Movement),
}

/// Reference and predicted cursor positions on a common timebase.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPair {
    pub reference: Vec<(f64, f64)>,
    pub predicted: Vec<(f64, f64)>,
}

impl TrajectoryPair {
    pub fn new(reference: Vec<(f64, f64)>, predicted: Vec<(f64, f64)>) -> Result<Self, EvalError> {
        if reference.len() != predicted.len() {
            return Err(EvalError::LengthMismatch(reference.len(), predicted.len()));
        }
        Ok(TrajectoryPair {
            reference,
            predicted,
        })
    }

    pub fn len(&self) -> usize {
        self.reference.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reference.is_empty()
    }

    pub fn push(&mut self, reference: (f64, f64), predicted: (f64, f64)) {
        self.reference.push(reference);
        self.predicted.push(predicted);
    }
}

/// Mean absolute error on `axis` divided by the reference range of the trial.
pub fn nmae(pair: &TrajectoryPair, axis: Axis) -> Result<f64, EvalError> {
    let r: Vec<f64> = pair.reference.iter().map(|&p| axis.component(p)).collect();
    let p: Vec<f64> = pair.predicted.iter().map(|&p| axis.component(p)).collect();
    nmae_series(&r, &p)
}

pub fn nmae_series(reference: &[f64], predicted: &[f64]) -> Result<f64, EvalError> {
    check_lengths(reference, predicted)?;
    let (lo, hi) = min_max(reference);
    let range = hi - lo;
    if range <= 0.0 {
        return Err(EvalError::ZeroRange);
    }
    let mae = reference
        .iter()
        .zip(predicted)
        .map(|(r, p)| (r - p).abs())
        .sum::<f64>()
        / reference.len() as f64;
    Ok(mae / range)
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<(), EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub movement: Movement,
    /// Reference samples carrying this label.
    pub support: usize,
    pub correct: usize,
}

impl ClassAccuracy {
    /// `None` when the class never appears in the reference.
    pub fn accuracy(&self) -> Option<f64> {
        (self.support > 0).then(|| self.correct as f64 / self.support as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub overall: f64,
    pub per_class: Vec<ClassAccuracy>,
}

impl AccuracyReport {
    pub fn class(&self, m: Movement) -> &ClassAccuracy {
        &self.per_class[m.index()]
    }
}

/// Labels both series with the reference labeling rule and counts matches.
pub fn online_accuracy(
    pair: &TrajectoryPair,
    mapping: &TaskMapping,
) -> Result<AccuracyReport, EvalError> {
    if pair.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut per_class: Vec<ClassAccuracy> = Movement::ALL
        .iter()
        .map(|&movement| ClassAccuracy {
            movement,
            support: 0,
            correct: 0,
        })
        .collect();
    let mut correct = 0;
    for (&(rx, ry), &(px, py)) in pair.reference.iter().zip(&pair.predicted) {
        let r = label_reference(rx, ry, mapping);
        let p = label_reference(px, py, mapping);
        let c = &mut per_class[r.index()];
        c.support += 1;
        if r == p {
            c.correct += 1;
            correct += 1;
        }
    }
    Ok(AccuracyReport {
        overall: correct as f64 / pair.len() as f64,
        per_class,
    })
}

/// Uniform-bin histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<f64>,
}

impl Histogram {
    pub fn from_probabilities(p: &[f64]) -> Self {
        Histogram {
            lo: 0.0,
            hi: p.len() as f64,
            counts: p.to_vec(),
        }
    }

    pub fn from_samples(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        assert!(bins > 0, "need at least one bin");
        let mut counts = vec![0.0; bins];
        let width = (hi - lo) / bins as f64;
        for &x in samples {
            let i = if width > 0.0 {
                ((x - lo) / width).floor() as isize
            } else {
                0
            };
            counts[i.clamp(0, bins as isize - 1) as usize] += 1.0;
        }
        Histogram { lo, hi, counts }
    }

    /// Both samples binned on the pooled min-max range.
    pub fn pooled(a: &[f64], b: &[f64], bins: usize) -> (Histogram, Histogram) {
        let (lo, hi) = min_max(&[min_max(a).0, min_max(a).1, min_max(b).0, min_max(b).1]);
        (
            Histogram::from_samples(a, lo, hi, bins),
            Histogram::from_samples(b, lo, hi, bins),
        )
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let t = self.total();
        if t > 0.0 {
            self.counts.iter().map(|c| c / t).collect()
        } else {
            self.counts.clone()
        }
    }
}

/// Jensen-Shannon divergence in bits.
pub fn jsd(p: &Histogram, q: &Histogram) -> Result<f64, EvalError> {
    if p.counts.len() != q.counts.len() || p.lo != q.lo || p.hi != q.hi {
        return Err(EvalError::BinMismatch);
    }
    let (p, q) = (p.probabilities(), q.probabilities());
    let kl = |a: &[f64], m: &[f64]| -> f64 {
        a.iter()
            .zip(m)
            .filter(|(x, _)| **x > 0.0)
            .map(|(x, y)| x * (x / y).log2())
            .sum()
    };
    let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok((0.5 * kl(&p, &m) + 0.5 * kl(&q, &m)).clamp(0.0, 1.0))
}

/// JSD of two RMS samples with the default binning.
pub fn rms_jsd(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::Empty);
    }
    let (p, q) = Histogram::pooled(a, b, JSD_BINS);
    jsd(&p, &q)
}

/// Sample ranges of one contraction ramp in an angle series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RampWindow {
    pub movement: Movement,
    /// First and last sample of the ramp (baseline anchors).
    pub start: usize,
    pub end: usize,
    /// Scored hold window, inclusive start, exclusive end.
    pub hold_start: usize,
    pub hold_end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RampRom {
    pub movement: Movement,
    pub rom_deg: f64,
    pub trom_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RomReport {
    pub ramps: Vec<RampRom>,
}

impl RomReport {
    /// Mean normalised RoM of the ramps of `movement`.
    pub fn mean_pct(&self, movement: Movement) -> Option<f64> {
        let v: Vec<f64> = self
            .ramps
            .iter()
            .filter(|r| r.movement == movement)
            .map(|r| r.trom_pct)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

pub fn trom_deg(movement: Movement) -> Result<f64, EvalError> {
    match movement {
        Movement::Dorsiflexion => Ok(TROM_DORSIFLEXION_DEG),
        Movement::Plantarflexion => Ok(TROM_PLANTARFLEXION_DEG),
        other => Err(EvalError::NoReference(other)),
    }
}

/// 2 Hz second-order Butterworth low-pass (causal).
pub fn lowpass_angles(angles: &[f64], sample_rate_hz: f64) -> Vec<f64> {
    Sos::butterworth_lowpass(2, 2.0, sample_rate_hz).filter(angles)
}

/// Per-ramp range of motion after removing the linear baseline through the
/// ramp's first and last samples. Plantarflexion counts negative angles.
pub fn rom(angles: &[f64], windows: &[RampWindow]) -> Result<RomReport, EvalError> {
    let mut ramps = Vec::with_capacity(windows.len());
    for w in windows {
        let out = EvalError::WindowOutOfRange {
            start: w.start,
            end: w.end,
            len: angles.len(),
        };
        if w.start >= w.end || w.end >= angles.len() {
            return Err(out);
        }
        if w.hold_start < w.start || w.hold_end > w.end + 1 || w.hold_start >= w.hold_end {
            return Err(out);
        }
        let trom = trom_deg(w.movement)?;
        let sign = if w.movement == Movement::Plantarflexion {
            -1.0
        } else {
            1.0
        };
        let (a0, a1) = (angles[w.start], angles[w.end]);
        let span = (w.end - w.start) as f64;
        let rom_deg = (w.hold_start..w.hold_end)
            .map(|i| {
                let base = a0 + (a1 - a0) * (i - w.start) as f64 / span;
                sign * (angles[i] - base)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        ramps.push(RampRom {
            movement: w.movement,
            rom_deg,
            trom_pct: 100.0 * rom_deg / trom,
        });
    }
    Ok(RomReport { ramps })
}

/// Zone `[level - 0.2, level + 0.2]` around a target level.
pub fn target_zone(level: f64) -> (f64, f64) {
    (level - ZONE_HALF_WIDTH, level + ZONE_HALF_WIDTH)
}

/// Fraction of samples inside the closed interval `zone`.
pub fn target_zone_accuracy(series: &[f64], zone: (f64, f64)) -> Result<f64, EvalError> {
    if series.is_empty() {
        return Err(EvalError::Empty);
    }
    let inside = series
        .iter()
        .filter(|&&v| v >= zone.0 - 1e-12 && v <= zone.1 + 1e-12)
        .count();
    Ok(inside as f64 / series.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimLevels {
    pub counts: [usize; 10],
    /// Bins with at least three commands, ascending.
    pub stable: Vec<usize>,
}

/// Bins currents in 10% steps of `max_ma`.
pub fn stim_level_bins(currents: &[f64], max_ma: f64) -> StimLevels {
    let mut counts = [0usize; 10];
    if max_ma > 0.0 {
        for &i in currents {
            let bin = (10.0 * i / max_ma).floor().clamp(0.0, 9.0) as usize;
            counts[bin] += 1;
        }
    }
    let stable = (0..10)
        .filter(|&b| counts[b] >= STABLE_LEVEL_MIN_COUNT)
        .collect();
    StimLevels { counts, stable }
}

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    check_lengths(x, y)?;
    if x.len() < 2 {
        return Err(EvalError::ZeroVariance);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn nmae_examples() {
        let r: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        assert_eq!(nmae_series(&r, &r).unwrap(), 0.0);
        let p: Vec<f64> = r.iter().map(|v| v + 0.1).collect();
        assert!((nmae_series(&r, &p).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(nmae_series(&[0.3; 5], &[0.3; 5]), Err(EvalError::ZeroRange));
        assert_eq!(nmae_series(&[], &[]), Err(EvalError::Empty));
    }

    #[test]
    fn nmae_on_axis() {
        let pair = TrajectoryPair::new(vec![(0.0, 0.0), (0.0, 1.0)], vec![(0.9, 0.2), (0.0, 0.8)])
            .unwrap();
        assert!((nmae(&pair, Axis::Y).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn accuracy_examples() {
        let m = TaskMapping::default();
        let reference: Vec<(f64, f64)> =
            (0..200).map(|i| (0.0, (i as f64 / 100.0) - 1.0)).collect();
        let same = TrajectoryPair::new(reference.clone(), reference.clone()).unwrap();
        assert_eq!(online_accuracy(&same, &m).unwrap().overall, 1.0);

        let origin = TrajectoryPair::new(reference.clone(), vec![(0.0, 0.0); 200]).unwrap();
        let rest_frac = reference.iter().filter(|p| p.1.abs() <= 0.5).count() as f64 / 200.0;
        assert_eq!(online_accuracy(&origin, &m).unwrap().overall, rest_frac);

        let swapped = TrajectoryPair::new(
            reference.clone(),
            reference.iter().map(|&(x, y)| (y, x)).collect(),
        )
        .unwrap();
        let rep = online_accuracy(&swapped, &m).unwrap();
        assert_eq!(rep.class(Movement::Dorsiflexion).accuracy(), Some(0.0));
        assert_eq!(rep.class(Movement::Plantarflexion).accuracy(), Some(0.0));
        assert_eq!(rep.class(Movement::Rest).accuracy(), Some(1.0));
        assert_eq!(rep.class(Movement::Inversion).accuracy(), None);
    }

    #[test]
    fn jsd_examples() {
        let h = Histogram::from_probabilities;
        assert_eq!(jsd(&h(&[0.2, 0.8]), &h(&[0.2, 0.8])).unwrap(), 0.0);
        assert!((jsd(&h(&[1.0, 0.0]), &h(&[0.0, 1.0])).unwrap() - 1.0).abs() < 1e-12);
        // 1/2 log2(4/3) + 1/4 log2(2/3) + 1/4 log2(2)
        let oracle = 0.5 * (4.0f64 / 3.0).log2() + 0.25 * (2.0f64 / 3.0).log2() + 0.25;
        let v = jsd(&h(&[1.0, 0.0]), &h(&[0.5, 0.5])).unwrap();
        assert!((v - oracle).abs() < 1e-15);
        assert!((v - 0.3113).abs() < 1e-4);
        assert_eq!(
            jsd(&h(&[1.0]), &h(&[0.5, 0.5])),
            Err(EvalError::BinMismatch)
        );
    }

    #[test]
    fn pooled_histograms_share_edges() {
        let (p, q) = Histogram::pooled(&[0.0, 1.0, 2.0], &[5.0, 10.0], JSD_BINS);
        assert_eq!((p.lo, p.hi), (0.0, 10.0));
        assert_eq!((q.lo, q.hi), (0.0, 10.0));
        assert_eq!(q.counts[49], 1.0);
        assert_eq!(rms_jsd(&[1.0, 1.1], &[5.0, 5.1]).unwrap(), 1.0);
    }

    fn window(m: Movement, n: usize) -> RampWindow {
        RampWindow {
            movement: m,
            start: 0,
            end: n - 1,
            hold_start: 0,
            hold_end: n,
        }
    }

    #[test]
    fn rom_examples() {
        let flat = vec![3.0; 100];
        let r = rom(&flat, &[window(Movement::Dorsiflexion, 100)]).unwrap();
        assert_eq!(r.ramps[0].rom_deg, 0.0);

        // 0 -> 12 over 50 samples, then 12 -> 2 over 50 samples
        let tri: Vec<f64> = (0..=100)
            .map(|i| {
                if i <= 50 {
                    12.0 * i as f64 / 50.0
                } else {
                    12.0 - 10.0 * (i - 50) as f64 / 50.0
                }
            })
            .collect();
        let r = rom(&tri, &[window(Movement::Dorsiflexion, 101)]).unwrap();
        // oracle: peak 12 minus baseline at the midpoint (0 + 2) / 2
        assert!((r.ramps[0].rom_deg - 11.0).abs() < 1e-12);

        let plateau = vec![6.72; 10];
        let r = rom(
            &[&[0.0][..], &plateau, &[0.0]].concat(),
            &[window(Movement::Dorsiflexion, 12)],
        )
        .unwrap();
        assert!((r.ramps[0].trom_pct - 33.6).abs() < 1e-9);

        let neg: Vec<f64> = tri.iter().map(|v| -v).collect();
        let r = rom(&neg, &[window(Movement::Plantarflexion, 101)]).unwrap();
        assert!((r.ramps[0].trom_pct - 100.0 * 11.0 / 16.0).abs() < 1e-9);
    }

    #[test]
    fn rom_errors() {
        let a = vec![0.0; 10];
        assert!(matches!(
            rom(&a, &[window(Movement::Dorsiflexion, 11)]),
            Err(EvalError::WindowOutOfRange { .. })
        ));
        assert_eq!(
            rom(&a, &[window(Movement::Inversion, 10)]),
            Err(EvalError::NoReference(Movement::Inversion))
        );
    }

    #[test]
    fn zone_and_bins() {
        assert_eq!(target_zone(0.5), (0.3, 0.7));
        assert_eq!(
            target_zone_accuracy(&[0.5; 8], target_zone(0.5)).unwrap(),
            1.0
        );
        assert_eq!(
            target_zone_accuracy(&[0.5, 0.5, 0.0, 1.0], target_zone(0.5)).unwrap(),
            0.5
        );

        let b = stim_level_bins(&[53.0; 3], 53.0);
        assert_eq!(b.stable, vec![9]);
        let b = stim_level_bins(&[31.8, 33.9, 52.9, 53.0, 52.5], 53.0);
        assert_eq!(b.counts[6], 2);
        assert_eq!(b.counts[9], 3);
        assert_eq!(b.stable, vec![9]);
        assert!(stim_level_bins(&[], 53.0).stable.is_empty());
    }

    #[test]
    fn pearson_examples() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&x, &[1.0; 50]), Err(EvalError::ZeroVariance));

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a: Vec<f64> = (0..10_000)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let b: Vec<f64> = (0..10_000)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        assert!(pearson(&a, &b).unwrap().abs() < 0.05);
    }

    #[test]
    fn lowpass_passes_dc() {
        let y = lowpass_angles(&[5.0; 600], 120.0);
        assert!((y[599] - 5.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn nmae_scale_consistent(r in prop::collection::vec(-1.0f64..1.0, 3..50), k in 0.1f64..10.0, off in -0.5f64..0.5) {
            let p: Vec<f64> = r.iter().map(|v| v + off).collect();
            if let Ok(a) = nmae_series(&r, &p) {
                let rs: Vec<f64> = r.iter().map(|v| v * k).collect();
                let ps: Vec<f64> = p.iter().map(|v| v * k).collect();
                prop_assert!((nmae_series(&rs, &ps).unwrap() - a).abs() < 1e-9);
            }
        }

        #[test]
        fn jsd_symmetric_bounded(p in prop::collection::vec(0.0f64..1.0, 6), q in prop::collection::vec(0.0f64..1.0, 6)) {
            let (hp, hq) = (Histogram::from_probabilities(&p), Histogram::from_probabilities(&q));
            prop_assume!(hp.total() > 0.0 && hq.total() > 0.0);
            let a = jsd(&hp, &hq).unwrap();
            let b = jsd(&hq, &hp).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn rom_detrend_invariance(c in -10.0f64..10.0, drift in -5.0f64..5.0, peak in 0.0f64..15.0) {
            let n = 121;
            let base: Vec<f64> = (0..n).map(|i| peak * (std::f64::consts::PI * i as f64 / 120.0).sin()).collect();
            let moved: Vec<f64> = base.iter().enumerate().map(|(i, v)| v + c + drift * i as f64 / 120.0).collect();
            let w = [window(Movement::Dorsiflexion, n)];
            let a = rom(&base, &w).unwrap().ramps[0].rom_deg;
            let b = rom(&moved, &w).unwrap().ramps[0].rom_deg;
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn level_bins_order_free(mut cur in prop::collection::vec(0.0f64..60.0, 0..40)) {
            let a = stim_level_bins(&cur, 53.0);
            cur.reverse();
            prop_assert_eq!(a, stim_level_bins(&cur, 53.0));
        }
    }
}
