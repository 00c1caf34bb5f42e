//! Causal IIR filters in second-order sections.
//!
//! Butterworth designs go through the analog prototype, a frequency
//! transform and the bilinear transform with pre-warping, then the digital
//! poles are grouped into conjugate pairs. Each section runs in transposed
//! direct form II.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// One second-order section, `a0` normalised to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    pub const IDENTITY: Biquad = Biquad {
        b: [1.0, 0.0, 0.0],
        a: [0.0, 0.0],
    };

    #[inline]
    pub fn step(&self, state: &mut [f64; 2], x: f64) -> f64 {
        let y = self.b[0] * x + state[0];
        state[0] = self.b[1] * x - self.a[0] * y + state[1];
        state[1] = self.b[2] * x - self.a[1] * y;
        y
    }

    fn response(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        let num = self.b[0] + self.b[1] * zi + self.b[2] * zi * zi;
        let den = 1.0 + self.a[0] * zi + self.a[1] * zi * zi;
        num / den
    }
}

/// Cascade of biquads with no state; shared by every channel of a bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

impl Sos {
    pub fn identity() -> Self {
        Sos {
            sections: Vec::new(),
        }
    }

    /// Butterworth band-pass. `order` is the prototype order, the resulting
    /// filter has order `2 * order` and `order` sections.
    pub fn butterworth_bandpass(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Sos {
        assert!(order >= 1, "order must be positive");
        assert!(
            0.0 < low_hz && low_hz < high_hz && high_hz < fs / 2.0,
            "band edges out of range"
        );
        let w1 = prewarp(low_hz, fs);
        let w2 = prewarp(high_hz, fs);
        let bw = w2 - w1;
        let w0_sq = w1 * w2;

        let mut poles = Vec::with_capacity(2 * order);
        for p in analog_prototype(order) {
            let pb = p * bw;
            let disc = (pb * pb - 4.0 * w0_sq).sqrt();
            poles.push(bilinear((pb + disc) / 2.0, fs));
            poles.push(bilinear((pb - disc) / 2.0, fs));
        }
        let mut sos = Sos {
            sections: pair_poles(&poles, [1.0, 0.0, -1.0]),
        };
        let centre = 2.0 * (w0_sq.sqrt() / (2.0 * fs)).atan();
        sos.normalise_at(centre);
        sos
    }

    /// Butterworth low-pass of even order.
    pub fn butterworth_lowpass(order: usize, cutoff_hz: f64, fs: f64) -> Sos {
        assert!(order >= 2 && order % 2 == 0, "low-pass order must be even");
        assert!(
            0.0 < cutoff_hz && cutoff_hz < fs / 2.0,
            "cutoff out of range"
        );
        let wc = prewarp(cutoff_hz, fs);
        let poles: Vec<Complex64> = analog_prototype(order)
            .into_iter()
            .map(|p| bilinear(p * wc, fs))
            .collect();
        let mut sos = Sos {
            sections: pair_poles(&poles, [1.0, 2.0, 1.0]),
        };
        sos.normalise_at(0.0);
        sos
    }

    /// Second-order notch with the bandwidth defined by `q` at -3 dB.
    pub fn notch(freq_hz: f64, q: f64, fs: f64) -> Sos {
        assert!(
            0.0 < freq_hz && freq_hz < fs / 2.0,
            "notch frequency out of range"
        );
        assert!(q > 0.0);
        let w0 = 2.0 * PI * freq_hz / fs;
        let bw = w0 / q;
        let beta = (bw / 2.0).tan();
        let gain = 1.0 / (1.0 + beta);
        let c = w0.cos();
        Sos {
            sections: vec![Biquad {
                b: [gain, -2.0 * gain * c, gain],
                a: [-2.0 * gain * c, 2.0 * gain - 1.0],
            }],
        }
    }

    /// Complex response at normalised angular frequency `omega` (rad/sample).
    pub fn response(&self, omega: f64) -> Complex64 {
        let z = Complex64::from_polar(1.0, omega);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z))
    }

    pub fn magnitude_at(&self, freq_hz: f64, fs: f64) -> f64 {
        self.response(2.0 * PI * freq_hz / fs).norm()
    }

    fn normalise_at(&mut self, omega: f64) {
        let g = self.response(omega).norm();
        if let Some(first) = self.sections.first_mut() {
            for b in &mut first.b {
                *b /= g;
            }
        }
    }

    /// Filter a whole slice from zero state.
    pub fn filter(&self, input: &[f64]) -> Vec<f64> {
        let mut state = vec![[0.0; 2]; self.sections.len()];
        input
            .iter()
            .map(|&x| run_sections(&self.sections, &mut state, x))
            .collect()
    }
}

#[inline]
fn run_sections(sections: &[Biquad], state: &mut [[f64; 2]], x: f64) -> f64 {
    sections
        .iter()
        .zip(state.iter_mut())
        .fold(x, |acc, (s, st)| s.step(st, acc))
}

fn prewarp(f: f64, fs: f64) -> f64 {
    2.0 * fs * (PI * f / fs).tan()
}

fn bilinear(s: Complex64, fs: f64) -> Complex64 {
    let k = 2.0 * fs;
    (k + s) / (k - s)
}

/// Left half-plane poles of the unit-cutoff Butterworth prototype.
fn analog_prototype(order: usize) -> Vec<Complex64> {
    (0..order)
        .map(|k| {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            Complex64::from_polar(1.0, theta)
        })
        .collect()
}

/// Groups digital poles into conjugate pairs (or pairs of real poles) and
/// assigns the same numerator to each section.
fn pair_poles(poles: &[Complex64], numerator: [f64; 3]) -> Vec<Biquad> {
    const IMAG_EPS: f64 = 1e-12;
    let mut upper: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > IMAG_EPS).collect();
    let mut real: Vec<f64> = poles
        .iter()
        .filter(|p| p.im.abs() <= IMAG_EPS)
        .map(|p| p.re)
        .collect();
    upper.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    real.sort_by(f64::total_cmp);
    assert!(real.len() % 2 == 0, "odd number of real poles");

    let mut sections: Vec<Biquad> = upper
        .iter()
        .map(|p| Biquad {
            b: numerator,
            a: [-2.0 * p.re, p.norm_sqr()],
        })
        .collect();
    for pair in real.chunks(2) {
        sections.push(Biquad {
            b: numerator,
            a: [-(pair[0] + pair[1]), pair[0] * pair[1]],
        });
    }
    sections
}

/// Per-channel state for one [`Sos`] design.
#[derive(Debug, Clone)]
pub struct SosBank {
    sos: Sos,
    state: Vec<Vec<[f64; 2]>>,
}

impl SosBank {
    pub fn new(sos: Sos, channels: usize) -> Self {
        let n = sos.sections.len();
        SosBank {
            sos,
            state: vec![vec![[0.0; 2]; n]; channels],
        }
    }

    #[inline]
    pub fn process(&mut self, channel: usize, x: f64) -> f64 {
        run_sections(&self.sos.sections, &mut self.state[channel], x)
    }

    pub fn design(&self) -> &Sos {
        &self.sos
    }

    pub fn reset(&mut self) {
        for ch in &mut self.state {
            ch.iter_mut().for_each(|s| *s = [0.0; 2]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Impulse response of the 10-500 Hz order-4 band-pass followed by the
    // 50 Hz / Q=30 notch at fs = 2000, from an independent reference
    // implementation (scipy.signal butter + iirnotch, sosfilt/lfilter).
    const REFERENCE_IMPULSE: [f64; 8] = [
        0.28301029530606775,
        0.5571470198960523,
        0.20064524012332005,
        -0.15088445143392834,
        -0.09152795437511393,
        -0.02547874369454426,
        -0.03302341206782282,
        -0.0430483528963361,
    ];

    #[test]
    fn bandpass_and_notch_match_reference_impulse() {
        let bp = Sos::butterworth_bandpass(2, 10.0, 500.0, 2000.0);
        let notch = Sos::notch(50.0, 30.0, 2000.0);
        let mut x = vec![0.0; 64];
        x[0] = 1.0;
        let y = notch.filter(&bp.filter(&x));
        for (got, want) in y.iter().zip(REFERENCE_IMPULSE) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn bandpass_magnitude_profile() {
        let bp = Sos::butterworth_bandpass(2, 10.0, 500.0, 2000.0);
        assert_eq!(bp.sections.len(), 2);
        assert!(bp.magnitude_at(0.0, 2000.0) < 1e-12);
        assert!((bp.magnitude_at(500.0, 2000.0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        assert!((bp.magnitude_at(10.0, 2000.0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        assert!((bp.magnitude_at(250.0, 2000.0) - 0.9894884155667445).abs() < 1e-9);
        assert!((bp.magnitude_at(900.0, 2000.0) - 0.02431564325841506).abs() < 1e-9);
    }

    #[test]
    fn notch_kills_mains() {
        let n = Sos::notch(50.0, 30.0, 2000.0);
        assert!(n.magnitude_at(50.0, 2000.0) < 1e-12);
        assert!((n.magnitude_at(0.0, 2000.0) - 1.0).abs() < 1e-12);
        assert_eq!(
            n.sections[0].b,
            [0.9973888361673892, -1.9702186490445686, 0.9973888361673892]
        );
    }

    #[test]
    fn lowpass_2hz_at_120hz_matches_reference() {
        let lp = Sos::butterworth_lowpass(2, 2.0, 120.0);
        let s = lp.sections[0];
        assert!((s.b[0] - 0.00255053515853629).abs() < 1e-14);
        assert!((s.a[0] - -1.852146485395936).abs() < 1e-12);
        assert!((s.a[1] - 0.8623486260300812).abs() < 1e-12);
        assert!((lp.magnitude_at(0.0, 120.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bank_channels_are_independent() {
        let mut bank = SosBank::new(Sos::butterworth_bandpass(2, 10.0, 500.0, 2000.0), 2);
        let a0 = bank.process(0, 1.0);
        let b0 = bank.process(1, 0.0);
        assert!(a0 > 0.0);
        assert_eq!(b0, 0.0);
        assert_eq!(bank.process(1, 1.0), a0);
    }
}
