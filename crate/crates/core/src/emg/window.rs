use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::filter::{Sos, SosBank};
use super::{
    EmgError, EmgFrame, BLANK_MIN_CHANNELS, BLANK_POST, BLANK_PRE, CHANNELS, SAMPLE_RATE_HZ,
};

type Row = [f64; CHANNELS];

/// Tunables of the acquisition path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Feature window, 252 (default) or 120 ms.
    pub window_ms: u32,
    /// Artifact detection threshold in ADU; `None` disables blanking.
    pub blank_threshold_adu: Option<u32>,
    /// EMA baseline removal coefficient; `None` disables it.
    pub ema_alpha: Option<f64>,
    pub notch_hz: Option<f64>,
    pub notch_q: f64,
    pub bandpass_hz: Option<[f64; 2]>,
    /// Prototype order of the Butterworth band-pass (filter order is twice this).
    pub bandpass_order: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            window_ms: 252,
            blank_threshold_adu: Some(200),
            ema_alpha: Some(0.1),
            notch_hz: Some(50.0),
            notch_q: 30.0,
            bandpass_hz: Some([10.0, 500.0]),
            bandpass_order: 2,
        }
    }
}

impl PipelineConfig {
    /// Filters, baseline removal and blanking all disabled.
    pub fn raw() -> Self {
        PipelineConfig {
            blank_threshold_adu: None,
            ema_alpha: None,
            notch_hz: None,
            bandpass_hz: None,
            ..Default::default()
        }
    }

    pub fn window_len(&self) -> usize {
        match self.window_ms {
            120 => 240,
            _ => 504,
        }
    }

    pub fn validate(&self) -> Result<(), EmgError> {
        if self.window_ms != 252 && self.window_ms != 120 {
            return Err(EmgError::Config(format!(
                "window_ms must be 252 or 120, got {}",
                self.window_ms
            )));
        }
        if let Some(a) = self.ema_alpha {
            if !(a > 0.0 && a <= 1.0) {
                return Err(EmgError::Config(format!(
                    "ema_alpha must be in (0,1], got {a}"
                )));
            }
        }
        if let Some([lo, hi]) = self.bandpass_hz {
            if !(lo > 0.0 && lo < hi && hi < SAMPLE_RATE_HZ / 2.0) {
                return Err(EmgError::Config(format!(
                    "bad band-pass edges [{lo}, {hi}]"
                )));
            }
            if self.bandpass_order == 0 {
                return Err(EmgError::Config("bandpass_order must be positive".into()));
            }
        }
        if let Some(f) = self.notch_hz {
            if !(f > 0.0 && f < SAMPLE_RATE_HZ / 2.0) || self.notch_q <= 0.0 {
                return Err(EmgError::Config(format!(
                    "bad notch {f} Hz / Q {}",
                    self.notch_q
                )));
            }
        }
        Ok(())
    }
}

/// Streaming per-channel filter state: band-pass, notch, EMA baseline.
#[derive(Debug, Clone)]
pub struct FilterState {
    bandpass: SosBank,
    notch: SosBank,
    ema: Row,
    alpha: Option<f64>,
    detect_threshold: Option<f64>,
    /// Samples still inside the post-artifact span of the last detection.
    post_blank_remaining: usize,
    /// Baseline before each of the last `BLANK_PRE + 1` samples.
    ema_history: VecDeque<Row>,
}

impl FilterState {
    pub fn new(cfg: &PipelineConfig) -> Self {
        let bandpass = match cfg.bandpass_hz {
            Some([lo, hi]) => Sos::butterworth_bandpass(cfg.bandpass_order, lo, hi, SAMPLE_RATE_HZ),
            None => Sos::identity(),
        };
        let notch = match cfg.notch_hz {
            Some(f) => Sos::notch(f, cfg.notch_q, SAMPLE_RATE_HZ),
            None => Sos::identity(),
        };
        FilterState {
            bandpass: SosBank::new(bandpass, CHANNELS),
            notch: SosBank::new(notch, CHANNELS),
            ema: [0.0; CHANNELS],
            alpha: cfg.ema_alpha,
            detect_threshold: cfg.blank_threshold_adu.map(f64::from),
            post_blank_remaining: 0,
            ema_history: VecDeque::with_capacity(BLANK_PRE + 1),
        }
    }

    /// Pass-through state: raw samples reach the window unchanged.
    pub fn bypass() -> Self {
        FilterState::new(&PipelineConfig::raw())
    }

    pub fn ema_baseline(&self) -> &Row {
        &self.ema
    }

    /// Advances every channel by one sample. Returns (filtered, cleaned).
    fn step(&mut self, raw: &[i16; CHANNELS]) -> (Row, Row) {
        let mut filtered = [0.0; CHANNELS];
        for (c, out) in filtered.iter_mut().enumerate() {
            let x = self.bandpass.process(c, f64::from(raw[c]));
            *out = self.notch.process(c, x);
        }

        if self.ema_history.len() > BLANK_PRE {
            self.ema_history.pop_front();
        }
        self.ema_history.push_back(self.ema);
        if let Some(thr) = self.detect_threshold {
            if exceeds_on_enough_channels(&filtered, thr) {
                // the pre-artifact span is masked too, so undo its baseline
                // updates; inside an open span nothing was updated
                if self.post_blank_remaining == 0 {
                    if let Some(before) = self.ema_history.front() {
                        self.ema = *before;
                    }
                }
                self.post_blank_remaining = BLANK_POST + 1;
            }
        }
        let masked = self.post_blank_remaining > 0;
        self.post_blank_remaining = self.post_blank_remaining.saturating_sub(1);

        let mut cleaned = filtered;
        if let Some(alpha) = self.alpha {
            for c in 0..CHANNELS {
                let x = filtered[c];
                cleaned[c] = x - self.ema[c];
                if !masked {
                    self.ema[c] += alpha * (x - self.ema[c]);
                }
            }
        }
        (filtered, cleaned)
    }
}

#[inline]
fn exceeds_on_enough_channels(row: &Row, thr: f64) -> bool {
    row.iter().filter(|v| v.abs() > thr).count() >= BLANK_MIN_CHANNELS
}

/// RMS summary of one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub rms: Vec<f64>,
    /// Session time of the newest sample in the window.
    pub timestamp_us: u64,
    /// Fraction of window samples excluded by blanking (same on every channel).
    pub blank_fraction: f64,
    /// Set when the whole window was blanked and values were held from the
    /// previous vector.
    pub held: bool,
}

impl FeatureVector {
    pub fn new(rms: Vec<f64>, timestamp_us: u64) -> Self {
        FeatureVector {
            rms,
            timestamp_us,
            blank_fraction: 0.0,
            held: false,
        }
    }
}

/// Sliding sample window with artifact mask.
///
/// Keeps `BLANK_POST` extra samples of history so that an artifact detected
/// just before the window start still masks its tail inside the window.
#[derive(Debug, Clone)]
pub struct FeatureWindow {
    window_len: usize,
    filtered: VecDeque<Row>,
    cleaned: VecDeque<Row>,
    mask: Vec<bool>,
    pushed: u64,
    last_seq: Option<u64>,
    latest_us: u64,
}

impl FeatureWindow {
    pub fn new(window_len: usize) -> Self {
        assert!(window_len > 0);
        let cap = window_len + BLANK_POST;
        FeatureWindow {
            window_len,
            filtered: VecDeque::with_capacity(cap),
            cleaned: VecDeque::with_capacity(cap),
            mask: vec![false; window_len],
            pushed: 0,
            last_seq: None,
            latest_us: 0,
        }
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn is_ready(&self) -> bool {
        self.pushed >= self.window_len as u64
    }

    pub fn last_seq(&self) -> Option<u64> {
        self.last_seq
    }

    /// Appends one segment after filtering it. The oldest samples fall out.
    pub fn push_segment(
        &mut self,
        frame: &EmgFrame,
        filt: &mut FilterState,
    ) -> Result<(), EmgError> {
        if let Some(last) = self.last_seq {
            if frame.seq <= last {
                return Err(EmgError::OutOfOrder {
                    last,
                    got: frame.seq,
                });
            }
            if frame.seq != last + 1 {
                return Err(EmgError::GapDetected { expected: last + 1 });
            }
        }
        for raw in &frame.samples {
            let (f, c) = filt.step(raw);
            self.push_row(f, c);
        }
        self.last_seq = Some(frame.seq);
        self.latest_us = frame.last_sample_time_us();
        Ok(())
    }

    fn push_row(&mut self, filtered: Row, cleaned: Row) {
        if self.filtered.len() == self.window_len + BLANK_POST {
            self.filtered.pop_front();
            self.cleaned.pop_front();
        }
        self.filtered.push_back(filtered);
        self.cleaned.push_back(cleaned);
        self.pushed += 1;
    }

    /// Offset of window index 0 inside the history buffers.
    fn offset(&self) -> usize {
        self.filtered.len().saturating_sub(self.window_len)
    }

    fn filled(&self) -> usize {
        self.filtered.len().min(self.window_len)
    }

    /// Recomputes the artifact mask: every sample where more than half the
    /// channels exceed `threshold_adu` masks 15 samples before and 30 after.
    /// Returns the number of masked window samples.
    pub fn blank_artifacts(&mut self, threshold_adu: u32) -> usize {
        let thr = f64::from(threshold_adu);
        self.mask.iter_mut().for_each(|m| *m = false);
        let offset = self.offset() as isize;
        let filled = self.filled() as isize;
        for (h, row) in self.filtered.iter().enumerate() {
            if !exceeds_on_enough_channels(row, thr) {
                continue;
            }
            let j = h as isize - offset;
            let lo = (j - BLANK_PRE as isize).max(0);
            let hi = (j + BLANK_POST as isize).min(filled - 1);
            for k in lo..=hi {
                self.mask[k as usize] = true;
            }
        }
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn clear_mask(&mut self) {
        self.mask.iter_mut().for_each(|m| *m = false);
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }

    /// Baseline-removed samples currently in the window, oldest first.
    pub fn samples(&self) -> impl Iterator<Item = &Row> {
        self.cleaned.iter().skip(self.offset())
    }

    /// Per-channel RMS of the unmasked window samples. A fully blanked
    /// window holds the values of `previous`.
    pub fn rms_features(
        &self,
        previous: Option<&FeatureVector>,
    ) -> Result<FeatureVector, EmgError> {
        if !self.is_ready() {
            return Err(EmgError::WindowNotFull {
                filled: self.filled(),
                len: self.window_len,
            });
        }
        let mut sum_sq = [0.0; CHANNELS];
        let mut n = 0usize;
        for (row, &masked) in self.samples().zip(&self.mask) {
            if masked {
                continue;
            }
            n += 1;
            for (acc, v) in sum_sq.iter_mut().zip(row) {
                *acc += v * v;
            }
        }
        let blank_fraction = 1.0 - n as f64 / self.window_len as f64;
        if n == 0 {
            let prev = previous.ok_or(EmgError::AllBlanked { channel: 0 })?;
            return Ok(FeatureVector {
                rms: prev.rms.clone(),
                timestamp_us: self.latest_us,
                blank_fraction,
                held: true,
            });
        }
        let rms = sum_sq.iter().map(|s| (s / n as f64).sqrt()).collect();
        Ok(FeatureVector {
            rms,
            timestamp_us: self.latest_us,
            blank_fraction,
            held: false,
        })
    }
}

/// Window, filter state and last emitted features bundled for streaming.
#[derive(Debug, Clone)]
pub struct EmgPipeline {
    cfg: PipelineConfig,
    window: FeatureWindow,
    filter: FilterState,
    last: Option<FeatureVector>,
}

impl EmgPipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self, EmgError> {
        cfg.validate()?;
        Ok(EmgPipeline {
            window: FeatureWindow::new(cfg.window_len()),
            filter: FilterState::new(&cfg),
            cfg,
            last: None,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn window(&self) -> &FeatureWindow {
        &self.window
    }

    /// Pushes one segment; yields a feature vector once the window is full.
    pub fn push(&mut self, frame: &EmgFrame) -> Result<Option<FeatureVector>, EmgError> {
        self.window.push_segment(frame, &mut self.filter)?;
        if !self.window.is_ready() {
            return Ok(None);
        }
        match self.cfg.blank_threshold_adu {
            Some(thr) => {
                self.window.blank_artifacts(thr);
            }
            None => self.window.clear_mask(),
        }
        let fv = self.window.rms_features(self.last.as_ref())?;
        self.last = Some(fv.clone());
        Ok(Some(fv))
    }

    /// Like [`push`](Self::push) but fills skipped segments with zeros.
    /// Returns the feature vector for `frame` and the number of filled gaps.
    pub fn push_zero_filling(
        &mut self,
        frame: &EmgFrame,
    ) -> Result<(Option<FeatureVector>, u64), EmgError> {
        let mut filled = 0;
        if let Some(last) = self.window.last_seq() {
            for seq in last + 1..frame.seq {
                let ts = frame
                    .timestamp_us
                    .saturating_sub((frame.seq - seq) * super::SEGMENT_PERIOD_US);
                self.push(&EmgFrame::zeros(seq, ts))?;
                filled += 1;
            }
        }
        Ok((self.push(frame)?, filled))
    }
}
