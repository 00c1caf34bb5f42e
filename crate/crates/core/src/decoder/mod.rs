//! Intent classifiers over RMS feature vectors.

mod gbdt;
mod lda;

use std::io::{Read, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::movement::Movement;

pub use gbdt::{train_gbdt, GbdtModel, GbdtParams, Tree, TreeNode};
pub use lda::{train_lda, LdaModel, DEFAULT_SHRINKAGE};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecoderError {
    #[error("feature dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("segment of {len} samples is too short to split (need 5)")]
    SegmentTooShort { len: usize },
    #[error("need at least {need} classes, got {got}")]
    TooFewClasses { need: usize, got: usize },
    #[error("class {0} has too few samples")]
    TooFewSamples(Movement),
    #[error("label {0} not in the declared class set")]
    UnknownLabel(Movement),
    #[error("regularised covariance is not positive definite")]
    DegenerateCovariance,
    #[error("model file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledFeature {
    pub features: Vec<f64>,
    pub label: Movement,
    pub timestamp_us: u64,
}

/// Contiguous run of samples recorded under one instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub label: Movement,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    /// Ordered class set; model outputs follow this order.
    pub classes: Vec<Movement>,
    pub samples: Vec<LabeledFeature>,
    pub segments: Vec<Segment>,
}

impl CalibrationSet {
    pub fn new(classes: Vec<Movement>) -> Self {
        CalibrationSet {
            classes,
            samples: Vec::new(),
            segments: Vec::new(),
        }
    }

    /// Appends a sample, opening a new segment when the label changes.
    pub fn push(&mut self, features: Vec<f64>, label: Movement, timestamp_us: u64) {
        let i = self.samples.len();
        match self.segments.last_mut() {
            Some(s) if s.label == label && s.end == i => s.end += 1,
            _ => self.segments.push(Segment {
                label,
                start: i,
                end: i + 1,
            }),
        }
        self.samples.push(LabeledFeature {
            features,
            label,
            timestamp_us,
        });
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_index(&self, m: Movement) -> Option<usize> {
        self.classes.iter().position(|&c| c == m)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut n = vec![0; self.classes.len()];
        for s in &self.samples {
            if let Some(i) = self.class_index(s.label) {
                n[i] += 1;
            }
        }
        n
    }

    /// Labels as class indices; fails on labels outside the class set.
    pub fn targets(&self) -> Result<Vec<usize>, DecoderError> {
        self.samples
            .iter()
            .map(|s| {
                self.class_index(s.label)
                    .ok_or(DecoderError::UnknownLabel(s.label))
            })
            .collect()
    }

    pub fn validate(&self, min_per_class: usize) -> Result<(), DecoderError> {
        if self.classes.len() < 2 {
            return Err(DecoderError::TooFewClasses {
                need: 2,
                got: self.classes.len(),
            });
        }
        let dim = self.samples.first().map_or(0, |s| s.features.len());
        if dim == 0 {
            return Err(DecoderError::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        for s in &self.samples {
            if s.features.len() != dim {
                return Err(DecoderError::DimensionMismatch {
                    expected: dim,
                    got: s.features.len(),
                });
            }
        }
        self.targets()?;
        for (c, n) in self.classes.iter().zip(self.class_counts()) {
            if n < min_per_class {
                return Err(DecoderError::TooFewSamples(*c));
            }
        }
        Ok(())
    }

    fn subset(&self, idx: &[usize]) -> CalibrationSet {
        let mut out = CalibrationSet::new(self.classes.clone());
        for &i in idx {
            let s = &self.samples[i];
            out.push(s.features.clone(), s.label, s.timestamp_us);
        }
        out
    }
}

/// Train and test indices for one recording of `n` samples: the first and
/// last 40% train, the middle 20% tests.
pub fn split_indices(n: usize) -> Result<(Vec<usize>, Vec<usize>), DecoderError> {
    if n < 5 {
        return Err(DecoderError::SegmentTooShort { len: n });
    }
    let (a, b) = (2 * n / 5, 3 * n / 5);
    let train = (0..a).chain(b..n).collect();
    Ok((train, (a..b).collect()))
}

/// Applies the 40/20/40 rule to every segment.
pub fn split_offline(
    cal: &CalibrationSet,
) -> Result<(CalibrationSet, CalibrationSet), DecoderError> {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for seg in &cal.segments {
        let (tr, te) = split_indices(seg.len())?;
        train.extend(tr.into_iter().map(|i| seg.start + i));
        test.extend(te.into_iter().map(|i| seg.start + i));
    }
    Ok((cal.subset(&train), cal.subset(&test)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Movement,
    /// Per-class probabilities in model class order.
    pub scores: Vec<f64>,
    pub latency_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lda,
    Gbdt,
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "lda" => Ok(ModelKind::Lda),
            "gbdt" => Ok(ModelKind::Gbdt),
            _ => Err(format!("unknown model '{s}' (lda|gbdt)")),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Lda => "lda",
            ModelKind::Gbdt => "gbdt",
        })
    }
}

/// A trained, immutable classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Model {
    Lda(LdaModel),
    Gbdt(GbdtModel),
}

impl Model {
    pub fn train(kind: ModelKind, cal: &CalibrationSet) -> Result<Model, DecoderError> {
        Ok(match kind {
            ModelKind::Lda => Model::Lda(train_lda(cal, DEFAULT_SHRINKAGE)?),
            ModelKind::Gbdt => Model::Gbdt(train_gbdt(cal, &GbdtParams::default())?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Lda(_) => ModelKind::Lda,
            Model::Gbdt(_) => ModelKind::Gbdt,
        }
    }

    pub fn classes(&self) -> &[Movement] {
        match self {
            Model::Lda(m) => &m.classes,
            Model::Gbdt(m) => &m.classes,
        }
    }

    /// Feature vector length the model was trained on.
    pub fn dim(&self) -> usize {
        match self {
            Model::Lda(m) => m.class_means.first().map_or(0, Vec::len),
            Model::Gbdt(m) => m.n_features,
        }
    }

    pub fn scores(&self, features: &[f64]) -> Result<Vec<f64>, DecoderError> {
        if features.len() != self.dim() {
            return Err(DecoderError::DimensionMismatch {
                expected: self.dim(),
                got: features.len(),
            });
        }
        Ok(match self {
            Model::Lda(m) => m.scores(features),
            Model::Gbdt(m) => m.scores(features),
        })
    }

    pub fn predict(&self, features: &[f64]) -> Result<Prediction, DecoderError> {
        let t0 = Instant::now();
        let scores = self.scores(features)?;
        let label = self.classes()[argmax(&scores)];
        Ok(Prediction {
            label,
            scores,
            latency_us: t0.elapsed().as_micros() as u64,
        })
    }

    /// Fraction of samples whose predicted label matches.
    pub fn accuracy(&self, set: &CalibrationSet) -> Result<f64, DecoderError> {
        if set.is_empty() {
            return Ok(0.0);
        }
        let mut ok = 0;
        for s in &set.samples {
            if self.predict(&s.features)?.label == s.label {
                ok += 1;
            }
        }
        Ok(ok as f64 / set.len() as f64)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MODEL_MAGIC.to_vec();
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend(bincode::serialize(self).expect("model serialises"));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model, DecoderError> {
        let head = MODEL_MAGIC.len() + 4;
        if bytes.len() < head || &bytes[..MODEL_MAGIC.len()] != MODEL_MAGIC {
            return Err(DecoderError::Format("not a model file".into()));
        }
        let version =
            u32::from_le_bytes(bytes[MODEL_MAGIC.len()..head].try_into().expect("4 bytes"));
        if version != MODEL_VERSION {
            return Err(DecoderError::Format(format!(
                "unsupported model version {version}"
            )));
        }
        bincode::deserialize(&bytes[head..]).map_err(|e| DecoderError::Format(e.to_string()))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&self.to_bytes())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Model, DecoderError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)
            .map_err(|e| DecoderError::Format(e.to_string()))?;
        Model::from_bytes(&buf)
    }

    /// Hex sha256 of the serialised model.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

const MODEL_MAGIC: &[u8; 8] = b"FESMODEL";
const MODEL_VERSION: u32 = 1;

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
