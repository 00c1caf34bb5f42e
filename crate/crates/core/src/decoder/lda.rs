use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{softmax, CalibrationSet, DecoderError};
use crate::movement::Movement;

pub const DEFAULT_SHRINKAGE: f64 = 0.1;

/// Shared-covariance Gaussian classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub classes: Vec<Movement>,
    pub class_means: Vec<Vec<f64>>,
    /// Row-major inverse of the regularised pooled covariance.
    pub shared_cov_inv: Vec<f64>,
    pub priors: Vec<f64>,
    /// Discriminant directions, classes - 1 rows.
    pub projection: Vec<Vec<f64>>,
    pub shrinkage: f64,
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
}

impl LdaModel {
    /// Builds a model from known parameters (covariance, not its inverse).
    pub fn from_parameters(
        classes: Vec<Movement>,
        class_means: Vec<Vec<f64>>,
        covariance: &DMatrix<f64>,
        priors: Vec<f64>,
    ) -> Result<Self, DecoderError> {
        let inv = covariance
            .clone()
            .cholesky()
            .ok_or(DecoderError::DegenerateCovariance)?
            .inverse();
        Ok(Self::assemble(
            classes,
            class_means,
            &inv,
            priors,
            Vec::new(),
            0.0,
        ))
    }

    fn assemble(
        classes: Vec<Movement>,
        class_means: Vec<Vec<f64>>,
        inv: &DMatrix<f64>,
        priors: Vec<f64>,
        projection: Vec<Vec<f64>>,
        shrinkage: f64,
    ) -> Self {
        let mut weights = Vec::with_capacity(classes.len());
        let mut biases = Vec::with_capacity(classes.len());
        for (mu, p) in class_means.iter().zip(&priors) {
            let w = inv * DVector::from_column_slice(mu);
            let b = -0.5 * w.dot(&DVector::from_column_slice(mu)) + p.ln();
            weights.push(w.iter().copied().collect());
            biases.push(b);
        }
        LdaModel {
            classes,
            class_means,
            shared_cov_inv: inv.transpose().iter().copied().collect(),
            priors,
            projection,
            shrinkage,
            weights,
            biases,
        }
    }

    /// Linear discriminant per class.
    pub fn discriminants(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b)
            .collect()
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.discriminants(x))
    }

    /// Coordinates of `x` on the discriminant directions.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.projection
            .iter()
            .map(|v| v.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Fits class means, priors and the pooled covariance, shrunk toward its
/// diagonal as `(1 - s) * S + s * diag(S)`.
pub fn train_lda(cal: &CalibrationSet, shrinkage: f64) -> Result<LdaModel, DecoderError> {
    cal.validate(2)?;
    let y = cal.targets()?;
    let k = cal.classes.len();
    let d = cal.samples[0].features.len();
    let n = cal.len();
    let counts = cal.class_counts();

    let mut means = vec![DVector::<f64>::zeros(d); k];
    for (s, &c) in cal.samples.iter().zip(&y) {
        means[c] += DVector::from_column_slice(&s.features);
    }
    for (m, &c) in means.iter_mut().zip(&counts) {
        *m /= c as f64;
    }

    let mut within = DMatrix::<f64>::zeros(d, d);
    for (s, &c) in cal.samples.iter().zip(&y) {
        let r = DVector::from_column_slice(&s.features) - &means[c];
        within.ger(1.0, &r, &r, 1.0);
    }
    within /= (n - k) as f64;
    let diag = DMatrix::from_diagonal(&within.diagonal());
    let cov = within * (1.0 - shrinkage) + diag * shrinkage;

    let chol = cov
        .clone()
        .cholesky()
        .ok_or(DecoderError::DegenerateCovariance)?;
    let inv = chol.inverse();

    // discriminant directions: S_b v = lambda S_w v, via L^-1 S_b L^-T
    let grand: DVector<f64> = means
        .iter()
        .zip(&counts)
        .map(|(m, &c)| m * c as f64)
        .sum::<DVector<f64>>()
        / n as f64;
    let mut between = DMatrix::<f64>::zeros(d, d);
    for (m, &c) in means.iter().zip(&counts) {
        let r = m - &grand;
        between.ger(c as f64 / n as f64, &r, &r, 1.0);
    }
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or(DecoderError::DegenerateCovariance)?;
    let sym = &l_inv * between * l_inv.transpose();
    let sym = (&sym + sym.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let projection = order
        .iter()
        .take(k - 1)
        .map(|&i| {
            let v = l_inv.transpose() * eig.eigenvectors.column(i);
            let norm = v.norm();
            v.iter().map(|x| x / norm).collect()
        })
        .collect();

    let priors = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let class_means = means.iter().map(|m| m.iter().copied().collect()).collect();
    Ok(LdaModel::assemble(
        cal.classes.clone(),
        class_means,
        &inv,
        priors,
        projection,
        shrinkage,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{argmax, Model};
    use crate::emg::CHANNELS;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_set(means: &[f64], per_class: usize, seed: u64) -> CalibrationSet {
        let classes = vec![
            Movement::Rest,
            Movement::Dorsiflexion,
            Movement::Plantarflexion,
        ][..means.len()]
            .to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cal = CalibrationSet::new(classes.clone());
        for (c, &mu) in means.iter().enumerate() {
            for i in 0..per_class {
                let f = (0..CHANNELS)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        mu + z
                    })
                    .collect();
                cal.push(f, classes[c], i as u64);
            }
        }
        cal
    }

    #[test]
    fn separated_classes_are_perfect() {
        let model = train_lda(&gaussian_set(&[0.0, 10.0], 200, 1), 0.1).unwrap();
        let test = gaussian_set(&[0.0, 10.0], 200, 2);
        assert_eq!(Model::Lda(model).accuracy(&test).unwrap(), 1.0);
    }

    #[test]
    fn identical_means_give_chance() {
        let model = train_lda(&gaussian_set(&[0.0, 0.0, 0.0], 2000, 3), 0.1).unwrap();
        let acc = Model::Lda(model)
            .accuracy(&gaussian_set(&[0.0, 0.0, 0.0], 2000, 4))
            .unwrap();
        assert!((acc - 1.0 / 3.0).abs() < 0.05, "{acc}");
    }

    #[test]
    fn projection_has_classes_minus_one_rows() {
        let model = train_lda(&gaussian_set(&[0.0, 3.0, 6.0], 100, 5), 0.1).unwrap();
        assert_eq!(model.projection.len(), 2);
        assert!((model.priors.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let a = model.project(&model.class_means[0])[0];
        let b = model.project(&model.class_means[2])[0];
        assert!((a - b).abs() > 1.0);
    }

    #[test]
    fn single_class_rejected() {
        let mut cal = gaussian_set(&[0.0], 10, 6);
        cal.classes = vec![Movement::Rest];
        assert!(matches!(
            train_lda(&cal, 0.1),
            Err(DecoderError::TooFewClasses { .. })
        ));
    }

    #[test]
    fn constant_channel_is_degenerate() {
        let mut cal = gaussian_set(&[0.0, 5.0], 50, 7);
        for s in &mut cal.samples {
            s.features[3] = 1.0;
        }
        assert_eq!(
            train_lda(&cal, 0.1),
            Err(DecoderError::DegenerateCovariance)
        );
    }

    #[test]
    fn mean_and_midpoint_decisions() {
        let d = CHANNELS;
        let m0 = vec![0.0; d];
        let m1 = vec![2.0; d];
        let model = LdaModel::from_parameters(
            vec![Movement::Rest, Movement::Dorsiflexion],
            vec![m0.clone(), m1.clone()],
            &DMatrix::identity(d, d),
            vec![0.5, 0.5],
        )
        .unwrap();
        assert_eq!(argmax(&model.scores(&m1)), 1);
        assert_eq!(argmax(&model.scores(&m0)), 0);
        let s = model.scores(&vec![1.0; d]);
        assert!((s[0] - s[1]).abs() < 1e-9);
        assert_eq!(argmax(&s), 0);
    }

    #[test]
    fn dimension_checked() {
        let model = Model::Lda(train_lda(&gaussian_set(&[0.0, 4.0], 50, 8), 0.1).unwrap());
        assert!(matches!(
            model.predict(&[0.0; 31]),
            Err(DecoderError::DimensionMismatch {
                expected: 32,
                got: 31
            })
        ));
    }

    #[test]
    fn shift_invariance() {
        let cal = gaussian_set(&[0.0, 1.0, 2.0], 150, 9);
        let mut shifted = cal.clone();
        for s in &mut shifted.samples {
            for v in &mut s.features {
                *v += 7.5;
            }
        }
        let a = Model::Lda(train_lda(&cal, 0.1).unwrap());
        let b = Model::Lda(train_lda(&shifted, 0.1).unwrap());
        let probe = gaussian_set(&[0.0, 1.0, 2.0], 100, 10);
        for s in &probe.samples {
            let moved: Vec<f64> = s.features.iter().map(|v| v + 7.5).collect();
            assert_eq!(
                a.predict(&s.features).unwrap().label,
                b.predict(&moved).unwrap().label
            );
        }
    }
}
