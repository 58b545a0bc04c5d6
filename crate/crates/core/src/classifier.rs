//! Binary Gaussian naive Bayes, evaluated in log space.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::recording::Label;

#[derive(Debug, Error, PartialEq)]
pub enum ClassifierError {
    #[error("training data must contain exactly two classes, found {0:?}")]
    ClassCount(Vec<Label>),
    #[error("{rows} feature rows but {labels} labels")]
    LabelCount { rows: usize, labels: usize },
    #[error("at least one feature is required")]
    NoFeatures,
    #[error("expected {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Per-class Gaussian parameters of a two-class naive Bayes model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNbModel {
    /// Class labels, ascending.
    pub classes: [Label; 2],
    pub priors: [f64; 2],
    pub means: [Vec<f64>; 2],
    pub variances: [Vec<f64>; 2],
    pub variance_floor: f64,
}

impl GaussianNbModel {
    pub fn num_features(&self) -> usize {
        self.means[0].len()
    }

    pub fn fit(features: &DMatrix<f64>, labels: &[Label]) -> Result<Self, ClassifierError> {
        if features.nrows() != labels.len() {
            return Err(ClassifierError::LabelCount {
                rows: features.nrows(),
                labels: labels.len(),
            });
        }
        if features.ncols() == 0 {
            return Err(ClassifierError::NoFeatures);
        }
        let mut distinct: Vec<Label> = labels.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() != 2 {
            return Err(ClassifierError::ClassCount(distinct));
        }
        let classes = [distinct[0], distinct[1]];
        let n = features.ncols();

        let mut priors = [0.0; 2];
        let mut means = [vec![0.0; n], vec![0.0; n]];
        let mut variances = [vec![0.0; n], vec![0.0; n]];
        for (k, &class) in classes.iter().enumerate() {
            let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
            let count = rows.len() as f64;
            priors[k] = count / labels.len() as f64;
            for j in 0..n {
                let mean = rows.iter().map(|&i| features[(i, j)]).sum::<f64>() / count;
                let var = rows
                    .iter()
                    .map(|&i| (features[(i, j)] - mean).powi(2))
                    .sum::<f64>()
                    / count;
                means[k][j] = mean;
                variances[k][j] = var;
            }
        }

        let mean_variance =
            variances.iter().flatten().sum::<f64>() / (2 * n) as f64;
        let variance_floor = (1e-12 * mean_variance).max(1e-300);
        for v in variances.iter_mut().flatten() {
            *v = v.max(variance_floor);
        }

        Ok(Self {
            classes,
            priors,
            means,
            variances,
            variance_floor,
        })
    }

    /// Unnormalized log posterior of each class.
    fn log_joint(&self, x: &[f64]) -> Result<[f64; 2], ClassifierError> {
        if x.len() != self.num_features() {
            return Err(ClassifierError::Dimension {
                expected: self.num_features(),
                got: x.len(),
            });
        }
        let mut joint = [self.priors[0].ln(), self.priors[1].ln()];
        for (j, &value) in x.iter().enumerate() {
            let terms: [f64; 2] = std::array::from_fn(|k| {
                let var = self.variances[k][j];
                -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (value - self.means[k][j]).powi(2) / var)
            });
            // identical terms (e.g. a constant feature shared by both classes)
            // carry no information and may be infinite
            if terms[0] == terms[1] {
                continue;
            }
            joint[0] += terms[0];
            joint[1] += terms[1];
        }
        Ok(joint)
    }

    /// Posterior probabilities in the order of [`classes`](Self::classes).
    pub fn predict_proba(&self, x: &[f64]) -> Result<[f64; 2], ClassifierError> {
        let joint = self.log_joint(x)?;
        let diff = joint[1] - joint[0];
        if diff.is_nan() {
            let total = self.priors[0] + self.priors[1];
            return Ok([self.priors[0] / total, self.priors[1] / total]);
        }
        // logistic of the log-odds; both branches stay finite for any diff
        let p1 = if diff >= 0.0 {
            1.0 / (1.0 + (-diff).exp())
        } else {
            let e = diff.exp();
            e / (1.0 + e)
        };
        Ok([1.0 - p1, p1])
    }

    /// Most probable class; ties go to the lower label.
    pub fn predict(&self, x: &[f64]) -> Result<Label, ClassifierError> {
        let p = self.predict_proba(x)?;
        Ok(if p[1] > p[0] { self.classes[1] } else { self.classes[0] })
    }

    pub fn predict_rows(&self, features: &DMatrix<f64>) -> Result<Vec<Label>, ClassifierError> {
        features
            .row_iter()
            .map(|row| {
                let x: Vec<f64> = row.iter().copied().collect();
                self.predict(&x)
            })
            .collect()
    }
}
