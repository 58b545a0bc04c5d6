//! Two-class common spatial patterns.
//!
//! The composite covariance `C₁ + C₂` is whitened through its symmetric
//! eigendecomposition and the whitened `C₁` is then diagonalized. Rows of
//! the resulting `W` satisfy `W (C₁ + C₂) Wᵀ = I` and `W C₁ Wᵀ = D` with the
//! eigenvalues of `D` sorted descending, so the first rows maximize the
//! class-1 variance share and the last rows minimize it.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::recording::Label;

#[derive(Debug, Error, PartialEq)]
pub enum CspError {
    #[error("trial has zero total power")]
    DegenerateTrial,
    #[error("trial has {0} samples; at least 2 required")]
    TooFewSamples(usize),
    #[error("no trials for class {0}")]
    NoTrials(Label),
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("composite covariance is singular (smallest eigenvalue {smallest:e}, threshold {threshold:e})")]
    Conditioning { smallest: f64, threshold: f64 },
    #[error("cannot keep {m} filters per end from {channels} channels")]
    TooManyFilters { m: usize, channels: usize },
    #[error("non-finite values in input")]
    NonFinite,
}

/// How single-trial covariances are scaled before class averaging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovNormalization {
    /// `X Xᵀ / trace(X Xᵀ)`.
    #[default]
    Trace,
    /// `X Xᵀ / (samples - 1)`.
    None,
}

/// `X Xᵀ / trace(X Xᵀ)` for a channels × samples trial.
pub fn trial_covariance(x: &DMatrix<f64>) -> Result<DMatrix<f64>, CspError> {
    trial_covariance_with(x, CovNormalization::Trace)
}

pub fn trial_covariance_with(
    x: &DMatrix<f64>,
    normalization: CovNormalization,
) -> Result<DMatrix<f64>, CspError> {
    if x.ncols() < 2 {
        return Err(CspError::TooFewSamples(x.ncols()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(CspError::NonFinite);
    }
    let mut cov = x * x.transpose();
    let trace = cov.trace();
    if trace <= 0.0 {
        return Err(CspError::DegenerateTrial);
    }
    let scale = match normalization {
        CovNormalization::Trace => trace,
        CovNormalization::None => (x.ncols() - 1) as f64,
    };
    cov /= scale;
    symmetrize(&mut cov);
    Ok(cov)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Mean single-trial covariance of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCovariance {
    pub matrix: DMatrix<f64>,
    pub class_id: Label,
    pub trial_count: usize,
}

pub fn average_covariance(
    trials: &[DMatrix<f64>],
    class_id: Label,
) -> Result<ClassCovariance, CspError> {
    average_covariance_with(trials, class_id, CovNormalization::Trace)
}

pub fn average_covariance_with(
    trials: &[DMatrix<f64>],
    class_id: Label,
    normalization: CovNormalization,
) -> Result<ClassCovariance, CspError> {
    let first = trials.first().ok_or(CspError::NoTrials(class_id))?;
    let n = first.nrows();
    let mut sum = DMatrix::zeros(n, n);
    for x in trials {
        if x.nrows() != n {
            return Err(CspError::Shape(format!(
                "trial with {} channels among {n}-channel trials",
                x.nrows()
            )));
        }
        sum += trial_covariance_with(x, normalization)?;
    }
    Ok(ClassCovariance {
        matrix: sum / trials.len() as f64,
        class_id,
        trial_count: trials.len(),
    })
}

/// Ridge applied when `C₁ + C₂` is near-singular, relative to `trace / N_c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RidgeConfig {
    /// Eigenvalues below `threshold × trace / N_c` trigger the ridge.
    pub threshold: f64,
    /// Diagonal loading `λ = scale × trace / N_c`.
    pub scale: f64,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        Self {
            threshold: 1e-10,
            scale: 1e-9,
        }
    }
}

/// Full CSP solution: all `N_c` filters as rows, eigenvalues descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CspTransform {
    /// Row-major `N_c × N_c` filter matrix.
    pub filters: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub m: usize,
    /// Ridge added to the composite diagonal, 0 when none was needed.
    pub ridge: f64,
}

impl CspTransform {
    pub fn num_channels(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn w(&self) -> DMatrix<f64> {
        let n = self.num_channels();
        DMatrix::from_fn(n, n, |i, j| self.filters[i][j])
    }
}

/// Solves `C₁ W = (C₁ + C₂) W D` and keeps `m` filters per end.
pub fn solve_csp(
    c1: &ClassCovariance,
    c2: &ClassCovariance,
    m: usize,
    ridge: &RidgeConfig,
) -> Result<CspTransform, CspError> {
    let n = c1.matrix.nrows();
    if c1.matrix.shape() != (n, n) || c2.matrix.shape() != (n, n) {
        return Err(CspError::Shape(format!(
            "covariances {:?} and {:?}",
            c1.matrix.shape(),
            c2.matrix.shape()
        )));
    }
    if 2 * m > n || m == 0 {
        return Err(CspError::TooManyFilters { m, channels: n });
    }
    if c1.matrix.iter().chain(c2.matrix.iter()).any(|v| !v.is_finite()) {
        return Err(CspError::NonFinite);
    }

    let mut composite = &c1.matrix + &c2.matrix;
    symmetrize(&mut composite);
    let unit = composite.trace() / n as f64;
    let threshold = ridge.threshold * unit;

    let mut eig = SymmetricEigen::new(composite.clone());
    let mut applied = 0.0;
    if eig.eigenvalues.min() < threshold && ridge.scale > 0.0 {
        applied = ridge.scale * unit;
        for i in 0..n {
            composite[(i, i)] += applied;
        }
        eig = SymmetricEigen::new(composite);
    }
    let smallest = eig.eigenvalues.min();
    if !(smallest >= threshold) || !(unit > 0.0) {
        return Err(CspError::Conditioning {
            smallest,
            threshold,
        });
    }

    // whitening P = Λ^{-1/2} Uᵀ, so P (C₁+C₂) Pᵀ = I
    let inv_sqrt = eig.eigenvalues.map(|v| v.sqrt().recip());
    let whitening = DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
    let mut whitened = &whitening * &c1.matrix * whitening.transpose();
    symmetrize(&mut whitened);
    let inner = SymmetricEigen::new(whitened);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| inner.eigenvalues[b].total_cmp(&inner.eigenvalues[a]));

    let rotated = inner.eigenvectors.transpose() * &whitening;
    let mut filters = Vec::with_capacity(n);
    let mut eigenvalues = Vec::with_capacity(n);
    for &k in &order {
        let mut row: Vec<f64> = rotated.row(k).iter().copied().collect();
        let pivot = row
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
        filters.push(row);
        eigenvalues.push(inner.eigenvalues[k].clamp(0.0, 1.0));
    }

    Ok(CspTransform {
        filters,
        eigenvalues,
        m,
        ridge: applied,
    })
}

/// Rows `0..m` followed by rows `N_c-m..N_c` of `W`.
pub fn select_filters(t: &CspTransform) -> DMatrix<f64> {
    let n = t.num_channels();
    let rows: Vec<usize> = (0..t.m).chain(n - t.m..n).collect();
    DMatrix::from_fn(rows.len(), n, |i, j| t.filters[rows[i]][j])
}

/// Indices (into `W`) of the rows returned by [`select_filters`].
pub fn selected_rows(t: &CspTransform) -> Vec<usize> {
    let n = t.num_channels();
    (0..t.m).chain(n - t.m..n).collect()
}

/// `Z = W_sel X`.
pub fn spatial_filter(x: &DMatrix<f64>, w_sel: &DMatrix<f64>) -> Result<DMatrix<f64>, CspError> {
    if w_sel.ncols() != x.nrows() {
        return Err(CspError::Shape(format!(
            "filters have {} weights, signal has {} channels",
            w_sel.ncols(),
            x.nrows()
        )));
    }
    Ok(w_sel * x)
}

/// Normalized log-variance features of one band.
#[derive(Debug, Clone, PartialEq)]
pub struct BandFeatures {
    pub values: DVector<f64>,
    pub band_index: usize,
    /// Set when a zero-variance row was clamped.
    pub clamped: bool,
}

/// `log(diag(Z Zᵀ) / trace(Z Zᵀ))`.
pub fn log_variance_features(z: &DMatrix<f64>, band_index: usize) -> Result<BandFeatures, CspError> {
    let powers: Vec<f64> = z.row_iter().map(|r| r.norm_squared()).collect();
    let trace: f64 = powers.iter().sum();
    if !(trace > 0.0) || !trace.is_finite() {
        return Err(CspError::DegenerateTrial);
    }
    let floor = 1e-12 * trace;
    let mut clamped = false;
    let values = DVector::from_iterator(
        powers.len(),
        powers.iter().map(|&p| {
            let p = if p < floor {
                clamped = true;
                floor
            } else {
                p
            };
            (p / trace).ln()
        }),
    );
    Ok(BandFeatures {
        values,
        band_index,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn class(m: DMatrix<f64>, id: Label) -> ClassCovariance {
        ClassCovariance {
            matrix: m,
            class_id: id,
            trial_count: 1,
        }
    }

    #[test]
    fn trial_covariance_hand_cases() {
        let c = trial_covariance(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]));
        let c = trial_covariance(&DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0])).unwrap();
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        let x = DMatrix::from_fn(3, 10, |i, j| ((i + 2 * j) % 5) as f64 - 1.5);
        assert!(close(trial_covariance(&x).unwrap().trace(), 1.0, 1e-15));
    }

    #[test]
    fn trial_covariance_errors() {
        assert_eq!(
            trial_covariance(&DMatrix::zeros(2, 5)),
            Err(CspError::DegenerateTrial)
        );
        assert_eq!(
            trial_covariance(&DMatrix::zeros(2, 1)),
            Err(CspError::TooFewSamples(1))
        );
    }

    #[test]
    fn averaging() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        let avg = average_covariance(&[a.clone(), b], 0).unwrap();
        assert_eq!(avg.matrix, DMatrix::from_diagonal_element(2, 2, 0.5));
        assert_eq!(avg.trial_count, 2);
        let one = average_covariance(std::slice::from_ref(&a), 1).unwrap();
        assert_eq!(one.matrix, trial_covariance(&a).unwrap());
        let two = average_covariance(&[a.clone(), a.clone()], 1).unwrap();
        assert_eq!(two.matrix, one.matrix);
        assert_eq!(average_covariance(&[], 3), Err(CspError::NoTrials(3)));
    }

    #[test]
    fn identical_classes_give_one_half() {
        let c = DMatrix::from_diagonal_element(2, 2, 0.25);
        let t = solve_csp(&class(c.clone(), 0), &class(c, 1), 1, &RidgeConfig::default()).unwrap();
        assert!(t.eigenvalues.iter().all(|&l| close(l, 0.5, 1e-12)));
    }

    #[test]
    fn diagonal_pair_closed_form() {
        let c1 = DMatrix::from_diagonal(&DVector::from_vec(vec![0.8, 0.2]));
        let c2 = DMatrix::from_diagonal(&DVector::from_vec(vec![0.2, 0.8]));
        let t = solve_csp(&class(c1, 0), &class(c2, 1), 1, &RidgeConfig::default()).unwrap();
        assert!(close(t.eigenvalues[0], 0.8, 1e-12));
        assert!(close(t.eigenvalues[1], 0.2, 1e-12));
        // C₁+C₂ = I, so filters are the (sign-fixed) unit axes
        assert!(close(t.filters[0][0], 1.0, 1e-12) && close(t.filters[0][1], 0.0, 1e-12));
        assert!(close(t.filters[1][0], 0.0, 1e-12) && close(t.filters[1][1], 1.0, 1e-12));
    }

    #[test]
    fn singular_composite_needs_ridge() {
        let c = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let no_ridge = RidgeConfig {
            scale: 0.0,
            ..RidgeConfig::default()
        };
        assert!(matches!(
            solve_csp(&class(c.clone(), 0), &class(c.clone(), 1), 1, &no_ridge),
            Err(CspError::Conditioning { .. })
        ));
        let t = solve_csp(&class(c.clone(), 0), &class(c, 1), 1, &RidgeConfig::default()).unwrap();
        assert!(t.ridge > 0.0);
        assert!(t.filters.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn filter_selection_orders_ends() {
        let t = CspTransform {
            filters: (0..4).map(|i| vec![i as f64; 4]).collect(),
            eigenvalues: vec![0.9, 0.6, 0.4, 0.1],
            m: 1,
            ridge: 0.0,
        };
        let sel = select_filters(&t);
        assert_eq!(sel.nrows(), 2);
        assert_eq!(sel[(0, 0)], 0.0);
        assert_eq!(sel[(1, 0)], 3.0);
        let full = CspTransform { m: 2, ..t };
        assert_eq!(selected_rows(&full), vec![0, 1, 2, 3]);
    }

    #[test]
    fn spatial_filter_cases() {
        let x = DMatrix::from_fn(3, 5, |i, j| (i * 5 + j) as f64);
        let w = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let z = spatial_filter(&x, &w).unwrap();
        assert_eq!(z.row(0), x.row(0));
        assert_eq!(z.row(1), x.row(2));
        assert!(spatial_filter(&DMatrix::zeros(3, 4), &w).unwrap().iter().all(|&v| v == 0.0));
        let e = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]);
        let w2 = DMatrix::from_row_slice(2, 3, &[0.3, -0.7, 0.1, 2.0, 5.0, -1.0]);
        assert_eq!(spatial_filter(&e, &w2).unwrap(), w2.column(1));
        assert!(matches!(
            spatial_filter(&DMatrix::zeros(2, 4), &w),
            Err(CspError::Shape(_))
        ));
    }

    #[test]
    fn log_variance_hand_cases() {
        let z = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let f = log_variance_features(&z, 0).unwrap();
        assert!(close(f.values[0], 0.2f64.ln(), 1e-15));
        assert!(close(f.values[1], 0.8f64.ln(), 1e-15));
        assert!(close(f.values[0], -1.6094379124341003, 1e-12));
        assert!(close(f.values[1], -0.2231435513142097, 1e-12));

        let z = DMatrix::from_row_slice(4, 2, &[1.0, -1.0, 1.0, 1.0, -1.0, 1.0, 0.0, std::f64::consts::SQRT_2]);
        let f = log_variance_features(&z, 3).unwrap();
        assert_eq!(f.band_index, 3);
        for v in f.values.iter() {
            assert!(close(*v, 0.25f64.ln(), 1e-9));
        }
    }

    #[test]
    fn zero_row_is_clamped() {
        let z = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 0.0, 0.0, 0.0]);
        let f = log_variance_features(&z, 0).unwrap();
        assert!(f.clamped);
        assert!(f.values.iter().all(|v| v.is_finite()));
        assert!(close(f.values[1], (1e-12f64).ln(), 1e-9));
        assert_eq!(
            log_variance_features(&DMatrix::zeros(2, 3), 0),
            Err(CspError::DegenerateTrial)
        );
    }
}
