mod common;

use common::{class_cov, gaussian_matrix, generalized_eigenvalues, jacobi_eigenvalues, random_spd, rng};
use fbcsp_core::csp::{
    average_covariance, log_variance_features, select_filters, solve_csp, spatial_filter, trial_covariance,
    RidgeConfig,
};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

fn off_diagonal_max(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j {
                worst = worst.max(m[(i, j)].abs());
            }
        }
    }
    worst
}

#[test]
fn jacobi_oracle_agrees_with_library_solver() {
    let mut r = rng(99);
    let a = random_spd(8, &mut r);
    let mut lib: Vec<f64> = SymmetricEigen::new(a.clone()).eigenvalues.iter().copied().collect();
    lib.sort_by(f64::total_cmp);
    for (x, y) in jacobi_eigenvalues(&a).iter().zip(&lib) {
        assert!((x - y).abs() < 1e-13);
    }
}

#[test]
fn simultaneous_diagonalization_on_random_pairs() {
    let mut r = rng(1);
    for _ in 0..25 {
        let c1 = random_spd(12, &mut r);
        let c2 = random_spd(12, &mut r);
        let t = solve_csp(&class_cov(c1.clone(), 0), &class_cov(c2.clone(), 1), 2, &RidgeConfig::default()).unwrap();
        let w = t.w();
        let d1 = &w * &c1 * w.transpose();
        let d2 = &w * &c2 * w.transpose();
        assert!(off_diagonal_max(&d1) < 1e-8);
        assert!(off_diagonal_max(&d2) < 1e-8);
        assert!(max_abs(&(&d1 + &d2 - DMatrix::identity(12, 12))) < 1e-8);
        for i in 0..12 {
            assert!((d1[(i, i)] - t.eigenvalues[i]).abs() < 1e-9);
        }
        assert!(t.eigenvalues.windows(2).all(|p| p[0] >= p[1]));
    }
}

#[test]
fn eigenvalues_match_cholesky_oracle() {
    let mut r = rng(2);
    for _ in 0..10 {
        let c1 = random_spd(12, &mut r);
        let c2 = random_spd(12, &mut r);
        let t = solve_csp(&class_cov(c1.clone(), 0), &class_cov(c2.clone(), 1), 2, &RidgeConfig::default()).unwrap();
        let oracle = generalized_eigenvalues(&c1, &(&c1 + &c2));
        for (a, b) in t.eigenvalues.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}

#[test]
fn first_filter_maximizes_variance_ratio() {
    let mut r = rng(3);
    let c1 = random_spd(12, &mut r);
    let c2 = random_spd(12, &mut r);
    let t = solve_csp(&class_cov(c1.clone(), 0), &class_cov(c2.clone(), 1), 2, &RidgeConfig::default()).unwrap();
    let composite = &c1 + &c2;
    let ratio = |w: &DVector<f64>| (w.transpose() * &c1 * w)[0] / (w.transpose() * &composite * w)[0];
    let best = ratio(&DVector::from_vec(t.filters[0].clone()));
    let worst = ratio(&DVector::from_vec(t.filters[11].clone()));
    for _ in 0..10_000 {
        let v = DVector::from_fn(12, |_, _| StandardNormal.sample(&mut r)).normalize();
        let q = ratio(&v);
        assert!(q <= best + 1e-12);
        assert!(q >= worst - 1e-12);
    }
}

#[test]
fn eigenvalue_duality() {
    let mut r = rng(4);
    for _ in 0..10 {
        let c1 = random_spd(12, &mut r);
        let c2 = random_spd(12, &mut r);
        let ridge = RidgeConfig::default();
        let forward = solve_csp(&class_cov(c1.clone(), 0), &class_cov(c2.clone(), 1), 2, &ridge).unwrap();
        let swapped = solve_csp(&class_cov(c2, 1), &class_cov(c1, 0), 2, &ridge).unwrap();
        for (a, b) in swapped.eigenvalues.iter().zip(forward.eigenvalues.iter().rev()) {
            assert!((a - (1.0 - b)).abs() < 1e-10);
        }
    }
}

#[test]
fn sign_convention_makes_largest_entry_positive() {
    let mut r = rng(5);
    let t = solve_csp(
        &class_cov(random_spd(12, &mut r), 0),
        &class_cov(random_spd(12, &mut r), 1),
        2,
        &RidgeConfig::default(),
    )
    .unwrap();
    for row in &t.filters {
        let pivot = row.iter().copied().fold(0.0f64, |b, v| if v.abs() > b.abs() { v } else { b });
        assert!(pivot > 0.0);
    }
}

fn trial_set(seed: u64, n_trials: usize, scale_channel: usize, factor: f64) -> Vec<DMatrix<f64>> {
    let mut r = rng(seed);
    (0..n_trials)
        .map(|_| {
            let mut x = gaussian_matrix(6, 200, &mut r);
            x.row_mut(scale_channel).scale_mut(factor);
            x
        })
        .collect()
}

fn features(trials_a: &[DMatrix<f64>], trials_b: &[DMatrix<f64>], probe: &[DMatrix<f64>]) -> Vec<Vec<f64>> {
    let c1 = average_covariance(trials_a, 0).unwrap();
    let c2 = average_covariance(trials_b, 1).unwrap();
    let t = solve_csp(&c1, &c2, 2, &RidgeConfig::default()).unwrap();
    let w = select_filters(&t);
    probe
        .iter()
        .map(|x| {
            let z = spatial_filter(x, &w).unwrap();
            log_variance_features(&z, 0).unwrap().values.iter().copied().collect()
        })
        .collect()
}

#[test]
fn channel_permutation_leaves_features_unchanged() {
    let a = trial_set(10, 20, 1, 3.0);
    let b = trial_set(11, 20, 4, 3.0);
    let probe = trial_set(12, 5, 2, 1.0);
    let perm = [3, 0, 5, 1, 4, 2];
    let permute = |xs: &[DMatrix<f64>]| -> Vec<DMatrix<f64>> {
        xs.iter()
            .map(|x| DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(perm[i], j)]))
            .collect()
    };
    let base = features(&a, &b, &probe);
    let permuted = features(&permute(&a), &permute(&b), &permute(&probe));
    for (x, y) in base.iter().zip(&permuted) {
        for (u, v) in x.iter().zip(y) {
            assert!((u - v).abs() < 1e-8, "{u} vs {v}");
        }
    }
}

#[test]
fn near_singular_composite_gets_a_ridge() {
    let mut r = rng(6);
    let x = gaussian_matrix(6, 50, &mut r);
    // the added seventh channel duplicates channel 0, so every covariance is rank deficient
    let mut x = x.insert_row(6, 0.0);
    let copy = x.row(0).clone_owned();
    x.set_row(6, &copy);
    let c = trial_covariance(&x).unwrap();
    let t = solve_csp(&class_cov(c.clone(), 0), &class_cov(c, 1), 2, &RidgeConfig::default()).unwrap();
    assert!(t.ridge > 0.0);
    assert!(t.eigenvalues.iter().all(|v| (0.0..=1.0).contains(v)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn log_variance_is_scale_invariant(seed in any::<u64>(), c in prop_oneof![-1e3..-1e-3f64, 1e-3..1e3f64]) {
        let z = gaussian_matrix(4, 64, &mut rng(seed));
        let a = log_variance_features(&z, 0).unwrap().values;
        let b = log_variance_features(&(&z * c), 0).unwrap().values;
        for (u, v) in a.iter().zip(b.iter()) {
            prop_assert!((u - v).abs() < 1e-10);
        }
        prop_assert!((a.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn trial_covariance_has_unit_trace(seed in any::<u64>(), rows in 2usize..8, cols in 2usize..40) {
        let mut r = rng(seed);
        let x = DMatrix::from_fn(rows, cols, |_, _| r.random_range(-5.0..5.0));
        let c = trial_covariance(&x).unwrap();
        prop_assert!((c.trace() - 1.0).abs() < 1e-12);
        prop_assert!(max_abs(&(&c - c.transpose())) < 1e-12);
    }
}
