//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use fbcsp_core::csp::ClassCovariance;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Random well-conditioned SPD matrix with unit trace.
pub fn random_spd(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let a = gaussian_matrix(n, 2 * n, rng);
    let mut c = &a * a.transpose() / (2 * n) as f64;
    for i in 0..n {
        c[(i, i)] += 0.05;
    }
    let t = c.trace();
    c / t
}

pub fn class_cov(matrix: DMatrix<f64>, class_id: u32) -> ClassCovariance {
    ClassCovariance {
        matrix,
        class_id,
        trial_count: 1,
    }
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix, ascending.
pub fn jacobi_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut a = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Lower Cholesky factor, written out by hand.
pub fn cholesky(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let d = a[(j, j)] - (0..j).map(|k| l[(j, k)] * l[(j, k)]).sum::<f64>();
        l[(j, j)] = d.sqrt();
        for i in j + 1..n {
            let s = a[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>();
            l[(i, j)] = s / l[(j, j)];
        }
    }
    l
}

/// Generalized eigenvalues of `A v = λ B v`, descending, via
/// `L⁻¹ A L⁻ᵀ` with `B = L Lᵀ` and a Jacobi solve.
pub fn generalized_eigenvalues(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let l = cholesky(b);
    let n = a.nrows();
    // forward substitution for L⁻¹ A, then for (L⁻¹ (L⁻¹ A)ᵀ)
    let solve = |m: &DMatrix<f64>| {
        let mut out = DMatrix::zeros(n, m.ncols());
        for c in 0..m.ncols() {
            for i in 0..n {
                let s = m[(i, c)] - (0..i).map(|k| l[(i, k)] * out[(k, c)]).sum::<f64>();
                out[(i, c)] = s / l[(i, i)];
            }
        }
        out
    };
    let half = solve(a);
    let mut full = solve(&half.transpose());
    full = (&full + full.transpose()) * 0.5;
    let mut ev = jacobi_eigenvalues(&full);
    ev.reverse();
    ev
}

/// Mutual information in bits from entropies of a brute-force joint histogram.
pub fn mi_oracle(x: &[usize], y: &[u32]) -> f64 {
    let n = x.len() as f64;
    let entropy = |counts: Vec<usize>| -> f64 {
        counts
            .into_iter()
            .filter(|&c| c > 0)
            .map(|c| {
                let p = c as f64 / n;
                -p * p.log2()
            })
            .sum()
    };
    let mut hx: HashMap<usize, usize> = HashMap::new();
    let mut hy: HashMap<u32, usize> = HashMap::new();
    let mut hxy: HashMap<(usize, u32), usize> = HashMap::new();
    for (&a, &b) in x.iter().zip(y) {
        *hx.entry(a).or_default() += 1;
        *hy.entry(b).or_default() += 1;
        *hxy.entry((a, b)).or_default() += 1;
    }
    entropy(hx.into_values().collect()) + entropy(hy.into_values().collect())
        - entropy(hxy.into_values().collect())
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `0.5 ± 3 √(0.25 / T)`.
pub fn null_band(trials: usize) -> (f64, f64) {
    let sigma = (0.25 / trials as f64).sqrt();
    (0.5 - 3.0 * sigma, 0.5 + 3.0 * sigma)
}

pub fn sine(freq_hz: f64, rate_hz: f64, len: usize) -> Vec<f64> {
    (0..len)
        .map(|t| (2.0 * std::f64::consts::PI * freq_hz * t as f64 / rate_hz).sin())
        .collect()
}

pub fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}
