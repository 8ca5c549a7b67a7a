//! Independent dense reference implementations used as test oracles.
#![allow(dead_code)]

use aroma::{DenseMatrix, SparseVector};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

pub fn dense(v: &SparseVector) -> DVector<f64> {
    DVector::from_vec(v.to_dense())
}

/// Column stacking, written out independently of the crate.
pub fn col_stack(m: &DMatrix<f64>) -> DVector<f64> {
    let mut out = Vec::with_capacity(m.len());
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            out.push(m[(i, j)]);
        }
    }
    DVector::from_vec(out)
}

/// `Σ_k Σ_l q_k W_kl p_l` by nested loops over every index.
pub fn dense_triple(q: &SparseVector, w: &DenseMatrix, p: &SparseVector) -> f64 {
    let (q, p) = (q.to_dense(), p.to_dense());
    let mut acc = 0.0;
    for (k, qk) in q.iter().enumerate() {
        for (l, pl) in p.iter().enumerate() {
            acc += qk * w.get(k, l) * pl;
        }
    }
    acc
}

/// Exact KL(N(μ₁, S₁) ‖ N(μ₂, S₂)) through LU determinants and inverses.
pub fn gaussian_kl(mu1: &DVector<f64>, s1: &DMatrix<f64>, mu2: &DVector<f64>, s2: &DMatrix<f64>) -> f64 {
    let d = mu1.len() as f64;
    let s2_inv = s2.clone().try_inverse().expect("invertible");
    let diff = mu2 - mu1;
    let mahal = (diff.transpose() * &s2_inv * &diff)[(0, 0)];
    0.5 * ((&s2_inv * s1).trace() + mahal - d + (s2.determinant() / s1.determinant()).ln())
}

pub fn gaussian_logpdf(x: &DVector<f64>, mu: &DVector<f64>, s: &DMatrix<f64>) -> f64 {
    let d = x.len() as f64;
    let diff = x - mu;
    let mahal = (diff.transpose() * s.clone().try_inverse().expect("invertible") * &diff)[(0, 0)];
    -0.5 * d * (2.0 * std::f64::consts::PI).ln() - 0.5 * s.determinant().ln() - 0.5 * mahal
}

pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random symmetric positive definite `d × d` matrix `AAᵀ + εI`.
pub fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DenseMatrix {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let s = &a * a.transpose() + DMatrix::identity(d, d) * 0.3;
    DenseMatrix::from_row_major(d, d, s.transpose().as_slice().to_vec()).unwrap()
}

pub fn random_dense(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    DenseMatrix::from_row_major(rows, cols, data).unwrap()
}

/// Dense vector with roughly half its entries zeroed.
pub fn random_sparse(rng: &mut ChaCha8Rng, dim: usize) -> SparseVector {
    let values: Vec<f64> =
        (0..dim).map(|_| if rng.random_bool(0.5) { rng.random_range(-2.0..2.0) } else { 0.0 }).collect();
    SparseVector::from_dense(&values).unwrap()
}

pub fn from_na(m: &DMatrix<f64>) -> DenseMatrix {
    DenseMatrix::from_row_major(m.nrows(), m.ncols(), m.transpose().as_slice().to_vec()).unwrap()
}

/// One standard-mode factored step written directly from the update
/// formulas with dense algebra.
pub fn factored_step_oracle(
    w: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    lambda: &DMatrix<f64>,
    q: &DVector<f64>,
    p: &DVector<f64>,
    r: f64,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (m, n) = (w.nrows() as f64, w.ncols() as f64);
    let margin = (q.transpose() * w * p)[(0, 0)];
    if margin >= 1.0 {
        return (w.clone(), omega.clone(), lambda.clone());
    }
    let lq = lambda * q;
    let op = omega * p;
    let s = q.dot(&lq);
    let t = p.dot(&op);
    let w_new = w + (1.0 - margin) / (r + s * t) * &lq * op.transpose();
    let omega_new = omega - s / (m * r + s * t) * &op * op.transpose();
    let lambda_new = lambda - t / (n * r + s * t) * &lq * lq.transpose();
    (w_new, omega_new, lambda_new)
}

pub fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!((a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0), "{what}: {a} vs {b} (tol {tol})");
}
