//! AROW for binary classification of vectors.
//!
//! The learner keeps a Gaussian `N(w, Σ)` over weight vectors. On a round
//! with positive hinge loss it moves the mean along `Σx` and shrinks the
//! covariance in the direction of `x`:
//!
//! ```text
//! β  = 1 / (xᵀΣx + r)
//! w' = w + max(0, 1 − y·xᵀw) · β · y · Σx
//! Σ' = Σ − β · Σx xᵀΣ
//! ```
//!
//! The diagonal mode applies the same rule to the diagonal of `Σ` only, with
//! `xᵀΣx` replaced by `sum(σ ⊙ x ⊙ x)`. It is the vectorized counterpart of
//! the diagonal matrix learner in [`crate::diagonal`].

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, PdFactor, SparseVector};

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Full(DenseMatrix),
    Diagonal(Vec<f64>),
}

impl Covariance {
    pub fn dim(&self) -> usize {
        match self {
            Covariance::Full(m) => m.rows(),
            Covariance::Diagonal(d) => d.len(),
        }
    }

    /// `Σx` for sparse `x`.
    fn times(&self, x: &SparseVector) -> Result<Vec<f64>> {
        match self {
            Covariance::Full(m) => m.mul_sparse(x),
            Covariance::Diagonal(d) => {
                let mut out = vec![0.0; d.len()];
                for (j, v) in x.iter() {
                    out[j] = d[j] * v;
                }
                Ok(out)
            }
        }
    }

    fn quadratic_form(&self, x: &SparseVector) -> Result<f64> {
        match self {
            Covariance::Full(m) => m.quadratic_form(x),
            Covariance::Diagonal(d) => Ok(x.iter().map(|(j, v)| v * d[j] * v).sum()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArowModel {
    pub w: Vec<f64>,
    pub sigma: Covariance,
    pub r: f64,
}

/// What happened on one call to [`ArowModel::update`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArowStep {
    pub hinge: f64,
    /// `xᵀΣx` under the pre-update covariance.
    pub confidence: f64,
    pub updated: bool,
}

fn check_r(r: f64) -> Result<()> {
    if r.is_finite() && r > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("regularizer r must be positive, got {r}")))
    }
}

fn check_label(y: f64) -> Result<()> {
    if y == 1.0 || y == -1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("label must be +1 or -1, got {y}")))
    }
}

impl ArowModel {
    /// `w = 0`, `Σ = I`.
    pub fn full(dim: usize, r: f64) -> Result<Self> {
        check_r(r)?;
        Ok(ArowModel { w: vec![0.0; dim], sigma: Covariance::Full(DenseMatrix::identity(dim)), r })
    }

    /// `w = 0`, `σ = 1`.
    pub fn diagonal(dim: usize, r: f64) -> Result<Self> {
        check_r(r)?;
        Ok(ArowModel { w: vec![0.0; dim], sigma: Covariance::Diagonal(vec![1.0; dim]), r })
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn margin(&self, x: &SparseVector) -> Result<f64> {
        x.dot_dense(&self.w)
    }

    /// `sign(w·x)`, with ties going to `+1`.
    pub fn predict(&self, x: &SparseVector) -> Result<i8> {
        Ok(if self.margin(x)? >= 0.0 { 1 } else { -1 })
    }

    pub fn update(&mut self, x: &SparseVector, y: f64) -> Result<ArowStep> {
        check_label(y)?;
        let hinge = (1.0 - y * self.margin(x)?).max(0.0);
        let sigma_x = self.sigma.times(x)?;
        let confidence = x.dot_dense(&sigma_x)?;
        if hinge == 0.0 {
            return Ok(ArowStep { hinge, confidence, updated: false });
        }
        let denom = confidence + self.r;
        let step = hinge / denom * y;
        match &mut self.sigma {
            Covariance::Full(s) => {
                let support: Vec<usize> = (0..sigma_x.len()).filter(|&i| sigma_x[i] != 0.0).collect();
                let mut next = s.clone();
                for &i in &support {
                    for &j in &support {
                        next.add_at(i, j, -sigma_x[i] * sigma_x[j] / denom);
                    }
                }
                for &i in &support {
                    if next.get(i, i) <= 0.0 {
                        return Err(Error::NotPositiveDefinite(format!(
                            "AROW covariance diagonal entry {i} became {}",
                            next.get(i, i)
                        )));
                    }
                }
                *s = next;
            }
            Covariance::Diagonal(d) => {
                let mut next = d.clone();
                for (j, v) in x.iter() {
                    next[j] = d[j] - d[j] * v * v * d[j] / denom;
                    if next[j] <= 0.0 || !next[j].is_finite() {
                        return Err(Error::NotPositiveDefinite(format!(
                            "AROW diagonal confidence {j} became {}",
                            next[j]
                        )));
                    }
                }
                *d = next;
            }
        }
        for (wi, si) in self.w.iter_mut().zip(&sigma_x) {
            *wi += step * si;
        }
        Ok(ArowStep { hinge, confidence, updated: true })
    }
}

/// Exact `KL(N(w, Σ) ‖ N(w₀, Σ₀))`.
pub fn gaussian_kl(w: &[f64], sigma: &Covariance, w0: &[f64], sigma0: &Covariance) -> Result<f64> {
    let d = w.len();
    if w0.len() != d || sigma.dim() != d || sigma0.dim() != d {
        return Err(Error::dims("Gaussian KL", d, w0.len().max(sigma.dim()).max(sigma0.dim())));
    }
    let diff: Vec<f64> = w.iter().zip(w0).map(|(a, b)| a - b).collect();
    match (sigma, sigma0) {
        (Covariance::Diagonal(s), Covariance::Diagonal(s0)) => {
            let mut acc = 0.0;
            for j in 0..d {
                if !(s[j] > 0.0) || !(s0[j] > 0.0) {
                    return Err(Error::NotPositiveDefinite(format!("diagonal covariance entry {j} is not positive")));
                }
                acc += s[j] / s0[j] + diff[j] * diff[j] / s0[j] - 1.0 + (s0[j] / s[j]).ln();
            }
            Ok(0.5 * acc)
        }
        (Covariance::Full(s), Covariance::Full(s0)) => {
            let f = PdFactor::new(s)?;
            let f0 = PdFactor::new(s0)?;
            let trace = f0.solve(s)?.trace();
            let diff_m = DenseMatrix::from_row_major(d, 1, diff.clone())?;
            let solved = f0.solve(&diff_m)?;
            let mahal: f64 = diff.iter().zip(solved.data()).map(|(a, b)| a * b).sum();
            Ok(0.5 * (trace + mahal - d as f64 + f0.log_det() - f.log_det()))
        }
        _ => Err(Error::InvalidArgument("KL between full and diagonal covariances is not supported".into())),
    }
}

/// Value of the per-round AROW objective at a candidate `(w, Σ)`:
/// `KL(candidate ‖ previous) + hinge(w)²/(2r) + xᵀΣx/(2r)`.
pub fn arow_objective(w: &[f64], sigma: &Covariance, previous: &ArowModel, x: &SparseVector, y: f64) -> Result<f64> {
    check_label(y)?;
    let kl = gaussian_kl(w, sigma, &previous.w, &previous.sigma)?;
    let hinge = (1.0 - y * x.dot_dense(w)?).max(0.0);
    let conf = sigma.quadratic_form(x)?;
    Ok(kl + hinge * hinge / (2.0 * previous.r) + conf / (2.0 * previous.r))
}
