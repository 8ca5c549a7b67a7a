//! Matrix-variate normal quantities and the mistake bounds, evaluated over
//! recorded runs.
//!
//! The bounds are checked as plain inequalities against the counts in a
//! [`RunTrace`]: the diagonal bound over margin-driven diagonal runs, the
//! factored bound and the log-det lemma over mistake-driven factored runs.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::factored::FactoredModel;
use crate::linalg::{bilinear_score, DenseMatrix, PdFactor, SparseVector};
use crate::trace::{FinalState, RunTrace};

/// Relative slack granted to every bound comparison.
pub const BOUND_TOLERANCE: f64 = 1e-8;

fn check_cov_shapes(w: &DenseMatrix, omega: &DenseMatrix, lambda: &DenseMatrix) -> Result<()> {
    let (m, n) = w.shape();
    if lambda.shape() != (m, m) {
        return Err(Error::dims("row covariance", m, lambda.rows()));
    }
    if omega.shape() != (n, n) {
        return Err(Error::dims("column covariance", n, omega.rows()));
    }
    Ok(())
}

/// `Tr(Λ⁻¹ D Ω⁻¹ Dᵀ)` for factored `Ω` and `Λ`.
fn kron_mahalanobis(d: &DenseMatrix, omega: &PdFactor, lambda: &PdFactor) -> Result<f64> {
    // D Ω⁻¹ = (Ω⁻¹ Dᵀ)ᵀ, then Λ⁻¹ (D Ω⁻¹)
    let d_omega = omega.solve(&d.transpose())?.transpose();
    let inner = lambda.solve(&d_omega)?;
    Ok(d.data().iter().zip(inner.data()).map(|(a, b)| a * b).sum())
}

/// Log density of `X` under `N(W, Ω ⊗ Λ)`.
pub fn matnorm_logpdf(x: &DenseMatrix, w: &DenseMatrix, omega: &DenseMatrix, lambda: &DenseMatrix) -> Result<f64> {
    if x.shape() != w.shape() {
        return Err(Error::dims("matrix-variate sample", w.rows() * w.cols(), x.rows() * x.cols()));
    }
    check_cov_shapes(w, omega, lambda)?;
    let (m, n) = w.shape();
    let (m, n) = (m as f64, n as f64);
    let omega_f = PdFactor::new(omega)?;
    let lambda_f = PdFactor::new(lambda)?;
    let quad = kron_mahalanobis(&x.sub(w)?, &omega_f, &lambda_f)?;
    Ok(-0.5 * m * n * (2.0 * PI).ln() - 0.5 * n * lambda_f.log_det() - 0.5 * m * omega_f.log_det() - 0.5 * quad)
}

/// Parameters `(W, Ω, Λ)` of a matrix-variate normal.
#[derive(Debug, Clone, Copy)]
pub struct MatNormal<'a> {
    pub w: &'a DenseMatrix,
    pub omega: &'a DenseMatrix,
    pub lambda: &'a DenseMatrix,
}

impl<'a> MatNormal<'a> {
    pub fn new(w: &'a DenseMatrix, omega: &'a DenseMatrix, lambda: &'a DenseMatrix) -> Self {
        MatNormal { w, omega, lambda }
    }
}

/// Exact `KL(P ‖ Q)` between matrix-variate normals.
pub fn matnorm_kl(p: MatNormal<'_>, q: MatNormal<'_>) -> Result<f64> {
    check_cov_shapes(p.w, p.omega, p.lambda)?;
    check_cov_shapes(q.w, q.omega, q.lambda)?;
    if p.w.shape() != q.w.shape() {
        return Err(Error::dims("KL mean shapes", p.w.rows() * p.w.cols(), q.w.rows() * q.w.cols()));
    }
    let (m, n) = p.w.shape();
    let (mf, nf) = (m as f64, n as f64);
    let p_omega = PdFactor::new(p.omega)?;
    let p_lambda = PdFactor::new(p.lambda)?;
    let q_omega = PdFactor::new(q.omega)?;
    let q_lambda = PdFactor::new(q.lambda)?;
    let log_terms =
        0.5 * nf * (q_lambda.log_det() - p_lambda.log_det()) + 0.5 * mf * (q_omega.log_det() - p_omega.log_det());
    let coupling = 0.5 * q_lambda.solve(p.lambda)?.trace() * q_omega.solve(p.omega)?.trace();
    let mean_term = 0.5 * kron_mahalanobis(&p.w.sub(q.w)?, &q_omega, &q_lambda)?;
    Ok(log_terms + coupling + mean_term - 0.5 * mf * nf)
}

/// The per-round factored objective at a candidate `(W, Ω, Λ)`, term by term:
/// log-det ratios, mean displacement, squared hinge, trace coupling and the
/// Kronecker confidence term.
pub fn faroma_objective(
    candidate: MatNormal<'_>,
    previous: &FactoredModel,
    q: &SparseVector,
    p: &SparseVector,
) -> Result<f64> {
    let prev_w = previous.weights();
    check_cov_shapes(candidate.w, candidate.omega, candidate.lambda)?;
    if candidate.w.shape() != prev_w.shape() {
        return Err(Error::dims(
            "candidate mean",
            prev_w.rows() * prev_w.cols(),
            candidate.w.rows() * candidate.w.cols(),
        ));
    }
    let r = previous.r();
    let (m, n) = candidate.w.shape();
    let (mf, nf) = (m as f64, n as f64);
    let c_omega = PdFactor::new(candidate.omega)?;
    let c_lambda = PdFactor::new(candidate.lambda)?;
    let prev_omega = PdFactor::new(previous.omega())?;
    let prev_lambda = PdFactor::new(previous.lambda())?;

    let log_terms =
        0.5 * nf * (prev_lambda.log_det() - c_lambda.log_det()) + 0.5 * mf * (prev_omega.log_det() - c_omega.log_det());
    let mean_term = 0.5 * kron_mahalanobis(&candidate.w.sub(&prev_w)?, &prev_omega, &prev_lambda)?;
    let hinge = (1.0 - bilinear_score(q, candidate.w, p)?).max(0.0);
    let hinge_term = hinge * hinge / (2.0 * r);
    let coupling = 0.5 * prev_lambda.solve(candidate.lambda)?.trace() * prev_omega.solve(candidate.omega)?.trace();
    let confidence = candidate.omega.quadratic_form(p)? * candidate.lambda.quadratic_form(q)? / (2.0 * r);
    Ok(log_terms + mean_term + hinge_term + coupling + confidence)
}

fn check_comparator(v: &DenseMatrix, trace: &RunTrace) -> Result<()> {
    let (m, n) = (trace.header.m, trace.header.n);
    if v.shape() != (m, n) {
        return Err(Error::dims("comparator shape", m * n, v.rows() * v.cols()));
    }
    Ok(())
}

fn comparator_hinge(v: &DenseMatrix, q: &SparseVector, p: &SparseVector) -> Result<f64> {
    Ok((1.0 - bilinear_score(q, v, p)?).max(0.0))
}

/// Right-hand side of the diagonal mistake bound for comparator `V`.
pub fn thm1_bound(v: &DenseMatrix, trace: &RunTrace) -> Result<f64> {
    check_comparator(v, trace)?;
    let (m, n) = (trace.header.m, trace.header.n);
    let r = trace.header.r;
    // A_{k,l} = Σ_{i ∈ M∪U} q²_{i,k} p²_{i,l}
    let mut a = DenseMatrix::zeros(m, n);
    let mut hinge_sum = 0.0;
    let mut u_count = 0.0;
    for rec in trace.records.iter().filter(|r| r.in_m() || r.in_u()) {
        hinge_sum += comparator_hinge(v, &rec.q, &rec.p)?;
        if rec.in_u() {
            u_count += 1.0;
        }
        for (k, qk) in rec.q.iter() {
            for (l, pl) in rec.p.iter() {
                a.add_at(k, l, qk * qk * pl * pl);
            }
        }
    }
    let mut weighted = 0.0;
    let mut log_sum = 0.0;
    for (vkl, akl) in v.data().iter().zip(a.data()) {
        weighted += vkl * vkl * akl;
        log_sum += (akl / r + 1.0).ln();
    }
    let norm_term = (v.frobenius_sq() + weighted / r).sqrt();
    let log_term = (r * log_sum).sqrt();
    Ok(hinge_sum - u_count + norm_term * log_term + 2.0 * u_count)
}

fn final_factors(trace: &RunTrace) -> Result<(PdFactor, PdFactor)> {
    match &trace.final_state {
        FinalState::Factored { omega, lambda } => {
            let (m, n) = (trace.header.m, trace.header.n);
            if omega.shape() != (n, n) || lambda.shape() != (m, m) {
                return Err(Error::Trace("final covariance shapes disagree with header".into()));
            }
            Ok((PdFactor::new(omega)?, PdFactor::new(lambda)?))
        }
        _ => Err(Error::Trace("trace has no factored final state".into())),
    }
}

fn require_algo(trace: &RunTrace, algo: &str, what: &str) -> Result<()> {
    if trace.header.algo != algo {
        return Err(Error::InvalidArgument(format!("{what} needs a {algo} trace, got {}", trace.header.algo)));
    }
    Ok(())
}

/// Right-hand side of the factored mistake bound for comparator `V`.
pub fn thm2_bound(v: &DenseMatrix, trace: &RunTrace) -> Result<f64> {
    require_algo(trace, "f-aroma-analysis", "the factored mistake bound")?;
    check_comparator(v, trace)?;
    let (omega, lambda) = final_factors(trace)?;
    let (m, n) = (trace.header.m as f64, trace.header.n as f64);
    let mut hinge_sum = 0.0;
    for rec in trace.records.iter().filter(|r| r.in_m()) {
        hinge_sum += comparator_hinge(v, &rec.q, &rec.p)?;
    }
    let coupling = kron_mahalanobis(v, &omega, &lambda)?;
    // log det(C⁻¹) = −log det C
    let log_min = (m * -omega.log_det()).min(n * -lambda.log_det());
    Ok(hinge_sum + 2.0 * coupling.max(0.0).sqrt() * (trace.header.r * log_min).max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lemma3 {
    pub lhs: f64,
    pub rhs_m: f64,
    pub rhs_n: f64,
    pub ok: bool,
}

/// Sum of post-update Kronecker forms against the two log-det bounds.
pub fn lemma3_check(trace: &RunTrace) -> Result<Lemma3> {
    if !trace.header.algo.starts_with("f-aroma") {
        return Err(Error::InvalidArgument(format!(
            "the log-det lemma needs a factored trace, got {}",
            trace.header.algo
        )));
    }
    let (omega, lambda) = final_factors(trace)?;
    let mut lhs = 0.0;
    for (i, rec) in trace.records.iter().enumerate().filter(|(_, r)| r.updated) {
        let forms = rec.forms.ok_or_else(|| Error::Trace(format!("round {} has no quadratic forms", i + 1)))?;
        lhs += forms.q_lambda_post * forms.p_omega_post;
    }
    let (m, n, r) = (trace.header.m as f64, trace.header.n as f64, trace.header.r);
    let rhs_m = m * r * -omega.log_det();
    let rhs_n = n * r * -lambda.log_det();
    let ok = lhs <= rhs_m.min(rhs_n) + BOUND_TOLERANCE * lhs.abs().max(1.0);
    Ok(Lemma3 { lhs, rhs_m, rhs_n, ok })
}

/// `mistakes ≤ bound` up to [`BOUND_TOLERANCE`] relative slack.
pub fn bound_holds(mistakes: usize, bound: f64) -> bool {
    let m = mistakes as f64;
    m <= bound + BOUND_TOLERANCE * bound.abs().max(m).max(1.0)
}

/// One verification outcome for a (run, comparator) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub run_id: String,
    pub comparator: String,
    pub mistakes: usize,
    pub margin_updates: usize,
    pub bound_thm1: Option<f64>,
    pub bound_thm2: Option<f64>,
    pub lemma3: Option<Lemma3>,
    pub pass: bool,
}

impl BoundReport {
    /// Evaluates whichever checks apply to the trace's learner.
    pub fn evaluate(run_id: &str, comparator: &str, v: &DenseMatrix, trace: &RunTrace) -> Result<Self> {
        let mistakes = trace.mistakes();
        let (bound_thm1, bound_thm2, lemma3) = match trace.header.algo.as_str() {
            "d-aroma" => (Some(thm1_bound(v, trace)?), None, None),
            "f-aroma-analysis" => (None, Some(thm2_bound(v, trace)?), Some(lemma3_check(trace)?)),
            "f-aroma" => (None, None, Some(lemma3_check(trace)?)),
            other => return Err(Error::InvalidArgument(format!("no mistake bound is defined for {other} traces"))),
        };
        let pass = bound_thm1.is_none_or(|b| bound_holds(mistakes, b))
            && bound_thm2.is_none_or(|b| bound_holds(mistakes, b))
            && lemma3.is_none_or(|l| l.ok);
        Ok(BoundReport {
            run_id: run_id.to_string(),
            comparator: comparator.to_string(),
            mistakes,
            margin_updates: trace.margin_updates(),
            bound_thm1,
            bound_thm2,
            lemma3,
            pass,
        })
    }

    pub const CSV_HEADER: &'static str =
        "run_id,comparator,mistakes,margin_updates,bound_thm1,bound_thm2,lemma3_lhs,lemma3_rhs_m,lemma3_rhs_n,pass";

    pub fn to_csv_row(&self) -> String {
        let num = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.10}"));
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.run_id,
            self.comparator,
            self.mistakes,
            self.margin_updates,
            num(self.bound_thm1),
            num(self.bound_thm2),
            num(self.lemma3.map(|l| l.lhs)),
            num(self.lemma3.map(|l| l.rhs_m)),
            num(self.lemma3.map(|l| l.rhs_n)),
            if self.pass { "pass" } else { "fail" }
        )
    }
}
