//! Factored AROMA: the covariance over `vec(W)` is kept as `Ω ⊗ Λ`, with `Λ`
//! (m × m) on the query side and `Ω` (n × n) on the object side.
//!
//! With `s = qᵀΛq` and `t = pᵀΩp` (pre-update matrices), a round applies
//!
//! ```text
//! W' = W + max(0, 1 − qᵀWp)/(r + s·t) · Λq pᵀΩ
//! Ω' = Ω − s/(m·r + s·t) · Ωp pᵀΩ
//! Λ' = Λ − t/(n·r + s·t) · Λq qᵀΛ
//! ```
//!
//! The analysis mode only updates on mistakes and moves the mean through the
//! post-update covariances: it keeps `A = Λ⁻¹WΩ⁻¹`, adds
//! `hinge/(r + s·t) · q pᵀ` to it, and materializes `W = Λ A Ω` on demand.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::diagonal::Triplet;
use crate::error::{Error, Result};
use crate::linalg::{bilinear_score, DenseMatrix, PdFactor, SparseVector};
use crate::trace::{FinalState, QuadForms, RunTrace, StepRecord, TraceHeader};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactoredMode {
    /// Margin-triggered updates of the mean from the previous covariances.
    #[default]
    Standard,
    /// Mistake-driven updates through the new covariances.
    Analysis,
}

#[derive(Debug, Clone, PartialEq)]
enum Mean {
    Direct(DenseMatrix),
    /// `Λ⁻¹WΩ⁻¹`
    Accumulated(DenseMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactoredModel {
    mean: Mean,
    omega: DenseMatrix,
    lambda: DenseMatrix,
    r: f64,
}

/// Effective regularizers damping the two covariance updates. `None` marks
/// a side that would not move (its partner quadratic form is zero).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveRates {
    /// `m·r / qᵀΛq`, the regularizer of the `Ω` update.
    pub omega: Option<f64>,
    /// `n·r / pᵀΩp`, the regularizer of the `Λ` update.
    pub lambda: Option<f64>,
}

impl FactoredModel {
    /// `W = 0`, `Ω = I`, `Λ = I`.
    pub fn new(m: usize, n: usize, r: f64, mode: FactoredMode) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::InvalidArgument(format!("regularizer r must be positive, got {r}")));
        }
        if m == 0 || n == 0 {
            return Err(Error::InvalidArgument("model dimensions must be positive".into()));
        }
        let zeros = DenseMatrix::zeros(m, n);
        Ok(FactoredModel {
            mean: match mode {
                FactoredMode::Standard => Mean::Direct(zeros),
                FactoredMode::Analysis => Mean::Accumulated(zeros),
            },
            omega: DenseMatrix::identity(n),
            lambda: DenseMatrix::identity(m),
            r,
        })
    }

    /// Restores a model; validates shapes, symmetry and positive definiteness.
    pub fn from_parts(
        w: DenseMatrix,
        omega: DenseMatrix,
        lambda: DenseMatrix,
        r: f64,
        mode: FactoredMode,
    ) -> Result<Self> {
        let (m, n) = w.shape();
        if lambda.shape() != (m, m) {
            return Err(Error::dims("row covariance", m, lambda.rows()));
        }
        if omega.shape() != (n, n) {
            return Err(Error::dims("column covariance", n, omega.rows()));
        }
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::InvalidArgument(format!("regularizer r must be positive, got {r}")));
        }
        for (name, c) in [("Omega", &omega), ("Lambda", &lambda)] {
            if c.asymmetry() > 1e-12 {
                return Err(Error::InvalidArgument(format!("{name} is not symmetric")));
            }
        }
        let omega_f = PdFactor::new(&omega)?;
        let lambda_f = PdFactor::new(&lambda)?;
        let mean = match mode {
            FactoredMode::Standard => Mean::Direct(w),
            FactoredMode::Analysis => {
                let left = lambda_f.solve(&w)?;
                Mean::Accumulated(omega_f.solve(&left.transpose())?.transpose())
            }
        };
        Ok(FactoredModel { mean, omega, lambda, r })
    }

    /// Restores an analysis-mode model from its accumulator `A = Λ⁻¹WΩ⁻¹`
    /// exactly, without re-solving it from `W`.
    pub fn from_accumulator(a: DenseMatrix, omega: DenseMatrix, lambda: DenseMatrix, r: f64) -> Result<Self> {
        let mut model = Self::from_parts(a.clone(), omega, lambda, r, FactoredMode::Standard)?;
        model.mean = Mean::Accumulated(a);
        Ok(model)
    }

    pub fn mode(&self) -> FactoredMode {
        match self.mean {
            Mean::Direct(_) => FactoredMode::Standard,
            Mean::Accumulated(_) => FactoredMode::Analysis,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.lambda.rows(), self.omega.rows())
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn omega(&self) -> &DenseMatrix {
        &self.omega
    }

    pub fn lambda(&self) -> &DenseMatrix {
        &self.lambda
    }

    /// `Λ⁻¹WΩ⁻¹` in analysis mode.
    pub fn accumulator(&self) -> Option<&DenseMatrix> {
        match &self.mean {
            Mean::Accumulated(a) => Some(a),
            Mean::Direct(_) => None,
        }
    }

    /// The mean matrix `W`. Materialized as `Λ A Ω` in analysis mode.
    pub fn weights(&self) -> Cow<'_, DenseMatrix> {
        match &self.mean {
            Mean::Direct(w) => Cow::Borrowed(w),
            Mean::Accumulated(a) => Cow::Owned(
                self.lambda.matmul(a).and_then(|la| la.matmul(&self.omega)).expect("factor shapes are consistent"),
            ),
        }
    }

    /// `qᵀWp` without materializing `W` in analysis mode.
    pub fn score(&self, q: &SparseVector, p: &SparseVector) -> Result<f64> {
        match &self.mean {
            Mean::Direct(w) => bilinear_score(q, w, p),
            Mean::Accumulated(a) => {
                let lq = self.lambda.mul_sparse(q)?;
                let op = self.omega.mul_sparse(p)?;
                let mut acc = 0.0;
                for (k, lk) in lq.iter().enumerate() {
                    if *lk == 0.0 {
                        continue;
                    }
                    let inner: f64 = a.row(k).iter().zip(&op).map(|(x, y)| x * y).sum();
                    acc += lk * inner;
                }
                Ok(acc)
            }
        }
    }

    pub fn effective_rates(&self, t: &Triplet) -> Result<EffectiveRates> {
        let (m, n) = self.shape();
        t.check_dims(m, n)?;
        let p = t.difference()?;
        let s = self.lambda.quadratic_form(&t.q)?;
        let u = self.omega.quadratic_form(&p)?;
        Ok(EffectiveRates {
            omega: (s > 0.0).then(|| m as f64 * self.r / s),
            lambda: (u > 0.0).then(|| n as f64 * self.r / u),
        })
    }

    /// One round. The model is left untouched when the step fails.
    pub fn step(&mut self, t: &Triplet) -> Result<StepRecord> {
        let (m, n) = self.shape();
        t.check_dims(m, n)?;
        let p = t.difference()?;
        let q = &t.q;
        let margin = self.score(q, &p)?;
        let fires = match self.mode() {
            FactoredMode::Standard => margin < 1.0,
            FactoredMode::Analysis => margin <= 0.0,
        };
        if !fires {
            return Ok(StepRecord::new(q.clone(), p, margin, false));
        }
        let hinge = (1.0 - margin).max(0.0);

        let lq = self.lambda.mul_sparse(q)?;
        let op = self.omega.mul_sparse(&p)?;
        let s = q.dot_dense(&lq)?;
        let u = p.dot_dense(&op)?;
        if !(s >= 0.0) || !(u >= 0.0) {
            return Err(Error::NotPositiveDefinite(format!("negative quadratic form (qᵀΛq = {s}, pᵀΩp = {u})")));
        }
        let su = s * u;
        let omega_coef = s / (m as f64 * self.r + su);
        let lambda_coef = u / (n as f64 * self.r + su);
        if !(omega_coef * u < 1.0) || !(lambda_coef * s < 1.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "covariance downdate would leave the cone (s = {s}, t = {u})"
            )));
        }
        check_downdate(&self.omega, &op, omega_coef, "Omega")?;
        check_downdate(&self.lambda, &lq, lambda_coef, "Lambda")?;
        let rate = hinge / (self.r + su);

        match &mut self.mean {
            Mean::Direct(w) => {
                for (k, lk) in lq.iter().enumerate() {
                    if *lk == 0.0 {
                        continue;
                    }
                    let c = rate * lk;
                    for (l, ol) in op.iter().enumerate() {
                        w.add_at(k, l, c * ol);
                    }
                }
            }
            Mean::Accumulated(a) => {
                for (k, qk) in q.iter() {
                    for (l, pl) in p.iter() {
                        a.add_at(k, l, rate * qk * pl);
                    }
                }
            }
        }
        apply_downdate(&mut self.omega, &op, omega_coef);
        apply_downdate(&mut self.lambda, &lq, lambda_coef);
        let forms = QuadForms {
            q_lambda_pre: s,
            p_omega_pre: u,
            q_lambda_post: self.lambda.quadratic_form(q)?,
            p_omega_post: self.omega.quadratic_form(&p)?,
        };

        let mut record = StepRecord::new(q.clone(), p, margin, true);
        record.forms = Some(forms);
        Ok(record)
    }

    pub fn algo_name(&self) -> &'static str {
        match self.mode() {
            FactoredMode::Standard => "f-aroma",
            FactoredMode::Analysis => "f-aroma-analysis",
        }
    }

    pub fn header(&self) -> TraceHeader {
        let (m, n) = self.shape();
        TraceHeader {
            algo: self.algo_name().into(),
            m,
            n,
            r: self.r,
            update_mode: Some(
                match self.mode() {
                    FactoredMode::Standard => "margin",
                    FactoredMode::Analysis => "mistake",
                }
                .into(),
            ),
            seed: None,
        }
    }

    pub fn final_state(&self) -> FinalState {
        FinalState::Factored { omega: self.omega.clone(), lambda: self.lambda.clone() }
    }

    pub fn train<'a, I>(&mut self, stream: I) -> Result<RunTrace>
    where
        I: IntoIterator<Item = &'a Triplet>,
    {
        let mut trace = RunTrace::new(self.header());
        for (i, t) in stream.into_iter().enumerate() {
            let record = self.step(t).map_err(|e| e.at_round(i + 1))?;
            trace.records.push(record);
        }
        trace.final_state = self.final_state();
        Ok(trace)
    }
}

/// Fails if `C − coef · v vᵀ` would lose a positive diagonal entry.
fn check_downdate(c: &DenseMatrix, v: &[f64], coef: f64, name: &str) -> Result<()> {
    for (i, vi) in v.iter().enumerate() {
        let d = c.get(i, i) - coef * (vi * vi);
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::NotPositiveDefinite(format!("{name} diagonal entry {i} would become {d}")));
        }
    }
    Ok(())
}

/// `C ← C − coef · v vᵀ` in place. Only the upper triangle is computed and
/// mirrored, so a symmetric `C` stays exactly symmetric.
fn apply_downdate(c: &mut DenseMatrix, v: &[f64], coef: f64) {
    if coef == 0.0 {
        return;
    }
    for (i, vi) in v.iter().enumerate() {
        if *vi == 0.0 {
            continue;
        }
        for (j, vj) in v.iter().enumerate().skip(i) {
            if *vj != 0.0 {
                let x = c.get(i, j) - coef * (vi * vj);
                c.set(i, j, x);
                c.set(j, i, x);
            }
        }
    }
}
