//! Diagonal AROMA: a bilinear similarity learner with one confidence value
//! per entry of `W`.
//!
//! With `x = q pᵀ` (`p = p⁺ − p⁻`) the update on a round with `qᵀWp < 1` is
//!
//! ```text
//! D  = sum(x ⊙ Σ ⊙ x) + r
//! W' = W + max(0, 1 − qᵀWp)/D · Σ ⊙ x
//! Σ' = Σ − (Σ ⊙ x ⊙ x ⊙ Σ)/D
//! ```
//!
//! Only entries `(k, l)` with `q_k ≠ 0` and `p_l ≠ 0` move, so a step costs
//! `O(|q|₀·|p|₀)` beyond the margin evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{bilinear_score, DenseMatrix, SparseVector};
use crate::trace::{FinalState, RunTrace, StepRecord, TraceHeader};

/// A query with a preferred (`p_plus`) and a less preferred (`p_minus`) object.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub q: SparseVector,
    pub p_plus: SparseVector,
    pub p_minus: SparseVector,
}

impl Triplet {
    pub fn new(q: SparseVector, p_plus: SparseVector, p_minus: SparseVector) -> Self {
        Triplet { q, p_plus, p_minus }
    }

    /// `p⁺ − p⁻`.
    pub fn difference(&self) -> Result<SparseVector> {
        self.p_plus.sub(&self.p_minus)
    }

    pub(crate) fn check_dims(&self, m: usize, n: usize) -> Result<()> {
        if self.q.dim() != m {
            return Err(Error::dims("triplet query", m, self.q.dim()));
        }
        if self.p_plus.dim() != n {
            return Err(Error::dims("triplet positive object", n, self.p_plus.dim()));
        }
        if self.p_minus.dim() != n {
            return Err(Error::dims("triplet negative object", n, self.p_minus.dim()));
        }
        Ok(())
    }
}

/// `max(0, 1 − qᵀW(p⁺ − p⁻))`.
pub fn triplet_hinge(w: &DenseMatrix, t: &Triplet) -> Result<f64> {
    t.check_dims(w.rows(), w.cols())?;
    let p = t.difference()?;
    Ok((1.0 - bilinear_score(&t.q, w, &p)?).max(0.0))
}

/// When a round triggers an update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateMode {
    /// Update whenever `qᵀWp < 1`.
    #[default]
    Margin,
    /// Update only on prediction mistakes, `qᵀWp ≤ 0`.
    Mistake,
}

impl UpdateMode {
    pub fn name(self) -> &'static str {
        match self {
            UpdateMode::Margin => "margin",
            UpdateMode::Mistake => "mistake",
        }
    }

    pub(crate) fn fires(self, margin: f64) -> bool {
        match self {
            UpdateMode::Margin => margin < 1.0,
            UpdateMode::Mistake => margin <= 0.0,
        }
    }
}

impl std::str::FromStr for UpdateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "margin" => Ok(UpdateMode::Margin),
            "mistake" => Ok(UpdateMode::Mistake),
            other => Err(Error::InvalidArgument(format!("unknown update mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalModel {
    pub w: DenseMatrix,
    pub sigma: DenseMatrix,
    pub r: f64,
}

impl DiagonalModel {
    /// `W = 0`, `Σ = 1`.
    pub fn new(m: usize, n: usize, r: f64) -> Result<Self> {
        DiagonalModel::with_sigma_init(m, n, r, 1.0)
    }

    pub fn with_sigma_init(m: usize, n: usize, r: f64, sigma0: f64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::InvalidArgument(format!("regularizer r must be positive, got {r}")));
        }
        if !(sigma0.is_finite() && sigma0 > 0.0) {
            return Err(Error::InvalidArgument(format!("initial confidence must be positive, got {sigma0}")));
        }
        if m == 0 || n == 0 {
            return Err(Error::InvalidArgument("model dimensions must be positive".into()));
        }
        Ok(DiagonalModel { w: DenseMatrix::zeros(m, n), sigma: DenseMatrix::filled(m, n, sigma0), r })
    }

    /// Restores a model from its parts, checking shapes and positivity.
    pub fn from_parts(w: DenseMatrix, sigma: DenseMatrix, r: f64) -> Result<Self> {
        if w.shape() != sigma.shape() {
            return Err(Error::dims("confidence matrix", w.rows() * w.cols(), sigma.rows() * sigma.cols()));
        }
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::InvalidArgument(format!("regularizer r must be positive, got {r}")));
        }
        if sigma.data().iter().any(|&s| !(s > 0.0)) {
            return Err(Error::NotPositiveDefinite("confidence entries must be positive".into()));
        }
        Ok(DiagonalModel { w, sigma, r })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.w.shape()
    }

    /// One round. The model is left untouched when the step fails.
    pub fn step(&mut self, t: &Triplet, mode: UpdateMode) -> Result<StepRecord> {
        let (m, n) = self.shape();
        t.check_dims(m, n)?;
        let p = t.difference()?;
        let q = &t.q;
        let margin = bilinear_score(q, &self.w, &p)?;
        if !mode.fires(margin) {
            return Ok(StepRecord::new(q.clone(), p, margin, false));
        }
        let hinge = (1.0 - margin).max(0.0);

        let mut denom = self.r;
        for (k, qk) in q.iter() {
            for (l, pl) in p.iter() {
                let x = qk * pl;
                denom += x * self.sigma.get(k, l) * x;
            }
        }
        let alpha = hinge / denom;

        let mut changes = Vec::with_capacity(q.nnz() * p.nnz());
        for (k, qk) in q.iter() {
            for (l, pl) in p.iter() {
                let x = qk * pl;
                let s = self.sigma.get(k, l);
                let s_next = s - s * x * x * s / denom;
                if !(s_next > 0.0) || !s_next.is_finite() {
                    return Err(Error::NotPositiveDefinite(format!("confidence entry ({k}, {l}) became {s_next}")));
                }
                changes.push((k, l, alpha * s * x, s_next));
            }
        }
        for (k, l, dw, s_next) in changes {
            self.w.add_at(k, l, dw);
            self.sigma.set(k, l, s_next);
        }

        let mut record = StepRecord::new(q.clone(), p, margin, true);
        record.denominator = Some(denom);
        Ok(record)
    }

    pub fn header(&self, mode: UpdateMode) -> TraceHeader {
        TraceHeader {
            algo: "d-aroma".into(),
            m: self.w.rows(),
            n: self.w.cols(),
            r: self.r,
            update_mode: Some(mode.name().into()),
            seed: None,
        }
    }

    pub fn final_state(&self) -> FinalState {
        FinalState::Diagonal { sigma: self.sigma.clone() }
    }

    /// Folds [`step`](Self::step) over a stream, recording every round.
    pub fn train<'a, I>(&mut self, stream: I, mode: UpdateMode) -> Result<RunTrace>
    where
        I: IntoIterator<Item = &'a Triplet>,
    {
        let mut trace = RunTrace::new(self.header(mode));
        for (i, t) in stream.into_iter().enumerate() {
            let record = self.step(t, mode).map_err(|e| e.at_round(i + 1))?;
            trace.records.push(record);
        }
        trace.final_state = self.final_state();
        Ok(trace)
    }
}
