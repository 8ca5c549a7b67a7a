//! A single handle over every learner the command line can train, and the
//! model file they all serialize to.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::arow::{ArowModel, Covariance};
use crate::diagonal::{DiagonalModel, Triplet, UpdateMode};
use crate::error::{Error, Result};
use crate::factored::{FactoredMode, FactoredModel};
use crate::linalg::{bilinear_score, unvec, vec, vec_outer, DenseMatrix};
use crate::trace::{FinalState, StepRecord, TraceHeader};

/// Largest `m·n` for which the full-covariance vectorized learner is allowed.
pub const AROW_VEC_MAX_DIM: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    DAroma,
    FAroma,
    FAromaAnalysis,
    ArowVec,
    Pa,
    Identity,
}

impl Algo {
    pub const ALL: [Algo; 6] =
        [Algo::DAroma, Algo::FAroma, Algo::FAromaAnalysis, Algo::ArowVec, Algo::Pa, Algo::Identity];

    pub fn name(self) -> &'static str {
        match self {
            Algo::DAroma => "d-aroma",
            Algo::FAroma => "f-aroma",
            Algo::FAromaAnalysis => "f-aroma-analysis",
            Algo::ArowVec => "arow-vec",
            Algo::Pa => "pa",
            Algo::Identity => "identity",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algo::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown algorithm '{s}'")))
    }
}

/// Passive-aggressive bilinear baseline: `W += τ q pᵀ` with
/// `τ = min(C, hinge / ‖q pᵀ‖²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PaModel {
    pub w: DenseMatrix,
    pub c: f64,
}

impl PaModel {
    pub fn new(m: usize, n: usize, c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidArgument(format!("aggressiveness C must be positive, got {c}")));
        }
        Ok(PaModel { w: DenseMatrix::zeros(m, n), c })
    }

    pub fn step(&mut self, t: &Triplet) -> Result<StepRecord> {
        t.check_dims(self.w.rows(), self.w.cols())?;
        let p = t.difference()?;
        let margin = bilinear_score(&t.q, &self.w, &p)?;
        let hinge = (1.0 - margin).max(0.0);
        let norm = t.q.norm_sq() * p.norm_sq();
        let updated = hinge > 0.0 && norm > 0.0;
        if updated {
            let tau = self.c.min(hinge / norm);
            for (k, qk) in t.q.iter() {
                for (l, pl) in p.iter() {
                    self.w.add_at(k, l, tau * qk * pl);
                }
            }
        }
        Ok(StepRecord::new(t.q.clone(), p, margin, updated))
    }
}

/// Full-covariance AROW on `vec(q pᵀ)` with label `+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArowVecModel {
    pub m: usize,
    pub n: usize,
    pub inner: ArowModel,
}

impl ArowVecModel {
    pub fn new(m: usize, n: usize, r: f64) -> Result<Self> {
        if m * n > AROW_VEC_MAX_DIM {
            return Err(Error::InvalidArgument(format!(
                "arow-vec keeps an (mn)² covariance; m·n = {} exceeds {AROW_VEC_MAX_DIM}",
                m * n
            )));
        }
        Ok(ArowVecModel { m, n, inner: ArowModel::full(m * n, r)? })
    }

    pub fn step(&mut self, t: &Triplet) -> Result<StepRecord> {
        t.check_dims(self.m, self.n)?;
        let p = t.difference()?;
        let x = vec_outer(&t.q, &p);
        let margin = self.inner.margin(&x)?;
        let step = self.inner.update(&x, 1.0)?;
        Ok(StepRecord::new(t.q.clone(), p, margin, step.updated))
    }

    pub fn weights(&self) -> DenseMatrix {
        unvec(&self.inner.w, self.m, self.n).expect("mean has m·n entries")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Learner {
    Diagonal(DiagonalModel, UpdateMode),
    Factored(FactoredModel),
    ArowVec(ArowVecModel),
    Pa(PaModel),
    Identity(DenseMatrix),
}

/// Learner-specific knobs beyond the dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerParams {
    pub r: f64,
    pub update_mode: UpdateMode,
    /// Aggressiveness cap of the passive-aggressive baseline.
    pub pa_c: f64,
}

impl Default for LearnerParams {
    fn default() -> Self {
        LearnerParams { r: 1.0, update_mode: UpdateMode::Margin, pa_c: 0.1 }
    }
}

impl Learner {
    /// A freshly initialized learner.
    pub fn new(algo: Algo, m: usize, n: usize, params: LearnerParams) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidArgument("model dimensions must be positive".into()));
        }
        Ok(match algo {
            Algo::DAroma => Learner::Diagonal(DiagonalModel::new(m, n, params.r)?, params.update_mode),
            Algo::FAroma => Learner::Factored(FactoredModel::new(m, n, params.r, FactoredMode::Standard)?),
            Algo::FAromaAnalysis => Learner::Factored(FactoredModel::new(m, n, params.r, FactoredMode::Analysis)?),
            Algo::ArowVec => Learner::ArowVec(ArowVecModel::new(m, n, params.r)?),
            Algo::Pa => Learner::Pa(PaModel::new(m, n, params.pa_c)?),
            Algo::Identity => Learner::Identity(DenseMatrix::eye(m, n)),
        })
    }

    pub fn algo(&self) -> Algo {
        match self {
            Learner::Diagonal(..) => Algo::DAroma,
            Learner::Factored(f) => match f.mode() {
                FactoredMode::Standard => Algo::FAroma,
                FactoredMode::Analysis => Algo::FAromaAnalysis,
            },
            Learner::ArowVec(_) => Algo::ArowVec,
            Learner::Pa(_) => Algo::Pa,
            Learner::Identity(_) => Algo::Identity,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Learner::Diagonal(d, _) => d.shape(),
            Learner::Factored(f) => f.shape(),
            Learner::ArowVec(a) => (a.m, a.n),
            Learner::Pa(p) => p.w.shape(),
            Learner::Identity(w) => w.shape(),
        }
    }

    pub fn step(&mut self, t: &Triplet) -> Result<StepRecord> {
        match self {
            Learner::Diagonal(d, mode) => d.step(t, *mode),
            Learner::Factored(f) => f.step(t),
            Learner::ArowVec(a) => a.step(t),
            Learner::Pa(p) => p.step(t),
            Learner::Identity(w) => {
                t.check_dims(w.rows(), w.cols())?;
                let p = t.difference()?;
                let margin = bilinear_score(&t.q, w, &p)?;
                Ok(StepRecord::new(t.q.clone(), p, margin, false))
            }
        }
    }

    /// Mean similarity matrix used for scoring.
    pub fn weights(&self) -> Cow<'_, DenseMatrix> {
        match self {
            Learner::Diagonal(d, _) => Cow::Borrowed(&d.w),
            Learner::Factored(f) => f.weights(),
            Learner::ArowVec(a) => Cow::Owned(a.weights()),
            Learner::Pa(p) => Cow::Borrowed(&p.w),
            Learner::Identity(w) => Cow::Borrowed(w),
        }
    }

    pub fn trace_header(&self, seed: Option<u64>) -> TraceHeader {
        let mut header = match self {
            Learner::Diagonal(d, mode) => d.header(*mode),
            Learner::Factored(f) => f.header(),
            Learner::ArowVec(a) => TraceHeader {
                algo: Algo::ArowVec.name().into(),
                m: a.m,
                n: a.n,
                r: a.inner.r,
                update_mode: Some("margin".into()),
                seed: None,
            },
            Learner::Pa(p) => TraceHeader {
                algo: Algo::Pa.name().into(),
                m: p.w.rows(),
                n: p.w.cols(),
                r: p.c,
                update_mode: Some("margin".into()),
                seed: None,
            },
            Learner::Identity(w) => TraceHeader {
                algo: Algo::Identity.name().into(),
                m: w.rows(),
                n: w.cols(),
                r: 0.0,
                update_mode: None,
                seed: None,
            },
        };
        header.seed = seed;
        header
    }

    pub fn final_state(&self) -> FinalState {
        match self {
            Learner::Diagonal(d, _) => d.final_state(),
            Learner::Factored(f) => f.final_state(),
            _ => FinalState::None,
        }
    }

    pub fn to_model_file(&self) -> ModelFile {
        let (m, n) = self.shape();
        match self {
            Learner::Diagonal(d, mode) => {
                ModelFile::DAroma { m, n, r: d.r, update_mode: *mode, w: d.w.clone(), sigma: d.sigma.clone() }
            }
            Learner::Factored(f) => ModelFile::FAroma {
                m,
                n,
                r: f.r(),
                mode: f.mode(),
                w: f.weights().into_owned(),
                omega: f.omega().clone(),
                lambda: f.lambda().clone(),
                accumulator: f.accumulator().cloned(),
            },
            Learner::ArowVec(a) => ModelFile::ArowVec {
                m,
                n,
                r: a.inner.r,
                w: a.weights(),
                sigma: match &a.inner.sigma {
                    Covariance::Full(s) => s.clone(),
                    Covariance::Diagonal(_) => unreachable!("arow-vec keeps a full covariance"),
                },
            },
            Learner::Pa(p) => ModelFile::Pa { m, n, c: p.c, w: p.w.clone() },
            Learner::Identity(w) => ModelFile::Identity { m, n, w: w.clone() },
        }
    }
}

/// On-disk model: a variant tag plus matrices as nested row-major arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant")]
pub enum ModelFile {
    #[serde(rename = "d-aroma")]
    DAroma {
        m: usize,
        n: usize,
        r: f64,
        update_mode: UpdateMode,
        #[serde(rename = "W")]
        w: DenseMatrix,
        #[serde(rename = "Sigma")]
        sigma: DenseMatrix,
    },
    #[serde(rename = "f-aroma")]
    FAroma {
        m: usize,
        n: usize,
        r: f64,
        mode: FactoredMode,
        #[serde(rename = "W")]
        w: DenseMatrix,
        #[serde(rename = "Omega")]
        omega: DenseMatrix,
        #[serde(rename = "Lambda")]
        lambda: DenseMatrix,
        /// Analysis-mode accumulator, kept so reloading is exact.
        #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
        accumulator: Option<DenseMatrix>,
    },
    #[serde(rename = "arow-vec")]
    ArowVec {
        m: usize,
        n: usize,
        r: f64,
        #[serde(rename = "W")]
        w: DenseMatrix,
        #[serde(rename = "Sigma")]
        sigma: DenseMatrix,
    },
    #[serde(rename = "pa")]
    Pa {
        m: usize,
        n: usize,
        c: f64,
        #[serde(rename = "W")]
        w: DenseMatrix,
    },
    #[serde(rename = "identity")]
    Identity {
        m: usize,
        n: usize,
        #[serde(rename = "W")]
        w: DenseMatrix,
    },
}

impl ModelFile {
    pub fn weights(&self) -> &DenseMatrix {
        match self {
            ModelFile::DAroma { w, .. }
            | ModelFile::FAroma { w, .. }
            | ModelFile::ArowVec { w, .. }
            | ModelFile::Pa { w, .. }
            | ModelFile::Identity { w, .. } => w,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            ModelFile::DAroma { m, n, .. }
            | ModelFile::FAroma { m, n, .. }
            | ModelFile::ArowVec { m, n, .. }
            | ModelFile::Pa { m, n, .. }
            | ModelFile::Identity { m, n, .. } => (*m, *n),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses and validates a model document.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.weights().shape() != file.shape() {
            return Err(Error::dims("model W shape", file.shape().0 * file.shape().1, file.weights().data().len()));
        }
        file.clone().into_learner()?;
        Ok(file)
    }

    /// Rebuilds a learner that can resume training.
    pub fn into_learner(self) -> Result<Learner> {
        Ok(match self {
            ModelFile::DAroma { r, update_mode, w, sigma, .. } => {
                Learner::Diagonal(DiagonalModel::from_parts(w, sigma, r)?, update_mode)
            }
            ModelFile::FAroma { r, mode, w, omega, lambda, accumulator, .. } => {
                Learner::Factored(match (mode, accumulator) {
                    (FactoredMode::Analysis, Some(a)) => {
                        if a.shape() != w.shape() {
                            return Err(Error::dims("accumulator columns", w.cols(), a.cols()));
                        }
                        FactoredModel::from_accumulator(a, omega, lambda, r)?
                    }
                    (FactoredMode::Standard, Some(_)) => {
                        return Err(Error::InvalidArgument("standard-mode model carries an accumulator".into()))
                    }
                    (_, None) => FactoredModel::from_parts(w, omega, lambda, r, mode)?,
                })
            }
            ModelFile::ArowVec { m, n, r, w, sigma } => {
                let mut model = ArowVecModel::new(m, n, r)?;
                if sigma.shape() != (m * n, m * n) {
                    return Err(Error::dims("arow-vec covariance", m * n, sigma.rows()));
                }
                model.inner.w = vec(&w);
                model.inner.sigma = Covariance::Full(sigma);
                Learner::ArowVec(model)
            }
            ModelFile::Pa { c, w, .. } => {
                let mut model = PaModel::new(w.rows(), w.cols(), c)?;
                model.w = w;
                Learner::Pa(model)
            }
            ModelFile::Identity { w, .. } => Learner::Identity(w),
        })
    }
}
