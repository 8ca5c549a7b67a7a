//! Online learning of bilinear similarities `qᵀWp` from triplet feedback,
//! with adaptive second-order regularization of the matrix model.
//!
//! - [`diagonal`]: per-entry confidences over `W`.
//! - [`factored`]: Kronecker-factored covariance `Ω ⊗ Λ`.
//! - [`arow`]: the vector learner both reduce to.
//! - [`theory`]: executable mistake bounds and divergence identities.
//! - [`data`], [`eval`], [`cli`]: corpora, ranking metrics and the command line.

// Negated comparisons like `!(x > 0.0)` are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arow;
pub mod cli;
pub mod data;
pub mod diagonal;
pub mod error;
pub mod eval;
pub mod factored;
pub mod learner;
pub mod linalg;
pub mod synthetic;
pub mod theory;
pub mod trace;

pub use diagonal::{DiagonalModel, Triplet, UpdateMode};
pub use error::{Error, Result};
pub use factored::{FactoredMode, FactoredModel};
pub use learner::{Algo, Learner, LearnerParams, ModelFile};
pub use linalg::{DenseMatrix, SparseVector};
pub use trace::RunTrace;
