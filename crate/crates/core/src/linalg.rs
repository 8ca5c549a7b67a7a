//! Dense and sparse kernels shared by every learner.
//!
//! Matrices are dense and row-major. Vectors fed to the learners (queries,
//! objects, object differences) are sparse, so the bilinear form `qᵀWp`
//! and the rank-one quantities built from `q pᵀ` only ever touch the
//! `|q|₀ · |p|₀` entries in the support of the outer product.
//!
//! `vec` stacks columns: entry `(k, l)` of an `m × n` matrix lands at
//! position `l·m + k`. Under that convention `vec(W)·vec(q pᵀ) = qᵀWp` and a
//! matrix-variate normal with row covariance `Λ` (m × m) and column
//! covariance `Ω` (n × n) has `vec` covariance `Ω ⊗ Λ`.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A sparse vector stored as strictly increasing `(index, value)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SparseRepr", into = "SparseRepr")]
pub struct SparseVector {
    dim: usize,
    indices: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SparseRepr {
    dim: usize,
    entries: Vec<(usize, f64)>,
}

impl TryFrom<SparseRepr> for SparseVector {
    type Error = Error;

    fn try_from(repr: SparseRepr) -> Result<Self> {
        SparseVector::new(repr.dim, repr.entries)
    }
}

impl From<SparseVector> for SparseRepr {
    fn from(v: SparseVector) -> Self {
        SparseRepr { dim: v.dim, entries: v.indices.into_iter().zip(v.values).collect() }
    }
}

impl SparseVector {
    /// Builds a vector from `(index, value)` pairs. Indices must be strictly
    /// increasing and below `dim`; explicit zeros are dropped.
    pub fn new(dim: usize, entries: Vec<(usize, f64)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("vector dimension must be positive".into()));
        }
        let mut indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut last: Option<usize> = None;
        for (idx, val) in entries {
            if idx >= dim {
                return Err(Error::InvalidArgument(format!("index {idx} out of range for dimension {dim}")));
            }
            if let Some(prev) = last {
                if idx <= prev {
                    return Err(Error::InvalidArgument(format!(
                        "indices must be strictly increasing ({prev} then {idx})"
                    )));
                }
            }
            if !val.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite value at index {idx}")));
            }
            last = Some(idx);
            if val != 0.0 {
                indices.push(idx);
                values.push(val);
            }
        }
        Ok(SparseVector { dim, indices, values })
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        SparseVector::new(dim, Vec::new())
    }

    pub fn from_dense(values: &[f64]) -> Result<Self> {
        SparseVector::new(values.len(), values.iter().copied().enumerate().collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored (nonzero) entries.
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_zero(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn dot_dense(&self, dense: &[f64]) -> Result<f64> {
        if dense.len() != self.dim {
            return Err(Error::dims("sparse-dense dot", self.dim, dense.len()));
        }
        Ok(self.iter().map(|(i, v)| v * dense[i]).sum())
    }

    /// `self − other`, with exact cancellations removed from the support.
    pub fn sub(&self, other: &SparseVector) -> Result<SparseVector> {
        if self.dim != other.dim {
            return Err(Error::dims("sparse difference", self.dim, other.dim));
        }
        let (a, b) = (&self.indices, &other.indices);
        let mut indices = Vec::with_capacity(a.len() + b.len());
        let mut values = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            let (idx, val) = if j == b.len() || (i < a.len() && a[i] < b[j]) {
                i += 1;
                (a[i - 1], self.values[i - 1])
            } else if i == a.len() || b[j] < a[i] {
                j += 1;
                (b[j - 1], -other.values[j - 1])
            } else {
                i += 1;
                j += 1;
                (a[i - 1], self.values[i - 1] - other.values[j - 1])
            };
            if val != 0.0 {
                indices.push(idx);
                values.push(val);
            }
        }
        Ok(SparseVector { dim: self.dim, indices, values })
    }

    /// Multiplies every stored value by `factor`; zero factors clear the vector.
    pub fn scaled(&self, factor: f64) -> SparseVector {
        if factor == 0.0 {
            return SparseVector { dim: self.dim, indices: Vec::new(), values: Vec::new() };
        }
        SparseVector {
            dim: self.dim,
            indices: self.indices.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Dense row-major matrix with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<Vec<Vec<f64>>> for DenseMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        DenseMatrix::from_rows(&rows)
    }
}

impl From<DenseMatrix> for Vec<Vec<f64>> {
    fn from(m: DenseMatrix) -> Self {
        m.data.chunks(m.cols).map(<[f64]>::to_vec).collect()
    }
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        DenseMatrix { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        DenseMatrix::eye(n, n)
    }

    /// Ones on the main diagonal, zeros elsewhere; rectangular shapes allowed.
    pub fn eye(rows: usize, cols: usize) -> Self {
        let mut m = DenseMatrix::zeros(rows, cols);
        for i in 0..rows.min(cols) {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument("matrix dimensions must be positive".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::dims("row-major matrix data", rows * cols, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("matrix entries must be finite".into()));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::dims("ragged matrix row", cols, bad.len()));
        }
        DenseMatrix::from_row_major(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, delta: f64) {
        self.data[i * self.cols + j] += delta;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::dims("matrix product", self.cols, other.rows));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&self, factor: f64) -> DenseMatrix {
        DenseMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * factor).collect() }
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.shape() != other.shape() {
            return Err(Error::dims("matrix difference", self.data.len(), other.data.len()));
        }
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    /// Largest `|A − Aᵀ|` entry; zero for exactly symmetric matrices.
    pub fn asymmetry(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Replaces the matrix by `(A + Aᵀ)/2`.
    pub fn symmetrize(&mut self) {
        debug_assert_eq!(self.rows, self.cols);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let avg = 0.5 * (self.get(i, j) + self.get(j, i));
                self.set(i, j, avg);
                self.set(j, i, avg);
            }
        }
    }

    /// `A x` for sparse `x`, visiting only the columns in the support of `x`.
    pub fn mul_sparse(&self, x: &SparseVector) -> Result<Vec<f64>> {
        if x.dim() != self.cols {
            return Err(Error::dims("matrix-vector product", self.cols, x.dim()));
        }
        let mut out = vec![0.0; self.rows];
        for (i, slot) in out.iter_mut().enumerate() {
            let row = self.row(i);
            *slot = x.iter().map(|(j, v)| row[j] * v).sum();
        }
        Ok(out)
    }

    /// `xᵀ A x` for sparse `x`, visiting the `|x|₀²` support entries.
    pub fn quadratic_form(&self, x: &SparseVector) -> Result<f64> {
        if self.rows != self.cols {
            return Err(Error::dims("quadratic form (square matrix)", self.rows, self.cols));
        }
        if x.dim() != self.rows {
            return Err(Error::dims("quadratic form", self.rows, x.dim()));
        }
        let mut acc = 0.0;
        for (i, xi) in x.iter() {
            let row = self.row(i);
            let inner: f64 = x.iter().map(|(j, xj)| row[j] * xj).sum();
            acc += xi * inner;
        }
        Ok(acc)
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_nalgebra(m: &DMatrix<f64>) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.set(i, j, m[(i, j)]);
            }
        }
        out
    }
}

/// Cholesky factor of a symmetric positive definite matrix.
pub struct PdFactor {
    chol: Cholesky<f64, Dyn>,
    n: usize,
}

impl PdFactor {
    pub fn new(a: &DenseMatrix) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::dims("positive definite factorization", a.rows(), a.cols()));
        }
        let chol = Cholesky::new(a.to_nalgebra()).ok_or_else(|| {
            Error::NotPositiveDefinite(format!("{}×{} Cholesky factorization failed", a.rows(), a.cols()))
        })?;
        Ok(PdFactor { chol, n: a.rows() })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `log det A`.
    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..self.n).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    /// `A⁻¹ B`.
    pub fn solve(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if b.rows() != self.n {
            return Err(Error::dims("positive definite solve", self.n, b.rows()));
        }
        Ok(DenseMatrix::from_nalgebra(&self.chol.solve(&b.to_nalgebra())))
    }

    pub fn inverse(&self) -> DenseMatrix {
        DenseMatrix::from_nalgebra(&self.chol.inverse())
    }
}

/// Smallest eigenvalue of the symmetric part of `a`.
pub fn min_eigenvalue(a: &DenseMatrix) -> Result<f64> {
    if a.rows() != a.cols() {
        return Err(Error::dims("eigenvalues (square matrix)", a.rows(), a.cols()));
    }
    let mut sym = a.clone();
    sym.symmetrize();
    let eig = SymmetricEigen::new(sym.to_nalgebra());
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

fn check_bilinear(q: &SparseVector, w: &DenseMatrix, p: &SparseVector) -> Result<()> {
    if q.dim() != w.rows() {
        return Err(Error::dims("bilinear score (query)", w.rows(), q.dim()));
    }
    if p.dim() != w.cols() {
        return Err(Error::dims("bilinear score (object)", w.cols(), p.dim()));
    }
    Ok(())
}

/// `qᵀWp`, iterating over nonzeros of `q` (outer) and `p` (inner).
pub fn bilinear_score(q: &SparseVector, w: &DenseMatrix, p: &SparseVector) -> Result<f64> {
    bilinear_score_counted(q, w, p).map(|(score, _)| score)
}

/// Same as [`bilinear_score`], also returning the number of `(k, l)` pairs visited.
pub fn bilinear_score_counted(q: &SparseVector, w: &DenseMatrix, p: &SparseVector) -> Result<(f64, usize)> {
    check_bilinear(q, w, p)?;
    let mut acc = 0.0;
    let mut visits = 0;
    for (k, qk) in q.iter() {
        let row = w.row(k);
        let mut inner = 0.0;
        for (l, pl) in p.iter() {
            inner += row[l] * pl;
            visits += 1;
        }
        acc += qk * inner;
    }
    Ok((acc, visits))
}

/// Column-stacking of `w` into a vector of length `rows·cols`.
pub fn vec(w: &DenseMatrix) -> Vec<f64> {
    let (m, n) = w.shape();
    let mut out = Vec::with_capacity(m * n);
    for l in 0..n {
        for k in 0..m {
            out.push(w.get(k, l));
        }
    }
    out
}

/// Inverse of [`vec`].
pub fn unvec(v: &[f64], rows: usize, cols: usize) -> Result<DenseMatrix> {
    if v.len() != rows * cols {
        return Err(Error::dims("unvec", rows * cols, v.len()));
    }
    let mut out = DenseMatrix::zeros(rows, cols);
    for l in 0..cols {
        for k in 0..rows {
            out.set(k, l, v[l * rows + k]);
        }
    }
    Ok(out)
}

/// Dense rank-one matrix `q pᵀ`.
pub fn outer(q: &SparseVector, p: &SparseVector) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(q.dim(), p.dim());
    for (k, qk) in q.iter() {
        for (l, pl) in p.iter() {
            out.set(k, l, qk * pl);
        }
    }
    out
}

/// `vec(q pᵀ)` as a sparse vector of dimension `m·n`.
pub fn vec_outer(q: &SparseVector, p: &SparseVector) -> SparseVector {
    let m = q.dim();
    let mut entries = Vec::with_capacity(q.nnz() * p.nnz());
    for (l, pl) in p.iter() {
        for (k, qk) in q.iter() {
            entries.push((l * m + k, qk * pl));
        }
    }
    // products of nonzero finite values can still underflow to zero; `new` drops those
    SparseVector::new(m * p.dim(), entries).expect("outer product support is well formed")
}

/// `(qᵀΛq)(pᵀΩp)`, the quadratic form of `vec(q pᵀ)` under covariance `Ω ⊗ Λ`.
pub fn kron_quadratic_form(
    q: &SparseVector,
    lambda: &DenseMatrix,
    p: &SparseVector,
    omega: &DenseMatrix,
) -> Result<f64> {
    let q_form = lambda.quadratic_form(q)?;
    let p_form = omega.quadratic_form(p)?;
    Ok(q_form * p_form)
}
