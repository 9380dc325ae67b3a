//! Small dense linear algebra on `f64`: row-major matrices, vectors, the
//! handful of products the network code needs, and norms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite entry at flat index {index}")]
    NonFinite { index: usize },
    #[error(
        "power iteration did not converge after {iterations} iterations \
         (last estimate {estimate}, residual {residual:e})"
    )]
    NotConverged {
        estimate: f64,
        residual: f64,
        iterations: usize,
        last_iterate: Vec<f64>,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn check_finite(data: &[f64]) -> Result<(), LinalgError> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(LinalgError::NonFinite { index }),
        None => Ok(()),
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dense column vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.is_empty() {
            return Err(LinalgError::Shape("vector must be non-empty".into()));
        }
        check_finite(&data)?;
        Ok(Self(data))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub(crate) fn from_vec_unchecked(data: Vec<f64>) -> Self {
        Self(data)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm_sq(&self) -> f64 {
        norm_sq(&self.0)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl From<f64> for Vector {
    fn from(v: f64) -> Self {
        Self(vec![v])
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::Shape(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(LinalgError::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(LinalgError::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// `self * x`
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if x.len() != self.cols {
            return Err(LinalgError::Shape(format!(
                "matvec: {}x{} times vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok(self.matvec_unchecked(x))
    }

    pub(crate) fn matvec_unchecked(&self, x: &[f64]) -> Vec<f64> {
        self.data.chunks_exact(self.cols).map(|row| dot(row, x)).collect()
    }

    /// `selfᵀ * y`
    pub fn tr_matvec(&self, y: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if y.len() != self.rows {
            return Err(LinalgError::Shape(format!(
                "tr_matvec: ({}x{})ᵀ times vector of length {}",
                self.rows,
                self.cols,
                y.len()
            )));
        }
        Ok(self.tr_matvec_unchecked(y))
    }

    pub(crate) fn tr_matvec_unchecked(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, &yr) in self.data.chunks_exact(self.cols).zip(y) {
            if yr != 0.0 {
                axpy(yr, row, &mut out);
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::Shape(format!(
                "matmul: {}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a != 0.0 {
                    axpy(a, other.row(k), out_row);
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        norm_sq(&self.data)
    }

    /// Gram matrix on the smaller side (`mᵀm` or `mmᵀ`); both share the
    /// non-zero spectrum.
    fn small_gram(&self) -> Matrix {
        if self.cols <= self.rows {
            self.transpose().matmul(self).expect("shapes chain")
        } else {
            self.matmul(&self.transpose()).expect("shapes chain")
        }
    }

    /// Largest singular value by power iteration on the Gram matrix.
    ///
    /// Starts from the normalized all-ones vector and stops once the
    /// eigen-residual `‖Gv − λv‖` drops below `tol·λ`. If the start vector is
    /// annihilated by a non-zero Gram matrix, the iteration restarts from the
    /// standard basis vector with the largest Gram diagonal entry.
    pub fn spectral_norm(&self, tol: f64, max_iter: usize) -> Result<f64, LinalgError> {
        if !(tol > 0.0) {
            return Err(LinalgError::InvalidArgument(format!("tol must be > 0, got {tol}")));
        }
        if max_iter == 0 {
            return Err(LinalgError::InvalidArgument("max_iter must be >= 1".into()));
        }
        let gram = self.small_gram();
        let n = gram.rows;
        let diag_max = (0..n).map(|i| gram.get(i, i)).fold(0.0_f64, f64::max);
        if diag_max == 0.0 {
            return Ok(0.0);
        }
        let ones = vec![1.0 / (n as f64).sqrt(); n];
        match power_iterate(&gram, ones, tol, max_iter)? {
            Some(lambda) => Ok(lambda.max(0.0).sqrt()),
            None => {
                let j = (0..n)
                    .max_by(|&a, &b| gram.get(a, a).total_cmp(&gram.get(b, b)))
                    .unwrap_or(0);
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                match power_iterate(&gram, e, tol, max_iter)? {
                    Some(lambda) => Ok(lambda.max(0.0).sqrt()),
                    None => Ok(0.0),
                }
            }
        }
    }
}

/// Returns `Ok(None)` when the start vector lies in the null space.
fn power_iterate(
    gram: &Matrix,
    mut v: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<Option<f64>, LinalgError> {
    let scale = gram.frobenius_norm_sq().sqrt();
    let mut lambda = 0.0;
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let w = gram.matvec_unchecked(&v);
        let w_norm = norm_sq(&w).sqrt();
        if w_norm <= scale * 1e-14 {
            return Ok(None);
        }
        lambda = dot(&v, &w);
        residual = w
            .iter()
            .zip(&v)
            .map(|(wi, vi)| (wi - lambda * vi).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= tol * lambda {
            return Ok(Some(lambda));
        }
        v = w.into_iter().map(|x| x / w_norm).collect();
    }
    Err(LinalgError::NotConverged {
        estimate: lambda.max(0.0).sqrt(),
        residual,
        iterations: max_iter,
        last_iterate: v,
    })
}

pub fn spectral_norm(m: &Matrix, tol: f64, max_iter: usize) -> Result<f64, LinalgError> {
    m.spectral_norm(tol, max_iter)
}

pub fn frobenius_norm_sq(m: &Matrix) -> f64 {
    m.frobenius_norm_sq()
}

/// Deterministic pairwise (tree) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}
