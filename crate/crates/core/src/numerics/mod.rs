//! Self-contained dense linear algebra: vectors, column-major matrices,
//! cosine/angle, and a one-sided Jacobi SVD. Sized for shift-matrix work
//! (tens of columns, a few thousand rows), not for general BLAS duty.

mod svd;

pub use svd::{svd, Svd};

use crate::error::{Result, UlxError};

/// Denominator guard for cosine: norms below this are treated as zero and
/// the similarity reported as 0 (maximally uninformative) instead of NaN.
pub const DENOM_GUARD: f64 = 1e-12;

/// Dense real vector of activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(pub(crate) Vec<f64>);

impl Vector {
    /// Validating constructor: nonempty, all finite.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(UlxError::Dimension("vector must be nonempty".into()));
        }
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            return Err(UlxError::Numeric(format!(
                "non-finite element at index {i}"
            )));
        }
        Ok(Vector(values))
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        Vector(values)
    }

    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scaled(&self, c: f64) -> Vector {
        Vector(self.0.iter().map(|x| x * c).collect())
    }

    pub fn add(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.len(), other.len());
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.len(), other.len());
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// self += c * other, in place.
    pub fn axpy(&mut self, c: f64, other: &Vector) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += c * b;
        }
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Dense real matrix, column-major storage (columns are language centers
/// when used as the shift matrix).
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Build from column vectors; all must share a length.
    pub fn from_columns(cols: &[Vector]) -> Result<Self> {
        if cols.is_empty() {
            return Err(UlxError::Dimension("matrix needs at least one column".into()));
        }
        let rows = cols[0].len();
        for (j, c) in cols.iter().enumerate() {
            if c.len() != rows {
                return Err(UlxError::Dimension(format!(
                    "column {j} has length {} but expected {rows}",
                    c.len()
                )));
            }
        }
        let mut data = Vec::with_capacity(rows * cols.len());
        for c in cols {
            data.extend_from_slice(c.as_slice());
        }
        Ok(Mat {
            rows,
            cols: cols.len(),
            data,
        })
    }

    /// Build from row slices (convenience for literals in tests and bindings).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(UlxError::Dimension("matrix must be nonempty".into()));
        }
        let ncols = rows[0].len();
        let mut m = Mat::zeros(rows.len(), ncols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != ncols {
                return Err(UlxError::Dimension(format!(
                    "row {i} has length {} but expected {ncols}",
                    r.len()
                )));
            }
            for (j, &x) in r.iter().enumerate() {
                m.set(i, j, x);
            }
        }
        Ok(m)
    }

    /// Column-major construction from a flat buffer.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(UlxError::Dimension("matrix must be nonempty".into()));
        }
        if data.len() != rows * cols {
            return Err(UlxError::Dimension(format!(
                "buffer length {} != {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, x: f64) {
        self.data[j * self.rows + i] = x;
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn col_vector(&self, j: usize) -> Vector {
        Vector(self.col(j).to_vec())
    }

    pub(crate) fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn as_col_major(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// y = A x
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.cols {
            return Err(UlxError::Dimension(format!(
                "mul_vec: {} columns vs input length {}",
                self.cols,
                x.len()
            )));
        }
        let mut y = vec![0.0; self.rows];
        for (j, &xj) in x.iter().enumerate() {
            let col = self.col(j);
            for (yi, &aij) in y.iter_mut().zip(col) {
                *yi += aij * xj;
            }
        }
        Ok(Vector(y))
    }

    /// y = A^T x
    pub fn transpose_mul_vec(&self, x: &Vector) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(UlxError::Dimension(format!(
                "transpose_mul_vec: {} rows vs input length {}",
                self.rows,
                x.len()
            )));
        }
        let mut y = vec![0.0; self.cols];
        for (j, yj) in y.iter_mut().enumerate() {
            *yj = self
                .col(j)
                .iter()
                .zip(x.as_slice())
                .map(|(a, b)| a * b)
                .sum();
        }
        Ok(y)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Cosine similarity with a zero-norm guard: returns 0 when either norm is
/// below [`DENOM_GUARD`].
pub fn cosine(u: &Vector, v: &Vector) -> Result<f64> {
    if u.len() != v.len() {
        return Err(UlxError::Dimension(format!(
            "cosine: lengths {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let nu = u.norm();
    let nv = v.norm();
    if nu < DENOM_GUARD || nv < DENOM_GUARD {
        return Ok(0.0);
    }
    Ok(u.dot(v) / (nu * nv))
}

/// Angle between vectors in radians, in [0, pi]: the arccos of their cosine,
/// evaluated through Kahan's `2 atan2(|u' - v'|, |u' + v'|)` form on the
/// normalized vectors, which stays accurate where acos(cos) loses half its
/// digits (near 0 and pi). Zero-norm inputs get the cosine convention
/// (similarity 0), i.e. pi/2.
pub fn angle(u: &Vector, v: &Vector) -> Result<f64> {
    if u.len() != v.len() {
        return Err(UlxError::Dimension(format!(
            "angle: lengths {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let nu = u.norm();
    let nv = v.norm();
    if nu < DENOM_GUARD || nv < DENOM_GUARD {
        return Ok(std::f64::consts::FRAC_PI_2);
    }
    let mut diff_sq = 0.0;
    let mut sum_sq = 0.0;
    for (a, b) in u.0.iter().zip(&v.0) {
        let x = a / nu;
        let y = b / nv;
        diff_sq += (x - y) * (x - y);
        sum_sq += (x + y) * (x + y);
    }
    Ok(2.0 * diff_sq.sqrt().atan2(sum_sq.sqrt()))
}
