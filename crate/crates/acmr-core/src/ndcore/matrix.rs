//! Dense row-major matrix of `f64` values.
//!
//! This is the single numeric container used throughout the crate. Values are
//! validated to be finite at construction, and every operation that could
//! produce a non-finite entry checks its output, so a `Matrix` in hand always
//! satisfies the finiteness invariant.
//!
//! The three O(n^3) product kernels (`matmul`, `matmul_nt`, `matmul_tn`) are
//! parallelized over output rows when the `parallel` feature is enabled. Each
//! output row is produced by exactly one task with a fixed inner iteration
//! order, so the parallel result is bit-identical to the sequential one
//! regardless of thread count.

use crate::error::{CoreError, Result};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this much multiply-accumulate work the product kernels stay on the
/// current thread; fork/join overhead dominates for tiny operands.
const PAR_WORK_THRESHOLD: usize = 32_768;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from row-major data, validating length and finiteness.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CoreError::shape(
                "Matrix::from_vec",
                format!("{} values for {rows}x{cols}", rows * cols),
                format!("{}", data.len()),
            ));
        }
        let m = Matrix { rows, cols, data };
        m.ensure_finite("Matrix::from_vec")?;
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(CoreError::shape(
                    "Matrix::from_rows",
                    format!("{c} columns"),
                    format!("{} in row {i}", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Matrix::from_vec(r, c, data)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Matrix::from_vec(rows, cols, vec![value; rows * cols])
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Raw mutable access for optimizers and the gradient checker. The caller
    /// is responsible for keeping entries finite.
    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(CoreError::non_finite(context))
        }
    }

    fn check_same_shape(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(CoreError::shape(
                op,
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(())
    }

    /// `self * rhs`. Dispatches to the parallel kernel when available and the
    /// operand is large enough to pay for it.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(CoreError::shape(
                "matmul",
                format!("lhs cols = rhs rows ({})", self.cols),
                format!("{}", rhs.rows),
            ));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        let work = self.rows * self.cols * rhs.cols;
        if work >= PAR_WORK_THRESHOLD {
            par_rows(&mut out, |i, out_row| {
                mm_row(self.row(i), rhs, out_row);
            });
        } else {
            for i in 0..self.rows {
                let row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                mm_row(&self.data[i * self.cols..(i + 1) * self.cols], rhs, row);
            }
        }
        Ok(out)
    }

    /// Sequential reference product, always single-threaded. Kept public so
    /// the bench suite can compare it against the dispatching `matmul`.
    pub fn matmul_seq(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(CoreError::shape(
                "matmul_seq",
                format!("lhs cols = rhs rows ({})", self.cols),
                format!("{}", rhs.rows),
            ));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            mm_row(&self.data[i * self.cols..(i + 1) * self.cols], rhs, row);
        }
        Ok(out)
    }

    /// `self * rhs^T`.
    pub fn matmul_nt(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.cols {
            return Err(CoreError::shape(
                "matmul_nt",
                format!("lhs cols = rhs cols ({})", self.cols),
                format!("{}", rhs.cols),
            ));
        }
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        let work = self.rows * self.cols * rhs.rows;
        let kernel = |i: usize, out_row: &mut [f64]| {
            let a_row = self.row(i);
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = rhs.row(j);
                let mut acc = 0.0;
                for (x, y) in a_row.iter().zip(b_row) {
                    acc += x * y;
                }
                *o = acc;
            }
        };
        if work >= PAR_WORK_THRESHOLD {
            par_rows(&mut out, kernel);
        } else {
            for i in 0..self.rows {
                let (r, c) = (i, rhs.rows);
                let row = &mut out.data[r * c..(r + 1) * c];
                kernel(i, row);
            }
        }
        Ok(out)
    }

    /// `self^T * rhs`.
    pub fn matmul_tn(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(CoreError::shape(
                "matmul_tn",
                format!("lhs rows = rhs rows ({})", self.rows),
                format!("{}", rhs.rows),
            ));
        }
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        let work = self.rows * self.cols * rhs.cols;
        let kernel = |i: usize, out_row: &mut [f64]| {
            // out[i][j] = sum_k self[k][i] * rhs[k][j]
            for k in 0..self.rows {
                let aki = self.data[k * self.cols + i];
                let b_row = rhs.row(k);
                for (o, y) in out_row.iter_mut().zip(b_row) {
                    *o += aki * y;
                }
            }
        };
        if work >= PAR_WORK_THRESHOLD {
            par_rows(&mut out, kernel);
        } else {
            for i in 0..self.cols {
                let c = rhs.cols;
                let row = &mut out.data[i * c..(i + 1) * c];
                kernel(i, row);
            }
        }
        Ok(out)
    }

    /// Adds `bias` to every row.
    pub fn add_row_broadcast(&self, bias: &[f64]) -> Result<Matrix> {
        if bias.len() != self.cols {
            return Err(CoreError::shape(
                "add_row_broadcast",
                format!("{} bias entries", self.cols),
                format!("{}", bias.len()),
            ));
        }
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(out.cols) {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn add_scaled_assign(&mut self, other: &Matrix, scale: f64) -> Result<()> {
        self.check_same_shape(other, "add_scaled_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "sub")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "hadamard")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Sum of each column; used for bias gradients.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for row in self.data.chunks_exact(self.cols) {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums
    }

    /// Horizontal concatenation `[self | rhs]`.
    pub fn hcat(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(CoreError::shape(
                "hcat",
                format!("{} rows", self.rows),
                format!("{}", rhs.rows),
            ));
        }
        let cols = self.cols + rhs.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(rhs.row(r));
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Splits off the column range `[from, to)` into a new matrix.
    pub fn slice_cols(&self, from: usize, to: usize) -> Result<Matrix> {
        if from > to || to > self.cols {
            return Err(CoreError::shape(
                "slice_cols",
                format!("range within 0..{}", self.cols),
                format!("{from}..{to}"),
            ));
        }
        let cols = to - from;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[from..to]);
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Gathers the given rows into a new matrix, in order.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(CoreError::shape(
                    "gather_rows",
                    format!("row index < {}", self.rows),
                    format!("{i}"),
                ));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        })
    }
}

/// One dot-product row of a general product: `out_row += a_row * b`.
#[inline]
fn mm_row(a_row: &[f64], b: &Matrix, out_row: &mut [f64]) {
    for (k, &aik) in a_row.iter().enumerate() {
        let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
        for (o, &bkj) in out_row.iter_mut().zip(b_row) {
            *o += aik * bkj;
        }
    }
}

/// Applies `f` to every output row. Parallel when the feature is on; the
/// per-row computation is identical either way, so results are bit-exact
/// across thread counts.
#[cfg(feature = "parallel")]
fn par_rows(out: &mut Matrix, f: impl Fn(usize, &mut [f64]) + Sync) {
    let cols = out.cols;
    out.data
        .par_chunks_mut(cols)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

#[cfg(not(feature = "parallel"))]
fn par_rows(out: &mut Matrix, f: impl Fn(usize, &mut [f64]) + Sync) {
    let cols = out.cols;
    for (i, row) in out.data.chunks_exact_mut(cols).enumerate() {
        f(i, row);
    }
}
