//! Row-major dense matrices and the handful of kernels the networks need.
//!
//! Every kernel is written so that each output element is accumulated in a
//! fixed order that does not depend on how rows are split across threads.
//! The `parallel` feature therefore changes wall-clock time only, never bits.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Rows handed to one rayon task. Small batches stay on the calling thread.
#[cfg(feature = "parallel")]
const ROWS_PER_TASK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn row_vector(v: &[f64]) -> Self {
        Self::from_vec(1, v.len(), v.to_vec())
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
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
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hcat(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "hcat row mismatch");
        let cols = self.cols + other.cols;
        let mut out = Matrix::zeros(self.rows, cols);
        for r in 0..self.rows {
            let dst = out.row_mut(r);
            dst[..self.cols].copy_from_slice(self.row(r));
            dst[self.cols..].copy_from_slice(other.row(r));
        }
        out
    }

    /// Columns `[start, end)` as a new matrix.
    pub fn columns(&self, start: usize, end: usize) -> Matrix {
        assert!(start <= end && end <= self.cols);
        let mut out = Matrix::zeros(self.rows, end - start);
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(&self.row(r)[start..end]);
        }
        out
    }

    /// Rows selected by `indices`, in order.
    pub fn gather_rows(&self, indices: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(indices.len(), self.cols);
        for (dst, &i) in indices.iter().enumerate() {
            out.row_mut(dst).copy_from_slice(self.row(i));
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm_acc(self, other, &mut out);
        out
    }

    pub fn matmul_seq(&self, other: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm_acc_seq(self, other, &mut out);
        out
    }

    /// Column sums, accumulated top to bottom.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            axpy(1.0, self.row(r), &mut out);
        }
        out
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// One output row: `c_row += a_row · b`. Zero entries of `a_row` are skipped,
/// which matters after ReLU.
#[inline]
fn gemm_row(a_row: &[f64], b: &Matrix, c_row: &mut [f64]) {
    let n = b.cols;
    let bd = &b.data;
    for (k, &aik) in a_row.iter().enumerate() {
        if aik != 0.0 {
            axpy(aik, &bd[k * n..(k + 1) * n], c_row);
        }
    }
}

/// `c += a · b`, single-threaded.
pub fn gemm_acc_seq(a: &Matrix, b: &Matrix, c: &mut Matrix) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension mismatch");
    assert_eq!((c.rows, c.cols), (a.rows, b.cols), "gemm output shape");
    let n = b.cols;
    if n == 0 {
        return;
    }
    for (i, c_row) in c.data.chunks_mut(n).enumerate() {
        gemm_row(a.row(i), b, c_row);
    }
}

/// `c += a · b`. Rows of `c` are distributed across threads when the
/// `parallel` feature is enabled; results are bit-identical to
/// [`gemm_acc_seq`].
pub fn gemm_acc(a: &Matrix, b: &Matrix, c: &mut Matrix) {
    #[cfg(feature = "parallel")]
    {
        assert_eq!(a.cols, b.rows, "gemm inner dimension mismatch");
        assert_eq!((c.rows, c.cols), (a.rows, b.cols), "gemm output shape");
        let n = b.cols;
        if n == 0 || a.rows <= ROWS_PER_TASK || rayon::current_num_threads() == 1 {
            return gemm_acc_seq(a, b, c);
        }
        c.data
            .par_chunks_mut(n * ROWS_PER_TASK)
            .enumerate()
            .for_each(|(chunk, block)| {
                for (j, c_row) in block.chunks_mut(n).enumerate() {
                    gemm_row(a.row(chunk * ROWS_PER_TASK + j), b, c_row);
                }
            });
    }
    #[cfg(not(feature = "parallel"))]
    gemm_acc_seq(a, b, c)
}

/// Applies `f` to each row index with a mutable row of `out`; parallel when
/// enabled. Used for row-independent element-wise passes.
pub fn for_each_row_mut<F>(out: &mut Matrix, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let n = out.cols;
    if n == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        if out.rows > ROWS_PER_TASK && rayon::current_num_threads() > 1 {
            out.data
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(r, row)| f(r, row));
            return;
        }
    }
    for (r, row) in out.data.chunks_mut(n).enumerate() {
        f(r, row);
    }
}

/// Largest singular value by power iteration from the starting vector `v`
/// (length `cols`). Returns `(sigma, u, v)`.
pub fn power_iteration(w: &Matrix, v0: &[f64], iterations: usize) -> (f64, Vec<f64>, Vec<f64>) {
    let mut v = v0.to_vec();
    normalize(&mut v);
    let mut u = vec![0.0; w.rows];
    for _ in 0..iterations.max(1) {
        mat_vec(w, &v, &mut u);
        normalize(&mut u);
        mat_t_vec(w, &u, &mut v);
        normalize(&mut v);
    }
    mat_vec(w, &v, &mut u);
    let sigma = norm(&u);
    if sigma > 0.0 {
        u.iter_mut().for_each(|x| *x /= sigma);
    }
    (sigma, u, v)
}

pub fn mat_vec(w: &Matrix, v: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        *o = dot(w.row(r), v);
    }
}

pub fn mat_t_vec(w: &Matrix, u: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for (r, &ur) in u.iter().enumerate() {
        axpy(ur, w.row(r), out);
    }
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}
