//! Dense row-major matrices with SVD-based rank queries and LU determinants.
//!
//! Every rank decision in the crate goes through [`numerical_rank`], which counts
//! singular values above a tolerance. The default tolerance is
//! `max(rows, cols) * eps * sigma_max`.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Dense real matrix stored row-major. Entries are finite and both dimensions are positive.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "entry ({}, {}) is {}",
                pos / cols,
                pos % cols,
                data[pos]
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::shape("ragged rows"));
        }
        Self::from_row_major(r, c, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
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

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        let n = diag.len();
        let mut data = vec![0.0; n * n];
        for (i, d) in diag.iter().enumerate() {
            data[i * n + i] = *d;
        }
        Self::from_row_major(n, n, data)
    }

    /// Builds a matrix from a generator. Panics if the generator yields a non-finite value.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_row_major(rows, cols, data).expect("generator produced an invalid matrix")
    }

    /// Internal constructor for results of arithmetic on finite inputs; skips the
    /// finiteness scan so that overflow shows up downstream instead of panicking here.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Matrix::from_raw(self.cols, self.rows, out)
    }

    /// `self * rhs`
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = vec![0.0; self.rows * rhs.cols];
        for i in 0..self.rows {
            let out_row = &mut out[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let rhs_row = rhs.row(k);
                for (o, b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix::from_raw(self.rows, rhs.cols, out))
    }

    /// `selfᵀ * rhs` without materializing the transpose.
    pub fn t_matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(Error::shape(format!(
                "cannot multiply ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = vec![0.0; self.cols * rhs.cols];
        for k in 0..self.rows {
            let lhs_row = self.row(k);
            let rhs_row = rhs.row(k);
            for (i, a) in lhs_row.iter().enumerate() {
                if *a == 0.0 {
                    continue;
                }
                let out_row = &mut out[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix::from_raw(self.cols, rhs.cols, out))
    }

    /// `self * rhsᵀ` without materializing the transpose.
    pub fn matmul_t(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.cols {
            return Err(Error::shape(format!(
                "cannot multiply {}x{} by ({}x{})ᵀ",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = vec![0.0; self.rows * rhs.rows];
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..rhs.rows {
                let b = rhs.row(j);
                out[i * rhs.rows + j] = a.iter().zip(b).map(|(x, y)| x * y).sum();
            }
        }
        Ok(Matrix::from_raw(self.rows, rhs.rows, out))
    }

    pub fn hadamard(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.shape() != rhs.shape() {
            return Err(Error::shape(format!(
                "hadamard of {:?} and {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a * b).collect();
        Ok(Matrix::from_raw(self.rows, self.cols, data))
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.shape() != rhs.shape() {
            return Err(Error::shape(format!(
                "difference of {:?} and {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect();
        Ok(Matrix::from_raw(self.rows, self.cols, data))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_raw(self.rows, self.cols, self.data.iter().map(|v| f(*v)).collect())
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    /// Adds `v` to every row (the `1_N vᵀ` broadcast).
    pub fn add_row_broadcast(&self, v: &[f64]) -> Result<Matrix> {
        if v.len() != self.cols {
            return Err(Error::shape(format!(
                "row vector of length {} for {} columns",
                v.len(),
                self.cols
            )));
        }
        let mut out = self.data.clone();
        for row in out.chunks_mut(self.cols) {
            for (o, b) in row.iter_mut().zip(v) {
                *o += b;
            }
        }
        Ok(Matrix::from_raw(self.rows, self.cols, out))
    }

    /// Column sums, i.e. `selfᵀ 1_N`.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.data.chunks(self.cols) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    /// `[self, 1_N]`
    pub fn append_ones_column(&self) -> Matrix {
        let c = self.cols + 1;
        let mut out = Vec::with_capacity(self.rows * c);
        for row in self.data.chunks(self.cols) {
            out.extend_from_slice(row);
            out.push(1.0);
        }
        Matrix::from_raw(self.rows, c, out)
    }

    pub fn select_rows(&self, order: &[usize]) -> Matrix {
        let mut out = Vec::with_capacity(order.len() * self.cols);
        for &i in order {
            out.extend_from_slice(self.row(i));
        }
        Matrix::from_raw(order.len(), self.cols, out)
    }

    pub fn select_columns(&self, order: &[usize]) -> Matrix {
        Matrix::from_raw(
            self.rows,
            order.len(),
            (0..self.rows)
                .flat_map(|i| order.iter().map(move |&j| (i, j)))
                .map(|(i, j)| self.get(i, j))
                .collect(),
        )
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest entrywise |A - Aᵀ|. Requires a square matrix.
    pub fn asymmetry(&self) -> f64 {
        assert!(self.is_square());
        let n = self.rows;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn has_distinct_rows(&self) -> bool {
        for i in 0..self.rows {
            for j in (i + 1)..self.rows {
                if self.row(i) == self.row(j) {
                    return false;
                }
            }
        }
        true
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

/// Singular-value cutoff for rank decisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RankTolerance {
    /// `max(rows, cols) * eps * sigma_max`
    #[default]
    Auto,
    Absolute(f64),
}

impl RankTolerance {
    pub fn resolve(self, rows: usize, cols: usize, sigma_max: f64) -> f64 {
        match self {
            RankTolerance::Auto => rows.max(cols) as f64 * f64::EPSILON * sigma_max,
            RankTolerance::Absolute(t) => t,
        }
    }
}

/// Singular values in descending order.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    let mut sv: Vec<f64> = m
        .to_nalgebra()
        .singular_values()
        .iter()
        .map(|s| s.max(0.0))
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

pub fn numerical_rank(m: &Matrix, tol: RankTolerance) -> usize {
    let sv = singular_values(m);
    let cutoff = tol.resolve(m.rows, m.cols, sv.first().copied().unwrap_or(0.0));
    sv.iter().filter(|s| **s > cutoff).count()
}

pub fn max_singular_value(m: &Matrix) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Smallest of the `min(rows, cols)` singular values.
pub fn min_singular_value(m: &Matrix) -> f64 {
    singular_values(m).last().copied().unwrap_or(0.0)
}

/// Eigenvalues of the symmetric part `(A + Aᵀ)/2`, ascending.
pub fn symmetric_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    if !m.is_square() {
        return Err(Error::shape(format!("eigenvalues of a {}x{} matrix", m.rows, m.cols)));
    }
    let a = m.to_nalgebra();
    let sym = (&a + a.transpose()) * 0.5;
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    Ok(ev)
}

pub fn min_eigenvalue_symmetric(m: &Matrix) -> Result<f64> {
    Ok(symmetric_eigenvalues(m)?[0])
}

/// LU factorization with partial pivoting, `P A = L U`, stored compactly.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    sign: f64,
    singular: bool,
}

impl Lu {
    pub fn factor(m: &Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::shape(format!(
                "LU requires a square matrix, got {}x{}",
                m.rows, m.cols
            )));
        }
        let n = m.rows;
        let mut lu = m.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        let mut singular = false;
        for k in 0..n {
            let (pivot_row, pivot_abs) = (k..n)
                .map(|i| (i, lu[i * n + k].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot_abs == 0.0 {
                singular = true;
                continue;
            }
            if pivot_row != k {
                for j in 0..n {
                    lu.swap(k * n + j, pivot_row * n + j);
                }
                perm.swap(k, pivot_row);
                sign = -sign;
            }
            let pivot = lu[k * n + k];
            for i in (k + 1)..n {
                let factor = lu[i * n + k] / pivot;
                lu[i * n + k] = factor;
                if factor != 0.0 {
                    for j in (k + 1)..n {
                        lu[i * n + j] -= factor * lu[k * n + j];
                    }
                }
            }
        }
        Ok(Self {
            n,
            lu,
            perm,
            sign,
            singular,
        })
    }

    pub fn determinant(&self) -> f64 {
        if self.singular {
            return 0.0;
        }
        (0..self.n).fold(self.sign, |acc, i| acc * self.lu[i * self.n + i])
    }

    pub fn is_singular(&self) -> bool {
        self.singular || (0..self.n).any(|i| self.lu[i * self.n + i] == 0.0)
    }

    /// Solves `A x = b` for each column of `b`.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        if b.rows != self.n {
            return Err(Error::shape(format!(
                "right-hand side has {} rows, system has {}",
                b.rows, self.n
            )));
        }
        if self.is_singular() {
            return Err(Error::Precondition("system matrix is exactly singular".into()));
        }
        let n = self.n;
        let mut out = Matrix::zeros(n, b.cols);
        for c in 0..b.cols {
            let mut x: Vec<f64> = self.perm.iter().map(|&p| b.get(p, c)).collect();
            for i in 0..n {
                for j in 0..i {
                    x[i] -= self.lu[i * n + j] * x[j];
                }
            }
            for i in (0..n).rev() {
                for j in (i + 1)..n {
                    x[i] -= self.lu[i * n + j] * x[j];
                }
                x[i] /= self.lu[i * n + i];
            }
            for (i, v) in x.into_iter().enumerate() {
                out.set(i, c, v);
            }
        }
        Ok(out)
    }
}

pub fn determinant(m: &Matrix) -> Result<f64> {
    Ok(Lu::factor(m)?.determinant())
}

/// Rows and columns of `m` restricted to `indices` (0-based), order preserved.
pub fn principal_submatrix(m: &Matrix, indices: &[usize]) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::shape(format!(
            "principal submatrix of non-square {}x{}",
            m.rows, m.cols
        )));
    }
    if indices.is_empty() {
        return Err(Error::invalid("index set is empty"));
    }
    let mut seen = vec![false; m.rows];
    for &i in indices {
        if i >= m.rows {
            return Err(Error::invalid(format!(
                "index {i} out of range for a {}x{} matrix",
                m.rows, m.cols
            )));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::invalid(format!("duplicate index {i}")));
        }
    }
    let k = indices.len();
    let mut out = Vec::with_capacity(k * k);
    for &i in indices {
        for &j in indices {
            out.push(m.get(i, j));
        }
    }
    Ok(Matrix::from_raw(k, k, out))
}

/// Least-squares / minimum-norm solution of `A x = b` via the pseudo-inverse.
pub fn solve_least_squares(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::shape(format!(
            "system has {} rows, right-hand side {}",
            a.rows, b.rows
        )));
    }
    let svd = a.to_nalgebra().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let eps = RankTolerance::Auto.resolve(a.rows, a.cols, sigma_max);
    let x = svd
        .solve(&b.to_nalgebra(), eps)
        .map_err(|e| Error::invalid(e.to_string()))?;
    let mut data = Vec::with_capacity(x.nrows() * x.ncols());
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            data.push(x[(i, j)]);
        }
    }
    Matrix::from_row_major(x.nrows(), x.ncols(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sigmoid(t: f64) -> f64 {
        1.0 / (1.0 + (-t).exp())
    }

    #[test]
    fn symmetric_eigenvalues_ascending() {
        let m = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let ev = symmetric_eigenvalues(&m).unwrap();
        assert_relative_eq!(ev[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(ev[1], 3.0, epsilon = 1e-12);
        assert!(symmetric_eigenvalues(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn rank_of_identity_and_dependent_rows() {
        assert_eq!(numerical_rank(&Matrix::identity(3), RankTolerance::Auto), 3);
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert_eq!(numerical_rank(&m, RankTolerance::Auto), 1);
    }

    #[test]
    fn rank_of_two_point_construction() {
        // E(α) = [A(α), 1] with A = [σ(0), σ(-10)]ᵀ
        let e = Matrix::from_rows(&[vec![sigmoid(0.0), 1.0], vec![sigmoid(-10.0), 1.0]]).unwrap();
        assert_eq!(numerical_rank(&e, RankTolerance::Auto), 2);
        let det = determinant(&e).unwrap();
        assert_relative_eq!(det, 0.5 - 4.5397868702434395e-5, max_relative = 1e-12);
        assert_relative_eq!(det, 0.49995, epsilon = 1e-5);
    }

    #[test]
    fn min_singular_value_examples() {
        assert_relative_eq!(min_singular_value(&Matrix::identity(2)), 1.0, epsilon = 1e-14);
        assert_eq!(min_singular_value(&Matrix::zeros(2, 2)), 0.0);
        let d = Matrix::from_diagonal(&[3.0, 0.5]).unwrap();
        assert_relative_eq!(min_singular_value(&d), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn determinant_examples() {
        assert_eq!(determinant(&Matrix::identity(2)).unwrap(), 1.0);
        let y = Matrix::from_rows(&[
            vec![1.0, 0.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
        ])
        .unwrap();
        let det = determinant(&y).unwrap();
        assert!(det != 0.0);
        assert_relative_eq!(det, 1.0, epsilon = 1e-14);
        assert!(determinant(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn determinant_tracks_pivot_sign() {
        let p = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(determinant(&p).unwrap(), -1.0);
    }

    #[test]
    fn principal_submatrix_examples() {
        let hx = Matrix::from_diagonal(&[1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(principal_submatrix(&hx, &[0, 1]).unwrap(), Matrix::identity(2));
        assert_eq!(principal_submatrix(&hx, &[2, 3]).unwrap(), Matrix::zeros(2, 2));
        let hy = Matrix::from_rows(&[
            vec![1.0, 0.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
        ])
        .unwrap();
        assert_eq!(principal_submatrix(&hy, &[2, 3]).unwrap(), Matrix::zeros(2, 2));
    }

    #[test]
    fn principal_submatrix_rejects_bad_indices() {
        let m = Matrix::identity(3);
        assert!(principal_submatrix(&m, &[0, 3]).is_err());
        assert!(principal_submatrix(&m, &[1, 1]).is_err());
        assert!(principal_submatrix(&m, &[]).is_err());
        assert!(principal_submatrix(&Matrix::zeros(2, 3), &[0]).is_err());
    }

    #[test]
    fn construction_rejects_non_finite() {
        assert!(Matrix::from_row_major(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::from_row_major(1, 2, vec![1.0]).is_err());
        assert!(Matrix::from_row_major(0, 2, vec![]).is_err());
    }

    #[test]
    fn lu_solve_recovers_solution() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0, 0.0], vec![1.0, 3.0, 1.0], vec![0.0, 1.0, 4.0]])
            .unwrap();
        let x = Matrix::from_rows(&[vec![1.0], vec![-2.0], vec![0.5]]).unwrap();
        let b = a.matmul(&x).unwrap();
        let got = Lu::factor(&a).unwrap().solve(&b).unwrap();
        for i in 0..3 {
            assert_relative_eq!(got.get(i, 0), x.get(i, 0), epsilon = 1e-12);
        }
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let a = Matrix::from_fn(3, 2, |i, j| (i * 2 + j) as f64 - 1.5);
        let b = Matrix::from_fn(3, 4, |i, j| (i + 3 * j) as f64 * 0.25);
        assert_eq!(a.t_matmul(&b).unwrap(), a.transpose().matmul(&b).unwrap());
        let c = Matrix::from_fn(4, 2, |i, j| i as f64 - j as f64);
        assert_eq!(a.matmul_t(&c).unwrap(), a.matmul(&c.transpose()).unwrap());
    }
}
