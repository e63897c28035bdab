//! Dense row-major matrices and the handful of kernels the optimizer needs:
//! products, Cholesky solves for ridge-regularized normal equations, and a
//! one-sided Jacobi SVD for the small `k x k` Procrustes problem.

use std::fmt;

use crate::error::{Error, Result};

/// Row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            let row = self.row(i);
            let shown: Vec<String> = row.iter().take(8).map(|v| format!("{v:.6}")).collect();
            let tail = if self.cols > 8 { ", ..." } else { "" };
            writeln!(f, "  [{}{}]", shown.join(", "), tail)?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
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

    /// Builds a matrix from row-major values, rejecting length mismatches and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "from_vec",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        let m = DenseMatrix { rows, cols, data };
        m.check_finite()?;
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::shape("from_rows", "ragged rows"));
        }
        Self::from_vec(r, c, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = v;
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

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// Copies the given columns, in order, into a new matrix.
    pub fn select_columns(&self, indices: &[usize]) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, indices.len());
        for i in 0..self.rows {
            let src = self.row(i);
            let dst = out.row_mut(i);
            for (d, &j) in dst.iter_mut().zip(indices) {
                *d = src[j];
            }
        }
        out
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(p) => Err(Error::NonFinite {
                row: p / self.cols.max(1),
                col: p % self.cols.max(1),
            }),
            None => Ok(()),
        }
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for (j, &v) in self.row(i).iter().enumerate() {
                out.data[j * self.rows + i] = v;
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// `self + s * other`
    pub fn add_scaled(&self, other: &DenseMatrix, s: f64) -> Result<DenseMatrix> {
        self.zip_with(other, "add_scaled", |a, b| a + s * b)
    }

    fn zip_with(
        &self,
        other: &DenseMatrix,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<DenseMatrix> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Adds `v` to every diagonal entry of a square matrix.
    pub fn add_diagonal(&self, v: f64) -> Result<DenseMatrix> {
        if self.rows != self.cols {
            return Err(Error::shape("add_diagonal", "matrix is not square"));
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            out.data[i * self.cols + i] += v;
        }
        Ok(out)
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    /// `||self - other||_F^2` without materializing the difference.
    pub fn dist_sq(&self, other: &DenseMatrix) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "dist_sq",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Matrix product `a * b`.
///
/// Each output entry accumulates `a[i][l] * b[l][j]` in ascending `l`,
/// starting from zero.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(Error::shape(
            "matmul",
            format!("{}x{} * {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let mut out = DenseMatrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (l, &a_il) in a_row.iter().enumerate() {
            let b_row = &b.data[l * b.cols..(l + 1) * b.cols];
            for (o, &b_lj) in out_row.iter_mut().zip(b_row) {
                *o += a_il * b_lj;
            }
        }
    }
    Ok(out)
}

/// `a * b^T`, computed as row-by-row dot products.
///
/// When `a` and `b` are the same matrix the result is exactly symmetric.
pub fn matmul_nt(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.cols {
        return Err(Error::shape(
            "matmul_nt",
            format!("{}x{} * ({}x{})^T", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let mut out = DenseMatrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let a_row = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = dot(a_row, b.row(j));
        }
    }
    Ok(out)
}

/// `a^T * b`.
pub fn matmul_tn(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows != b.rows {
        return Err(Error::shape(
            "matmul_tn",
            format!("({}x{})^T * {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    matmul(&a.transpose(), b)
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Solves `a * x = b` for symmetric positive definite `a` by Cholesky
/// factorization.
pub fn spd_solve(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let n = a.rows;
    if a.cols != n {
        return Err(Error::shape("spd_solve", "system matrix is not square"));
    }
    if b.rows != n {
        return Err(Error::shape(
            "spd_solve",
            format!("{n}x{n} system with {} right-hand-side rows", b.rows),
        ));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let (x, y) = (a.get(i, j), a.get(j, i));
            if (x - y).abs() > 1e-10 * 1f64.max(x.abs()).max(y.abs()) {
                return Err(Error::Asymmetric { row: i, col: j });
            }
        }
    }

    // Lower-triangular factor, a = L L^T, reading only the lower triangle.
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a.get(j, j);
        for p in 0..j {
            d -= l[j * n + p] * l[j * n + p];
        }
        if d.is_nan() || d <= 0.0 {
            return Err(Error::Singular { pivot: j, value: d });
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a.get(i, j);
            for p in 0..j {
                s -= l[i * n + p] * l[j * n + p];
            }
            l[i * n + j] = s / d;
        }
    }

    let m = b.cols;
    let mut x = b.clone();
    // Forward substitution L y = b, all right-hand sides at once.
    for i in 0..n {
        for p in 0..i {
            let f = l[i * n + p];
            if f != 0.0 {
                let (head, tail) = x.data.split_at_mut(i * m);
                let src = &head[p * m..(p + 1) * m];
                for (t, s) in tail[..m].iter_mut().zip(src) {
                    *t -= f * s;
                }
            }
        }
        let d = l[i * n + i];
        for t in &mut x.data[i * m..(i + 1) * m] {
            *t /= d;
        }
    }
    // Back substitution L^T x = y.
    for i in (0..n).rev() {
        for p in (i + 1)..n {
            let f = l[p * n + i];
            if f != 0.0 {
                let (head, tail) = x.data.split_at_mut(p * m);
                let src = &tail[..m];
                for (t, s) in head[i * m..(i + 1) * m].iter_mut().zip(src) {
                    *t -= f * s;
                }
            }
        }
        let d = l[i * n + i];
        for t in &mut x.data[i * m..(i + 1) * m] {
            *t /= d;
        }
    }
    Ok(x)
}

/// Thin SVD of a square matrix, `a = left * diag(sigma) * right^T`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub left: DenseMatrix,
    /// Singular values, descending and non-negative.
    pub sigma: Vec<f64>,
    pub right: DenseMatrix,
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// SVD of a small square matrix by one-sided (Hestenes) Jacobi rotations.
///
/// Rank-deficient inputs are allowed; the left factor is completed to an
/// orthonormal basis for the null directions.
pub fn svd_small(a: &DenseMatrix) -> Result<Svd> {
    let k = a.rows;
    if a.cols != k {
        return Err(Error::shape(
            "svd_small",
            format!("{}x{} is not square", a.rows, a.cols),
        ));
    }
    // Column-major working copies: work[j] is column j of a * right.
    let mut work: Vec<Vec<f64>> = (0..k).map(|j| a.column(j)).collect();
    let mut right: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            let mut e = vec![0.0; k];
            e[j] = 1.0;
            e
        })
        .collect();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..k {
            for q in (p + 1)..k {
                let alpha = dot(&work[p], &work[p]);
                let beta = dot(&work[q], &work[q]);
                let gamma = dot(&work[p], &work[q]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut work, p, q, c, s);
                rotate(&mut right, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = work.iter().map(|col| dot(col, col).sqrt()).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let mut left_cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut sigma = Vec::with_capacity(k);
    let mut right_cols = Vec::with_capacity(k);
    for &j in &order {
        let s = norms[j];
        let mut u = if s > 0.0 {
            work[j].iter().map(|v| v / s).collect()
        } else {
            vec![0.0; k]
        };
        // Small singular values leave their directions poorly determined;
        // re-orthogonalize against what is already accepted.
        orthogonalize(&mut u, &left_cols);
        let norm = dot(&u, &u).sqrt();
        if norm < 0.5 {
            u = complete_basis(&left_cols, k);
        } else {
            u.iter_mut().for_each(|v| *v /= norm);
        }
        left_cols.push(u);
        sigma.push(s);
        right_cols.push(right[j].clone());
    }

    let left = DenseMatrix::from_fn(k, k, |i, j| left_cols[j][i]);
    let right = DenseMatrix::from_fn(k, k, |i, j| right_cols[j][i]);
    Ok(Svd { left, sigma, right })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Two passes of modified Gram-Schmidt against an orthonormal set.
fn orthogonalize(u: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let proj = dot(u, b);
            u.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
    }
}

/// A unit vector orthogonal to `basis`, taken from the standard basis vector
/// with the largest residual.
fn complete_basis(basis: &[Vec<f64>], k: usize) -> Vec<f64> {
    let mut best = vec![0.0; k];
    let mut best_norm = -1.0;
    for i in 0..k {
        let mut e = vec![0.0; k];
        e[i] = 1.0;
        orthogonalize(&mut e, basis);
        let norm = dot(&e, &e).sqrt();
        if norm > best_norm {
            best_norm = norm;
            best = e;
        }
    }
    best.iter_mut().for_each(|v| *v /= best_norm);
    best
}

/// Orthogonal polar factor `left * right^T` of a square matrix: the
/// orthogonal matrix `q` maximizing `tr(q^T a)`.
pub fn polar_factor(a: &DenseMatrix) -> Result<DenseMatrix> {
    let svd = svd_small(a)?;
    matmul_nt(&svd.left, &svd.right)
}
