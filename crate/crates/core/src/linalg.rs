//! Small dense linear algebra for the p-dimensional systems the estimators solve.
//!
//! Everything here assumes `p` is small (tens, at most a few hundred), so plain
//! row-major storage with Cholesky and cyclic Jacobi is adequate.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    /// Builds a matrix from row-major storage.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::domain(format!("matrix storage has {} entries, expected {rows}x{cols}", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::domain("ragged rows"));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Ok(Self { rows: rows.len(), cols, data })
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
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[T]> + '_ {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// `self * v`.
    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        debug_assert_eq!(v.len(), self.cols);
        self.row_iter().map(|row| dot(row, v)).collect()
    }

    /// `selfᵀ * v`.
    pub fn tr_mul_vec(&self, v: &[T]) -> Vec<T> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (row, &vi) in self.row_iter().zip(v) {
            axpy(vi, row, &mut out);
        }
        out
    }

    /// `Σ_i w_i x_i x_iᵀ` over the rows `x_i`. Pass `None` for unit weights.
    pub fn weighted_gram(&self, weights: Option<&[T]>) -> Matrix<T> {
        let p = self.cols;
        let mut g = Matrix::zeros(p, p);
        for (i, row) in self.row_iter().enumerate() {
            let w = weights.map_or(T::one(), |w| w[i]);
            if w == T::zero() {
                continue;
            }
            for a in 0..p {
                let wa = w * row[a];
                for (gab, &xb) in g.data[a * p + a..(a + 1) * p].iter_mut().zip(&row[a..]) {
                    *gab += wa * xb;
                }
            }
        }
        g.symmetrize_from_upper();
        g
    }

    fn symmetrize_from_upper(&mut self) {
        let p = self.cols;
        for a in 0..p {
            for b in 0..a {
                self.data[a * p + b] = self.data[b * p + a];
            }
        }
    }

    /// Replaces the matrix by `(A + Aᵀ)/2`.
    pub fn symmetrize(&mut self) {
        let n = self.rows;
        let half = T::lit(0.5);
        for a in 0..n {
            for b in (a + 1)..n {
                let m = (self.data[a * n + b] + self.data[b * n + a]) * half;
                self.data[a * n + b] = m;
                self.data[b * n + a] = m;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    /// Copy with rows selected by `idx`, in that order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix<T> {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: idx.len(), cols: self.cols, data }
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

pub fn distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y)).sqrt()
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
///
/// Returns `None` when a pivot falls below `n·ε·max|diag|`, which is how rank
/// deficiency shows up in normal equations.
pub fn cholesky<T: Scalar>(a: &Matrix<T>) -> Option<Matrix<T>> {
    let n = a.rows();
    debug_assert_eq!(n, a.cols());
    let max_diag = (0..n).fold(T::zero(), |m, i| m.max(a[(i, i)].abs()));
    if !(max_diag > T::zero()) || !max_diag.is_finite() {
        return None;
    }
    let tol = T::from_usize_lossy(n.max(1)) * T::epsilon() * max_diag * T::lit(10.0);
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > tol) {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Solves `L Lᵀ x = b` given the lower Cholesky factor.
pub fn cholesky_solve_factored<T: Scalar>(l: &Matrix<T>, b: &[T]) -> Vec<T> {
    let n = l.rows();
    let mut z = b.to_vec();
    for i in 0..n {
        let mut s = z[i];
        for k in 0..i {
            s -= l[(i, k)] * z[k];
        }
        z[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * z[k];
        }
        z[i] = s / l[(i, i)];
    }
    z
}

/// Solves the SPD system `a x = b`; `None` if `a` is numerically singular.
pub fn solve_spd<T: Scalar>(a: &Matrix<T>, b: &[T]) -> Option<Vec<T>> {
    let l = cholesky(a)?;
    let x = cholesky_solve_factored(&l, b);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Solves the square system `a x = b` (or `aᵀ x = b` when `transpose`) by LU with
/// partial pivoting; `None` if a pivot falls below 1e3·n·ε·max|a|.
pub fn solve_dense<T: Scalar>(a: &Matrix<T>, b: &[T], transpose: bool) -> Option<Vec<T>> {
    let n = a.rows();
    assert_eq!(n, a.cols(), "solve_dense needs a square matrix");
    assert_eq!(n, b.len());
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = if transpose { a[(j, i)] } else { a[(i, j)] };
        }
    }
    let mut x = b.to_vec();
    let tiny = T::lit(1e3) * T::from_usize_lossy(n) * T::epsilon() * a.max_abs();
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| m[(i, k)].abs().partial_cmp(&m[(j, k)].abs()).unwrap())?;
        if !(m[(piv, k)].abs() > tiny) {
            return None;
        }
        if piv != k {
            for j in 0..n {
                let t = m[(k, j)];
                m[(k, j)] = m[(piv, j)];
                m[(piv, j)] = t;
            }
            x.swap(k, piv);
        }
        for i in (k + 1)..n {
            let f = m[(i, k)] / m[(k, k)];
            for j in k..n {
                let v = m[(k, j)];
                m[(i, j)] -= f * v;
            }
            let v = x[k];
            x[i] -= f * v;
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in (i + 1)..n {
            s -= m[(i, j)] * x[j];
        }
        x[i] = s / m[(i, i)];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Eigenvalues of a symmetric matrix in ascending order (cyclic Jacobi).
pub fn symmetric_eigenvalues<T: Scalar>(a: &Matrix<T>) -> Result<Vec<T>> {
    let n = a.rows();
    if n != a.cols() {
        return Err(Error::domain("eigenvalues need a square matrix"));
    }
    if a.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite matrix entry".into()));
    }
    let mut m = a.clone();
    m.symmetrize();
    let scale = m.max_abs();
    if scale == T::zero() || n == 1 {
        let mut ev: Vec<T> = (0..n).map(|i| m[(i, i)]).collect();
        ev.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
        return Ok(ev);
    }
    let tol = T::epsilon() * T::epsilon() * scale * scale;
    const MAX_SWEEPS: usize = 100;
    for _ in 0..MAX_SWEEPS {
        let mut off = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off <= tol {
            let mut ev: Vec<T> = (0..n).map(|i| m[(i, i)]).collect();
            ev.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
            return Ok(ev);
        }
        for pidx in 0..n {
            for q in (pidx + 1)..n {
                let apq = m[(pidx, q)];
                if apq == T::zero() {
                    continue;
                }
                let app = m[(pidx, pidx)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[(k, pidx)];
                    let akq = m[(k, q)];
                    m[(k, pidx)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[(pidx, k)];
                    let aqk = m[(q, k)];
                    m[(pidx, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    Err(Error::Numerical(format!("Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps")))
}

/// Median of a slice (average of the two middle values for even length).
pub fn median<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut v = values.to_vec();
    let mid = v.len() / 2;
    let cmp = |a: &T, b: &T| a.partial_cmp(b).expect("no NaN");
    let (_, upper, _) = v.select_nth_unstable_by(mid, cmp);
    let upper = *upper;
    if values.len() % 2 == 1 {
        Some(upper)
    } else {
        let lower = v[..mid].iter().copied().fold(T::neg_infinity(), T::max);
        Some((lower + upper) * T::lit(0.5))
    }
}

/// Linear-interpolated sample quantile, `q ∈ [0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(v[lo] + (v[hi] - v[lo]) * frac)
}
