use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Design matrix (rows are observations) and response vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    x: Matrix<T>,
    y: Vec<T>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(x: Matrix<T>, y: Vec<T>) -> Result<Self> {
        if x.rows() == 0 || x.cols() == 0 {
            return Err(Error::domain("dataset needs n >= 1 and p >= 1"));
        }
        if x.rows() != y.len() {
            return Err(Error::domain(format!("design has {} rows but response has {} entries", x.rows(), y.len())));
        }
        if x.as_slice().iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::domain("dataset contains non-finite entries"));
        }
        Ok(Self { x, y })
    }

    pub fn from_rows(rows: &[Vec<T>], y: Vec<T>) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?, y)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.x.rows()
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.x.cols()
    }

    pub fn x(&self) -> &Matrix<T> {
        &self.x
    }

    pub fn y(&self) -> &[T] {
        &self.y
    }

    /// r = y − Xβ
    pub fn residuals(&self, beta: &[T]) -> Vec<T> {
        self.x.row_iter().zip(&self.y).map(|(row, &yi)| yi - crate::linalg::dot(row, beta)).collect()
    }

    pub fn predict(&self, beta: &[T]) -> Vec<T> {
        self.x.mul_vec(beta)
    }

    /// Subset of observations, in the given order.
    pub fn select(&self, idx: &[usize]) -> Dataset<T> {
        Dataset { x: self.x.select_rows(idx), y: idx.iter().map(|&i| self.y[i]).collect() }
    }

    /// Same design with y replaced by y + Xv.
    pub fn shifted_by(&self, v: &[T]) -> Dataset<T> {
        let shift = self.x.mul_vec(v);
        Dataset { x: self.x.clone(), y: self.y.iter().zip(shift).map(|(&a, b)| a + b).collect() }
    }

    pub fn with_response(&self, y: Vec<T>) -> Result<Dataset<T>> {
        Dataset::new(self.x.clone(), y)
    }

    pub(crate) fn check_beta(&self, beta: &[T], what: &str) -> Result<()> {
        if beta.len() != self.p() {
            return Err(Error::domain(format!("{what} has length {}, expected p = {}", beta.len(), self.p())));
        }
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain(format!("{what} has non-finite entries")));
        }
        Ok(())
    }
}
