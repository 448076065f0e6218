//! Probability-matrix primitives: softmax, entropy, normalization and the
//! validated matrix roles used throughout the engine.

use std::ops::Deref;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Row-stochastic `N x K` matrix: semantic prior, visual posterior or fused
/// prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix<T> {
    inner: Matrix<T>,
}

impl<T: Scalar> ProbMatrix<T> {
    /// Validates rows against the internal tolerance.
    pub fn new(m: Matrix<T>) -> Result<Self> {
        Self::with_tolerance(m, T::internal_tol())
    }

    /// Validates rows against the looser tolerance used for files.
    pub fn ingest(m: Matrix<T>) -> Result<Self> {
        Self::with_tolerance(m, T::ingest_tol())
    }

    pub fn with_tolerance(m: Matrix<T>, tol: T) -> Result<Self> {
        if m.rows() == 0 || m.cols() == 0 {
            return Err(Error::invalid("probability matrix must be non-empty"));
        }
        for (i, row) in m.iter_rows().enumerate() {
            let mut sum = T::zero();
            for &v in row {
                if !v.is_finite() || v < T::zero() {
                    return Err(Error::invalid(format!("row {i} has entry {v} outside [0, inf)")));
                }
                sum += v;
            }
            if (sum - T::one()).abs() > tol {
                return Err(Error::invalid(format!("row {i} sums to {sum}, not 1")));
            }
        }
        Ok(Self { inner: m })
    }

    /// Uniform `1/K` rows.
    pub fn uniform(rows: usize, cols: usize) -> Self {
        let v = T::one() / T::from_usize_lossy(cols);
        Self { inner: Matrix::filled(rows, cols, v) }
    }

    /// One-hot rows from class indices.
    pub fn one_hot(labels: &[usize], cols: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= cols) {
            return Err(Error::invalid(format!("label {bad} out of range for {cols} classes")));
        }
        Ok(Self {
            inner: Matrix::from_fn(labels.len(), cols, |i, j| if labels[i] == j { T::one() } else { T::zero() }),
        })
    }

    pub(crate) fn new_unchecked(m: Matrix<T>) -> Self {
        Self { inner: m }
    }

    pub fn as_matrix(&self) -> &Matrix<T> {
        &self.inner
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.inner
    }
}

impl<T> Deref for ProbMatrix<T> {
    type Target = Matrix<T>;

    fn deref(&self) -> &Matrix<T> {
        &self.inner
    }
}

impl<T> AsRef<Matrix<T>> for ProbMatrix<T> {
    fn as_ref(&self) -> &Matrix<T> {
        &self.inner
    }
}

/// `N x D` matrix of visual embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    inner: Matrix<T>,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn new(m: Matrix<T>) -> Result<Self> {
        if m.rows() == 0 || m.cols() == 0 {
            return Err(Error::invalid(format!("feature matrix must be at least 1x1, got {}x{}", m.rows(), m.cols())));
        }
        if !m.is_finite() {
            return Err(Error::invalid("feature matrix has non-finite entries"));
        }
        Ok(Self { inner: m })
    }

    /// Scales each row to unit Euclidean norm; all-zero rows stay zero.
    pub fn l2_normalized(&self) -> Self {
        let mut out = self.inner.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if norm > T::zero() {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        Self { inner: out }
    }

    pub fn as_matrix(&self) -> &Matrix<T> {
        &self.inner
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.inner
    }
}

impl<T> Deref for FeatureMatrix<T> {
    type Target = Matrix<T>;

    fn deref(&self) -> &Matrix<T> {
        &self.inner
    }
}

/// `max(v) + ln Σ exp(v - max(v))`.
pub fn log_sum_exp<T: Scalar>(v: &[T]) -> Result<T> {
    if v.is_empty() {
        return Err(Error::invalid("log_sum_exp of an empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("log_sum_exp input is not finite"));
    }
    Ok(lse(v))
}

/// Unchecked kernel; `-inf` entries contribute nothing.
#[inline]
pub(crate) fn lse<T: Scalar>(v: &[T]) -> T {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    if v.len() == 1 || !max.is_finite() {
        return max;
    }
    let s: T = v.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

/// Row-wise `softmax(temperature * logits)` with per-row max subtraction.
pub fn row_softmax<T: Scalar>(logits: &Matrix<T>, temperature: T) -> Result<ProbMatrix<T>> {
    if !(temperature > T::zero()) || !temperature.is_finite() {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    if !logits.is_finite() {
        return Err(Error::invalid("logits contain non-finite values"));
    }
    if logits.rows() == 0 || logits.cols() == 0 {
        return Err(Error::invalid("softmax of an empty matrix"));
    }
    let mut out = logits.scaled(temperature);
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(ProbMatrix::new_unchecked(out))
}

/// `H(Q) = -Σ Q_ij ln Q_ij` with `0 ln 0 = 0`.
pub fn entropy<T: Scalar>(q: &Matrix<T>) -> Result<T> {
    let mut h = T::zero();
    for &v in q.as_slice() {
        if !(v >= T::zero()) || !v.is_finite() {
            return Err(Error::invalid(format!("entropy needs finite nonnegative entries, got {v}")));
        }
        if v > T::zero() {
            h -= v * v.ln();
        }
    }
    Ok(h)
}

/// Divides every row by its sum.
pub fn row_normalize<T: Scalar>(m: &Matrix<T>) -> Result<ProbMatrix<T>> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::invalid("cannot normalize an empty matrix"));
    }
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        if row.iter().any(|&v| !(v >= T::zero()) || !v.is_finite()) {
            return Err(Error::invalid(format!("row {i} has a negative or non-finite entry")));
        }
        let sum: T = row.iter().copied().sum();
        if !(sum > T::zero()) {
            return Err(Error::DegenerateRow { row: i });
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(ProbMatrix::new_unchecked(out))
}

/// Per-row argmax; ties go to the lowest class index.
pub fn argmax_rows<T: Scalar>(m: &Matrix<T>) -> Vec<usize> {
    m.iter_rows()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
