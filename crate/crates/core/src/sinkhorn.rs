//! Entropic optimal transport between samples and classes.
//!
//! Solves `max_Q Tr(Qᵀ S) + ε H(Q)` over plans with prescribed row and column
//! mass. The optimum has the form `Q = Diag(u) exp(S/ε) Diag(v)` with a row
//! scaler `u` (one entry per sample) and a column scaler `v` (one per class).
//! Everything runs on `ln u`, `ln v` and `S/ε` so that small `ε` never
//! materializes `exp(S/ε)`.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::prob::{lse, ProbMatrix};
use crate::scalar::Scalar;

/// Sweep budget and tolerance for oracle-grade standalone solves.
pub const STANDALONE_MAX_ITER: usize = 1000;
pub const STANDALONE_TOL: f64 = 1e-9;

/// Row mass `r` (per sample) and column mass `c` (per class).
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals<T> {
    row: Vec<T>,
    col: Vec<T>,
}

impl<T: Scalar> Marginals<T> {
    pub fn new(row: Vec<T>, col: Vec<T>) -> Result<Self> {
        if row.is_empty() || col.is_empty() {
            return Err(Error::invalid("marginals must be non-empty"));
        }
        if row.iter().chain(&col).any(|v| !v.is_finite() || *v <= T::zero()) {
            return Err(Error::invalid("marginal entries must be finite and positive"));
        }
        let rs: T = row.iter().copied().sum();
        let cs: T = col.iter().copied().sum();
        let tol = T::lit(1e-9).max(T::epsilon() * T::lit(16.0)) * rs.max(T::one());
        if (rs - cs).abs() > tol {
            return Err(Error::invalid(format!("infeasible marginals: rows carry {rs}, columns carry {cs}")));
        }
        Ok(Self { row, col })
    }

    /// `r_i = 1/N`, `c_j = 1/K`.
    pub fn uniform(n: usize, k: usize) -> Self {
        Self {
            row: vec![T::one() / T::from_usize_lossy(n); n],
            col: vec![T::one() / T::from_usize_lossy(k); k],
        }
    }

    /// `r_i = 1/N` and `c` proportional to the class mass of `y`.
    pub fn from_semantic(y: &ProbMatrix<T>) -> Result<Self> {
        let n = y.rows();
        let sums = y.col_sums();
        let total: T = sums.iter().copied().sum();
        Self::new(vec![T::one() / T::from_usize_lossy(n); n], sums.into_iter().map(|s| s / total).collect())
    }

    pub fn row(&self) -> &[T] {
        &self.row
    }

    pub fn col(&self) -> &[T] {
        &self.col
    }

    pub fn total(&self) -> T {
        self.row.iter().copied().sum()
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornResult<T> {
    pub plan: Matrix<T>,
    pub iterations_used: usize,
    /// Max L1 marginal error of `plan` itself.
    pub final_violation: T,
}

impl<T: Scalar> SinkhornResult<T> {
    pub fn converged(&self, tol: T) -> bool {
        self.final_violation < tol
    }
}

/// `max(‖Q 1 − r‖₁, ‖Qᵀ 1 − c‖₁)`.
pub fn marginal_violation<T: Scalar>(q: &Matrix<T>, marginals: &Marginals<T>) -> Result<T> {
    if q.rows() != marginals.row.len() || q.cols() != marginals.col.len() {
        return Err(Error::shape(format!(
            "plan is {}x{}, marginals are {}x{}",
            q.rows(),
            q.cols(),
            marginals.row.len(),
            marginals.col.len()
        )));
    }
    Ok(violation_unchecked(q, marginals))
}

fn violation_unchecked<T: Scalar>(q: &Matrix<T>, marginals: &Marginals<T>) -> T {
    let row_err: T = q.row_sums().into_iter().zip(&marginals.row).map(|(s, &r)| (s - r).abs()).sum();
    let col_err: T = q.col_sums().into_iter().zip(&marginals.col).map(|(s, &c)| (s - c).abs()).sum();
    row_err.max(col_err)
}

/// Sinkhorn scaling in the log domain.
///
/// Each sweep sets `ln u_i = ln r_i − LSE_j(S_ij/ε + ln v_j)` and then
/// `ln v_j = ln c_j − LSE_i(S_ij/ε + ln u_i)`; the plan is checked after
/// every sweep and the loop stops once the violation drops below `tol` or
/// `max_iter` sweeps have run. Running out of sweeps is not an error.
pub fn sinkhorn_solve<T: Scalar>(
    scores: &Matrix<T>,
    epsilon: T,
    marginals: &Marginals<T>,
    max_iter: usize,
    tol: T,
) -> Result<SinkhornResult<T>> {
    let (n, k) = scores.shape();
    if !(epsilon > T::zero()) || !epsilon.is_finite() {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if !scores.is_finite() {
        return Err(Error::invalid("score matrix contains non-finite values"));
    }
    if n != marginals.row.len() || k != marginals.col.len() {
        return Err(Error::shape(format!(
            "scores are {n}x{k}, marginals are {}x{}",
            marginals.row.len(),
            marginals.col.len()
        )));
    }
    // Re-check feasibility in case the marginals were assembled by hand.
    Marginals::new(marginals.row.clone(), marginals.col.clone())?;

    let log_kernel = scores.scaled(T::one() / epsilon);
    let log_r: Vec<T> = marginals.row.iter().map(|r| r.ln()).collect();
    let log_c: Vec<T> = marginals.col.iter().map(|c| c.ln()).collect();
    let mut log_u = vec![T::zero(); n];
    let mut log_v = vec![T::zero(); k];
    let mut scratch_row = vec![T::zero(); k];
    let mut scratch_col = vec![T::zero(); n];
    let mut plan = Matrix::zeros(n, k);
    let mut violation = T::infinity();
    let mut sweeps = 0;

    while sweeps < max_iter.max(1) {
        sweeps += 1;
        for i in 0..n {
            for (s, (&kv, &lv)) in scratch_row.iter_mut().zip(log_kernel.row(i).iter().zip(&log_v)) {
                *s = kv + lv;
            }
            log_u[i] = log_r[i] - lse(&scratch_row);
        }
        for j in 0..k {
            for (i, s) in scratch_col.iter_mut().enumerate() {
                *s = log_kernel.get(i, j) + log_u[i];
            }
            log_v[j] = log_c[j] - lse(&scratch_col);
        }
        fill_plan(&mut plan, &log_kernel, &log_u, &log_v);
        violation = violation_unchecked(&plan, marginals);
        if violation < tol {
            break;
        }
    }

    if !plan.is_finite() || !violation.is_finite() {
        return Err(Error::Numeric("transport plan is not finite".into()));
    }
    Ok(SinkhornResult { plan, iterations_used: sweeps, final_violation: violation })
}

fn fill_plan<T: Scalar>(plan: &mut Matrix<T>, log_kernel: &Matrix<T>, log_u: &[T], log_v: &[T]) {
    for (i, &lu) in log_u.iter().enumerate() {
        let out = plan.row_mut(i);
        for ((q, &kv), &lv) in out.iter_mut().zip(log_kernel.row(i)).zip(log_v) {
            *q = (kv + lu + lv).exp();
        }
    }
}

/// Entropic transport objective `Tr(Qᵀ S) + ε H(Q)`.
pub fn transport_objective<T: Scalar>(plan: &Matrix<T>, scores: &Matrix<T>, epsilon: T) -> Result<T> {
    Ok(plan.dot(scores)? + epsilon * crate::prob::entropy(plan)?)
}
