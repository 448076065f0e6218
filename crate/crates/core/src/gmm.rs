//! Gaussian mixture over visual features with one shared diagonal covariance.
//!
//! The E-step yields the visual posterior `P`; the M-step re-estimates the
//! component means and the shared variance from an arbitrary row-stochastic
//! responsibility matrix, which lets the fused prediction drive the refit.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::prob::{lse, FeatureMatrix, ProbMatrix};
use crate::scalar::Scalar;

/// Column mass below which a component counts as empty.
const EMPTY_MASS: f64 = 1e-12;

/// How mixture weights are treated by the M-step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PiMode {
    /// Weights pinned at `1/K`.
    #[default]
    Uniform,
    /// `π_k = mean_i Q_ik`.
    Estimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams<T> {
    /// `K x D` component means.
    pub means: Matrix<T>,
    /// Per-dimension variance shared by every component.
    pub shared_var: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Scalar> GmmParams<T> {
    pub fn new(means: Matrix<T>, shared_var: Vec<T>, weights: Vec<T>) -> Result<Self> {
        let (k, d) = means.shape();
        if k == 0 || d == 0 {
            return Err(Error::invalid("mixture needs at least one component and one dimension"));
        }
        if shared_var.len() != d {
            return Err(Error::shape(format!("shared_var has {} entries for D = {d}", shared_var.len())));
        }
        if weights.len() != k {
            return Err(Error::shape(format!("{} weights for K = {k}", weights.len())));
        }
        if !means.is_finite() {
            return Err(Error::invalid("component means must be finite"));
        }
        if shared_var.iter().any(|v| !v.is_finite() || *v <= T::zero()) {
            return Err(Error::invalid("shared variance must be finite and positive"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        let total: T = weights.iter().copied().sum();
        if (total - T::one()).abs() > T::internal_tol() {
            return Err(Error::invalid(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { means, shared_var, weights })
    }

    /// Every mean at the global mean of `x`, floored data variance, uniform weights.
    pub fn uniform(x: &FeatureMatrix<T>, k: usize) -> Self {
        let (n, d) = x.shape();
        let nf = T::from_usize_lossy(n);
        let mean: Vec<T> = x.col_sums().into_iter().map(|s| s / nf).collect();
        let var = per_dim_variance(x, &mean);
        let floor = var_floor_from(&var);
        let means = Matrix::from_fn(k, d, |_, j| mean[j]);
        Self {
            means,
            shared_var: var.into_iter().map(|v| v.max(floor)).collect(),
            weights: vec![T::one() / T::from_usize_lossy(k); k],
        }
    }

    #[inline]
    pub fn n_components(&self) -> usize {
        self.means.rows()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    /// `ln π_k + ln N(x; μ_k, diag(shared_var))` for every sample and component.
    fn joint_log_density(&self, x: &FeatureMatrix<T>) -> Result<Matrix<T>> {
        if x.cols() != self.dim() {
            return Err(Error::shape(format!("features have D = {}, mixture has D = {}", x.cols(), self.dim())));
        }
        let half = T::lit(0.5);
        let two_pi = T::lit(std::f64::consts::TAU);
        let inv_var: Vec<T> = self.shared_var.iter().map(|&v| T::one() / v).collect();
        let log_norm = -half * self.shared_var.iter().map(|&v| (two_pi * v).ln()).sum::<T>();
        let log_w: Vec<T> = self.weights.iter().map(|w| w.ln()).collect();

        let k = self.n_components();
        let mut out = Matrix::zeros(x.rows(), k);
        for (i, xi) in x.iter_rows().enumerate() {
            let row = out.row_mut(i);
            for (c, slot) in row.iter_mut().enumerate() {
                let mu = self.means.row(c);
                let mut maha = T::zero();
                for ((&xv, &mv), &iv) in xi.iter().zip(mu).zip(&inv_var) {
                    let diff = xv - mv;
                    maha += diff * diff * iv;
                }
                let log_density = log_norm - half * maha;
                if !log_density.is_finite() {
                    return Err(Error::Numeric(format!("log-density of sample {i} under component {c} is {log_density}")));
                }
                *slot = log_w[c] + log_density;
            }
        }
        Ok(out)
    }
}

fn per_dim_variance<T: Scalar>(x: &Matrix<T>, mean: &[T]) -> Vec<T> {
    let nf = T::from_usize_lossy(x.rows());
    let mut var = vec![T::zero(); x.cols()];
    for row in x.iter_rows() {
        for ((v, &xv), &m) in var.iter_mut().zip(row).zip(mean) {
            let d = xv - m;
            *v += d * d;
        }
    }
    var.into_iter().map(|v| v / nf).collect()
}

fn var_floor_from<T: Scalar>(var: &[T]) -> T {
    let mean_var = var.iter().copied().sum::<T>() / T::from_usize_lossy(var.len());
    (T::lit(1e-6) * mean_var).max(T::lit(1e-12))
}

/// `1e-6 x` mean per-dimension variance of `x` (never below `1e-12`).
pub fn var_floor<T: Scalar>(x: &FeatureMatrix<T>) -> T {
    let nf = T::from_usize_lossy(x.rows());
    let mean: Vec<T> = x.col_sums().into_iter().map(|s| s / nf).collect();
    var_floor_from(&per_dim_variance(x, &mean))
}

/// Posterior responsibilities `P_ik ∝ π_k N(x_i; μ_k, Σ)`, normalized in log space.
pub fn e_step<T: Scalar>(x: &FeatureMatrix<T>, params: &GmmParams<T>) -> Result<ProbMatrix<T>> {
    let mut logp = params.joint_log_density(x)?;
    for i in 0..logp.rows() {
        let row = logp.row_mut(i);
        let z = lse(row);
        if !z.is_finite() {
            return Err(Error::Numeric(format!("sample {i} has zero likelihood under every component")));
        }
        row.iter_mut().for_each(|v| *v = (*v - z).exp());
    }
    Ok(ProbMatrix::new_unchecked(logp))
}

/// Mixture log-likelihood `Σ_i ln Σ_k π_k N(x_i; μ_k, Σ)`.
pub fn log_likelihood<T: Scalar>(x: &FeatureMatrix<T>, params: &GmmParams<T>) -> Result<T> {
    let logp = params.joint_log_density(x)?;
    Ok(logp.iter_rows().map(lse).sum())
}

/// Re-estimates means and the shared diagonal variance from responsibilities `q`.
///
/// Components whose column mass is below `1e-12` keep their previous mean and
/// are left out of the variance sum for this round.
pub fn m_step_from_q<T: Scalar>(
    x: &FeatureMatrix<T>,
    q: &ProbMatrix<T>,
    prev: &GmmParams<T>,
    pi_mode: PiMode,
) -> Result<GmmParams<T>> {
    let (n, d) = x.shape();
    let k = prev.n_components();
    if q.rows() != n {
        return Err(Error::shape(format!("responsibilities have {} rows for {n} samples", q.rows())));
    }
    if q.cols() != k {
        return Err(Error::shape(format!("responsibilities have {} columns for {k} components", q.cols())));
    }
    if prev.dim() != d {
        return Err(Error::shape(format!("features have D = {d}, mixture has D = {}", prev.dim())));
    }
    for (i, s) in q.row_sums().into_iter().enumerate() {
        if (s - T::one()).abs() > T::ingest_tol() {
            return Err(Error::invalid(format!("responsibility row {i} sums to {s}")));
        }
    }

    let mass = q.col_sums();
    let empty_mass = T::lit(EMPTY_MASS);
    let mut means = prev.means.clone();
    let mut live = vec![true; k];
    for c in 0..k {
        if mass[c] < empty_mass {
            live[c] = false;
            log::warn!("mixture component {c} received no mass; keeping its previous mean");
            continue;
        }
        let mu = means.row_mut(c);
        mu.iter_mut().for_each(|v| *v = T::zero());
        for (i, xi) in x.iter_rows().enumerate() {
            let w = q.get(i, c);
            for (m, &xv) in mu.iter_mut().zip(xi) {
                *m += w * xv;
            }
        }
        mu.iter_mut().for_each(|v| *v /= mass[c]);
    }

    let mut var = vec![T::zero(); d];
    for (i, xi) in x.iter_rows().enumerate() {
        for c in (0..k).filter(|&c| live[c]) {
            let w = q.get(i, c);
            for ((v, &xv), &mv) in var.iter_mut().zip(xi).zip(means.row(c)) {
                let diff = xv - mv;
                *v += w * diff * diff;
            }
        }
    }
    let floor = var_floor(x);
    let nf = T::from_usize_lossy(n);
    let shared_var = var.into_iter().map(|v| (v / nf).max(floor)).collect();

    let weights = match pi_mode {
        PiMode::Uniform => vec![T::one() / T::from_usize_lossy(k); k],
        PiMode::Estimate => {
            let total: T = mass.iter().copied().sum();
            mass.iter().map(|&m| m / total).collect()
        }
    };

    Ok(GmmParams { means, shared_var, weights })
}

/// Mixture estimated from the semantic distribution taken as the initial posterior.
pub fn init_from_semantic<T: Scalar>(x: &FeatureMatrix<T>, y: &ProbMatrix<T>, pi_mode: PiMode) -> Result<GmmParams<T>> {
    if y.rows() != x.rows() {
        return Err(Error::shape(format!("semantic matrix has {} rows for {} samples", y.rows(), x.rows())));
    }
    if x.rows() < y.cols() {
        log::warn!("only {} samples for {} classes; some components will be poorly determined", x.rows(), y.cols());
    }
    let start = GmmParams::uniform(x, y.cols());
    m_step_from_q(x, y, &start, pi_mode)
}

/// Plain EM (responsibilities from the mixture itself) until the log-likelihood
/// gain drops below `tol` or `max_iter` rounds have run.
pub fn fit_em<T: Scalar>(
    x: &FeatureMatrix<T>,
    init: GmmParams<T>,
    pi_mode: PiMode,
    max_iter: usize,
    tol: T,
) -> Result<(GmmParams<T>, usize)> {
    let mut params = init;
    let mut last = log_likelihood(x, &params)?;
    for round in 1..=max_iter {
        let p = e_step(x, &params)?;
        params = m_step_from_q(x, &p, &params, pi_mode)?;
        let ll = log_likelihood(x, &params)?;
        let gain = ll - last;
        last = ll;
        if gain.abs() < tol {
            return Ok((params, round));
        }
    }
    Ok((params, max_iter))
}

/// Column-wise concatenation of L2 row-normalized feature blocks.
pub fn concat_features<T: Scalar>(xs: &[FeatureMatrix<T>]) -> Result<FeatureMatrix<T>> {
    let first = xs.first().ok_or_else(|| Error::invalid("nothing to concatenate"))?;
    let n = first.rows();
    if let Some((idx, bad)) = xs.iter().enumerate().find(|(_, x)| x.rows() != n) {
        return Err(Error::shape(format!("block {idx} has {} rows, block 0 has {n}", bad.rows())));
    }
    let blocks: Vec<FeatureMatrix<T>> = xs.iter().map(FeatureMatrix::l2_normalized).collect();
    let d: usize = blocks.iter().map(|b| b.cols()).sum();
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        for b in &blocks {
            data.extend_from_slice(b.row(i));
        }
    }
    FeatureMatrix::new(Matrix::new(n, d, data)?)
}
