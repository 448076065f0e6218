//! Alternating optimisation of the fused prediction `Q` and the per-source
//! Gaussian mixtures.
//!
//! One outer round computes the visual posteriors `P_i` from the current
//! mixtures, solves the entropic transport problem on
//! `S = Σ η_i P_i + Σ λ_i Y_i`, and refits every mixture from the resulting
//! `Q`. Mixtures start from the semantic distributions, so the visual
//! clusters are tied to class identities from the first round.

use crate::error::{Error, Result};
use crate::gmm::{e_step, fit_em, init_from_semantic, m_step_from_q, GmmParams, PiMode};
use crate::matrix::Matrix;
use crate::prob::{argmax_rows, entropy, row_normalize, FeatureMatrix, ProbMatrix};
use crate::scalar::Scalar;
use crate::sinkhorn::{sinkhorn_solve, Marginals, SinkhornResult};

/// Default semantic weight applied to every VLM source.
pub const DEFAULT_LAMBDA: f64 = 0.8;
pub const DEFAULT_EPSILON: f64 = 0.01;
pub const DEFAULT_OUTER_ITERS: usize = 10;
pub const DEFAULT_SINKHORN_ITERS: usize = 3;
pub const DEFAULT_OUTER_TOL: f64 = 1e-4;

/// Rounds and tolerance of the plain EM used by [`run_no_joint`].
const NO_JOINT_EM_ITERS: usize = 50;
const NO_JOINT_EM_TOL: f64 = 1e-8;

/// Column mass prescribed to the transport plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ColMarginal {
    /// `1/K` per class.
    #[default]
    Uniform,
    /// Proportional to the class mass of the semantic prior.
    FromSemantic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig<T> {
    pub epsilon: T,
    /// One weight per semantic source; empty means [`DEFAULT_LAMBDA`] for each,
    /// a single value is broadcast.
    pub lambdas: Vec<T>,
    /// One weight per feature source, summing to 1; empty means uniform.
    pub etas: Vec<T>,
    pub outer_iters: usize,
    pub sinkhorn_iters: usize,
    pub sinkhorn_tol: T,
    /// Stop once the mean per-row L1 change of `Q` falls below this.
    pub outer_tol: T,
    pub col_marginal: ColMarginal,
    pub normalize_features: bool,
    pub pi_mode: PiMode,
    pub seed: u64,
}

impl<T: Scalar> Default for FusionConfig<T> {
    fn default() -> Self {
        Self {
            epsilon: T::lit(DEFAULT_EPSILON),
            lambdas: Vec::new(),
            etas: Vec::new(),
            outer_iters: DEFAULT_OUTER_ITERS,
            sinkhorn_iters: DEFAULT_SINKHORN_ITERS,
            sinkhorn_tol: T::lit(crate::sinkhorn::STANDALONE_TOL),
            outer_tol: T::lit(DEFAULT_OUTER_TOL),
            col_marginal: ColMarginal::Uniform,
            normalize_features: true,
            pi_mode: PiMode::Uniform,
            seed: 0,
        }
    }
}

impl<T: Scalar> FusionConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > T::zero()) || !self.epsilon.is_finite() {
            return Err(Error::invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.lambdas.iter().any(|l| !(*l > T::zero()) || !l.is_finite()) {
            return Err(Error::invalid("every lambda must be positive"));
        }
        if self.etas.iter().any(|e| !(*e >= T::zero()) || !e.is_finite()) {
            return Err(Error::invalid("every eta must be nonnegative"));
        }
        if !self.etas.is_empty() {
            let s: T = self.etas.iter().copied().sum();
            if (s - T::one()).abs() > T::internal_tol() {
                return Err(Error::invalid(format!("etas sum to {s}, not 1")));
            }
        }
        if self.outer_iters == 0 {
            return Err(Error::invalid("at least one outer iteration is required"));
        }
        if self.sinkhorn_iters == 0 {
            return Err(Error::invalid("at least one Sinkhorn sweep is required"));
        }
        if !(self.sinkhorn_tol >= T::zero()) || !(self.outer_tol >= T::zero()) {
            return Err(Error::invalid("tolerances must be nonnegative"));
        }
        Ok(())
    }

    /// Scales `etas` to sum to one.
    pub fn with_normalized_etas(mut self) -> Result<Self> {
        if !self.etas.is_empty() {
            let s: T = self.etas.iter().copied().sum();
            if !(s > T::zero()) {
                return Err(Error::invalid("etas must have positive total weight"));
            }
            self.etas.iter_mut().for_each(|e| *e /= s);
        }
        Ok(self)
    }

    pub fn resolved_lambdas(&self, n_semantic: usize) -> Result<Vec<T>> {
        match self.lambdas.len() {
            0 => Ok(vec![T::lit(DEFAULT_LAMBDA); n_semantic]),
            1 => Ok(vec![self.lambdas[0]; n_semantic]),
            m if m == n_semantic => Ok(self.lambdas.clone()),
            m => Err(Error::invalid(format!("{m} lambdas for {n_semantic} semantic sources"))),
        }
    }

    pub fn resolved_etas(&self, n_visual: usize) -> Result<Vec<T>> {
        match self.etas.len() {
            0 => Ok(vec![T::one() / T::from_usize_lossy(n_visual.max(1)); n_visual]),
            m if m == n_visual => Ok(self.etas.clone()),
            m => Err(Error::invalid(format!("{m} etas for {n_visual} feature sources"))),
        }
    }
}

/// One outer round of the alternating loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord<T> {
    pub iteration: usize,
    /// Fused objective on the transport plan (total mass 1).
    pub objective: T,
    /// Mean per-row L1 distance to the previous `Q`.
    pub q_change: T,
    pub violation: T,
    pub sinkhorn_sweeps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult<T> {
    /// Row-stochastic prediction distribution.
    pub q: ProbMatrix<T>,
    /// Final transport plan before row rescaling.
    pub plan: Matrix<T>,
    /// One mixture per feature source, in input order.
    pub params: Vec<GmmParams<T>>,
    pub trace: Vec<TraceRecord<T>>,
    /// 1-based round at which the change criterion was met.
    pub converged_at: Option<usize>,
}

impl<T: Scalar> FusionResult<T> {
    pub fn predictions(&self) -> Vec<usize> {
        predict(&self.q)
    }
}

/// Per-row argmax of `Q`, lowest index on ties.
pub fn predict<T: Scalar>(q: &ProbMatrix<T>) -> Vec<usize> {
    argmax_rows(q)
}

/// `Σ η_i Tr(Qᵀ P_i) + Σ λ_i Tr(Qᵀ Y_i) + ε H(Q)` with explicit weights.
pub fn weighted_objective<T: Scalar, P: AsRef<Matrix<T>>, Y: AsRef<Matrix<T>>>(
    q: &Matrix<T>,
    ps: &[P],
    etas: &[T],
    ys: &[Y],
    lambdas: &[T],
    epsilon: T,
) -> Result<T> {
    if ps.len() != etas.len() || ys.len() != lambdas.len() {
        return Err(Error::invalid("one weight per source is required"));
    }
    let mut total = T::zero();
    for (p, &eta) in ps.iter().zip(etas) {
        total += eta * q.dot(p.as_ref())?;
    }
    for (y, &lambda) in ys.iter().zip(lambdas) {
        total += lambda * q.dot(y.as_ref())?;
    }
    Ok(total + epsilon * entropy(q)?)
}

/// Fused objective with weights taken from `config`; `q` is a transport plan.
pub fn objective<T: Scalar, P: AsRef<Matrix<T>>, Y: AsRef<Matrix<T>>>(
    q: &Matrix<T>,
    ps: &[P],
    ys: &[Y],
    config: &FusionConfig<T>,
) -> Result<T> {
    let etas = config.resolved_etas(ps.len())?;
    let lambdas = config.resolved_lambdas(ys.len())?;
    weighted_objective(q, ps, &etas, ys, &lambdas, config.epsilon)
}

/// Validated, weighted and preprocessed inputs shared by both run modes.
struct Problem<T> {
    xs: Vec<FeatureMatrix<T>>,
    ys: Vec<ProbMatrix<T>>,
    etas: Vec<T>,
    lambdas: Vec<T>,
    prior: ProbMatrix<T>,
    marginals: Marginals<T>,
}

impl<T: Scalar> Problem<T> {
    fn new(xs: &[FeatureMatrix<T>], ys: &[ProbMatrix<T>], config: &FusionConfig<T>) -> Result<Self> {
        config.validate()?;
        let first = ys.first().ok_or_else(|| Error::invalid("at least one semantic distribution is required"))?;
        let (n, k) = first.shape();
        for (i, y) in ys.iter().enumerate().skip(1) {
            if y.rows() != n {
                return Err(Error::shape(format!("semantic source {i} has {} samples, source 0 has {n}", y.rows())));
            }
            if y.cols() != k {
                return Err(Error::shape(format!("semantic source {i} has {} classes, source 0 has {k}", y.cols())));
            }
        }
        for (i, x) in xs.iter().enumerate() {
            if x.rows() != n {
                return Err(Error::shape(format!("feature source {i} has {} samples, semantic sources have {n}", x.rows())));
            }
        }
        let lambdas = config.resolved_lambdas(ys.len())?;
        let etas = config.resolved_etas(xs.len())?;

        let mut acc = Matrix::zeros(n, k);
        for (y, &l) in ys.iter().zip(&lambdas) {
            acc.add_scaled(l, y)?;
        }
        let prior = row_normalize(&acc)?;
        let marginals = match config.col_marginal {
            ColMarginal::Uniform => Marginals::uniform(n, k),
            ColMarginal::FromSemantic => Marginals::from_semantic(&prior)?,
        };
        let xs = if config.normalize_features {
            xs.iter().map(FeatureMatrix::l2_normalized).collect()
        } else {
            xs.to_vec()
        };
        Ok(Self { xs, ys: ys.to_vec(), etas, lambdas, prior, marginals })
    }

    fn n(&self) -> usize {
        self.prior.rows()
    }

    fn scores(&self, ps: &[ProbMatrix<T>]) -> Result<Matrix<T>> {
        let mut s = Matrix::zeros(self.prior.rows(), self.prior.cols());
        for (p, &eta) in ps.iter().zip(&self.etas) {
            s.add_scaled(eta, p)?;
        }
        for (y, &lambda) in self.ys.iter().zip(&self.lambdas) {
            s.add_scaled(lambda, y)?;
        }
        Ok(s)
    }

    fn fuse(&self, ps: &[ProbMatrix<T>], config: &FusionConfig<T>) -> Result<(SinkhornResult<T>, ProbMatrix<T>)> {
        let s = self.scores(ps)?;
        let solved = sinkhorn_solve(&s, config.epsilon, &self.marginals, config.sinkhorn_iters, config.sinkhorn_tol)?;
        let q = row_normalize(&solved.plan)?;
        Ok((solved, q))
    }

    fn record(
        &self,
        iteration: usize,
        solved: &SinkhornResult<T>,
        ps: &[ProbMatrix<T>],
        q: &ProbMatrix<T>,
        prev: &ProbMatrix<T>,
        epsilon: T,
    ) -> Result<TraceRecord<T>> {
        let objective = weighted_objective(&solved.plan, ps, &self.etas, &self.ys, &self.lambdas, epsilon)?;
        if !objective.is_finite() {
            return Err(Error::Numeric(format!("objective is not finite at round {iteration}")));
        }
        let q_change = mean_row_l1(q, prev);
        Ok(TraceRecord {
            iteration,
            objective,
            q_change,
            violation: solved.final_violation,
            sinkhorn_sweeps: solved.iterations_used,
        })
    }
}

fn mean_row_l1<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> T {
    let total: T = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| (x - y).abs()).sum();
    total / T::from_usize_lossy(a.rows())
}

/// Joint optimisation: semantic initialisation, then alternating E-step,
/// transport fusion and `Q`-driven mixture refits.
///
/// `xs` may be empty, in which case `Q` is the transport projection of the
/// weighted semantic scores alone.
pub fn run<T: Scalar>(xs: &[FeatureMatrix<T>], ys: &[ProbMatrix<T>], config: &FusionConfig<T>) -> Result<FusionResult<T>> {
    let problem = Problem::new(xs, ys, config)?;
    let mut params = problem
        .xs
        .iter()
        .map(|x| init_from_semantic(x, &problem.prior, config.pi_mode))
        .collect::<Result<Vec<_>>>()?;

    let mut prev_q = problem.prior.clone();
    let mut trace = Vec::with_capacity(config.outer_iters);
    let mut converged_at = None;
    let mut last = None;

    for t in 1..=config.outer_iters {
        let ps = problem
            .xs
            .iter()
            .zip(&params)
            .map(|(x, p)| e_step(x, p))
            .collect::<Result<Vec<_>>>()?;
        let (solved, q) = problem.fuse(&ps, config)?;
        params = problem
            .xs
            .iter()
            .zip(&params)
            .map(|(x, p)| m_step_from_q(x, &q, p, config.pi_mode))
            .collect::<Result<Vec<_>>>()?;
        let rec = problem.record(t, &solved, &ps, &q, &prev_q, config.epsilon)?;
        log::info!(
            "round {t}: objective {:.6} change {:.3e} violation {:.3e}",
            rec.objective,
            rec.q_change,
            rec.violation
        );
        let done = rec.q_change < config.outer_tol;
        trace.push(rec);
        prev_q = q.clone();
        last = Some((solved.plan, q));
        if done {
            converged_at = Some(t);
            break;
        }
    }

    let (plan, q) = last.expect("at least one outer round");
    debug_assert_eq!(problem.n(), q.rows());
    Ok(FusionResult { q, plan, params, trace, converged_at })
}

/// Ablation without joint learning: each mixture is fitted by ordinary EM
/// from its semantic initialisation, then the distributions are fused once.
pub fn run_no_joint<T: Scalar>(
    xs: &[FeatureMatrix<T>],
    ys: &[ProbMatrix<T>],
    config: &FusionConfig<T>,
) -> Result<FusionResult<T>> {
    let problem = Problem::new(xs, ys, config)?;
    let mut params = Vec::with_capacity(problem.xs.len());
    let mut ps = Vec::with_capacity(problem.xs.len());
    for x in &problem.xs {
        let init = init_from_semantic(x, &problem.prior, config.pi_mode)?;
        let (fit, _) = fit_em(x, init, config.pi_mode, NO_JOINT_EM_ITERS, T::lit(NO_JOINT_EM_TOL))?;
        ps.push(e_step(x, &fit)?);
        params.push(fit);
    }
    let (solved, q) = problem.fuse(&ps, config)?;
    let rec = problem.record(1, &solved, &ps, &q, &problem.prior, config.epsilon)?;
    Ok(FusionResult { q, plan: solved.plan, params, trace: vec![rec], converged_at: None })
}
