//! The outer augmented-Lagrangian iteration, its inner subproblem solvers,
//! stopping rules and the runtime inequality monitors (Gueler estimate, PPM
//! descent probes, subgradient KKT residuals, dual-objective tracking).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::index_functions::IndexFunction;
use crate::operators::{gaussian_vector, LinearOperator};
use crate::regularizers::Regularizer;

/// Feasibility slack used when monitors evaluate `J*` at computed duals; the
/// inner solver leaves residuals of order `inner_tol` in the KKT system, so
/// exact indicator constraints would spuriously report `+inf`.
const MONITOR_CONJUGATE_SLACK: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum AlmError {
    #[error("step size tau = {0} must be positive")]
    InvalidTau(f64),
    #[error("tau schedule exhausted after {0} entries")]
    ScheduleExhausted(usize),
    #[error("morozov stopping requires rho > 1, got {0}")]
    InvalidRho(f64),
    #[error("morozov stopping requires a bounded tau schedule")]
    UnboundedSchedule,
    #[error("inner solver reached {iterations} iterations with gradient-mapping norm {achieved:e} > {target:e}")]
    InnerNotConverged { iterations: usize, achieved: f64, target: f64 },
    #[error("safety cap of {0} outer iterations reached before the stopping rule fired")]
    SafetyCapReached(usize),
    #[error("cumulative time {t:.3e} exceeded 100x the discrepancy growth bound {bound:.3e}")]
    MorozovGrowthViolated { t: f64, bound: f64 },
    #[error(transparent)]
    Operator(#[from] crate::operators::OperatorError),
    #[error(transparent)]
    Regularizer(#[from] crate::regularizers::RegularizerError),
}

/// Pre-defined sequence of positive step sizes `tau_k`.
#[derive(Debug, Clone)]
pub enum TauSchedule {
    Constant(f64),
    Explicit(Vec<f64>),
    /// `tau_k = initial * ratio^{k-1}`. Unbounded for `ratio > 1`, hence
    /// rejected in combination with discrepancy-principle stopping.
    Geometric { initial: f64, ratio: f64 },
}

impl TauSchedule {
    /// Step size for iteration `k` (1-based).
    pub fn tau(&self, k: usize) -> Result<f64, AlmError> {
        let tau = match self {
            TauSchedule::Constant(t) => *t,
            TauSchedule::Explicit(list) => {
                *list.get(k - 1).ok_or(AlmError::ScheduleExhausted(list.len()))?
            }
            TauSchedule::Geometric { initial, ratio } => initial * ratio.powi(k as i32 - 1),
        };
        if tau <= 0.0 {
            return Err(AlmError::InvalidTau(tau));
        }
        Ok(tau)
    }

    /// Whether `sup_k tau_k` is finite.
    pub fn is_bounded(&self) -> bool {
        match self {
            TauSchedule::Constant(_) | TauSchedule::Explicit(_) => true,
            TauSchedule::Geometric { ratio, .. } => *ratio <= 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), AlmError> {
        match self {
            TauSchedule::Constant(t) if *t <= 0.0 => Err(AlmError::InvalidTau(*t)),
            TauSchedule::Explicit(list) => {
                if let Some(&t) = list.iter().find(|&&t| t <= 0.0) {
                    Err(AlmError::InvalidTau(t))
                } else if list.is_empty() {
                    Err(AlmError::ScheduleExhausted(0))
                } else {
                    Ok(())
                }
            }
            TauSchedule::Geometric { initial, .. } if *initial <= 0.0 => {
                Err(AlmError::InvalidTau(*initial))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub enum StoppingRule {
    /// Stop at the first `n` with `t_n >= target_time`.
    APriori { target_time: f64 },
    /// Stop at the first `n` with `||K u_n - g_obs|| <= rho * delta`.
    Morozov { rho: f64, delta: f64 },
    FixedIterations(usize),
}

impl StoppingRule {
    pub fn validate(&self, schedule: &TauSchedule) -> Result<(), AlmError> {
        if let StoppingRule::Morozov { rho, .. } = self {
            if *rho <= 1.0 {
                return Err(AlmError::InvalidRho(*rho));
            }
            if !schedule.is_bounded() {
                return Err(AlmError::UnboundedSchedule);
            }
        }
        Ok(())
    }
}

/// State after `k` outer iterations.
#[derive(Debug, Clone)]
pub struct AlmState {
    pub k: usize,
    pub u: DVector<f64>,
    pub p: DVector<f64>,
    pub t: f64,
    pub residual: f64,
    pub j_value: f64,
    pub inner_iterations: usize,
}

impl AlmState {
    pub fn initial(primal_dim: usize, dual_dim: usize) -> Self {
        Self {
            k: 0,
            u: DVector::zeros(primal_dim),
            p: DVector::zeros(dual_dim),
            t: 0.0,
            residual: f64::INFINITY,
            j_value: 0.0,
            inner_iterations: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub inner_tol: f64,
    pub max_inner_iterations: usize,
    pub safety_cap: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { inner_tol: 1e-10, max_inner_iterations: 50_000, safety_cap: 1_000_000 }
    }
}

/// Which runtime monitors to evaluate on every iterate.
#[derive(Debug, Clone)]
pub struct Monitors {
    pub kkt: bool,
    pub dual_objective: bool,
    /// Number of sampled dual vectors for the Gueler inequality; 0 disables.
    pub guler_samples: usize,
    /// Number of unit-norm probe directions for PPM optimality; 0 disables.
    pub ppm_probes: usize,
    pub seed: u64,
}

impl Default for Monitors {
    fn default() -> Self {
        Self { kkt: true, dual_objective: true, guler_samples: 20, ppm_probes: 10, seed: 0 }
    }
}

impl Monitors {
    pub fn none() -> Self {
        Self { kkt: false, dual_objective: false, guler_samples: 0, ppm_probes: 0, seed: 0 }
    }
}

/// Ground truth of a synthetic problem, enabling error diagnostics.
#[derive(Debug, Clone)]
pub struct Truth {
    pub u: DVector<f64>,
    /// A subgradient of `J` at `u`, fixing the Bregman distance.
    pub xi: DVector<f64>,
}

/// Per-iteration diagnostics. Monitor fields are `None` when the monitor is
/// disabled (or, for the error fields, when no ground truth is available).
#[derive(Debug, Clone)]
pub struct IterateRecord {
    pub k: usize,
    pub tau: f64,
    pub t: f64,
    pub residual: f64,
    pub j_value: f64,
    pub dual_norm: f64,
    pub inner_iterations: usize,
    pub dual_objective: Option<f64>,
    pub bregman_to_truth: Option<f64>,
    pub norm_error: Option<f64>,
    pub kkt_violation: Option<f64>,
    pub guler_min_slack: Option<f64>,
    pub ppm_violation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StopReason {
    APriori,
    Morozov,
    FixedIterations,
}

#[derive(Debug)]
pub struct RunOutput {
    pub records: Vec<IterateRecord>,
    pub final_state: AlmState,
    pub stop_reason: StopReason,
}

/// Inner solver for one ALM step: minimizes
/// `tau/2 ||K u - b||^2 + J(u)` with shifted data `b = g_obs + p_{k-1}/tau`.
enum InnerSolver {
    /// `K` and `L` both diagonal (or identity): the normal equations decouple.
    DiagonalQuadratic { k_diag: DVector<f64>, l_diag: DVector<f64> },
    /// Dense SPD solve of `(tau K^T K + L^T L) u = tau K^T b`; the Cholesky
    /// factor is reused while `tau` stays unchanged.
    DenseQuadratic {
        ktk: DMatrix<f64>,
        ltl: DMatrix<f64>,
        cached: Option<(f64, Cholesky<f64, Dyn>)>,
    },
    /// FISTA with warm start and prox-gradient-mapping stopping.
    ProxGradient { spectral_norm: f64 },
}

impl InnerSolver {
    fn new(op: &LinearOperator, reg: &Regularizer) -> Result<Self, AlmError> {
        if let Some(l) = reg.quadratic_l() {
            if op.is_diagonal() && l.is_diagonal() {
                let k_diag = op.apply(&DVector::from_element(op.cols(), 1.0))?;
                let l_diag = l.apply(&DVector::from_element(l.cols(), 1.0))?;
                return Ok(InnerSolver::DiagonalQuadratic { k_diag, l_diag });
            }
            let kd = op.to_dense();
            let ld = l.to_dense();
            Ok(InnerSolver::DenseQuadratic {
                ktk: kd.transpose() * &kd,
                ltl: ld.transpose() * &ld,
                cached: None,
            })
        } else {
            Ok(InnerSolver::ProxGradient { spectral_norm: op.spectral_norm()? })
        }
    }

    /// Returns the minimizer and the number of inner iterations used.
    fn solve(
        &mut self,
        op: &LinearOperator,
        reg: &Regularizer,
        tau: f64,
        b: &DVector<f64>,
        warm_start: &DVector<f64>,
        opts: &SolverOptions,
    ) -> Result<(DVector<f64>, usize), AlmError> {
        match self {
            InnerSolver::DiagonalQuadratic { k_diag, l_diag } => {
                let mut u = DVector::zeros(k_diag.len());
                for i in 0..u.len() {
                    let denom = tau * k_diag[i] * k_diag[i] + l_diag[i] * l_diag[i];
                    u[i] = tau * k_diag[i] * b[i] / denom;
                }
                Ok((u, 1))
            }
            InnerSolver::DenseQuadratic { ktk, ltl, cached } => {
                let needs_refactor = match cached {
                    Some((cached_tau, _)) => *cached_tau != tau,
                    None => true,
                };
                if needs_refactor {
                    let system = ltl.clone() + &*ktk * tau;
                    let chol = Cholesky::new(system).ok_or_else(|| {
                        AlmError::Operator(crate::operators::OperatorError::InvalidSpec(
                            "inner system tau K^T K + L^T L is not positive definite".into(),
                        ))
                    })?;
                    *cached = Some((tau, chol));
                }
                let (_, chol) = cached.as_ref().unwrap();
                let rhs = op.adjoint_apply(b)? * tau;
                Ok((chol.solve(&rhs), 1))
            }
            InnerSolver::ProxGradient { spectral_norm } => {
                fista(op, reg, tau, b, warm_start, *spectral_norm, opts)
            }
        }
    }
}

/// Accelerated proximal gradient for `tau/2 ||K u - b||^2 + J(u)`.
fn fista(
    op: &LinearOperator,
    reg: &Regularizer,
    tau: f64,
    b: &DVector<f64>,
    warm_start: &DVector<f64>,
    spectral_norm: f64,
    opts: &SolverOptions,
) -> Result<(DVector<f64>, usize), AlmError> {
    let lipschitz = (tau * spectral_norm * spectral_norm).max(f64::MIN_POSITIVE);
    let step = 1.0 / lipschitz;
    let mut x = warm_start.clone();
    let mut y = warm_start.clone();
    let mut theta = 1.0f64;
    let mut last_mapping = f64::INFINITY;
    for iter in 1..=opts.max_inner_iterations {
        let grad = op.adjoint_apply(&(op.apply(&y)? - b))? * tau;
        let x_next = reg.prox(step, &(&y - &grad * step))?;
        let mapping = (&y - &x_next).norm() / step;
        last_mapping = mapping;
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let beta = (theta - 1.0) / theta_next;
        y = &x_next + (&x_next - &x) * beta;
        // Restart the momentum when it points uphill.
        if (&x_next - &x).dot(&grad) > 0.0 {
            y = x_next.clone();
            theta = 1.0;
        } else {
            theta = theta_next;
        }
        x = x_next;
        if mapping <= opts.inner_tol {
            return Ok((x, iter));
        }
    }
    Err(AlmError::InnerNotConverged {
        iterations: opts.max_inner_iterations,
        achieved: last_mapping,
        target: opts.inner_tol,
    })
}

/// One outer ALM step: primal minimization with shifted data followed by the
/// dual (multiplier) update `p_k = p_{k-1} + tau (g_obs - K u_k)`.
pub fn alm_step(
    state: &AlmState,
    tau: f64,
    g_obs: &DVector<f64>,
    op: &LinearOperator,
    reg: &Regularizer,
    opts: &SolverOptions,
) -> Result<AlmState, AlmError> {
    if tau <= 0.0 {
        return Err(AlmError::InvalidTau(tau));
    }
    let mut solver = InnerSolver::new(op, reg)?;
    step_with_solver(&mut solver, state, tau, g_obs, op, reg, opts)
}

fn step_with_solver(
    solver: &mut InnerSolver,
    state: &AlmState,
    tau: f64,
    g_obs: &DVector<f64>,
    op: &LinearOperator,
    reg: &Regularizer,
    opts: &SolverOptions,
) -> Result<AlmState, AlmError> {
    // The linear term -<p, Ku - g> completes the square: minimizing the
    // augmented Lagrangian equals Tikhonov with data b = g_obs + p/tau.
    let b = g_obs + &state.p / tau;
    let (u, inner_iterations) = solver.solve(op, reg, tau, &b, &state.u, opts)?;
    let ku = op.apply(&u)?;
    let p = &state.p + (g_obs - &ku) * tau;
    Ok(AlmState {
        k: state.k + 1,
        u: u.clone(),
        p,
        t: state.t + tau,
        residual: (ku - g_obs).norm(),
        j_value: reg.eval(&u),
        inner_iterations,
    })
}

/// One step of the direct iterated-Tikhonov recursion
/// `argmin tau ||K u - g|| ^2 + ||L (u - u_prev)||^2`, i.e. the SPD solve
/// `(tau K^T K + L^T L) u = tau K^T g + L^T L u_prev`.
pub fn iterated_tikhonov_step(
    u_prev: &DVector<f64>,
    tau: f64,
    g_obs: &DVector<f64>,
    op: &LinearOperator,
    l: &LinearOperator,
) -> Result<DVector<f64>, AlmError> {
    if tau <= 0.0 {
        return Err(AlmError::InvalidTau(tau));
    }
    let kd = op.to_dense();
    let ld = l.to_dense();
    let ltl = ld.transpose() * &ld;
    let system = kd.transpose() * &kd * tau + &ltl;
    let chol = Cholesky::new(system).ok_or_else(|| {
        AlmError::Operator(crate::operators::OperatorError::InvalidSpec(
            "tau K^T K + L^T L is singular (shared null direction)".into(),
        ))
    })?;
    let rhs = op.adjoint_apply(g_obs)? * tau + ltl * u_prev;
    Ok(chol.solve(&rhs))
}

/// Dual objective `G(p, g) = J*(K* p) - <p, g>`.
pub fn dual_objective(
    p: &DVector<f64>,
    g: &DVector<f64>,
    op: &LinearOperator,
    reg: &Regularizer,
) -> Result<f64, AlmError> {
    let kstar_p = op.adjoint_apply(p)?;
    Ok(reg.conjugate(&kstar_p) - p.dot(g))
}

fn dual_objective_relaxed(
    p: &DVector<f64>,
    g: &DVector<f64>,
    op: &LinearOperator,
    reg: &Regularizer,
    slack: f64,
) -> Result<f64, AlmError> {
    let kstar_p = op.adjoint_apply(p)?;
    Ok(reg.conjugate_with_slack(&kstar_p, slack) - p.dot(g))
}

/// Normalized slacks of the Gueler inequality
/// `t_n ||p_n - p_{n-1}||^2 / (2 tau_n^2) <= G(p) - G(p_n) - ||p - p_n||^2/(2 t_n) + ||p||^2/(2 t_n)`
/// for each sampled dual `p`, as `(rhs - lhs) / (1 + |rhs|)`.
pub fn check_guler(
    p_n: &DVector<f64>,
    p_prev: &DVector<f64>,
    tau_n: f64,
    t_n: f64,
    g_obs: &DVector<f64>,
    op: &LinearOperator,
    reg: &Regularizer,
    samples: &[(DVector<f64>, f64)],
) -> Result<Vec<f64>, AlmError> {
    let lhs = t_n * (p_n - p_prev).norm_squared() / (2.0 * tau_n * tau_n);
    let g_pn = dual_objective_relaxed(p_n, g_obs, op, reg, MONITOR_CONJUGATE_SLACK)?;
    let mut slacks = Vec::with_capacity(samples.len());
    for (p, g_p) in samples {
        let rhs =
            g_p - g_pn - (p - p_n).norm_squared() / (2.0 * t_n) + p.norm_squared() / (2.0 * t_n);
        slacks.push((rhs - lhs) / (1.0 + rhs.abs()));
    }
    Ok(slacks)
}

/// Max descent-probe violation of PPM optimality of `p_k`: for
/// `F(p) = 1/2 ||p - p_prev||^2 + tau (J*(K*p) - <p, g>)` checks
/// `F(p_k + eps d) >= F(p_k)` over unit probes `d` and `eps in {1e-3, 1e-4}`.
pub fn check_ppm_optimality(
    p_k: &DVector<f64>,
    p_prev: &DVector<f64>,
    tau: f64,
    g_obs: &DVector<f64>,
    op: &LinearOperator,
    reg: &Regularizer,
    probes: &[DVector<f64>],
) -> Result<f64, AlmError> {
    let f = |p: &DVector<f64>| -> Result<f64, AlmError> {
        Ok(0.5 * (p - p_prev).norm_squared()
            + tau * dual_objective_relaxed(p, g_obs, op, reg, MONITOR_CONJUGATE_SLACK)?)
    };
    let f_center = f(p_k)?;
    let mut worst: f64 = 0.0;
    for d in probes {
        for eps in [1e-3, 1e-4] {
            let perturbed = f(&(p_k + d * eps))?;
            if perturbed.is_finite() {
                worst = worst.max(f_center - perturbed);
            }
        }
    }
    Ok(worst)
}

/// KKT residual of `K* p_k` as a subgradient of `J` at `u_k`.
pub fn check_kkt_subgradient(
    u: &DVector<f64>,
    p: &DVector<f64>,
    op: &LinearOperator,
    reg: &Regularizer,
) -> Result<f64, AlmError> {
    let kstar_p = op.adjoint_apply(p)?;
    if let Some(q) = reg.sparsity_exponent() {
        if q == 1.0 {
            let max_abs = kstar_p.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let ball_violation = (max_abs - 1.0).max(0.0);
            let mut support_violation = 0.0f64;
            for i in 0..u.len() {
                if u[i] != 0.0 {
                    support_violation = support_violation.max((kstar_p[i] - u[i].signum()).abs());
                }
            }
            return Ok(ball_violation + support_violation);
        }
    }
    let grad = reg.subgradient(u);
    Ok((kstar_p - grad).norm() / (1.0 + u.norm()))
}

/// Runs the ALM until the stopping rule fires.
///
/// `morozov_phi` enables the early-abort guard: a discrepancy run whose
/// cumulative time exceeds 100x the growth bound
/// `2 / Psi^{-1}((rho^2 - 1) delta^2) + tau_n` fails instead of looping.
#[allow(clippy::too_many_arguments)]
pub fn run(
    op: &LinearOperator,
    reg: &Regularizer,
    g_obs: &DVector<f64>,
    schedule: &TauSchedule,
    stop: &StoppingRule,
    monitors: &Monitors,
    truth: Option<&Truth>,
    opts: &SolverOptions,
    morozov_phi: Option<&IndexFunction>,
) -> Result<RunOutput, AlmError> {
    schedule.validate()?;
    stop.validate(schedule)?;
    let mut solver = InnerSolver::new(op, reg)?;
    let mut state = AlmState::initial(op.cols(), op.rows());
    let mut records = Vec::new();

    // Gueler samples are fixed across the run; G(p, g_obs) is precomputed.
    // Only samples with finite dual objective are admissible.
    let guler_samples: Vec<(DVector<f64>, f64)> = if monitors.guler_samples > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(monitors.seed ^ 0x675c_e514);
        let mut samples = vec![(DVector::zeros(op.rows()), 0.0 - reg_conj_zero(reg))];
        let scales = [0.1, 1.0, 10.0];
        let mut attempts = 0;
        while samples.len() < monitors.guler_samples && attempts < 50 * monitors.guler_samples {
            attempts += 1;
            let dir = gaussian_vector(&mut rng, op.rows());
            let scale = scales[attempts % scales.len()];
            let p = &dir * (scale / dir.norm());
            let g_p = dual_objective(&p, g_obs, op, reg)?;
            if g_p.is_finite() {
                samples.push((p, g_p));
            }
        }
        samples
    } else {
        Vec::new()
    };
    let ppm_probes: Vec<DVector<f64>> = if monitors.ppm_probes > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(monitors.seed ^ 0x99e7_a01d);
        (0..monitors.ppm_probes)
            .map(|_| {
                let d = gaussian_vector(&mut rng, op.rows());
                let n = d.norm();
                d / n
            })
            .collect()
    } else {
        Vec::new()
    };

    let growth_guard = match (stop, morozov_phi) {
        (StoppingRule::Morozov { rho, delta }, Some(phi)) if *delta > 0.0 => {
            let psi_inv = phi.psi_inv((rho * rho - 1.0) * delta * delta).unwrap_or(0.0);
            if psi_inv > 0.0 {
                Some(2.0 / psi_inv)
            } else {
                None
            }
        }
        _ => None,
    };

    loop {
        let k = state.k + 1;
        if k > opts.safety_cap {
            return Err(AlmError::SafetyCapReached(opts.safety_cap));
        }
        let tau = schedule.tau(k)?;
        let prev_p = state.p.clone();
        state = step_with_solver(&mut solver, &state, tau, g_obs, op, reg, opts)?;

        let dual_obj = if monitors.dual_objective {
            Some(dual_objective_relaxed(&state.p, g_obs, op, reg, MONITOR_CONJUGATE_SLACK)?)
        } else {
            None
        };
        let kkt = if monitors.kkt {
            Some(check_kkt_subgradient(&state.u, &state.p, op, reg)?)
        } else {
            None
        };
        let guler = if guler_samples.is_empty() {
            None
        } else {
            let slacks =
                check_guler(&state.p, &prev_p, tau, state.t, g_obs, op, reg, &guler_samples)?;
            slacks.into_iter().min_by(f64::total_cmp)
        };
        let ppm = if ppm_probes.is_empty() {
            None
        } else {
            Some(check_ppm_optimality(&state.p, &prev_p, tau, g_obs, op, reg, &ppm_probes)?)
        };
        let (bregman, norm_error) = match truth {
            Some(truth) => (
                Some(reg.bregman(&state.u, &truth.u, &truth.xi)),
                Some((&state.u - &truth.u).norm()),
            ),
            None => (None, None),
        };
        records.push(IterateRecord {
            k: state.k,
            tau,
            t: state.t,
            residual: state.residual,
            j_value: state.j_value,
            dual_norm: state.p.norm(),
            inner_iterations: state.inner_iterations,
            dual_objective: dual_obj,
            bregman_to_truth: bregman,
            norm_error,
            kkt_violation: kkt,
            guler_min_slack: guler,
            ppm_violation: ppm,
        });

        match stop {
            StoppingRule::APriori { target_time } => {
                if state.t >= *target_time {
                    return Ok(RunOutput { records, final_state: state, stop_reason: StopReason::APriori });
                }
            }
            StoppingRule::Morozov { rho, delta } => {
                if state.residual <= rho * delta {
                    return Ok(RunOutput { records, final_state: state, stop_reason: StopReason::Morozov });
                }
                if let Some(bound) = growth_guard {
                    if state.t > 100.0 * (bound + tau) {
                        return Err(AlmError::MorozovGrowthViolated {
                            t: state.t,
                            bound: bound + tau,
                        });
                    }
                }
            }
            StoppingRule::FixedIterations(n) => {
                if state.k >= *n {
                    return Ok(RunOutput {
                        records,
                        final_state: state,
                        stop_reason: StopReason::FixedIterations,
                    });
                }
            }
        }
    }
}

fn reg_conj_zero(reg: &Regularizer) -> f64 {
    // J*(0) = -inf J = 0 for every supported kind.
    let _ = reg;
    0.0
}
