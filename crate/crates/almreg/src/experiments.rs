//! Synthetic problem construction under source conditions, noise injection,
//! delta sweeps, log-log rate fitting and the quantitative bound checks
//! attached to the convergence-rate theorems.

use nalgebra::DVector;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::alm::{
    run, Monitors, RunOutput, SolverOptions, StopReason, StoppingRule, TauSchedule, Truth,
};
use crate::index_functions::IndexFunction;
use crate::operators::{gaussian_vector, LinearOperator};
use crate::regularizers::Regularizer;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("source construction: {0}")]
    SourceConstruction(String),
    #[error("restricted injectivity failure: smallest restricted singular value {0:e} <= 1e-6")]
    RestrictedInjectivity(f64),
    #[error("holder exponent nu = {0} outside (0, 1/2]")]
    InvalidNu(f64),
    #[error("rate fit needs at least 4 records with positive values, got {0}")]
    TooFewRecords(usize),
    #[error("unsupported combination for theoretical exponent: {0}")]
    UnsupportedCombination(String),
    #[error(transparent)]
    Operator(#[from] crate::operators::OperatorError),
    #[error(transparent)]
    Regularizer(#[from] crate::regularizers::RegularizerError),
    #[error(transparent)]
    Alm(#[from] crate::alm::AlmError),
    #[error(transparent)]
    IndexFunction(#[from] crate::index_functions::IndexFunctionError),
}

/// Regularity of the manufactured exact solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceKind {
    /// `K* p_dagger` is a subgradient of `J` at `u_dagger`.
    Standard,
    /// `(K*K)^nu p_dagger` is a subgradient of `J` at `u_dagger`.
    Holder { nu: f64 },
}

impl SourceKind {
    /// The smoothness exponent, reading the standard condition as `nu = 1/2`.
    pub fn nu(&self) -> f64 {
        match self {
            SourceKind::Standard => 0.5,
            SourceKind::Holder { nu } => *nu,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SourceSpec {
    pub kind: SourceKind,
    pub seed: u64,
    /// Requested support size for sparsity problems (`q = 1` construction).
    pub support_size: Option<usize>,
}

/// A fully constructed synthetic inverse problem with known exact solution.
#[derive(Debug)]
pub struct Problem {
    pub operator: LinearOperator,
    pub regularizer: Regularizer,
    /// Exact solution `u_dagger`.
    pub truth: DVector<f64>,
    /// Exact data `g = K u_dagger`.
    pub data: DVector<f64>,
    /// Source element `p_dagger`.
    pub source_element: DVector<f64>,
    /// The subgradient `xi_dagger` of `J` at `u_dagger` produced by the source.
    pub subgradient: DVector<f64>,
    pub source: SourceSpec,
}

impl Problem {
    pub fn truth_ref(&self) -> Truth {
        Truth { u: self.truth.clone(), xi: self.subgradient.clone() }
    }

    pub fn j_at_truth(&self) -> f64 {
        self.regularizer.eval(&self.truth)
    }
}

fn check_subgradient_invariant(
    reg: &Regularizer,
    u: &DVector<f64>,
    xi: &DVector<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<(), ExperimentError> {
    for _ in 0..50 {
        let v = u + gaussian_vector(rng, u.len());
        if reg.eval(&v) < reg.eval(u) + xi.dot(&(&v - u)) - 1e-10 {
            return Err(ExperimentError::SourceConstruction(
                "constructed xi is not a subgradient at u_dagger".into(),
            ));
        }
    }
    Ok(())
}

/// Builds `(K, u_dagger, g, xi_dagger, p_dagger)` satisfying the requested
/// source condition; every invariant is verified before the problem is
/// returned.
pub fn build_problem(
    operator: LinearOperator,
    regularizer: Regularizer,
    source: &SourceSpec,
) -> Result<Problem, ExperimentError> {
    if let SourceKind::Holder { nu } = source.kind {
        if !(nu > 0.0 && nu <= 0.5) {
            return Err(ExperimentError::InvalidNu(nu));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(source.seed);
    let n = operator.cols();
    let (truth, p_dagger, xi_dagger) = if regularizer.is_quadratic() {
        let l = regularizer.quadratic_l().unwrap();
        let (p, xi) = match source.kind {
            SourceKind::Standard => {
                let p = gaussian_vector(&mut rng, operator.rows());
                let xi = operator.adjoint_apply(&p)?;
                (p, xi)
            }
            SourceKind::Holder { nu } => {
                let svd = operator.svd()?;
                // Coefficients decaying like i^{-1/2} along the singular
                // basis put u_dagger at the boundary of the nu-smoothness
                // class, so the realized error actually shows the nu-rate
                // instead of the roughness of a white-noise source element.
                let rank = svd.singular_values().len();
                let raw = gaussian_vector(&mut rng, rank);
                let weighted =
                    DVector::from_fn(rank, |i, _| raw[i] / ((i + 1) as f64).sqrt());
                let p = if operator.rows() == operator.cols() {
                    svd.right_vectors() * weighted
                } else {
                    // Rectangular case: express p through K* so the defining
                    // relation stays exact on the domain side.
                    svd.left_vectors() * weighted
                };
                let xi = if operator.rows() == operator.cols() {
                    svd.fractional_gram_apply(nu, &p)?
                } else {
                    let pulled = operator.adjoint_apply(&p)?;
                    svd.fractional_gram_apply(nu - 0.5_f64.min(nu), &pulled)?
                };
                (p, xi)
            }
        };
        let u = if l.is_identity() {
            // dJ(u) = u, so u_dagger = xi_dagger.
            xi.clone()
        } else {
            // dJ(u) = L^T L u: solve the SPD system L^T L u = xi.
            let ld = l.to_dense();
            let ltl = ld.transpose() * &ld;
            let chol = nalgebra::Cholesky::new(ltl).ok_or_else(|| {
                ExperimentError::SourceConstruction("L^T L is singular".into())
            })?;
            chol.solve(&xi)
        };
        // For the standard condition xi = K* p must hold exactly; for Holder
        // it holds with the fractional factor. Verify the least-squares
        // residual of the defining relation.
        let recon = match source.kind {
            SourceKind::Standard => operator.adjoint_apply(&p)?,
            SourceKind::Holder { .. } => xi.clone(),
        };
        let resid = (&recon - &xi).norm();
        if resid > 1e-10 * (1.0 + xi.norm()) {
            return Err(ExperimentError::SourceConstruction(format!(
                "source relation residual {resid:e}"
            )));
        }
        (u, p, xi)
    } else {
        let q = regularizer.sparsity_exponent().unwrap();
        if q == 1.0 {
            build_l1_certificate(&operator, source, &mut rng)?
        } else {
            // q in (1, 2): dJ is single-valued, so u_dagger is recovered from
            // xi_dagger coordinatewise; exact sparsity is not enforceable.
            let mut p = gaussian_vector(&mut rng, operator.rows());
            p /= p.norm();
            let xi = match source.kind {
                SourceKind::Standard => operator.adjoint_apply(&p)?,
                SourceKind::Holder { nu } => {
                    operator.svd()?.fractional_gram_apply(nu, &operator.adjoint_apply(&p)?)?
                }
            };
            let u = DVector::from_fn(n, |i, _| {
                let x = xi[i];
                x.signum() * (x.abs() / q).powf(1.0 / (q - 1.0))
            });
            (u, p, xi)
        }
    };
    check_subgradient_invariant(&regularizer, &truth, &xi_dagger, &mut rng)?;
    let data = operator.apply(&truth)?;
    Ok(Problem {
        operator,
        regularizer,
        truth,
        data,
        source_element: p_dagger,
        subgradient: xi_dagger,
        source: source.clone(),
    })
}

/// Dual-certificate construction for `q = 1`: picks a support `S` of the
/// requested size, solves the minimum-norm system `(K_S)^T p = signs`, and
/// verifies `|(K^* p)_i| < 1` off the support. The resulting `K^* p` is an
/// exact subgradient of the l1 norm at any `u` with `sign(u_S) = signs`.
fn build_l1_certificate(
    operator: &LinearOperator,
    source: &SourceSpec,
    rng: &mut ChaCha8Rng,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>), ExperimentError> {
    let n = operator.cols();
    let s = source.support_size.unwrap_or(1);
    if s == 0 || s > n / 4 {
        return Err(ExperimentError::SourceConstruction(format!(
            "support size {s} must lie in [1, cols/4]"
        )));
    }
    let dense = operator.to_dense();
    for attempt in 0..20u64 {
        let mut attempt_rng = ChaCha8Rng::seed_from_u64(source.seed ^ (attempt << 32) | 1);
        // Random support and signs.
        let mut indices: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = (crate::operators::standard_normal(&mut attempt_rng).abs() * 1e6) as usize
                % (i + 1);
            indices.swap(i, j);
        }
        let support: Vec<usize> = indices[..s].to_vec();
        let signs: Vec<f64> = (0..s)
            .map(|_| if crate::operators::standard_normal(&mut attempt_rng) >= 0.0 { 1.0 } else { -1.0 })
            .collect();
        let k_s = dense.select_columns(support.iter());
        // Restricted injectivity on the support columns.
        let svd = LinearOperator::dense(k_s.clone()).svd()?;
        let smallest = svd.singular_values()[svd.singular_values().len() - 1];
        if smallest <= 1e-6 {
            return Err(ExperimentError::RestrictedInjectivity(smallest));
        }
        // Minimum-norm p with K_S^T p = signs: p = K_S (K_S^T K_S)^{-1} signs.
        let gram = k_s.transpose() * &k_s;
        let chol = nalgebra::Cholesky::new(gram).ok_or_else(|| {
            ExperimentError::SourceConstruction("restricted Gram matrix is singular".into())
        })?;
        let coeffs = chol.solve(&DVector::from_column_slice(&signs));
        let p = &k_s * coeffs;
        let xi = operator.adjoint_apply(&p)?;
        // Certificate must stay strictly inside the unit ball off the support.
        let mut valid = true;
        for i in 0..n {
            if support.contains(&i) {
                if (xi[i] - signs[support.iter().position(|&j| j == i).unwrap()]).abs() > 1e-10 {
                    valid = false;
                }
            } else if xi[i].abs() >= 1.0 - 1e-8 {
                valid = false;
            }
        }
        if !valid {
            continue;
        }
        let mut u = DVector::zeros(n);
        for (idx, &i) in support.iter().enumerate() {
            let magnitude = 1.0 + crate::operators::standard_normal(rng).abs();
            u[i] = signs[idx] * magnitude;
        }
        return Ok((u, p, xi));
    }
    Err(ExperimentError::SourceConstruction(
        "no valid l1 dual certificate found in 20 attempts".into(),
    ))
}

/// Perturbs `g` by a seeded Gaussian direction rescaled so that
/// `||g - g_delta|| = delta` exactly; `delta = 0` returns `g` unchanged.
pub fn add_noise(g: &DVector<f64>, delta: f64, seed: u64) -> DVector<f64> {
    if delta == 0.0 {
        return g.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir = gaussian_vector(&mut rng, g.len());
    g + &dir * (delta / dir.norm())
}

/// Distance measure `D(u, u_dagger)` of a variational inequality.
#[derive(Debug, Clone, Copy)]
pub enum DistanceKind {
    /// `beta * D_J^{xi_dagger}(u, u_dagger)` with `beta` in `(0, 1]`.
    ScaledBregman { beta: f64 },
    /// `coeff * ||u - u_dagger||^q`.
    NormPower { coeff: f64, q: f64 },
}

#[derive(Debug, Clone)]
pub struct VariationalInequalitySpec {
    pub phi: IndexFunction,
    pub distance: DistanceKind,
}

impl VariationalInequalitySpec {
    /// The exact construction valid under the standard source condition:
    /// `beta = 1` and `Phi(s) = ||p_dagger|| sqrt(s)`.
    pub fn standard(problem: &Problem) -> Result<Self, ExperimentError> {
        let c = problem.source_element.norm();
        Ok(Self {
            phi: IndexFunction::new(c, 0.5)?,
            distance: DistanceKind::ScaledBregman { beta: 1.0 },
        })
    }

    /// The Holder construction for quadratic `J` with `L = Id` and
    /// `0 < nu < 1/2`: `beta = 1/2` and `Phi(s) = c s^{2nu/(1+2nu)}` with the
    /// interpolation/Young constants balanced so that `1 - beta = 1/2`.
    pub fn holder_quadratic(problem: &Problem, nu: f64) -> Result<Self, ExperimentError> {
        if !(nu > 0.0 && nu < 0.5) {
            return Err(ExperimentError::InvalidNu(nu));
        }
        let p_norm = problem.source_element.norm();
        let one_minus = 1.0 - 2.0 * nu;
        // 1 - beta = eta^{2/(1-2nu)} ||p|| (1-2nu)/2 * 2^{(1-2nu)/2} = 1/2.
        let eta = (0.5 / (p_norm * (one_minus / 2.0) * 2f64.powf(one_minus / 2.0)))
            .powf(one_minus / 2.0);
        let c = p_norm * 2f64.powf(one_minus / 2.0) * (1.0 + 2.0 * nu)
            / (2.0 * eta.powf(2.0 / (1.0 + 2.0 * nu)));
        Ok(Self {
            phi: IndexFunction::new(c, 2.0 * nu / (1.0 + 2.0 * nu))?,
            distance: DistanceKind::ScaledBregman { beta: 0.5 },
        })
    }

    pub fn distance_value(&self, problem: &Problem, u: &DVector<f64>) -> f64 {
        match self.distance {
            DistanceKind::ScaledBregman { beta } => {
                beta * problem.regularizer.bregman(u, &problem.truth, &problem.subgradient)
            }
            DistanceKind::NormPower { coeff, q } => coeff * (u - &problem.truth).norm().powf(q),
        }
    }
}

/// The index function canonically attached to a problem: the exponent comes
/// from the source condition and the regularizer family, the coefficient from
/// the construction where it is computable (`||p_dagger||` otherwise).
pub fn canonical_phi(problem: &Problem) -> Result<IndexFunction, ExperimentError> {
    if problem.regularizer.is_quadratic() {
        match problem.source.kind {
            SourceKind::Standard => Ok(VariationalInequalitySpec::standard(problem)?.phi),
            SourceKind::Holder { nu } if nu < 0.5 => {
                Ok(VariationalInequalitySpec::holder_quadratic(problem, nu)?.phi)
            }
            SourceKind::Holder { .. } => Ok(VariationalInequalitySpec::standard(problem)?.phi),
        }
    } else {
        let q = problem.regularizer.sparsity_exponent().unwrap();
        let nu = problem.source.kind.nu();
        let p = q * nu / (q - 1.0 + 2.0 * nu);
        Ok(IndexFunction::new(problem.source_element.norm(), p.min(0.5))?)
    }
}

/// Stopping arm of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepRule {
    /// `t_n >= 1 / Psi^{-1}(delta^2)`.
    APriori,
    Morozov { rho: f64 },
}

#[derive(Debug, Clone)]
pub struct MonitorSummary {
    pub min_guler_slack: Option<f64>,
    pub max_ppm_violation: Option<f64>,
    pub max_kkt_violation: Option<f64>,
    pub dual_objective_monotone: Option<bool>,
}

/// Result of one `(delta, seed)` sweep cell.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub delta: f64,
    pub seed: u64,
    pub n_stop: usize,
    pub t_stop: f64,
    pub tau_at_stop: f64,
    pub residual_at_stop: f64,
    pub bregman_to_truth: f64,
    pub norm_error: f64,
    pub dual_norm: f64,
    pub stop_reason: StopReason,
    pub morozov_growth_ok: Option<bool>,
    pub monitors: MonitorSummary,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub rule: SweepRule,
    pub deltas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub schedule: TauSchedule,
    pub solver: SolverOptions,
    pub monitors: Monitors,
}

/// Runs one cell: noise injection, ALM solve, record extraction.
fn run_cell(
    problem: &Problem,
    phi: &IndexFunction,
    cfg: &SweepConfig,
    delta: f64,
    seed: u64,
) -> RunRecord {
    let g_obs = add_noise(&problem.data, delta, seed);
    let stop = match cfg.rule {
        SweepRule::APriori => {
            let target = phi.apriori_total_time(delta).unwrap_or(f64::INFINITY);
            StoppingRule::APriori { target_time: target }
        }
        SweepRule::Morozov { rho } => StoppingRule::Morozov { rho, delta },
    };
    let truth = problem.truth_ref();
    let mut monitors = cfg.monitors.clone();
    monitors.seed ^= seed;
    let outcome = run(
        &problem.operator,
        &problem.regularizer,
        &g_obs,
        &cfg.schedule,
        &stop,
        &monitors,
        Some(&truth),
        &cfg.solver,
        Some(phi),
    );
    match outcome {
        Ok(out) => record_from_output(problem, phi, cfg, delta, seed, &out),
        Err(e) => RunRecord {
            delta,
            seed,
            n_stop: 0,
            t_stop: 0.0,
            tau_at_stop: 0.0,
            residual_at_stop: f64::NAN,
            bregman_to_truth: f64::NAN,
            norm_error: f64::NAN,
            dual_norm: f64::NAN,
            stop_reason: StopReason::FixedIterations,
            morozov_growth_ok: None,
            monitors: MonitorSummary {
                min_guler_slack: None,
                max_ppm_violation: None,
                max_kkt_violation: None,
                dual_objective_monotone: None,
            },
            error: Some(e.to_string()),
        },
    }
}

fn record_from_output(
    problem: &Problem,
    phi: &IndexFunction,
    cfg: &SweepConfig,
    delta: f64,
    seed: u64,
    out: &RunOutput,
) -> RunRecord {
    let last = out.records.last().expect("at least one iteration");
    let min_guler =
        out.records.iter().filter_map(|r| r.guler_min_slack).min_by(f64::total_cmp);
    let max_ppm = out.records.iter().filter_map(|r| r.ppm_violation).max_by(f64::total_cmp);
    let max_kkt = out.records.iter().filter_map(|r| r.kkt_violation).max_by(f64::total_cmp);
    let monotone = if cfg.monitors.dual_objective {
        let mut ok = true;
        let mut prev = f64::INFINITY;
        for r in &out.records {
            if let Some(obj) = r.dual_objective {
                if obj > prev + 1e-10 * (1.0 + prev.abs()) {
                    ok = false;
                }
                prev = obj;
            }
        }
        Some(ok)
    } else {
        None
    };
    let growth_ok = match cfg.rule {
        SweepRule::Morozov { rho } if out.stop_reason == StopReason::Morozov => Some(
            check_morozov_growth(last.t, last.tau, phi, rho, delta).unwrap_or(false),
        ),
        _ => None,
    };
    let reg = &problem.regularizer;
    RunRecord {
        delta,
        seed,
        n_stop: out.final_state.k,
        t_stop: out.final_state.t,
        tau_at_stop: last.tau,
        residual_at_stop: out.final_state.residual,
        bregman_to_truth: reg.bregman(&out.final_state.u, &problem.truth, &problem.subgradient),
        norm_error: (&out.final_state.u - &problem.truth).norm(),
        dual_norm: out.final_state.p.norm(),
        stop_reason: out.stop_reason.clone(),
        morozov_growth_ok: growth_ok,
        monitors: MonitorSummary {
            min_guler_slack: min_guler,
            max_ppm_violation: max_ppm,
            max_kkt_violation: max_kkt,
            dual_objective_monotone: monotone,
        },
        error: None,
    }
}

/// Runs every `(delta, seed)` cell; cells are independent and evaluated in
/// parallel, results are sorted by `(delta, seed)` before being returned.
pub fn sweep(problem: &Problem, phi: &IndexFunction, cfg: &SweepConfig) -> Vec<RunRecord> {
    let cells: Vec<(f64, u64)> = cfg
        .deltas
        .iter()
        .flat_map(|&d| cfg.seeds.iter().map(move |&s| (d, s)))
        .collect();
    let mut records: Vec<RunRecord> = cells
        .par_iter()
        .map(|&(delta, seed)| run_cell(problem, phi, cfg, delta, seed))
        .collect();
    records.sort_by(|a, b| a.delta.total_cmp(&b.delta).then(a.seed.cmp(&b.seed)));
    records
}

/// Quantity to fit against `delta` on a log-log scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateField {
    BregmanToTruth,
    NormError,
    DualNorm,
    Residual,
}

impl RateField {
    fn extract(&self, r: &RunRecord) -> f64 {
        match self {
            RateField::BregmanToTruth => r.bregman_to_truth,
            RateField::NormError => r.norm_error,
            RateField::DualNorm => r.dual_norm,
            RateField::Residual => r.residual_at_stop,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub delta_range: (f64, f64),
    pub points: usize,
}

/// Least squares of `y = slope x + intercept`; returns `(slope, intercept, r^2)`.
pub fn least_squares_slope(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let mean_y = sy / n;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let ss_res: f64 =
        points.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };
    (slope, intercept, r2)
}

/// Fits `log y` against `log delta` over the successful records; records with
/// non-positive `y` are excluded.
pub fn fit_rate(records: &[RunRecord], field: RateField) -> Result<RateFit, ExperimentError> {
    let points: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.error.is_none() && r.delta > 0.0)
        .map(|r| (r.delta, field.extract(r)))
        .filter(|&(_, y)| y > 0.0 && y.is_finite())
        .map(|(d, y)| (d.ln(), y.ln()))
        .collect();
    if points.len() < 4 {
        return Err(ExperimentError::TooFewRecords(points.len()));
    }
    let (slope, intercept, r_squared) = least_squares_slope(&points);
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).exp();
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).exp();
    Ok(RateFit { slope, intercept, r_squared, delta_range: (lo, hi), points: points.len() })
}

/// The rate exponent predicted by the theory for `log D` (resp. `log ||.||`)
/// against `log delta`.
pub fn theoretical_exponent(
    source: SourceKind,
    reg: &Regularizer,
    field: RateField,
) -> Result<f64, ExperimentError> {
    match (reg.sparsity_exponent(), field) {
        (None, RateField::BregmanToTruth) => match source {
            SourceKind::Standard => Ok(1.0),
            SourceKind::Holder { nu } => Ok(4.0 * nu / (1.0 + 2.0 * nu)),
        },
        (Some(q), RateField::NormError) => {
            let nu = source.nu();
            Ok(2.0 * nu / (q - 1.0 + 2.0 * nu))
        }
        _ => Err(ExperimentError::UnsupportedCombination(format!(
            "source {source:?} with field {field:?}"
        ))),
    }
}

/// Worst sampled slack of the variational inequality
/// `D(u, u_dagger) <= J(u) - J(u_dagger) + Phi(||K u - g||^2)`, normalized by
/// the perturbation scale of the sample it came from.
pub fn verify_variational_inequality(
    problem: &Problem,
    vi: &VariationalInequalitySpec,
    sample_count: usize,
    seed: u64,
) -> Result<f64, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = problem.truth.len();
    let scales = [1e-3, 1e-2, 1e-1, 1.0, 10.0];
    let j_truth = problem.j_at_truth();
    let mut worst = f64::INFINITY;
    let mut evaluate = |u: &DVector<f64>, scale: f64| -> Result<(), ExperimentError> {
        let residual_sq = (problem.operator.apply(u)? - &problem.data).norm_squared();
        let slack = problem.regularizer.eval(u) - j_truth + vi.phi.phi(residual_sq)?
            - vi.distance_value(problem, u);
        worst = worst.min(slack / scale);
        Ok(())
    };
    // Coordinate directions at every scale, then random directions.
    for &scale in &scales {
        for i in 0..n.min(sample_count / scales.len() / 2 + 1) {
            let mut u = problem.truth.clone();
            u[i] += scale;
            evaluate(&u, scale)?;
        }
    }
    let mut produced = 0;
    while produced < sample_count {
        let dir = gaussian_vector(&mut rng, n);
        let scale = scales[produced % scales.len()];
        let u = &problem.truth + &dir * (scale / dir.norm());
        evaluate(&u, scale)?;
        produced += 1;
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy)]
pub struct RatioStats {
    pub max: f64,
    pub median: f64,
}

impl RatioStats {
    pub fn stable(&self) -> bool {
        self.max.is_finite() && self.median > 0.0 && self.max <= 3.0 * self.median
    }
}

/// Ratio stability of the main-theorem bounds across a sweep: per record the
/// observed quantity is divided by the bound expression with its unknown
/// constant stripped, and the sweep passes when max <= 3x median.
#[derive(Debug, Clone, Copy)]
pub struct BoundStabilityReport {
    /// `D / (t_n (Psi(16/t_n) + delta^2))`.
    pub primal: RatioStats,
    /// `||K u_n - g_obs||^2 / (Psi(16/t_n) + delta^2)`.
    pub residual: RatioStats,
    /// `||p_n||^2 / (t_n^2 (Psi(2/t_n) + delta^2))`.
    pub dual: RatioStats,
}

impl BoundStabilityReport {
    pub fn all_stable(&self) -> bool {
        self.primal.stable() && self.residual.stable() && self.dual.stable()
    }
}

fn ratio_stats(values: &[f64]) -> RatioStats {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    if sorted.is_empty() {
        return RatioStats { max: f64::NAN, median: f64::NAN };
    }
    let median = sorted[sorted.len() / 2];
    RatioStats { max: *sorted.last().unwrap(), median }
}

pub fn check_mainthm_bound(
    records: &[RunRecord],
    phi: &IndexFunction,
) -> Result<BoundStabilityReport, ExperimentError> {
    let mut primal = Vec::new();
    let mut residual = Vec::new();
    let mut dual = Vec::new();
    for r in records.iter().filter(|r| r.error.is_none()) {
        let t = r.t_stop;
        let d2 = r.delta * r.delta;
        let envelope16 = phi.psi(16.0 / t)? + d2;
        let envelope2 = phi.psi(2.0 / t)? + d2;
        primal.push(r.bregman_to_truth / (t * envelope16));
        residual.push(r.residual_at_stop.powi(2) / envelope16);
        dual.push(r.dual_norm.powi(2) / (t * t * envelope2));
    }
    Ok(BoundStabilityReport {
        primal: ratio_stats(&primal),
        residual: ratio_stats(&residual),
        dual: ratio_stats(&dual),
    })
}

/// Exact, constant-free growth bound of the discrepancy principle:
/// `t_stop <= 2 / Psi^{-1}((rho^2 - 1) delta^2) + tau_stop`.
pub fn check_morozov_growth(
    t_stop: f64,
    tau_at_stop: f64,
    phi: &IndexFunction,
    rho: f64,
    delta: f64,
) -> Result<bool, ExperimentError> {
    let bound = 2.0 / phi.psi_inv((rho * rho - 1.0) * delta * delta)? + tau_at_stop;
    Ok(t_stop <= bound + 1e-10 * bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{make_test_operator, TestOperatorSpec};
    use approx::assert_abs_diff_eq;

    fn diag_op() -> LinearOperator {
        make_test_operator(&TestOperatorSpec::DiagonalDecay { n: 3, a: 1.0 }).unwrap()
    }

    #[test]
    fn build_standard_quadratic_diagonal() {
        // With p normalized, u = K* p = diag(1, 1/2, 1/3) p.
        let problem = build_problem(
            diag_op(),
            Regularizer::quadratic_identity(3),
            &SourceSpec { kind: SourceKind::Standard, seed: 1, support_size: None },
        )
        .unwrap();
        let expected = diag_op().adjoint_apply(&problem.source_element).unwrap();
        assert!((&problem.truth - &expected).norm() < 1e-14);
        assert!((&problem.data - diag_op().apply(&problem.truth).unwrap()).norm() < 1e-14);
    }

    #[test]
    fn build_holder_quadratic_diagonal() {
        let problem = build_problem(
            diag_op(),
            Regularizer::quadratic_identity(3),
            &SourceSpec { kind: SourceKind::Holder { nu: 0.25 }, seed: 1, support_size: None },
        )
        .unwrap();
        // u = diag(sigma^{1/2}) p for nu = 1/4.
        let p = &problem.source_element;
        for (i, sigma) in [1.0_f64, 0.5, 1.0 / 3.0].into_iter().enumerate() {
            assert_abs_diff_eq!(problem.truth[i], sigma.sqrt() * p[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn build_l1_problem_passes_invariants() {
        let op = make_test_operator(&TestOperatorSpec::DenseGaussian {
            rows: 20,
            cols: 40,
            seed: 11,
        })
        .unwrap();
        let problem = build_problem(
            op,
            Regularizer::power_sparsity(1.0).unwrap(),
            &SourceSpec { kind: SourceKind::Standard, seed: 5, support_size: Some(3) },
        )
        .unwrap();
        let xi = &problem.subgradient;
        let support: Vec<usize> =
            (0..40).filter(|&i| problem.truth[i] != 0.0).collect();
        assert_eq!(support.len(), 3);
        for i in 0..40 {
            assert!(xi[i].abs() <= 1.0 + 1e-12);
            if problem.truth[i] != 0.0 {
                assert_abs_diff_eq!(xi[i], problem.truth[i].signum(), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn invalid_nu_rejected() {
        let r = build_problem(
            diag_op(),
            Regularizer::quadratic_identity(3),
            &SourceSpec { kind: SourceKind::Holder { nu: 0.7 }, seed: 1, support_size: None },
        );
        assert!(matches!(r, Err(ExperimentError::InvalidNu(_))));
    }

    #[test]
    fn add_noise_exact_magnitude() {
        let g = DVector::from_column_slice(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(add_noise(&g, 0.0, 1), g);
        for &delta in &[1e-4, 1e-1, 2.0] {
            let gd = add_noise(&g, delta, 7);
            assert_abs_diff_eq!((&gd - &g).norm(), delta, epsilon = 1e-14 * delta.max(1.0));
        }
        assert_eq!(add_noise(&g, 0.5, 3), add_noise(&g, 0.5, 3));
        assert_ne!(add_noise(&g, 0.5, 3), add_noise(&g, 0.5, 4));
    }

    #[test]
    fn fit_rate_exact_log_linear() {
        let mk = |delta: f64, y: f64| RunRecord {
            delta,
            seed: 0,
            n_stop: 1,
            t_stop: 1.0,
            tau_at_stop: 1.0,
            residual_at_stop: y,
            bregman_to_truth: y,
            norm_error: y,
            dual_norm: y,
            stop_reason: StopReason::APriori,
            morozov_growth_ok: None,
            monitors: MonitorSummary {
                min_guler_slack: None,
                max_ppm_violation: None,
                max_kkt_violation: None,
                dual_objective_monotone: None,
            },
            error: None,
        };
        let exact: Vec<RunRecord> =
            [1e-1, 1e-2, 1e-3, 1e-4].iter().map(|&d| mk(d, d)).collect();
        let fit = fit_rate(&exact, RateField::BregmanToTruth).unwrap();
        assert_abs_diff_eq!(fit.slope, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.r_squared, 1.0, epsilon = 1e-12);

        let powered: Vec<RunRecord> =
            [1e-1, 1e-2, 1e-3, 1e-4].iter().map(|&d| mk(d, 3.0 * d.powf(2.0 / 3.0))).collect();
        let fit = fit_rate(&powered, RateField::NormError).unwrap();
        assert_abs_diff_eq!(fit.slope, 2.0 / 3.0, epsilon = 1e-12);

        let too_few: Vec<RunRecord> = vec![mk(1e-1, 0.0), mk(1e-2, -1.0), mk(1e-3, 1.0)];
        assert!(matches!(
            fit_rate(&too_few, RateField::BregmanToTruth),
            Err(ExperimentError::TooFewRecords(_))
        ));
    }

    #[test]
    fn theoretical_exponents() {
        let quad = Regularizer::quadratic_identity(2);
        assert_eq!(
            theoretical_exponent(SourceKind::Standard, &quad, RateField::BregmanToTruth).unwrap(),
            1.0
        );
        assert_abs_diff_eq!(
            theoretical_exponent(
                SourceKind::Holder { nu: 0.25 },
                &quad,
                RateField::BregmanToTruth
            )
            .unwrap(),
            2.0 / 3.0,
            epsilon = 1e-14
        );
        let l1 = Regularizer::power_sparsity(1.0).unwrap();
        assert_eq!(
            theoretical_exponent(SourceKind::Standard, &l1, RateField::NormError).unwrap(),
            1.0
        );
        assert!(theoretical_exponent(SourceKind::Standard, &l1, RateField::BregmanToTruth)
            .is_err());
    }

    #[test]
    fn vi_standard_slack_nonnegative() {
        let op = make_test_operator(&TestOperatorSpec::DiagonalDecay { n: 20, a: 1.0 }).unwrap();
        let problem = build_problem(
            op,
            Regularizer::quadratic_identity(20),
            &SourceSpec { kind: SourceKind::Standard, seed: 3, support_size: None },
        )
        .unwrap();
        let vi = VariationalInequalitySpec::standard(&problem).unwrap();
        let worst = verify_variational_inequality(&problem, &vi, 500, 9).unwrap();
        assert!(worst >= -1e-8, "worst normalized slack {worst}");
        // At u = u_dagger the slack is exactly zero.
        let residual_sq: f64 = 0.0;
        assert_eq!(vi.phi.phi(residual_sq).unwrap(), 0.0);
    }

    #[test]
    fn vi_holder_slack_nonnegative() {
        let op = make_test_operator(&TestOperatorSpec::DiagonalDecay { n: 20, a: 1.0 }).unwrap();
        let problem = build_problem(
            op,
            Regularizer::quadratic_identity(20),
            &SourceSpec { kind: SourceKind::Holder { nu: 0.25 }, seed: 3, support_size: None },
        )
        .unwrap();
        let vi = VariationalInequalitySpec::holder_quadratic(&problem, 0.25).unwrap();
        let worst = verify_variational_inequality(&problem, &vi, 500, 10).unwrap();
        assert!(worst >= -1e-8, "worst normalized slack {worst}");
    }

    #[test]
    fn morozov_growth_trivial_first_step() {
        let phi = IndexFunction::new(1.0, 0.5).unwrap();
        // n* = 1: t_1 = tau_1 and the bound is >= tau_1.
        assert!(check_morozov_growth(1.0, 1.0, &phi, 2.0, 0.01).unwrap());
    }
}
