//! TOML experiment configuration: parsing, semantic validation, and
//! translation into the runtime types of the solver and experiment layers.
//!
//! Sections are flat structs with a discriminating string field rather than
//! serde-tagged enums: `deny_unknown_fields` is silently ignored on
//! internally tagged enums, and unknown keys must be hard errors here.

use serde::Deserialize;
use thiserror::Error;

use crate::alm::{Monitors, SolverOptions, TauSchedule};
use crate::experiments::{SourceKind, SourceSpec, SweepRule};
use crate::index_functions::IndexFunction;
use crate::operators::TestOperatorSpec;
use crate::regularizers::Regularizer;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    pub regularizer: RegularizerSection,
    pub source: SourceSection,
    /// Optional; derived from the source condition when absent.
    pub phi: Option<PhiSection>,
    pub noise: NoiseSection,
    #[serde(default)]
    pub solver: SolverSection,
    pub stopping: StoppingSection,
    #[serde(default)]
    pub monitors: MonitorSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    /// "diagonal_decay" | "gaussian_convolution" | "dense_gaussian".
    pub operator: String,
    pub n: Option<usize>,
    /// Decay exponent of the diagonal operator.
    pub a: Option<f64>,
    /// Kernel width of the convolution operator.
    pub width: Option<f64>,
    pub rows: Option<usize>,
    pub cols: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerSection {
    /// "quadratic" | "power_sparsity".
    pub kind: String,
    #[serde(default)]
    pub l: QuadraticPenalty,
    pub q: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum QuadraticPenalty {
    #[default]
    Identity,
    FirstDifference,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    #[serde(default = "default_source_kind")]
    pub kind: String,
    pub nu: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    pub support_size: Option<usize>,
}

fn default_source_kind() -> String {
    "standard".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiSection {
    pub coefficient: f64,
    pub exponent: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// Either a single level or a sweep grid.
    pub deltas: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub tau: f64,
    /// Geometric growth factor of the step sizes; 1.0 keeps them constant.
    pub tau_growth: f64,
    pub inner_tol: f64,
    pub max_inner_iterations: usize,
    pub safety_cap: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let opts = SolverOptions::default();
        Self {
            tau: 1.0,
            tau_growth: 1.0,
            inner_tol: opts.inner_tol,
            max_inner_iterations: opts.max_inner_iterations,
            safety_cap: opts.safety_cap,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoppingSection {
    /// "a_priori" | "morozov" | "fixed_iterations".
    pub rule: String,
    pub rho: Option<f64>,
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonitorSection {
    pub kkt: bool,
    pub dual_objective: bool,
    pub guler_samples: usize,
    pub ppm_probes: usize,
    pub seed: u64,
}

impl Default for MonitorSection {
    fn default() -> Self {
        let m = Monitors::default();
        Self {
            kkt: m.kkt,
            dual_objective: m.dual_objective,
            guler_samples: m.guler_samples,
            ppm_probes: m.ppm_probes,
            seed: m.seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Subdirectory name under the output root; defaults to the config stem.
    pub name: Option<String>,
}

impl ExperimentConfig {
    pub fn from_path(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_str(&text)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// All semantic problems at once rather than the first one hit.
    fn validate(&self) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        match self.problem.operator.as_str() {
            "diagonal_decay" => {
                match self.problem.n {
                    Some(0) | None => errors.push("problem: diagonal_decay requires n > 0".into()),
                    _ => {}
                }
                match self.problem.a {
                    Some(a) if a > 0.0 => {}
                    Some(a) => {
                        errors.push(format!("problem: decay exponent a = {a} must be positive"))
                    }
                    None => errors.push("problem: diagonal_decay requires a".into()),
                }
            }
            "gaussian_convolution" => {
                match self.problem.n {
                    Some(0) | None => {
                        errors.push("problem: gaussian_convolution requires n > 0".into())
                    }
                    _ => {}
                }
                match self.problem.width {
                    Some(w) if w >= 0.0 => {}
                    Some(w) => errors.push(format!("problem: width = {w} must be nonnegative")),
                    None => errors.push("problem: gaussian_convolution requires width".into()),
                }
            }
            "dense_gaussian" => {
                if !matches!((self.problem.rows, self.problem.cols), (Some(r), Some(c)) if r > 0 && c > 0)
                {
                    errors.push("problem: dense_gaussian requires rows > 0 and cols > 0".into());
                }
            }
            other => errors.push(format!("problem: unknown operator {other:?}")),
        }
        match self.regularizer.kind.as_str() {
            "quadratic" => {
                if self.regularizer.q.is_some() {
                    errors.push("regularizer: q is only meaningful for power_sparsity".into());
                }
            }
            "power_sparsity" => match self.regularizer.q {
                Some(q) if (1.0..2.0).contains(&q) => {}
                Some(q) => errors.push(format!("regularizer: q = {q} must lie in [1, 2)")),
                None => errors.push("regularizer: power_sparsity requires q".into()),
            },
            other => errors.push(format!("regularizer: unknown kind {other:?}")),
        }
        match self.source.kind.as_str() {
            "standard" => {
                if self.source.nu.is_some() {
                    errors.push("source: nu is only meaningful for kind = \"holder\"".into());
                }
            }
            "holder" => match self.source.nu {
                Some(nu) if nu > 0.0 && nu <= 0.5 => {}
                Some(nu) => errors.push(format!("source: nu = {nu} must lie in (0, 1/2]")),
                None => errors.push("source: kind = \"holder\" requires nu".into()),
            },
            other => errors.push(format!("source: unknown kind {other:?}")),
        }
        if self.source.support_size.is_some()
            && !(self.regularizer.kind == "power_sparsity" && self.regularizer.q == Some(1.0))
        {
            errors.push("source: support_size requires the q = 1 sparsity regularizer".into());
        }
        if let Some(phi) = &self.phi {
            if phi.coefficient <= 0.0 {
                errors.push(format!(
                    "phi: coefficient = {} must be positive",
                    phi.coefficient
                ));
            }
            if !(phi.exponent > 0.0 && phi.exponent <= 0.5) {
                errors.push(format!("phi: exponent = {} must lie in (0, 1/2]", phi.exponent));
            }
        }
        if self.noise.deltas.is_empty() {
            errors.push("noise: deltas must be non-empty".into());
        }
        for &d in &self.noise.deltas {
            if d < 0.0 {
                errors.push(format!("noise: delta = {d} must be nonnegative"));
            }
        }
        if self.noise.seeds.is_empty() {
            errors.push("noise: seeds must be non-empty".into());
        }
        if self.solver.tau <= 0.0 {
            errors.push(format!("solver: tau = {} must be positive", self.solver.tau));
        }
        if self.solver.tau_growth < 1.0 {
            errors.push(format!(
                "solver: tau_growth = {} must be >= 1",
                self.solver.tau_growth
            ));
        }
        if self.solver.inner_tol <= 0.0 {
            errors.push("solver: inner_tol must be positive".into());
        }
        match self.stopping.rule.as_str() {
            "a_priori" => {
                if self.stopping.rho.is_some() || self.stopping.iterations.is_some() {
                    errors.push("stopping: a_priori takes no rho/iterations".into());
                }
            }
            "morozov" => {
                match self.stopping.rho {
                    Some(rho) if rho > 1.0 => {}
                    Some(rho) => errors.push(format!("morozov requires rho > 1, got {rho}")),
                    None => errors.push("morozov requires rho > 1".into()),
                }
                if self.solver.tau_growth > 1.0 {
                    errors.push(
                        "stopping: the discrepancy rule requires a bounded step schedule \
                         (tau_growth = 1)"
                            .into(),
                    );
                }
                if self.noise.deltas.iter().any(|&d| d == 0.0) {
                    errors.push("stopping: the discrepancy rule requires delta > 0".into());
                }
            }
            "fixed_iterations" => match self.stopping.iterations {
                Some(i) if i > 0 => {}
                _ => errors.push("stopping: fixed_iterations requires iterations > 0".into()),
            },
            other => errors.push(format!("stopping: unknown rule {other:?}")),
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }

    pub fn operator_spec(&self) -> TestOperatorSpec {
        match self.problem.operator.as_str() {
            "diagonal_decay" => TestOperatorSpec::DiagonalDecay {
                n: self.problem.n.unwrap(),
                a: self.problem.a.unwrap(),
            },
            "gaussian_convolution" => TestOperatorSpec::GaussianConvolution {
                n: self.problem.n.unwrap(),
                width: self.problem.width.unwrap(),
            },
            _ => TestOperatorSpec::DenseGaussian {
                rows: self.problem.rows.unwrap(),
                cols: self.problem.cols.unwrap(),
                seed: self.problem.seed,
            },
        }
    }

    pub fn regularizer(&self) -> Result<Regularizer, crate::regularizers::RegularizerError> {
        if self.regularizer.kind == "quadratic" {
            let cols = self.domain_dim();
            Ok(match self.regularizer.l {
                QuadraticPenalty::Identity => Regularizer::quadratic_identity(cols),
                QuadraticPenalty::FirstDifference => Regularizer::quadratic(
                    crate::operators::LinearOperator::first_difference(cols),
                ),
            })
        } else {
            Regularizer::power_sparsity(self.regularizer.q.unwrap())
        }
    }

    pub fn domain_dim(&self) -> usize {
        if self.problem.operator == "dense_gaussian" {
            self.problem.cols.unwrap()
        } else {
            self.problem.n.unwrap()
        }
    }

    pub fn source_spec(&self) -> SourceSpec {
        let kind = match self.source.kind.as_str() {
            "holder" => SourceKind::Holder { nu: self.source.nu.unwrap() },
            _ => SourceKind::Standard,
        };
        SourceSpec { kind, seed: self.source.seed, support_size: self.source.support_size }
    }

    pub fn schedule(&self) -> TauSchedule {
        if self.solver.tau_growth > 1.0 {
            TauSchedule::Geometric { initial: self.solver.tau, ratio: self.solver.tau_growth }
        } else {
            TauSchedule::Constant(self.solver.tau)
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            inner_tol: self.solver.inner_tol,
            max_inner_iterations: self.solver.max_inner_iterations,
            safety_cap: self.solver.safety_cap,
        }
    }

    pub fn monitors(&self) -> Monitors {
        Monitors {
            kkt: self.monitors.kkt,
            dual_objective: self.monitors.dual_objective,
            guler_samples: self.monitors.guler_samples,
            ppm_probes: self.monitors.ppm_probes,
            seed: self.monitors.seed,
        }
    }

    /// The explicit `[phi]` if present, otherwise the one the source
    /// construction dictates; requires the built problem for the coefficient.
    pub fn phi_for(
        &self,
        problem: &crate::experiments::Problem,
    ) -> Result<IndexFunction, crate::experiments::ExperimentError> {
        if let Some(p) = &self.phi {
            Ok(IndexFunction::new(p.coefficient, p.exponent)?)
        } else {
            crate::experiments::canonical_phi(problem)
        }
    }

    pub fn sweep_rule(&self) -> Option<SweepRule> {
        match self.stopping.rule.as_str() {
            "a_priori" => Some(SweepRule::APriori),
            "morozov" => Some(SweepRule::Morozov { rho: self.stopping.rho.unwrap() }),
            _ => None,
        }
    }

    pub fn fixed_iterations(&self) -> Option<usize> {
        if self.stopping.rule == "fixed_iterations" {
            self.stopping.iterations
        } else {
            None
        }
    }
}
