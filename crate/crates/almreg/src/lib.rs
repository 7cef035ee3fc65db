//! Augmented Lagrangian (Bregman) iteration for linear ill-posed problems,
//! with a priori and discrepancy-based stopping and tooling to measure the
//! convergence rates the method guarantees under source conditions.

pub mod alm;
pub mod config;
pub mod driver;
pub mod experiments;
pub mod index_functions;
pub mod operators;
pub mod regularizers;

pub use alm::{
    alm_step, dual_objective, iterated_tikhonov_step, run, AlmError, AlmState, IterateRecord,
    Monitors, RunOutput, SolverOptions, StopReason, StoppingRule, TauSchedule, Truth,
};
pub use experiments::{
    add_noise, build_problem, fit_rate, least_squares_slope, sweep, theoretical_exponent,
    verify_variational_inequality, Problem, RateField, RunRecord, SourceKind, SourceSpec,
    SweepConfig, SweepRule, VariationalInequalitySpec,
};
pub use index_functions::IndexFunction;
pub use operators::{LinearOperator, SvdFactorization, TestOperatorSpec};
pub use regularizers::Regularizer;
