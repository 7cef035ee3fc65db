//! Discrepancy-principle stopping: iterate until the residual drops below
//! rho * delta, then verify the constant-free bound on the stopping time,
//! t_stop <= 2 / Psi^{-1}((rho^2 - 1) delta^2) + tau_stop.

use almreg::alm::{run, Monitors, SolverOptions, StoppingRule, TauSchedule};
use almreg::experiments::{add_noise, build_problem, canonical_phi, SourceKind, SourceSpec};
use almreg::operators::{make_test_operator, TestOperatorSpec};
use almreg::regularizers::Regularizer;

fn main() {
    let op = make_test_operator(&TestOperatorSpec::DiagonalDecay { n: 100, a: 1.0 }).unwrap();
    let problem = build_problem(
        op,
        Regularizer::quadratic_identity(100),
        &SourceSpec { kind: SourceKind::Standard, seed: 42, support_size: None },
    )
    .unwrap();
    let phi = canonical_phi(&problem).unwrap();
    let rho = 1.5;

    println!(
        "{:>8}  {:>6}  {:>12}  {:>12}  {:>12}  {:>12}",
        "delta", "n*", "residual", "rho*delta", "t_stop", "growth bound"
    );
    for delta in [1e-1, 1e-2, 1e-3, 1e-4] {
        let g_obs = add_noise(&problem.data, delta, 7);
        let out = run(
            &problem.operator,
            &problem.regularizer,
            &g_obs,
            &TauSchedule::Constant(1.0),
            &StoppingRule::Morozov { rho, delta },
            &Monitors::none(),
            Some(&problem.truth_ref()),
            &SolverOptions::default(),
            Some(&phi),
        )
        .unwrap();
        let last = out.records.last().unwrap();
        let bound = 2.0 / phi.psi_inv((rho * rho - 1.0) * delta * delta).unwrap() + last.tau;
        assert!(last.residual <= rho * delta);
        assert!(last.t <= bound);
        println!(
            "{delta:>8.0e}  {:>6}  {:>12.4e}  {:>12.4e}  {:>12.4e}  {:>12.4e}",
            out.final_state.k, last.residual, rho * delta, last.t, bound
        );
    }
}
