//! Measures the convergence rate of the a priori stopped iteration under the
//! standard source condition: Bregman distance to the exact solution versus
//! noise level on a log-log scale, fitted slope against the guaranteed
//! exponent 1.

use almreg::alm::{Monitors, SolverOptions, TauSchedule};
use almreg::experiments::{
    build_problem, canonical_phi, fit_rate, sweep, theoretical_exponent, RateField, SourceKind,
    SourceSpec, SweepConfig, SweepRule,
};
use almreg::index_functions::log_grid;
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
    let cfg = SweepConfig {
        rule: SweepRule::APriori,
        deltas: log_grid(1e-4, 1e-1, 7),
        seeds: vec![11, 12],
        schedule: TauSchedule::Geometric { initial: 1.0, ratio: 1.05 },
        solver: SolverOptions::default(),
        monitors: Monitors::none(),
    };
    let records = sweep(&problem, &phi, &cfg);

    println!("{:>10}  {:>6}  {:>8}  {:>12}  {:>12}", "delta", "seed", "n_stop", "t_stop", "bregman");
    for r in &records {
        println!(
            "{:>10.3e}  {:>6}  {:>8}  {:>12.4e}  {:>12.4e}",
            r.delta, r.seed, r.n_stop, r.t_stop, r.bregman_to_truth
        );
    }

    let fit = fit_rate(&records, RateField::BregmanToTruth).unwrap();
    let exponent =
        theoretical_exponent(problem.source.kind, &problem.regularizer, RateField::BregmanToTruth)
            .unwrap();
    println!(
        "\nfitted slope {:.4} (r^2 = {:.4}), guaranteed exponent {exponent}",
        fit.slope, fit.r_squared
    );
    assert!(fit.slope >= exponent - 0.10);
}
