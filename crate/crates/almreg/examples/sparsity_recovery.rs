//! l1-regularized recovery of a 3-sparse vector from 50 random measurements
//! of a 100-dimensional signal. The exact solution carries a dual
//! certificate, so the reconstruction error decays linearly in the noise
//! level under discrepancy stopping.

use almreg::alm::{run, Monitors, SolverOptions, StoppingRule, TauSchedule};
use almreg::experiments::{add_noise, build_problem, SourceKind, SourceSpec};
use almreg::operators::{make_test_operator, TestOperatorSpec};
use almreg::regularizers::Regularizer;

fn main() {
    let op = make_test_operator(&TestOperatorSpec::DenseGaussian { rows: 50, cols: 100, seed: 7 })
        .unwrap();
    let problem = build_problem(
        op,
        Regularizer::power_sparsity(1.0).unwrap(),
        &SourceSpec { kind: SourceKind::Standard, seed: 9, support_size: Some(3) },
    )
    .unwrap();
    let support: Vec<usize> = (0..100).filter(|&i| problem.truth[i] != 0.0).collect();
    println!("true support: {support:?}");
    println!(
        "certificate: max off-support |K* p| = {:.4}",
        (0..100)
            .filter(|i| !support.contains(i))
            .map(|i| problem.subgradient[i].abs())
            .fold(0.0, f64::max)
    );

    println!("\n{:>8}  {:>6}  {:>12}  {:>16}", "delta", "n*", "||u - u_t||", "support found");
    for delta in [1e-1, 1e-2, 1e-3] {
        let g_obs = add_noise(&problem.data, delta, 31);
        let out = run(
            &problem.operator,
            &problem.regularizer,
            &g_obs,
            &TauSchedule::Constant(1.0),
            &StoppingRule::Morozov { rho: 1.5, delta },
            &Monitors::none(),
            Some(&problem.truth_ref()),
            &SolverOptions::default(),
            None,
        )
        .unwrap();
        let u = &out.final_state.u;
        let found: Vec<usize> = (0..100).filter(|&i| u[i].abs() > 1e-3).collect();
        println!(
            "{delta:>8.0e}  {:>6}  {:>12.4e}  {:>16}",
            out.final_state.k,
            (u - &problem.truth).norm(),
            format!("{:?}", found) == format!("{:?}", support)
        );
    }
}
