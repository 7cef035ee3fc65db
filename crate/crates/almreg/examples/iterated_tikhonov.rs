//! The augmented Lagrangian iteration with a quadratic penalty is exactly
//! the iterated Tikhonov recursion: each step solves
//! `(tau K^T K + L^T L) u = tau K^T g + L^T L u_prev`. This example runs both
//! on the same random 8x8 problem and prints the per-step deviation.

use almreg::alm::{alm_step, iterated_tikhonov_step, AlmState, SolverOptions};
use almreg::operators::{gaussian_vector, make_test_operator, LinearOperator, TestOperatorSpec};
use almreg::regularizers::Regularizer;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let op = make_test_operator(&TestOperatorSpec::DenseGaussian { rows: 8, cols: 8, seed: 4 })
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = gaussian_vector(&mut rng, 8);
    let tau = 1.3;
    let opts = SolverOptions::default();

    for (name, l) in [
        ("L = Id", LinearOperator::identity(8)),
        ("L = first difference", LinearOperator::first_difference(8)),
    ] {
        let reg = Regularizer::quadratic(l.clone());
        let mut alm = AlmState::initial(8, 8);
        let mut tik = DVector::zeros(8);
        println!("{name}");
        println!("{:>4}  {:>14}  {:>14}  {:>10}", "k", "residual(ALM)", "residual(Tik)", "deviation");
        for k in 1..=20 {
            alm = alm_step(&alm, tau, &g, &op, &reg, &opts).unwrap();
            tik = iterated_tikhonov_step(&tik, tau, &g, &op, &l).unwrap();
            let dev = (&alm.u - &tik).norm();
            if k <= 5 || k == 20 {
                println!(
                    "{k:>4}  {:>14.6e}  {:>14.6e}  {dev:>10.2e}",
                    alm.residual,
                    (op.apply(&tik).unwrap() - &g).norm()
                );
            }
            assert!(dev < 1e-10);
        }
        println!();
    }

    // Penalty limit: for huge tau a single step is the least-squares solve.
    let op = make_test_operator(&TestOperatorSpec::DiagonalDecay { n: 5, a: 1.0 }).unwrap();
    let g = gaussian_vector(&mut rng, 5);
    let one_shot =
        iterated_tikhonov_step(&DVector::zeros(5), 1e8, &g, &op, &LinearOperator::identity(5))
            .unwrap();
    let exact = op.to_dense().lu().solve(&g).unwrap();
    println!(
        "penalty limit tau = 1e8: ||u - K^-1 g|| = {:.2e}",
        (one_shot - exact).norm()
    );
}
