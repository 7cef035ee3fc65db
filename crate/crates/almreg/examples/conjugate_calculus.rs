//! The index-function calculus behind the stopping rules: for a power law
//! Phi(s) = c s^p the conjugate-type function Psi = (Phi^{-1})* has a closed
//! form, verified here against brute-force grid maximization, together with
//! the Young-type inequality and the monotonicity equivalence that limits
//! the exponent to p <= 1/2.

use almreg::index_functions::{log_grid, IndexFunction};

fn main() {
    println!("closed-form Psi vs grid-sup oracle:");
    for (c, p) in [(1.0, 0.5), (2.0, 0.25), (0.5, 0.1)] {
        let f = IndexFunction::new(c, p).unwrap();
        for s in [0.1, 1.0, 10.0] {
            let exact = f.psi(s).unwrap();
            let oracle = f.psi_oracle(s, 10.0 * f.psi_maximizer(s), 200_000).unwrap();
            println!(
                "  c={c:<4} p={p:<5} s={s:<5} Psi={exact:<12.6e} oracle={oracle:<12.6e} rel err {:.1e}",
                (exact - oracle).abs() / exact
            );
        }
    }

    // With c = 1, p = 1/2: Psi(s) = s^2/4 and the a priori stopping horizon
    // 1/Psi^{-1}(delta^2) is 1/(2 delta).
    let f = IndexFunction::new(1.0, 0.5).unwrap();
    println!("\nPsi(2) = {} (expected 1)", f.psi(2.0).unwrap());
    println!(
        "a priori horizon at delta = 0.1: {} (expected 5)",
        f.apriori_total_time(0.1).unwrap()
    );

    // Young-type inequality s*Phi(r) <= Psi(s) + r.
    let mut worst = f64::NEG_INFINITY;
    for &s in &log_grid(1e-3, 1e3, 30) {
        for &r in &log_grid(1e-3, 1e3, 30) {
            worst = worst.max(s * f.phi(r).unwrap() - f.psi(s).unwrap() - r);
        }
    }
    println!("worst Young violation on a 30x30 log grid: {worst:.2e}");

    // Phi(s)^2/s non-increasing iff t^2 Psi(2/t) non-decreasing iff p <= 1/2.
    let grid = log_grid(1e-6, 1e3, 2000);
    for p in [0.3, 0.5, 0.7] {
        let f = IndexFunction::unrestricted(1.0, p).unwrap();
        println!(
            "p = {p}: Phi^2/s non-increasing = {}, t^2 Psi(2/t) non-decreasing = {}",
            f.check_phi_ratio_monotone(&grid),
            f.check_psi_growth_monotone(&grid)
        );
    }
}
