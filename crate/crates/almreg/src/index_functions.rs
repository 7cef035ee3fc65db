//! Power-law index functions `Phi(s) = c s^p`, their inverses and the
//! Fenchel conjugate `Psi = (Phi^{-1})*` that drives a priori parameter
//! choice and the discrepancy-principle growth bounds.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IndexFunctionError {
    #[error("coefficient c = {0} must be positive")]
    InvalidCoefficient(f64),
    #[error("exponent p = {0} outside (0, 1/2]")]
    InvalidExponent(f64),
    #[error("negative argument {0}")]
    NegativeArgument(f64),
    #[error("oracle grid too small: maximum attained at the boundary t = {0}")]
    GridTooSmall(f64),
}

/// `Phi(s) = c s^p` with `c > 0` and `0 < p <= 1/2`.
///
/// The exponent cap keeps `s -> Phi(s)^2 / s` non-increasing, which the
/// discrepancy-principle analysis requires; `unrestricted` is a test-only
/// escape hatch for exercising the monotonicity checks on `p > 1/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexFunction {
    coefficient: f64,
    exponent: f64,
}

impl IndexFunction {
    pub fn new(coefficient: f64, exponent: f64) -> Result<Self, IndexFunctionError> {
        if !(coefficient > 0.0) {
            return Err(IndexFunctionError::InvalidCoefficient(coefficient));
        }
        if !(exponent > 0.0 && exponent <= 0.5) {
            return Err(IndexFunctionError::InvalidExponent(exponent));
        }
        Ok(Self { coefficient, exponent })
    }

    /// Escape hatch allowing any exponent in `(0, 1)`; only meant for testing
    /// the monotonicity checks with out-of-range exponents.
    pub fn unrestricted(coefficient: f64, exponent: f64) -> Result<Self, IndexFunctionError> {
        if !(coefficient > 0.0) {
            return Err(IndexFunctionError::InvalidCoefficient(coefficient));
        }
        if !(exponent > 0.0 && exponent < 1.0) {
            return Err(IndexFunctionError::InvalidExponent(exponent));
        }
        Ok(Self { coefficient, exponent })
    }

    pub fn coefficient(&self) -> f64 {
        self.coefficient
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    /// `Phi(s) = c s^p`.
    pub fn phi(&self, s: f64) -> Result<f64, IndexFunctionError> {
        if s < 0.0 {
            return Err(IndexFunctionError::NegativeArgument(s));
        }
        Ok(self.coefficient * s.powf(self.exponent))
    }

    /// `Phi^{-1}(t) = (t / c)^{1/p}`.
    pub fn phi_inv(&self, t: f64) -> Result<f64, IndexFunctionError> {
        if t < 0.0 {
            return Err(IndexFunctionError::NegativeArgument(t));
        }
        Ok((t / self.coefficient).powf(1.0 / self.exponent))
    }

    /// Coefficient `A` and exponent `e` of the closed-form conjugate
    /// `Psi(s) = A s^e` with `e = 1 / (1 - p)`.
    ///
    /// For `f(t) = b t^a` with `a = 1/p > 1` and `b = c^{-a}`, the conjugate
    /// over `t >= 0` is `f*(s) = (1 - 1/a) (s / (a b)^{1/a})^{a/(a-1)}`
    /// evaluated at the stationary point `t* = (s / (a b))^{1/(a-1)}`.
    fn psi_coefficients(&self) -> (f64, f64) {
        let a = 1.0 / self.exponent;
        let b = self.coefficient.powf(-a);
        let e = a / (a - 1.0);
        let coeff = (a - 1.0) / a * (a * b).powf(-1.0 / (a - 1.0));
        (coeff, e)
    }

    /// `Psi(s) = sup_{t >= 0} [s t - Phi^{-1}(t)]`, in closed form.
    pub fn psi(&self, s: f64) -> Result<f64, IndexFunctionError> {
        if s < 0.0 {
            return Err(IndexFunctionError::NegativeArgument(s));
        }
        let (coeff, e) = self.psi_coefficients();
        Ok(coeff * s.powf(e))
    }

    /// Inverse of the closed-form `psi`.
    pub fn psi_inv(&self, t: f64) -> Result<f64, IndexFunctionError> {
        if t < 0.0 {
            return Err(IndexFunctionError::NegativeArgument(t));
        }
        let (coeff, e) = self.psi_coefficients();
        Ok((t / coeff).powf(1.0 / e))
    }

    /// The stationary point of `t -> s t - Phi^{-1}(t)`; exposed so callers of
    /// the oracle can size its grid.
    pub fn psi_maximizer(&self, s: f64) -> f64 {
        let a = 1.0 / self.exponent;
        let b = self.coefficient.powf(-a);
        (s / (a * b)).powf(1.0 / (a - 1.0))
    }

    /// Brute-force conjugate: max of `s t - Phi^{-1}(t)` over a uniform grid
    /// on `[0, t_max]`. Fails when the maximum sits on the right boundary,
    /// which means the grid does not cover the maximizer.
    pub fn psi_oracle(&self, s: f64, t_max: f64, steps: usize) -> Result<f64, IndexFunctionError> {
        if s < 0.0 {
            return Err(IndexFunctionError::NegativeArgument(s));
        }
        if s == 0.0 {
            return Ok(0.0);
        }
        let mut best = f64::NEG_INFINITY;
        let mut best_idx = 0;
        for i in 0..=steps {
            let t = t_max * i as f64 / steps as f64;
            let val = s * t - self.phi_inv(t)?;
            if val > best {
                best = val;
                best_idx = i;
            }
        }
        if best_idx == steps {
            return Err(IndexFunctionError::GridTooSmall(t_max));
        }
        Ok(best)
    }

    /// A priori total time `t* = 1 / Psi^{-1}(delta^2)`; the solver stops at
    /// the first `n` with `t_n >= t*`.
    pub fn apriori_total_time(&self, delta: f64) -> Result<f64, IndexFunctionError> {
        if delta <= 0.0 {
            return Err(IndexFunctionError::NegativeArgument(delta));
        }
        Ok(1.0 / self.psi_inv(delta * delta)?)
    }

    /// True iff `s -> Phi(s)^2 / s` is non-increasing along the grid.
    pub fn check_phi_ratio_monotone(&self, grid: &[f64]) -> bool {
        let mut prev = f64::INFINITY;
        for &s in grid {
            let ratio = self.phi(s).expect("grid must be positive").powi(2) / s;
            if ratio > prev + 1e-12 * (1.0 + prev.abs()) {
                return false;
            }
            prev = ratio;
        }
        true
    }

    /// True iff `t -> t^2 Psi(2/t)` is non-decreasing along the grid.
    pub fn check_psi_growth_monotone(&self, grid: &[f64]) -> bool {
        let mut prev = f64::NEG_INFINITY;
        for &t in grid {
            let val = t * t * self.psi(2.0 / t).expect("grid must be positive");
            if val < prev - 1e-12 * (1.0 + prev.abs()) {
                return false;
            }
            prev = val;
        }
        true
    }
}

/// Logarithmically spaced grid, endpoints included.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2);
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..n).map(|i| (llo + (lhi - llo) * i as f64 / (n - 1) as f64).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn phi_values() {
        let f = IndexFunction::new(1.0, 0.5).unwrap();
        assert_abs_diff_eq!(f.phi(4.0).unwrap(), 2.0, epsilon = 1e-14);
        let g = IndexFunction::new(2.0, 1.0 / 3.0).unwrap();
        assert_abs_diff_eq!(g.phi(8.0).unwrap(), 4.0, epsilon = 1e-12);
        assert_eq!(g.phi(0.0).unwrap(), 0.0);
        assert!(f.phi(-1.0).is_err());
    }

    #[test]
    fn phi_inv_values() {
        let f = IndexFunction::new(1.0, 0.5).unwrap();
        assert_abs_diff_eq!(f.phi_inv(2.0).unwrap(), 4.0, epsilon = 1e-12);
        let g = IndexFunction::new(2.0, 1.0 / 3.0).unwrap();
        assert_abs_diff_eq!(g.phi_inv(4.0).unwrap(), 8.0, epsilon = 1e-12);
    }

    #[test]
    fn phi_round_trip() {
        let f = IndexFunction::new(0.7, 0.3).unwrap();
        for t in log_grid(1e-8, 1e2, 50) {
            assert_abs_diff_eq!(f.phi(f.phi_inv(t).unwrap()).unwrap(), t, epsilon = 1e-12 * t);
        }
    }

    #[test]
    fn constructor_rejects_large_exponent() {
        assert!(IndexFunction::new(1.0, 0.7).is_err());
        assert!(IndexFunction::unrestricted(1.0, 0.7).is_ok());
    }

    #[test]
    fn psi_closed_form_sqrt_case() {
        // Phi(s) = sqrt(s): Phi^{-1}(t) = t^2 and Psi(s) = s^2 / 4.
        let f = IndexFunction::new(1.0, 0.5).unwrap();
        assert_abs_diff_eq!(f.psi(2.0).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(f.psi(0.0).unwrap(), 0.0);
    }

    #[test]
    fn psi_matches_oracle() {
        for &(c, p) in &[(1.0, 0.5), (1.0, 1.0 / 3.0), (0.5, 0.25), (2.0, 0.1)] {
            let f = IndexFunction::new(c, p).unwrap();
            for &s in &[0.3, 1.0, 2.0] {
                let t_max = 10.0 * f.psi_maximizer(s);
                let oracle = f.psi_oracle(s, t_max, 200_000).unwrap();
                let analytic = f.psi(s).unwrap();
                assert!(
                    (analytic - oracle).abs() <= 1e-6 * analytic.max(1e-12),
                    "c={c} p={p} s={s}: {analytic} vs {oracle}"
                );
            }
        }
    }

    #[test]
    fn psi_oracle_detects_small_grid() {
        let f = IndexFunction::new(1.0, 0.5).unwrap();
        let t_star = f.psi_maximizer(2.0);
        assert!(matches!(
            f.psi_oracle(2.0, 0.5 * t_star, 1000),
            Err(IndexFunctionError::GridTooSmall(_))
        ));
    }

    #[test]
    fn psi_oracle_monotone_in_s() {
        let f = IndexFunction::new(1.0, 0.25).unwrap();
        let t_max = 10.0 * f.psi_maximizer(3.0);
        let a = f.psi_oracle(1.0, t_max, 50_000).unwrap();
        let b = f.psi_oracle(3.0, t_max, 50_000).unwrap();
        assert!(a <= b);
    }

    #[test]
    fn psi_inv_round_trip() {
        let f = IndexFunction::new(1.0, 0.5).unwrap();
        assert_abs_diff_eq!(f.psi_inv(1.0).unwrap(), 2.0, epsilon = 1e-12);
        assert_eq!(f.psi_inv(0.0).unwrap(), 0.0);
        let g = IndexFunction::new(1.7, 0.2).unwrap();
        for t in log_grid(1e-8, 1e2, 40) {
            let s = g.psi_inv(t).unwrap();
            assert_abs_diff_eq!(g.psi(s).unwrap(), t, epsilon = 1e-9 * t);
        }
    }

    #[test]
    fn apriori_total_time_sqrt_case() {
        let f = IndexFunction::new(1.0, 0.5).unwrap();
        // Psi^{-1}(0.01) = 0.2, so t* = 5.
        assert_abs_diff_eq!(f.apriori_total_time(0.1).unwrap(), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn apriori_total_time_monotone_decreasing() {
        let f = IndexFunction::new(1.3, 0.3).unwrap();
        let mut prev = f64::INFINITY;
        for &d in &[1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0] {
            let t = f.apriori_total_time(d).unwrap();
            assert!(t < prev);
            prev = t;
        }
    }

    #[test]
    fn apriori_total_time_holder_slope() {
        // p = 2 nu / (1 + 2 nu) gives t* proportional to delta^{-2/(1+2nu)}.
        let nu = 0.25;
        let p = 2.0 * nu / (1.0 + 2.0 * nu);
        let f = IndexFunction::new(1.0, p).unwrap();
        let deltas = log_grid(1e-4, 1e-1, 8);
        let points: Vec<(f64, f64)> = deltas
            .iter()
            .map(|&d| (d.ln(), f.apriori_total_time(d).unwrap().ln()))
            .collect();
        let slope = crate::experiments::least_squares_slope(&points).0;
        assert_abs_diff_eq!(slope, -2.0 / (1.0 + 2.0 * nu), epsilon = 1e-9);
    }

    #[test]
    fn phi_ratio_monotone_cases() {
        let grid = log_grid(1e-6, 1e3, 200);
        assert!(IndexFunction::new(1.0, 0.5).unwrap().check_phi_ratio_monotone(&grid));
        assert!(IndexFunction::new(1.0, 0.3).unwrap().check_phi_ratio_monotone(&grid));
        assert!(!IndexFunction::unrestricted(1.0, 0.7).unwrap().check_phi_ratio_monotone(&grid));
    }

    #[test]
    fn psi_growth_monotone_cases() {
        let grid = log_grid(1e-6, 1e3, 200);
        assert!(IndexFunction::new(1.0, 0.5).unwrap().check_psi_growth_monotone(&grid));
        for &p in &[0.1, 0.2, 0.3, 0.4, 0.5] {
            let f = IndexFunction::new(1.0, p).unwrap();
            assert_eq!(f.check_psi_growth_monotone(&grid), f.check_phi_ratio_monotone(&grid));
        }
        assert!(!IndexFunction::unrestricted(1.0, 0.7).unwrap().check_psi_growth_monotone(&grid));
    }

    #[test]
    fn monotonicity_equivalence_random() {
        let grid = log_grid(1e-6, 1e3, 200);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let c = rng.gen_range(0.1..5.0);
            let p = rng.gen_range(0.02..0.98);
            let f = IndexFunction::unrestricted(c, p).unwrap();
            assert_eq!(
                f.check_phi_ratio_monotone(&grid),
                f.check_psi_growth_monotone(&grid),
                "c={c} p={p}"
            );
        }
    }

    #[test]
    fn young_type_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let f = IndexFunction::new(1.4, 0.35).unwrap();
        for _ in 0..1000 {
            let s = rng.gen_range(0.0..50.0);
            let r = rng.gen_range(0.0..50.0);
            let lhs = s * f.phi(r).unwrap();
            let rhs = f.psi(s).unwrap() + r;
            assert!(lhs <= rhs + 1e-9 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn psi_midpoint_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = IndexFunction::new(0.8, 0.4).unwrap();
        for _ in 0..200 {
            let a = rng.gen_range(0.0..20.0);
            let b = rng.gen_range(0.0..20.0);
            let mid = f.psi(0.5 * (a + b)).unwrap();
            let avg = 0.5 * (f.psi(a).unwrap() + f.psi(b).unwrap());
            assert!(mid <= avg + 1e-10 * (1.0 + avg));
        }
    }
}
