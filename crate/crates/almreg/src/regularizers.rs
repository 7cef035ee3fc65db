//! Convex regularization functionals: evaluation, Fenchel conjugates,
//! subgradients, Bregman distances and proximal maps.
//!
//! Two families are supported: `J(u) = 1/2 ||Lu||^2` for a full-column-rank
//! (or identity) matrix `L`, and `J(u) = sum_i |u_i|^q` with `1 <= q < 2` in
//! the canonical coordinate basis.

use std::sync::OnceLock;

use nalgebra::DVector;
use thiserror::Error;

use crate::operators::{LinearOperator, SvdFactorization};

#[derive(Debug, Error)]
pub enum RegularizerError {
    #[error("sparsity exponent q = {0} outside [1, 2)")]
    InvalidExponent(f64),
    #[error("prox penalty lambda = {0} must be positive")]
    InvalidLambda(f64),
    #[error("scalar power prox did not converge after {0} iterations")]
    ProxNoConvergence(usize),
    #[error(transparent)]
    Operator(#[from] crate::operators::OperatorError),
}

#[derive(Debug)]
enum Kind {
    Quadratic { l: LinearOperator, svd: OnceLock<SvdFactorization> },
    PowerSparsity { q: f64 },
}

/// A convex, proper, lower semicontinuous penalty with `J(0) = 0`.
#[derive(Debug)]
pub struct Regularizer {
    kind: Kind,
}

impl Regularizer {
    /// `J(u) = 1/2 ||Lu||^2`.
    pub fn quadratic(l: LinearOperator) -> Self {
        Self { kind: Kind::Quadratic { l, svd: OnceLock::new() } }
    }

    /// `J(u) = 1/2 ||u||^2`.
    pub fn quadratic_identity(n: usize) -> Self {
        Self::quadratic(LinearOperator::identity(n))
    }

    /// `J(u) = sum_i |u_i|^q`, `1 <= q < 2`.
    pub fn power_sparsity(q: f64) -> Result<Self, RegularizerError> {
        if !(1.0..2.0).contains(&q) {
            return Err(RegularizerError::InvalidExponent(q));
        }
        Ok(Self { kind: Kind::PowerSparsity { q } })
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self.kind, Kind::Quadratic { .. })
    }

    pub fn quadratic_l(&self) -> Option<&LinearOperator> {
        match &self.kind {
            Kind::Quadratic { l, .. } => Some(l),
            Kind::PowerSparsity { .. } => None,
        }
    }

    pub fn sparsity_exponent(&self) -> Option<f64> {
        match &self.kind {
            Kind::PowerSparsity { q } => Some(*q),
            Kind::Quadratic { .. } => None,
        }
    }

    fn l_svd(&self) -> Result<&SvdFactorization, RegularizerError> {
        match &self.kind {
            Kind::Quadratic { l, svd } => {
                if let Some(f) = svd.get() {
                    return Ok(f);
                }
                let f = l.svd()?;
                Ok(svd.get_or_init(|| f))
            }
            Kind::PowerSparsity { .. } => unreachable!("l_svd on sparsity regularizer"),
        }
    }

    pub fn eval(&self, u: &DVector<f64>) -> f64 {
        match &self.kind {
            Kind::Quadratic { l, .. } => {
                let lu = l.apply(u).expect("dimension mismatch in J");
                0.5 * lu.norm_squared()
            }
            Kind::PowerSparsity { q } => u.iter().map(|x| x.abs().powf(*q)).sum(),
        }
    }

    /// Legendre-Fenchel conjugate `J*(xi) = sup_u <xi, u> - J(u)`.
    ///
    /// Returns `f64::INFINITY` outside the domain of `J*` (the indicator case
    /// for `q = 1`, and `xi` outside `range(L^T L)` in the singular quadratic
    /// case).
    pub fn conjugate(&self, xi: &DVector<f64>) -> f64 {
        self.conjugate_with_slack(xi, 0.0)
    }

    /// Conjugate evaluation with a feasibility slack used by runtime monitors:
    /// the `q = 1` unit-ball constraint and the quadratic range check are
    /// relaxed by `slack` to absorb inner-solver inexactness.
    pub fn conjugate_with_slack(&self, xi: &DVector<f64>, slack: f64) -> f64 {
        match &self.kind {
            Kind::Quadratic { l, .. } => {
                if l.is_identity() {
                    return 0.5 * xi.norm_squared();
                }
                let svd = self.l_svd().expect("L must admit an SVD");
                let (solved, range_residual) = svd.gram_pseudo_solve(xi);
                if range_residual > (1e-8 + slack) * xi.norm().max(1e-300) {
                    f64::INFINITY
                } else {
                    0.5 * solved.dot(xi)
                }
            }
            Kind::PowerSparsity { q } => {
                if *q == 1.0 {
                    let max = xi.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                    if max <= 1.0 + slack {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    let exponent = q / (q - 1.0);
                    xi.iter().map(|x| (q - 1.0) * (x.abs() / q).powf(exponent)).sum()
                }
            }
        }
    }

    /// A canonical subgradient `xi` in `dJ(u)`; for `q = 1` the selection is
    /// `sign(u_i)` with `0` at `u_i = 0`.
    pub fn subgradient(&self, u: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            Kind::Quadratic { l, .. } => {
                let lu = l.apply(u).expect("dimension mismatch in subgradient");
                l.adjoint_apply(&lu).expect("dimension mismatch in subgradient")
            }
            Kind::PowerSparsity { q } => {
                if *q == 1.0 {
                    u.map(|x| {
                        if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    })
                } else {
                    u.map(|x| q * x.abs().powf(q - 1.0) * x.signum() * if x == 0.0 { 0.0 } else { 1.0 })
                }
            }
        }
    }

    /// Bregman distance `D_J^xi(v, u) = J(v) - J(u) - <xi, v - u>` for a
    /// subgradient `xi` of `J` at `u`.
    pub fn bregman(&self, v: &DVector<f64>, u: &DVector<f64>, xi: &DVector<f64>) -> f64 {
        self.eval(v) - self.eval(u) - xi.dot(&(v - u))
    }

    /// `prox(lambda, y) = argmin_x 1/2 ||x - y||^2 + lambda J(x)`.
    pub fn prox(&self, lambda: f64, y: &DVector<f64>) -> Result<DVector<f64>, RegularizerError> {
        if lambda <= 0.0 {
            return Err(RegularizerError::InvalidLambda(lambda));
        }
        match &self.kind {
            Kind::Quadratic { .. } => {
                // (I + lambda L^T L) x = y, solved spectrally via the SVD of L.
                let svd = self.l_svd()?;
                let v = svd.right_vectors();
                let coeffs = v.transpose() * y;
                let mut scaled = DVector::zeros(coeffs.len());
                for i in 0..coeffs.len() {
                    let s2 = svd.singular_values()[i].powi(2);
                    scaled[i] = coeffs[i] / (1.0 + lambda * s2) - coeffs[i];
                }
                Ok(y + v * scaled)
            }
            Kind::PowerSparsity { q } => {
                if *q == 1.0 {
                    Ok(y.map(|x| soft_threshold(x, lambda)))
                } else {
                    let mut out = DVector::zeros(y.len());
                    for i in 0..y.len() {
                        out[i] = scalar_power_prox(*q, lambda, y[i])?;
                    }
                    Ok(out)
                }
            }
        }
    }
}

/// Soft-thresholding, the prox of `lambda |.|`; the kink at `|y| = lambda`
/// maps to exactly 0.
pub fn soft_threshold(y: f64, lambda: f64) -> f64 {
    if y > lambda {
        y - lambda
    } else if y < -lambda {
        y + lambda
    } else {
        0.0
    }
}

const PROX_MAX_ITER: usize = 200;

/// Unique minimizer of `1/2 (x - y)^2 + lambda |x|^q` for `1 < q < 2`, i.e.
/// the root of `x + lambda q x^{q-1} = y` on `[0, y]` (mirrored for `y < 0`).
///
/// Monotone Newton on the bracketing interval with bisection fallback,
/// absolute tolerance 1e-12.
pub fn scalar_power_prox(q: f64, lambda: f64, y: f64) -> Result<f64, RegularizerError> {
    if !(1.0 < q && q < 2.0) {
        return Err(RegularizerError::InvalidExponent(q));
    }
    if lambda <= 0.0 {
        return Err(RegularizerError::InvalidLambda(lambda));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    let sign = y.signum();
    let y = y.abs();
    let h = |x: f64| x + lambda * q * x.powf(q - 1.0) - y;
    let (mut lo, mut hi) = (0.0f64, y);
    let mut x = y;
    for _ in 0..PROX_MAX_ITER {
        let hx = h(x);
        if hx.abs() <= 1e-14 * (1.0 + y) || hi - lo <= 1e-12 {
            return Ok(sign * x);
        }
        if hx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let deriv = 1.0 + lambda * q * (q - 1.0) * x.powf(q - 2.0);
        let newton = x - hx / deriv;
        x = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    Err(RegularizerError::ProxNoConvergence(PROX_MAX_ITER))
}
