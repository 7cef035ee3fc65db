//! Finite-dimensional linear operators: dense matrices, diagonal operators and
//! zero-padded convolutions, together with their adjoints, dense SVD and
//! fractional powers of the Gram operator `K*K`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Largest dimension for which a dense SVD is materialized.
pub const MAX_SVD_DIM: usize = 2000;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("dimension mismatch: expected vector of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("SVD size limit exceeded: min(rows, cols) = {0} > {MAX_SVD_DIM}")]
    SvdSizeLimit(usize),
    #[error("fractional exponent nu = {0} outside [0, 1/2]")]
    NuOutOfRange(f64),
    #[error("invalid operator spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone)]
enum Kind {
    Dense(DMatrix<f64>),
    /// Square operator acting as `(u_i) -> (sigma_i u_i)`.
    Diagonal(DVector<f64>),
    /// Discrete convolution with zero-padding boundary; input and output
    /// have the same length. `kernel[j]` multiplies `u[i - j + radius]`.
    Convolution { kernel: Vec<f64>, size: usize },
}

/// An immutable linear map between finite-dimensional spaces.
#[derive(Debug, Clone)]
pub struct LinearOperator {
    kind: Kind,
    rows: usize,
    cols: usize,
}

impl LinearOperator {
    pub fn dense(matrix: DMatrix<f64>) -> Self {
        let (rows, cols) = matrix.shape();
        Self { kind: Kind::Dense(matrix), rows, cols }
    }

    pub fn diagonal(singular_values: &[f64]) -> Self {
        let n = singular_values.len();
        Self {
            kind: Kind::Diagonal(DVector::from_column_slice(singular_values)),
            rows: n,
            cols: n,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    /// Symmetric convolution kernel of odd length, zero-padding boundary.
    pub fn convolution(kernel: &[f64], size: usize) -> Result<Self, OperatorError> {
        if kernel.is_empty() || kernel.len() % 2 == 0 {
            return Err(OperatorError::InvalidSpec(
                "convolution kernel must have odd, positive length".into(),
            ));
        }
        Ok(Self {
            kind: Kind::Convolution { kernel: kernel.to_vec(), size },
            rows: size,
            cols: size,
        })
    }

    /// Lower-bidiagonal first-difference operator with Dirichlet boundary:
    /// `(Lu)_0 = u_0`, `(Lu)_i = u_i - u_{i-1}`. Full rank, so `L^T L` is SPD.
    pub fn first_difference(n: usize) -> Self {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
            if i > 0 {
                m[(i, i - 1)] = -1.0;
            }
        }
        Self::dense(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_identity(&self) -> bool {
        match &self.kind {
            Kind::Diagonal(s) => s.iter().all(|&x| x == 1.0),
            _ => false,
        }
    }

    pub fn apply(&self, u: &DVector<f64>) -> Result<DVector<f64>, OperatorError> {
        if u.len() != self.cols {
            return Err(OperatorError::DimensionMismatch { expected: self.cols, got: u.len() });
        }
        Ok(match &self.kind {
            Kind::Dense(m) => m * u,
            Kind::Diagonal(s) => s.component_mul(u),
            Kind::Convolution { kernel, size } => convolve(kernel, u, *size, false),
        })
    }

    pub fn adjoint_apply(&self, g: &DVector<f64>) -> Result<DVector<f64>, OperatorError> {
        if g.len() != self.rows {
            return Err(OperatorError::DimensionMismatch { expected: self.rows, got: g.len() });
        }
        Ok(match &self.kind {
            Kind::Dense(m) => m.transpose() * g,
            Kind::Diagonal(s) => s.component_mul(g),
            Kind::Convolution { kernel, size } => convolve(kernel, g, *size, true),
        })
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self.kind, Kind::Diagonal(_))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.kind {
            Kind::Dense(m) => m.clone(),
            Kind::Diagonal(s) => DMatrix::from_diagonal(s),
            Kind::Convolution { kernel, size } => {
                let mut m = DMatrix::zeros(*size, *size);
                let radius = (kernel.len() - 1) / 2;
                for i in 0..*size {
                    for (j, &k) in kernel.iter().enumerate() {
                        let src = i as isize + j as isize - radius as isize;
                        if src >= 0 && (src as usize) < *size {
                            m[(i, src as usize)] = k;
                        }
                    }
                }
                m
            }
        }
    }

    pub fn svd(&self) -> Result<SvdFactorization, OperatorError> {
        let k = self.rows.min(self.cols);
        if k > MAX_SVD_DIM {
            return Err(OperatorError::SvdSizeLimit(k));
        }
        if let Kind::Diagonal(s) = &self.kind {
            // Diagonal operators factor exactly: sort |sigma| descending and
            // absorb signs into U.
            let n = s.len();
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| s[b].abs().total_cmp(&s[a].abs()));
            let mut u = DMatrix::zeros(n, n);
            let mut v = DMatrix::zeros(n, n);
            let mut sigma = DVector::zeros(n);
            for (col, &i) in idx.iter().enumerate() {
                sigma[col] = s[i].abs();
                u[(i, col)] = if s[i] < 0.0 { -1.0 } else { 1.0 };
                v[(i, col)] = 1.0;
            }
            return Ok(SvdFactorization { u, singular_values: sigma, v });
        }
        let dense = self.to_dense();
        let svd = dense.svd(true, true);
        let u = svd.u.expect("u requested");
        let v_t = svd.v_t.expect("v_t requested");
        // nalgebra sorts singular values descending for `svd`, but we enforce
        // the ordering invariant ourselves.
        let mut idx: Vec<usize> = (0..k).collect();
        idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let mut u_sorted = DMatrix::zeros(self.rows, k);
        let mut v_sorted = DMatrix::zeros(self.cols, k);
        let mut sigma = DVector::zeros(k);
        for (col, &i) in idx.iter().enumerate() {
            sigma[col] = svd.singular_values[i];
            u_sorted.set_column(col, &u.column(i));
            v_sorted.set_column(col, &v_t.row(i).transpose());
        }
        Ok(SvdFactorization { u: u_sorted, singular_values: sigma, v: v_sorted })
    }

    /// Spectral norm (largest singular value).
    pub fn spectral_norm(&self) -> Result<f64, OperatorError> {
        match &self.kind {
            Kind::Diagonal(s) => Ok(s.iter().fold(0.0f64, |m, x| m.max(x.abs()))),
            _ => Ok(self.svd()?.singular_values.max()),
        }
    }
}

fn convolve(kernel: &[f64], u: &DVector<f64>, size: usize, adjoint: bool) -> DVector<f64> {
    let radius = (kernel.len() - 1) / 2;
    let mut out = DVector::zeros(size);
    for i in 0..size {
        let mut acc = 0.0;
        for (j, &k) in kernel.iter().enumerate() {
            let offset = j as isize - radius as isize;
            let src = if adjoint { i as isize - offset } else { i as isize + offset };
            if src >= 0 && (src as usize) < size {
                acc += k * u[src as usize];
            }
        }
        out[i] = acc;
    }
    out
}

/// SVD `K = U diag(sigma) V^T` with orthonormal columns and singular values
/// sorted non-increasingly.
#[derive(Debug, Clone)]
pub struct SvdFactorization {
    u: DMatrix<f64>,
    singular_values: DVector<f64>,
    v: DMatrix<f64>,
}

impl SvdFactorization {
    pub fn left_vectors(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular_values
    }

    pub fn right_vectors(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.singular_values) * self.v.transpose()
    }

    fn rank_tolerance(&self) -> f64 {
        let sigma_max = if self.singular_values.is_empty() { 0.0 } else { self.singular_values[0] };
        1e-12 * sigma_max.max(1.0)
    }

    /// Applies `(K*K)^nu = V diag(sigma^{2 nu}) V^T` for `nu` in `[0, 1/2]`.
    ///
    /// At `nu = 0` zero singular values are excluded, so the result is the
    /// projection of `p` onto `span(V)`; this keeps the semigroup property
    /// exact for rank-deficient operators.
    pub fn fractional_gram_apply(
        &self,
        nu: f64,
        p: &DVector<f64>,
    ) -> Result<DVector<f64>, OperatorError> {
        if !(0.0..=0.5).contains(&nu) {
            return Err(OperatorError::NuOutOfRange(nu));
        }
        let n = self.v.nrows();
        if p.len() != n {
            return Err(OperatorError::DimensionMismatch { expected: n, got: p.len() });
        }
        let tol = self.rank_tolerance();
        let coeffs = self.v.transpose() * p;
        let mut scaled = DVector::zeros(coeffs.len());
        for i in 0..coeffs.len() {
            let s = self.singular_values[i];
            if s > tol {
                scaled[i] = coeffs[i] * s.powf(2.0 * nu);
            }
        }
        Ok(&self.v * scaled)
    }

    /// Pseudo-inverse applied to the Gram operator: `(K*K)^+ xi` together with
    /// the norm of the component of `xi` outside `range(K*K)`.
    pub fn gram_pseudo_solve(&self, xi: &DVector<f64>) -> (DVector<f64>, f64) {
        let tol = self.rank_tolerance();
        let coeffs = self.v.transpose() * xi;
        let mut scaled = DVector::zeros(coeffs.len());
        let mut in_range = DVector::zeros(coeffs.len());
        for i in 0..coeffs.len() {
            let s = self.singular_values[i];
            if s > tol {
                scaled[i] = coeffs[i] / (s * s);
                in_range[i] = coeffs[i];
            }
        }
        let residual = (xi - &self.v * in_range).norm();
        (&self.v * scaled, residual)
    }
}

/// Canonical synthetic test operators.
#[derive(Debug, Clone)]
pub enum TestOperatorSpec {
    /// Diagonal with polynomial singular-value decay `sigma_i = i^{-a}`.
    DiagonalDecay { n: usize, a: f64 },
    /// Gaussian blur of the given width; width 0 is the identity.
    GaussianConvolution { n: usize, width: f64 },
    /// Dense matrix with iid standard Gaussian entries, columns normalized
    /// to unit Euclidean norm.
    DenseGaussian { rows: usize, cols: usize, seed: u64 },
}

pub fn make_test_operator(spec: &TestOperatorSpec) -> Result<LinearOperator, OperatorError> {
    match *spec {
        TestOperatorSpec::DiagonalDecay { n, a } => {
            if n == 0 {
                return Err(OperatorError::InvalidSpec("size must be >= 1".into()));
            }
            let sv: Vec<f64> = (1..=n).map(|i| (i as f64).powf(-a)).collect();
            Ok(LinearOperator::diagonal(&sv))
        }
        TestOperatorSpec::GaussianConvolution { n, width } => {
            if n == 0 {
                return Err(OperatorError::InvalidSpec("size must be >= 1".into()));
            }
            if width < 0.0 {
                return Err(OperatorError::InvalidSpec("width must be >= 0".into()));
            }
            if width == 0.0 {
                return LinearOperator::convolution(&[1.0], n);
            }
            let radius = (4.0 * width).ceil() as usize;
            let mut kernel: Vec<f64> = (-(radius as isize)..=radius as isize)
                .map(|j| (-0.5 * (j as f64 / width).powi(2)).exp())
                .collect();
            let total: f64 = kernel.iter().sum();
            for k in &mut kernel {
                *k /= total;
            }
            LinearOperator::convolution(&kernel, n)
        }
        TestOperatorSpec::DenseGaussian { rows, cols, seed } => {
            if rows == 0 || cols == 0 {
                return Err(OperatorError::InvalidSpec("sizes must be >= 1".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut m = DMatrix::zeros(rows, cols);
            for j in 0..cols {
                for i in 0..rows {
                    m[(i, j)] = standard_normal(&mut rng);
                }
                let norm = m.column(j).norm();
                if norm > 0.0 {
                    m.column_mut(j).scale_mut(1.0 / norm);
                }
            }
            Ok(LinearOperator::dense(m))
        }
    }
}

/// Standard normal sample via Box-Muller, deterministic given the RNG state.
pub(crate) fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Deterministic Gaussian vector (iid standard normal entries).
pub fn gaussian_vector<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| standard_normal(rng))
}
