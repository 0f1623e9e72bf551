//! Per-agent strongly convex costs and their gradient-noise model.
//!
//! The built-in cost is the mean-square-error cost of a linear data model
//! `d = u·w° + n` with circular complex Gaussian regressors:
//!
//! ```text
//! J(w) = σ_n² + (w - w°)*·R_u·(w - w°)
//! ```
//!
//! Its conjugate gradient is `R_u·(w - w°)` and its extended Hessian is the
//! constant `blkdiag(R_u, R_uᵀ)`, so every constant in the gradient-noise
//! bounds can be checked in closed form.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::crcalc::{hermitian_eigenvalues, max_abs_diff, ComplexVec, ExtendedHessian, HERMITIAN_TOL};
use crate::error::{Error, Result};

/// Safety factor applied to fitted noise slopes.
pub const ALPHA_INFLATION: f64 = 1.2;

/// Minimum sample count for [`noise_params`].
pub const MIN_NOISE_SAMPLES: usize = 10_000;

/// Interface for costs sharing the common minimizer.
pub trait Cost: Send + Sync {
    fn dim(&self) -> usize;
    fn minimizer(&self) -> &ComplexVec;
    fn evaluate(&self, w: &ComplexVec) -> Result<f64>;
    fn gradient(&self, w: &ComplexVec) -> Result<ComplexVec>;
    /// Bounds on the eigenvalues of the extended Hessian.
    fn hessian_bounds(&self) -> (f64, f64);
    fn lipschitz_constant(&self) -> f64;
}

/// Bounds on the gradient noise: `E‖v‖² ≤ α‖w° - w‖² + σ_v²`.
///
/// The same pair is used for the fourth-order form
/// `E‖v‖⁴ ≤ α²‖w° - w‖⁴ + σ_v⁴` when fitted with [`noise_params_fourth`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseParams {
    pub alpha: f64,
    pub sigma_v_sq: f64,
}

impl NoiseParams {
    pub fn new(alpha: f64, sigma_v_sq: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::param("alpha", "must be finite and nonnegative"));
        }
        if !(sigma_v_sq.is_finite() && sigma_v_sq >= 0.0) {
            return Err(Error::param("sigma_v_sq", "must be finite and nonnegative"));
        }
        Ok(NoiseParams { alpha, sigma_v_sq })
    }

    /// Network-wide constants: the largest of each per-agent value.
    pub fn worst_case(params: &[NoiseParams]) -> NoiseParams {
        params.iter().fold(
            NoiseParams {
                alpha: 0.0,
                sigma_v_sq: 0.0,
            },
            |acc, p| NoiseParams {
                alpha: acc.alpha.max(p.alpha),
                sigma_v_sq: acc.sigma_v_sq.max(p.sigma_v_sq),
            },
        )
    }
}

/// One streaming observation: row regressor `u` and scalar `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSample {
    pub u: Vec<Complex64>,
    pub d: Complex64,
}

#[derive(Debug, Clone)]
pub struct QuadraticCost {
    r_u: DMatrix<Complex64>,
    chol: DMatrix<Complex64>,
    w_opt: ComplexVec,
    sigma_n_sq: f64,
    lambda_min: f64,
    lambda_max: f64,
}

impl QuadraticCost {
    pub fn new(r_u: DMatrix<Complex64>, w_opt: ComplexVec, sigma_n_sq: f64) -> Result<Self> {
        let m = w_opt.len();
        if r_u.nrows() != m || r_u.ncols() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: r_u.nrows(),
            });
        }
        if r_u.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("R_u".into()));
        }
        let scale = 1.0 + r_u.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let asym = max_abs_diff(&r_u, &r_u.adjoint());
        if asym > HERMITIAN_TOL * scale {
            return Err(Error::NotPositiveDefinite(format!(
                "R_u is not Hermitian (asymmetry {asym:e})"
            )));
        }
        if !(sigma_n_sq.is_finite() && sigma_n_sq >= 0.0) {
            return Err(Error::param("sigma_n_sq", "must be finite and nonnegative"));
        }
        // symmetrize away round-off before factoring
        let r_u = (&r_u + r_u.adjoint()) * Complex64::new(0.5, 0.0);
        let ev = hermitian_eigenvalues(&r_u);
        let (lambda_min, lambda_max) = (ev[0], ev[m - 1]);
        if lambda_min <= 0.0 {
            return Err(Error::NotPositiveDefinite(format!(
                "R_u minimum eigenvalue {lambda_min:e}"
            )));
        }
        let chol = r_u
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?
            .unpack();
        Ok(QuadraticCost {
            r_u,
            chol,
            w_opt,
            sigma_n_sq,
            lambda_min,
            lambda_max,
        })
    }

    /// `R_u = I_M`.
    pub fn identity(w_opt: ComplexVec, sigma_n_sq: f64) -> Result<Self> {
        let m = w_opt.len();
        Self::new(DMatrix::identity(m, m), w_opt, sigma_n_sq)
    }

    pub fn r_u(&self) -> &DMatrix<Complex64> {
        &self.r_u
    }

    pub fn w_opt(&self) -> &ComplexVec {
        &self.w_opt
    }

    pub fn sigma_n_sq(&self) -> f64 {
        self.sigma_n_sq
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn trace_r(&self) -> f64 {
        self.r_u.trace().re
    }

    pub fn extended_hessian(&self) -> ExtendedHessian {
        ExtendedHessian::from_covariance(&self.r_u).expect("R_u is Hermitian by construction")
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.w_opt.len() {
            return Err(Error::DimensionMismatch {
                expected: self.w_opt.len(),
                found: len,
            });
        }
        Ok(())
    }

    /// Draws `u ~ CN(0, R_u)` (row) and `d = u·w° + n`, `n ~ CN(0, σ_n²)`.
    ///
    /// The draw order is fixed: M regressor components, then the noise.
    pub fn sample_data<R: Rng + ?Sized>(&self, rng: &mut R) -> DataSample {
        let m = self.dim();
        let z: Vec<Complex64> = (0..m).map(|_| complex_normal(rng)).collect();
        let n = complex_normal(rng) * self.sigma_n_sq.sqrt();
        // u = z·L*, so E[u*u] = L·L* = R_u
        let u: Vec<Complex64> = (0..m)
            .map(|j| (0..=j).map(|i| z[i] * self.chol[(j, i)].conj()).sum())
            .collect();
        let d = row_dot(&u, self.w_opt.as_slice()) + n;
        DataSample { u, d }
    }

    /// `-u*·(d - u·w)`.
    pub fn stochastic_gradient(&self, w: &ComplexVec, s: &DataSample) -> Result<ComplexVec> {
        self.check_dim(w.len())?;
        self.check_dim(s.u.len())?;
        let mut out = vec![Complex64::new(0.0, 0.0); w.len()];
        stochastic_gradient_into(&s.u, s.d, w.as_slice(), &mut out);
        Ok(ComplexVec::from_dvector(out.into()))
    }

    /// Gradient noise `v = ∇̂J(w) - ∇J(w)` for one sample.
    pub fn gradient_noise(&self, w: &ComplexVec, s: &DataSample) -> Result<ComplexVec> {
        let sg = self.stochastic_gradient(w, s)?;
        let g = self.gradient(w)?;
        Ok(ComplexVec::from_dvector(sg.into_dvector() - g.into_dvector()))
    }
}

impl Cost for QuadraticCost {
    fn dim(&self) -> usize {
        self.w_opt.len()
    }

    fn minimizer(&self) -> &ComplexVec {
        &self.w_opt
    }

    fn evaluate(&self, w: &ComplexVec) -> Result<f64> {
        self.check_dim(w.len())?;
        let e = w.as_dvector() - self.w_opt.as_dvector();
        Ok(self.sigma_n_sq + (e.adjoint() * &self.r_u * &e)[(0, 0)].re)
    }

    fn gradient(&self, w: &ComplexVec) -> Result<ComplexVec> {
        self.check_dim(w.len())?;
        let e = w.as_dvector() - self.w_opt.as_dvector();
        Ok(ComplexVec::from_dvector(&self.r_u * e))
    }

    fn hessian_bounds(&self) -> (f64, f64) {
        (self.lambda_min, self.lambda_max)
    }

    /// The Hessian of a quadratic is constant.
    fn lipschitz_constant(&self) -> f64 {
        0.0
    }
}

/// Global Lipschitz constant of the Hessian at `w°` obtained from a local
/// constant `tau` valid on a ball of radius `delta`:
/// `max{τ, (λ_max - λ_min)/(√2·δ)}`.
pub fn global_lipschitz_constant(tau: f64, lambda_min: f64, lambda_max: f64, delta: f64) -> f64 {
    tau.max((lambda_max - lambda_min) / (std::f64::consts::SQRT_2 * delta))
}

/// `CN(0, 1)`: independent real and imaginary parts of variance 1/2.
pub(crate) fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

#[inline]
pub(crate) fn row_dot(u: &[Complex64], w: &[Complex64]) -> Complex64 {
    u.iter().zip(w).map(|(a, b)| a * b).sum()
}

#[inline]
pub(crate) fn stochastic_gradient_into(
    u: &[Complex64],
    d: Complex64,
    w: &[Complex64],
    out: &mut [Complex64],
) {
    let e = d - row_dot(u, w);
    for (o, uj) in out.iter_mut().zip(u) {
        *o = -uj.conj() * e;
    }
}

/// Probe directions for noise fitting: real and imaginary coordinate axes,
/// the eigenvectors of `R_u`, and the normalized all-ones vector.
fn probe_directions(cost: &QuadraticCost) -> Vec<Vec<Complex64>> {
    let m = cost.dim();
    let mut dirs = Vec::new();
    for j in 0..m {
        for unit in [Complex64::new(1.0, 0.0), Complex64::i()] {
            let mut d = vec![Complex64::new(0.0, 0.0); m];
            d[j] = unit;
            dirs.push(d);
        }
    }
    let eig = cost.r_u.clone().symmetric_eigen();
    for c in 0..m {
        dirs.push(eig.eigenvectors.column(c).iter().copied().collect());
    }
    let s = Complex64::new(1.0, 1.0) / ((2 * m) as f64).sqrt();
    dirs.push(vec![s; m]);
    dirs
}

const RADIUS_FRACTIONS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

/// Samples shared by every grid point (common random numbers).
fn noise_moments_on_grid<R: Rng + ?Sized>(
    cost: &QuadraticCost,
    n_samples: usize,
    radius: f64,
    rng: &mut R,
) -> Vec<(f64, f64, f64)> {
    let samples: Vec<DataSample> = (0..n_samples).map(|_| cost.sample_data(rng)).collect();
    let mut out = Vec::new();
    for dir in probe_directions(cost) {
        for frac in RADIUS_FRACTIONS {
            let r = radius * frac;
            let w: Vec<Complex64> = cost
                .w_opt
                .as_slice()
                .iter()
                .zip(&dir)
                .map(|(o, d)| o + d * r)
                .collect();
            let w = ComplexVec::from_dvector(w.into());
            let (mut s2, mut s4) = (0.0, 0.0);
            for s in &samples {
                let v = cost.gradient_noise(&w, s).expect("dimensions match");
                let n2 = v.norm_sq();
                s2 += n2;
                s4 += n2 * n2;
            }
            let n = n_samples as f64;
            out.push((r * r, s2 / n, s4 / n));
        }
    }
    out
}

fn check_noise_args(n_samples: usize, radius: f64) -> Result<()> {
    if n_samples < MIN_NOISE_SAMPLES {
        return Err(Error::param(
            "n_samples",
            format!("need at least {MIN_NOISE_SAMPLES}"),
        ));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::param("radius", "must be positive"));
    }
    Ok(())
}

/// Fits the second-order gradient-noise constants.
///
/// `σ_v² = Tr(R_u)·σ_n²` is exact at `w°`. `α` is the largest empirical
/// slope `(E‖v‖² - σ_v²)/‖w̃‖²` over a grid of points within `radius` of
/// `w°`, inflated by [`ALPHA_INFLATION`].
pub fn noise_params<R: Rng + ?Sized>(
    cost: &QuadraticCost,
    n_samples: usize,
    radius: f64,
    rng: &mut R,
) -> Result<NoiseParams> {
    check_noise_args(n_samples, radius)?;
    let sigma_v_sq = cost.trace_r() * cost.sigma_n_sq;
    let slope = noise_moments_on_grid(cost, n_samples, radius, rng)
        .into_iter()
        .map(|(r2, m2, _)| (m2 - sigma_v_sq) / r2)
        .fold(0.0, f64::max);
    NoiseParams::new(ALPHA_INFLATION * slope, sigma_v_sq)
}

/// Fits the fourth-order constants `E‖v‖⁴ ≤ α²‖w̃‖⁴ + σ_v⁴`.
///
/// At `w°`, `v = -u*·n` and `E‖v‖⁴ = (Tr(R)² + Tr(R²))·2σ_n⁴`, which fixes
/// `σ_v²` exactly.
pub fn noise_params_fourth<R: Rng + ?Sized>(
    cost: &QuadraticCost,
    n_samples: usize,
    radius: f64,
    rng: &mut R,
) -> Result<NoiseParams> {
    check_noise_args(n_samples, radius)?;
    let tr = cost.trace_r();
    let tr_sq = (&cost.r_u * &cost.r_u).trace().re;
    let sigma_v4 = 2.0 * (tr * tr + tr_sq) * cost.sigma_n_sq * cost.sigma_n_sq;
    let slope = noise_moments_on_grid(cost, n_samples, radius, rng)
        .into_iter()
        .map(|(r2, _, m4)| (m4 - sigma_v4) / (r2 * r2))
        .fold(0.0, f64::max);
    NoiseParams::new(ALPHA_INFLATION * slope.sqrt(), sigma_v4.sqrt())
}
