//! Real and complex representations of parameter vectors, gradients and
//! Hessians.
//!
//! A complex vector `w ∈ ℂ^M` has two equivalent 2M-dimensional forms:
//!
//! * the real embedding `w̄ = [Re(w); Im(w)]`,
//! * the conjugate embedding `w̲ = [w; conj(w)]`,
//!
//! related by `w̲ = D·w̄` with `D = [[I, jI], [I, -jI]]`. Since
//! `D·D* = D*·D = 2I`, the inverse is `D*/2`. The same matrix converts real
//! gradients and Hessians to their extended complex counterparts.
//!
//! All gradients are stored as column vectors; row/column layout of the
//! Jacobian convention is treated as presentation only.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub const HERMITIAN_TOL: f64 = 1e-12;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// A finite complex vector of fixed length `M ≥ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVec(DVector<Complex64>);

impl ComplexVec {
    pub fn new(entries: Vec<Complex64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::param("w", "length must be at least 1"));
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("complex vector".into()));
        }
        Ok(ComplexVec(DVector::from_vec(entries)))
    }

    pub fn zeros(m: usize) -> Self {
        ComplexVec(DVector::zeros(m))
    }

    /// Builds a vector from `(re, im)` pairs.
    pub fn from_pairs(pairs: &[[f64; 2]]) -> Result<Self> {
        Self::new(pairs.iter().map(|p| Complex64::new(p[0], p[1])).collect())
    }

    pub(crate) fn from_dvector(v: DVector<Complex64>) -> Self {
        ComplexVec(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        self.0.as_slice()
    }

    pub fn as_dvector(&self) -> &DVector<Complex64> {
        &self.0
    }

    pub fn into_dvector(self) -> DVector<Complex64> {
        self.0
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// `[Re(w); Im(w)]`, length `2M`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealEmbedding(DVector<f64>);

impl RealEmbedding {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() || entries.len() % 2 != 0 {
            return Err(Error::param(
                "wbar",
                format!("length must be a positive even number, got {}", entries.len()),
            ));
        }
        Ok(RealEmbedding(DVector::from_vec(entries)))
    }

    pub fn half_len(&self) -> usize {
        self.0.len() / 2
    }

    pub fn as_dvector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    /// Inverse of [`embed_real`].
    pub fn to_complex(&self) -> ComplexVec {
        let m = self.half_len();
        ComplexVec(DVector::from_fn(m, |i, _| {
            Complex64::new(self.0[i], self.0[m + i])
        }))
    }
}

/// `[w; conj(w)]`, length `2M`. The second half is always the exact
/// conjugate of the first.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjugateEmbedding(DVector<Complex64>);

impl ConjugateEmbedding {
    /// Accepts an arbitrary 2M vector only if it has the conjugate structure.
    pub fn from_dvector(v: DVector<Complex64>) -> Result<Self> {
        if v.is_empty() || v.len() % 2 != 0 {
            return Err(Error::param("extended vector", "length must be even"));
        }
        let m = v.len() / 2;
        if (0..m).any(|i| v[m + i] != v[i].conj()) {
            return Err(Error::param(
                "extended vector",
                "second half is not the conjugate of the first",
            ));
        }
        Ok(ConjugateEmbedding(v))
    }

    pub fn as_dvector(&self) -> &DVector<Complex64> {
        &self.0
    }

    pub fn half_len(&self) -> usize {
        self.0.len() / 2
    }

    /// The original vector `w`.
    pub fn first_half(&self) -> ComplexVec {
        ComplexVec(self.0.rows(0, self.half_len()).into_owned())
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Complex Hessian with respect to the conjugate embedding:
/// `[[H, conj(G)], [G, Hᵀ]]` with `H` Hermitian and `G` symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedHessian(DMatrix<Complex64>);

impl ExtendedHessian {
    pub fn new(matrix: DMatrix<Complex64>) -> Result<Self> {
        let n = matrix.nrows();
        if n == 0 || n != matrix.ncols() || n % 2 != 0 {
            return Err(Error::param("hessian", "must be square with even size"));
        }
        let asym = max_abs_diff(&matrix, &matrix.adjoint());
        if asym > HERMITIAN_TOL * (1.0 + max_abs(&matrix)) {
            return Err(Error::NotSymmetric(asym));
        }
        Ok(ExtendedHessian(matrix))
    }

    /// `blkdiag(R, Rᵀ)`, the extended Hessian of `(w-w°)*·R·(w-w°)`.
    pub fn from_covariance(r: &DMatrix<Complex64>) -> Result<Self> {
        let m = r.nrows();
        let mut h = DMatrix::zeros(2 * m, 2 * m);
        h.view_mut((0, 0), (m, m)).copy_from(r);
        h.view_mut((m, m), (m, m)).copy_from(&r.transpose());
        Self::new(h)
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    pub fn half_len(&self) -> usize {
        self.0.nrows() / 2
    }

    /// Upper-left block `H = ∇²_{ww*}`.
    pub fn hermitian_block(&self) -> DMatrix<Complex64> {
        let m = self.half_len();
        self.0.view((0, 0), (m, m)).into_owned()
    }

    /// Lower-left block `G = ∇²_{wwᵀ}`.
    pub fn symmetric_block(&self) -> DMatrix<Complex64> {
        let m = self.half_len();
        self.0.view((m, 0), (m, m)).into_owned()
    }

    /// Real eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.0)
    }
}

pub fn embed_real(w: &ComplexVec) -> RealEmbedding {
    let m = w.len();
    RealEmbedding(DVector::from_fn(2 * m, |i, _| {
        if i < m {
            w.0[i].re
        } else {
            w.0[i - m].im
        }
    }))
}

pub fn embed_conjugate(w: &ComplexVec) -> ConjugateEmbedding {
    let m = w.len();
    ConjugateEmbedding(DVector::from_fn(2 * m, |i, _| {
        if i < m {
            w.0[i]
        } else {
            w.0[i - m].conj()
        }
    }))
}

/// `D = [[I_M, jI_M], [I_M, -jI_M]]`.
pub fn d_matrix(m: usize) -> DMatrix<Complex64> {
    assert!(m >= 1, "d_matrix requires M >= 1");
    let j = Complex64::i();
    DMatrix::from_fn(2 * m, 2 * m, |r, c| {
        let (rb, ri) = (r / m, r % m);
        let (cb, ci) = (c / m, c % m);
        if ri != ci {
            return Complex64::new(0.0, 0.0);
        }
        match (rb, cb) {
            (_, 0) => Complex64::new(1.0, 0.0),
            (0, 1) => j,
            _ => -j,
        }
    })
}

/// `w̄ = D⁻¹·w̲ = (1/2)·D*·w̲`.
pub fn conjugate_to_real(w: &ConjugateEmbedding) -> RealEmbedding {
    let m = w.half_len();
    let v = d_matrix(m).adjoint() * &w.0 * Complex64::new(0.5, 0.0);
    RealEmbedding(v.map(|z| z.re))
}

/// `(1/4)·D·H̄·D*` for a real symmetric `H̄`.
pub fn hessian_real_to_extended(hbar: &DMatrix<f64>) -> Result<ExtendedHessian> {
    let n = hbar.nrows();
    if n == 0 || n != hbar.ncols() || n % 2 != 0 {
        return Err(Error::param("hbar", "must be square with even size"));
    }
    let asym = max_abs_diff_real(hbar, &hbar.transpose());
    if asym > HERMITIAN_TOL * (1.0 + hbar.amax()) {
        return Err(Error::NotSymmetric(asym));
    }
    let d = d_matrix(n / 2);
    let hc = hbar.map(|x| Complex64::new(x, 0.0));
    let ext = &d * hc * d.adjoint() * Complex64::new(0.25, 0.0);
    ExtendedHessian::new(ext)
}

/// `D*·H·D`, the real Hessian. Imaginary residue is discarded.
pub fn hessian_extended_to_real(h: &ExtendedHessian) -> DMatrix<f64> {
    let d = d_matrix(h.half_len());
    (d.adjoint() * &h.0 * d).map(|z| z.re)
}

/// Central-difference gradient of `f` at `wbar`.
pub fn finite_diff_gradient<F>(f: F, wbar: &RealEmbedding, h: f64) -> Result<DVector<f64>>
where
    F: Fn(&RealEmbedding) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::param("h", "step must be positive and finite"));
    }
    let n = wbar.0.len();
    let mut grad = DVector::zeros(n);
    let mut probe = wbar.clone();
    for i in 0..n {
        let x = wbar.0[i];
        probe.0[i] = x + h;
        let fp = f(&probe);
        probe.0[i] = x - h;
        let fm = f(&probe);
        probe.0[i] = x;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!(
                "function evaluation near coordinate {i}"
            )));
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

/// Extended complex gradient `[∇_w J, (∇_{w*} J)ᵀ] = (1/2)·∇_w̄ J·D*`,
/// returned as a column.
pub fn extended_gradient_from_real(real_grad: &DVector<f64>) -> DVector<Complex64> {
    let m = real_grad.len() / 2;
    let d = d_matrix(m);
    let g = real_grad.map(|x| Complex64::new(x, 0.0));
    (g.transpose() * d.adjoint() * Complex64::new(0.5, 0.0)).transpose()
}

/// The conjugate gradient `∇_{w*} J` recovered from the real gradient.
pub fn conjugate_gradient_from_real(real_grad: &DVector<f64>) -> ComplexVec {
    let m = real_grad.len() / 2;
    let ext = extended_gradient_from_real(real_grad);
    ComplexVec(ext.rows(m, m).into_owned())
}

pub(crate) fn hermitian_eigenvalues(m: &DMatrix<Complex64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

fn max_abs(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub(crate) fn max_abs_diff(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

fn max_abs_diff_real(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
