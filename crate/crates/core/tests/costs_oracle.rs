//! Data model and gradient-noise constants against Gaussian moment identities.

use asyncnet::costs::*;
use asyncnet::crcalc::ComplexVec;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Hermitian with eigenvalues 0.5 and 2 and a complex off-diagonal.
fn r_u() -> DMatrix<Complex64> {
    // U·diag(0.5, 2)·U* with U = [[1, j], [j, 1]]/√2
    let u = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 1.0), c(0.0, 1.0), c(1.0, 0.0)]) * c(0.5f64.sqrt(), 0.0);
    let d = DMatrix::from_diagonal(&vec![c(0.5, 0.0), c(2.0, 0.0)].into());
    &u * d * u.adjoint()
}

fn cost(sigma_n_sq: f64) -> QuadraticCost {
    QuadraticCost::new(r_u(), ComplexVec::new(vec![c(1.0, -0.5), c(0.25, 0.75)]).unwrap(), sigma_n_sq).unwrap()
}

#[test]
fn regressors_have_the_requested_second_and_fourth_moments() {
    let cost = cost(0.04);
    let r = r_u();
    let (tr, tr_sq) = (r.trace().re, (&r * &r).trace().re);
    assert!((tr - 2.5).abs() < 1e-12 && (tr_sq - 4.25).abs() < 1e-12);

    let n = 200_000;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut cov = DMatrix::<Complex64>::zeros(2, 2);
    let (mut q4, mut q4_sq, mut noise2) = (0.0, 0.0, 0.0);
    for _ in 0..n {
        let s = cost.sample_data(&mut rng);
        let u = nalgebra::DVector::from_vec(s.u.clone());
        // E[u*u] with u a row: entry (i, j) = E[conj(u_i)·u_j]
        cov += u.conjugate() * u.transpose();
        let n2: f64 = s.u.iter().map(|z| z.norm_sqr()).sum();
        q4 += n2 * n2;
        q4_sq += n2.powi(4);
        let resid = s.d - s.u.iter().zip(cost.w_opt().as_slice()).map(|(a, b)| a * b).sum::<Complex64>();
        noise2 += resid.norm_sqr();
    }
    let nf = n as f64;
    cov /= c(nf, 0.0);
    // the sample covariance of a CN(0, R) vector has entry SE ≈ √(R_ii R_jj / n)
    for i in 0..2 {
        for j in 0..2 {
            let se = (r[(i, i)].re * r[(j, j)].re / nf).sqrt();
            assert!((cov[(i, j)] - r[(i, j)]).norm() < 5.0 * se, "R[{i},{j}]");
        }
    }
    // Wick: E‖u‖⁴ = Tr(R)² + Tr(R²)
    let mean4 = q4 / nf;
    let se4 = ((q4_sq / nf - mean4 * mean4) / nf).sqrt();
    assert!((mean4 - (tr * tr + tr_sq)).abs() < 4.0 * se4, "{mean4} vs {}", tr * tr + tr_sq);
    // d − u·w° is the measurement noise
    assert!((noise2 / nf - 0.04).abs() < 0.04 * 5.0 / nf.sqrt());
}

#[test]
fn fitted_constants_match_the_closed_forms() {
    // E‖v‖² at w° + w̃ is σ_n²·Tr R + Tr(R)·w̃*Rw̃, so the largest slope over
    // the probe grid is Tr(R)·λ_max, reached along the top eigenvector.
    let cost = cost(0.01);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let p = noise_params(&cost, 40_000, 1.0, &mut rng).unwrap();
    assert!((p.sigma_v_sq - 0.025).abs() < 1e-15);
    let slope = 2.5 * 2.0;
    assert!(p.alpha > slope * ALPHA_INFLATION * 0.9 && p.alpha < slope * ALPHA_INFLATION * 1.1, "alpha {}", p.alpha);

    // at w°, v = −u*·n and E‖v‖⁴ = (Tr(R)² + Tr(R²))·2σ_n⁴
    let p4 = noise_params_fourth(&cost, 40_000, 1.0, &mut rng).unwrap();
    let expect = (2.0 * (2.5f64 * 2.5 + 4.25) * 1e-4).sqrt();
    assert!((p4.sigma_v_sq - expect).abs() < 1e-15);
    assert!(p4.alpha > 0.0);
}

#[test]
fn gradient_noise_has_zero_mean() {
    let cost = cost(0.05);
    let w = ComplexVec::new(vec![c(0.3, 0.1), c(-0.4, 0.9)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 100_000;
    let mut sum = [c(0.0, 0.0); 2];
    let mut sq = 0.0;
    for _ in 0..n {
        let v = cost.gradient_noise(&w, &cost.sample_data(&mut rng)).unwrap();
        sum[0] += v.as_slice()[0];
        sum[1] += v.as_slice()[1];
        sq += v.norm_sq();
    }
    let se = (sq / n as f64 / n as f64).sqrt();
    for s in sum {
        assert!((s / n as f64).norm() < 5.0 * se);
    }
}

#[test]
fn worst_case_takes_each_maximum() {
    let p = NoiseParams::worst_case(&[NoiseParams::new(1.0, 0.5).unwrap(), NoiseParams::new(3.0, 0.1).unwrap()]);
    assert_eq!(p, NoiseParams { alpha: 3.0, sigma_v_sq: 0.5 });
    assert!(NoiseParams::new(-1.0, 0.0).is_err());
    assert!(NoiseParams::new(1.0, f64::INFINITY).is_err());
}
