use asyncnet::costs::NoiseParams;
use asyncnet::netmodel::*;
use asyncnet::stability::*;
use asyncnet::Error;
use proptest::prelude::*;

fn ring(n: usize) -> (MeanGraph, CombinationModel) {
    let e: Vec<_> = (0..n).map(|k| (k, (k + 1) % n)).collect();
    let e = if n == 2 { vec![(0, 1)] } else { e };
    let cm = CombinationModel::uniform_undirected(n, &e, LinkWeight::Bernoulli { eta: 0.8, a: 0.45 }).unwrap();
    (cm.mean_graph().unwrap(), cm)
}

fn report_for(steps: Vec<StepSize>, lambdas: &[(f64, f64)], alpha: f64, sigma: f64) -> StabilityReport {
    let n = steps.len();
    let (g, cm) = ring(n);
    let sm = StepSizeModel::new(steps.clone()).unwrap();
    let ms = analytic_moments(&g, &sm, &cm).unwrap();
    let profiles: Vec<_> = lambdas
        .iter()
        .zip(&steps)
        .map(|(&(lo, hi), s)| AgentProfile { lambda_min: lo, lambda_max: hi, step: Some(*s) })
        .collect();
    let p = NoiseParams::new(alpha, sigma).unwrap();
    build_report(&profiles, p, p, &ms).unwrap()
}

/// Closed-form raw moments, independent of the library.
fn moments(s: &StepSize) -> (f64, f64, f64) {
    match *s {
        StepSize::Constant { mu } => (mu, mu * mu, mu.powi(4)),
        StepSize::Bernoulli { q, mu } => (q * mu, q * mu * mu, q * mu.powi(4)),
        StepSize::Beta { xi, zeta, mu } => {
            let raw = |p: i32| (0..p).map(|r| (xi + r as f64) / (xi + zeta + r as f64)).product::<f64>();
            (mu * raw(1), mu * mu * raw(2), mu.powi(4) * raw(4))
        }
    }
}

fn step_law() -> impl Strategy<Value = StepSize> {
    prop_oneof![
        (0.001..0.3f64).prop_map(|mu| StepSize::Constant { mu }),
        (0.05..0.95f64, 0.001..0.5f64).prop_map(|(q, mu)| StepSize::Bernoulli { q, mu }),
        (0.5..6.0f64, 0.5..6.0f64, 0.001..0.8f64).prop_map(|(xi, zeta, mu)| StepSize::Beta { xi, zeta, mu }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn report_matches_hand_evaluation(
        agents in prop::collection::vec((step_law(), 0.2..2.0f64, 1.0..3.0f64), 2..5),
        alpha in 0.1..5.0f64,
        sigma in 0.001..0.1f64,
    ) {
        let steps: Vec<_> = agents.iter().map(|a| a.0).collect();
        let lambdas: Vec<_> = agents.iter().map(|a| (a.1, a.1 * a.2)).collect();
        let r = report_for(steps.clone(), &lambdas, alpha, sigma);

        let mut beta: f64 = f64::MIN;
        let mut theta: f64 = f64::MIN;
        let mut ms_ok = true;
        let mut fourth_ok = true;
        let (mut nu_o, mut nu) = (0.0f64, 0.0f64);
        let (mut mmax, mut mmin) = (0.0f64, f64::MAX);
        for (s, &(lo, hi)) in steps.iter().zip(&lambdas) {
            let (m1, m2, m4) = moments(s);
            let g2 = 1.0 - 2.0 * m1 * lo + m2 * hi * hi;
            beta = beta.max(g2 + alpha * m2);
            theta = theta.max(m2);
            ms_ok &= m2 / m1 < lo / (alpha + hi * hi);
            fourth_ok &= m4.sqrt() / m1 < lo / (3.0 * hi * hi + 4.0 * alpha);
            nu_o = nu_o.max(m2 / m1);
            nu = nu.max(m4.sqrt() / m1);
            mmax = mmax.max(m1);
            mmin = mmin.min(m1);
        }
        let tol = |x: f64| 1e-12 * (1.0 + x.abs());
        prop_assert!((r.beta - beta).abs() <= tol(beta));
        prop_assert!((r.theta - theta).abs() <= tol(theta));
        prop_assert!((r.nu_o - nu_o).abs() <= tol(nu_o));
        prop_assert!((r.nu - nu).abs() <= tol(nu));
        prop_assert!((r.kappa - mmax / mmin).abs() <= tol(mmax / mmin));
        let lmin = lambdas.iter().map(|l| l.0).fold(f64::MAX, f64::min);
        prop_assert!((r.b - r.kappa * sigma / lmin).abs() <= tol(r.b));
        // the fourth-order pair equals the second-order one here
        prop_assert!((r.b4 - 3.0 * sigma * (r.kappa + 1.0) / lmin).abs() <= tol(r.b4));

        if r.ms_condition != Verdict::Marginal {
            prop_assert_eq!(r.ms_condition == Verdict::Pass, ms_ok);
        }
        if r.fourth_condition != Verdict::Marginal {
            prop_assert_eq!(r.fourth_condition == Verdict::Pass, fourth_ok);
        }
        // the condition implies a contraction and a bounded envelope
        if r.ms_condition == Verdict::Pass {
            prop_assert!(r.beta < 1.0);
            prop_assert!(r.relaxed_condition == Verdict::Pass);
            prop_assert!(r.envelope_limit() <= r.ms_bound() * (1.0 + 1e-12));
            prop_assert!(r.invariant_violations().is_empty());
        }
    }

    #[test]
    fn beta_bound_grows_with_shape(xi in 0.5..20.0f64, dxi in 0.1..5.0f64, phi in 0.1..4.0f64) {
        let a = beta_model_bound(xi, phi, 1.0, 1.0, 2.0);
        let b = beta_model_bound(xi + dxi, phi, 1.0, 1.0, 2.0);
        let base = 1.0 / 3.0;
        prop_assert!(a > base);
        prop_assert!(b > a);
        // and stays below the ζ → ∞ limit (1 + φ)·base
        prop_assert!(b < (1.0 + phi) * base);
    }
}

#[test]
fn worked_examples() {
    // ring3, Bernoulli q = 0.5, μ = 0.1, λ = 1, α = 2
    let r = report_for(vec![StepSize::Bernoulli { q: 0.5, mu: 0.1 }; 3], &[(1.0, 1.0); 3], 2.0, 0.02);
    assert_eq!(r.ms_condition, Verdict::Pass);
    assert!((r.agents[0].gamma_sq - 0.905).abs() < 1e-12);
    assert!((r.beta - 0.915).abs() < 1e-12);
    assert!((r.theta - 0.005).abs() < 1e-12);
    assert!((r.envelope_limit() - 0.005 * 0.02 / 0.085).abs() < 1e-15);
    assert!((r.ms_bound() - 2e-3).abs() < 1e-15);

    // constant μ = 0.5 exceeds 1/3
    let r = report_for(vec![StepSize::Constant { mu: 0.5 }; 3], &[(1.0, 1.0); 3], 2.0, 0.02);
    assert_eq!(r.ms_condition, Verdict::Fail);

    // Beta with ξ = 2, ζ = φξ = 3, μ = 0.5: μ̄ = 0.2, μ̄² + c = 0.05, ratio 0.25
    let r = report_for(vec![StepSize::Beta { xi: 2.0, zeta: 3.0, mu: 0.5 }; 3], &[(1.0, 1.0); 3], 2.0, 0.02);
    assert!((r.agents[0].ms_ratio - 0.25).abs() < 1e-12);
    assert_eq!(r.ms_condition, Verdict::Pass);
    assert_eq!(r.model_specific_bound, Some(Verdict::Pass));

    // μ = 0.05: fourth-order condition holds, bound b₄²ν² = 7.2e-5
    let r = report_for(vec![StepSize::Bernoulli { q: 0.5, mu: 0.05 }; 3], &[(1.0, 1.0); 3], 2.0, 0.02);
    assert_eq!(r.fourth_condition, Verdict::Pass);
    assert!((fourth_bound(&r).unwrap() - 7.2e-5).abs() < 1e-15);
    let r = report_for(vec![StepSize::Bernoulli { q: 0.5, mu: 0.1 }; 3], &[(1.0, 1.0); 3], 2.0, 0.02);
    assert!(matches!(fourth_bound(&r), Err(Error::ConditionFailed(_))));
}

#[test]
fn bernoulli_bound_matches_condition_boundary() {
    // for Bernoulli the ratio (μ̄² + c)/μ̄ equals μ, so the model bound is
    // exactly where the condition flips
    let base = 1.0 / 3.0;
    assert_eq!(model_bound(&StepSize::Bernoulli { q: 0.3, mu: 0.1 }, 1.0, 1.0, 2.0), base);
    let at = report_for(vec![StepSize::Bernoulli { q: 0.3, mu: base }; 2], &[(1.0, 1.0); 2], 2.0, 0.02);
    assert_eq!(at.ms_condition, Verdict::Marginal);
    let below = report_for(vec![StepSize::Bernoulli { q: 0.3, mu: base * 0.999 }; 2], &[(1.0, 1.0); 2], 2.0, 0.02);
    assert_eq!(below.ms_condition, Verdict::Pass);
    let above = report_for(vec![StepSize::Bernoulli { q: 0.3, mu: base * 1.001 }; 2], &[(1.0, 1.0); 2], 2.0, 0.02);
    assert_eq!(above.ms_condition, Verdict::Fail);
}

#[test]
fn envelope_converges_to_its_limit() {
    let r = report_for(vec![StepSize::Bernoulli { q: 0.5, mu: 0.1 }; 3], &[(1.0, 1.0); 3], 2.0, 0.02);
    let env = bound_envelope(&r, 2.0, 400, 0.02).unwrap();
    assert_eq!(env.values.len(), 401);
    assert_eq!(env.values[0], 2.0);
    // closed form β^{i}ε₀ + limit·(1 − β^{i})
    for (i, v) in env.values.iter().enumerate() {
        let closed = r.beta.powi(i as i32) * 2.0 + env.limit * (1.0 - r.beta.powi(i as i32));
        assert!((v - closed).abs() <= 1e-12 * closed.max(1e-3));
    }
    assert!(env.values.windows(2).all(|w| w[1] < w[0]));
    assert!(!env.divergent);

    let bad = report_for(vec![StepSize::Constant { mu: 1.2 }; 3], &[(1.0, 1.0); 3], 2.0, 0.02);
    let env = bound_envelope(&bad, 1.0, 10, 0.02).unwrap();
    assert!(env.divergent && env.limit.is_infinite());
}

#[test]
fn zero_mean_step_is_an_error() {
    let (g, cm) = ring(3);
    let sm = StepSizeModel::uniform(3, StepSize::Constant { mu: 0.1 }).unwrap();
    let mut ms = analytic_moments(&g, &sm, &cm).unwrap();
    ms.mbar[1] = 0.0;
    let p = NoiseParams::new(2.0, 0.02).unwrap();
    let profiles = vec![AgentProfile { lambda_min: 1.0, lambda_max: 1.0, step: None }; 3];
    assert!(matches!(build_report(&profiles, p, p, &ms), Err(Error::ZeroMeanStep(1))));
}

#[test]
fn verdicts() {
    assert_eq!(Verdict::strict_less(1.0, 2.0), Verdict::Pass);
    assert_eq!(Verdict::strict_less(2.0, 1.0), Verdict::Fail);
    assert_eq!(Verdict::strict_less(1.0 / 3.0, 0.1 / 0.3), Verdict::Marginal);
    assert_eq!(Verdict::all([Verdict::Pass, Verdict::Marginal]), Verdict::Marginal);
    assert_eq!(Verdict::all([Verdict::Marginal, Verdict::Fail]), Verdict::Fail);
}
