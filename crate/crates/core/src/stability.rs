//! Mean-square and fourth-order stability conditions, bound constants and
//! the worst-agent MSD envelope.

use std::fmt::{self, Write as _};

use crate::costs::{NoiseParams, QuadraticCost};
use crate::error::{Error, Result};
use crate::netmodel::{MomentSet, StepSize, StepSizeModel};

/// Relative band around a strict inequality reported as marginal.
pub const MARGINAL_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Marginal,
}

impl Verdict {
    /// Strict `lhs < rhs` with a relative guard band.
    pub fn strict_less(lhs: f64, rhs: f64) -> Verdict {
        if !(lhs.is_finite() && rhs.is_finite()) {
            return if lhs < rhs { Verdict::Pass } else { Verdict::Fail };
        }
        let scale = lhs.abs().max(rhs.abs());
        if (lhs - rhs).abs() <= MARGINAL_GUARD * scale {
            Verdict::Marginal
        } else if lhs < rhs {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    /// Fail dominates marginal, marginal dominates pass.
    pub fn all(vs: impl IntoIterator<Item = Verdict>) -> Verdict {
        vs.into_iter().fold(Verdict::Pass, |acc, v| match (acc, v) {
            (Verdict::Fail, _) | (_, Verdict::Fail) => Verdict::Fail,
            (Verdict::Marginal, _) | (_, Verdict::Marginal) => Verdict::Marginal,
            _ => Verdict::Pass,
        })
    }

    pub fn is_pass(self) -> bool {
        self == Verdict::Pass
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Marginal => "marginal",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What the stability analysis needs to know about one agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentProfile {
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Step-size law, when known; enables the per-model checks.
    pub step: Option<StepSize>,
}

impl AgentProfile {
    pub fn from_cost(cost: &QuadraticCost, step: Option<StepSize>) -> Self {
        AgentProfile {
            lambda_min: cost.lambda_min(),
            lambda_max: cost.lambda_max(),
            step,
        }
    }

    pub fn from_model(costs: &[QuadraticCost], sm: &StepSizeModel) -> Vec<Self> {
        costs
            .iter()
            .zip(sm.agents())
            .map(|(c, s)| Self::from_cost(c, Some(*s)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentStability {
    pub mbar: f64,
    pub c_mu: f64,
    pub mu2: f64,
    pub mu4: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub gamma_sq: f64,
    /// `(μ̄² + c)/μ̄`.
    pub ms_ratio: f64,
    /// `λ_min/(α + λ_max²)`.
    pub ms_limit: f64,
    /// `√μ̄⁽⁴⁾/μ̄`.
    pub fourth_ratio: f64,
    /// `λ_min/(3λ_max² + 4α)`.
    pub fourth_limit: f64,
    /// `1 − 2μ̄λ_min + (μ̄² + c)(λ_max² + α)`.
    pub relaxed_factor: f64,
    pub mu_upper: Option<f64>,
    pub model_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub agents: Vec<AgentStability>,
    pub alpha: f64,
    pub sigma_v_sq: f64,
    pub alpha4: f64,
    pub sigma_v_sq4: f64,
    pub beta: f64,
    pub theta: f64,
    pub kappa: f64,
    pub nu_o: f64,
    pub nu: f64,
    pub b: f64,
    pub b4: f64,
    pub ms_condition: Verdict,
    /// `μ_k < λ_min/(α+λ_max²)` on the upper step limits; `None` when the
    /// step laws are unknown.
    pub ms_sufficient: Option<Verdict>,
    pub fourth_condition: Verdict,
    /// `μ_k` below the closed-form bound of its step law.
    pub model_specific_bound: Option<Verdict>,
    /// `|1 − 2μ̄λ_min + (μ̄²+c)(λ_max²+α)| < 1` for every agent; implied by
    /// the official condition but weaker.
    pub relaxed_condition: Verdict,
}

impl StabilityReport {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn beta_stable(&self) -> bool {
        self.beta.abs() < 1.0
    }

    /// `θσ_v²/(1−β)`, infinite when `|β| ≥ 1`.
    pub fn envelope_limit(&self) -> f64 {
        if self.beta_stable() {
            self.theta * self.sigma_v_sq / (1.0 - self.beta)
        } else {
            f64::INFINITY
        }
    }

    /// `b·ν₀`.
    pub fn ms_bound(&self) -> f64 {
        self.b * self.nu_o
    }

    /// Structural implications every report must satisfy. Returns the
    /// violated ones.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.ms_condition.is_pass() && !self.beta_stable() {
            out.push(format!("ms_condition passes but beta = {}", self.beta));
        }
        if self.fourth_condition.is_pass()
            && self.alpha4 >= self.alpha
            && self.ms_condition == Verdict::Fail
        {
            out.push("fourth_condition passes but ms_condition fails".into());
        }
        if self.nu_o > self.nu * (1.0 + 1e-12) {
            out.push(format!("nu_o = {} exceeds nu = {}", self.nu_o, self.nu));
        }
        for (k, a) in self.agents.iter().enumerate() {
            if let Some(mu) = a.mu_upper {
                if a.ms_ratio > mu * (1.0 + 1e-12) {
                    out.push(format!("agent {k}: mu2/mu1 = {} exceeds mu_k = {mu}", a.ms_ratio));
                }
            }
        }
        if self.ms_condition.is_pass() && self.envelope_limit() > self.ms_bound() * (1.0 + 1e-12) {
            out.push(format!(
                "envelope limit {} exceeds b*nu_o = {}",
                self.envelope_limit(),
                self.ms_bound()
            ));
        }
        out
    }

    /// `key = value` lines; per-agent quantities use `name.k` keys.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<Verdict>| v.map_or("n/a", Verdict::as_str);
        let _ = writeln!(s, "n_agents = {}", self.n_agents());
        for (k, v) in [
            ("alpha", self.alpha),
            ("sigma_v_sq", self.sigma_v_sq),
            ("alpha4", self.alpha4),
            ("sigma_v_sq4", self.sigma_v_sq4),
            ("beta", self.beta),
            ("theta", self.theta),
            ("kappa", self.kappa),
            ("nu_o", self.nu_o),
            ("nu", self.nu),
            ("b", self.b),
            ("b4", self.b4),
            ("envelope_limit", self.envelope_limit()),
            ("b_nu_o", self.ms_bound()),
        ] {
            let _ = writeln!(s, "{k} = {v}");
        }
        if self.fourth_condition.is_pass() {
            let _ = writeln!(s, "b4_sq_nu_sq = {}", self.b4 * self.b4 * self.nu * self.nu);
        }
        let _ = writeln!(s, "ms_condition = {}", self.ms_condition);
        let _ = writeln!(s, "ms_sufficient = {}", opt(self.ms_sufficient));
        let _ = writeln!(s, "fourth_condition = {}", self.fourth_condition);
        let _ = writeln!(s, "model_specific_bound = {}", opt(self.model_specific_bound));
        let _ = writeln!(s, "relaxed_condition = {}", self.relaxed_condition);
        for (k, a) in self.agents.iter().enumerate() {
            let _ = writeln!(s, "gamma_sq.{k} = {}", a.gamma_sq);
            let _ = writeln!(s, "ms_ratio.{k} = {}", a.ms_ratio);
            let _ = writeln!(s, "ms_limit.{k} = {}", a.ms_limit);
            let _ = writeln!(s, "fourth_ratio.{k} = {}", a.fourth_ratio);
            let _ = writeln!(s, "fourth_limit.{k} = {}", a.fourth_limit);
            if let Some(m) = a.model_bound {
                let _ = writeln!(s, "model_bound.{k} = {m}");
            }
        }
        s
    }

    pub const CSV_HEADER: &'static str = "agent,mbar,c_mu,mu2,mu4,lambda_min,lambda_max,gamma_sq,\
ms_ratio,ms_limit,fourth_ratio,fourth_limit,relaxed_factor,mu_upper,model_bound";

    /// One row per agent; unknown optional values are empty cells.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (k, a) in self.agents.iter().enumerate() {
            let _ = writeln!(
                s,
                "{k},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                a.mbar,
                a.c_mu,
                a.mu2,
                a.mu4,
                a.lambda_min,
                a.lambda_max,
                a.gamma_sq,
                a.ms_ratio,
                a.ms_limit,
                a.fourth_ratio,
                a.fourth_limit,
                a.relaxed_factor,
                opt(a.mu_upper),
                opt(a.model_bound),
            );
        }
        s
    }
}

/// Evaluates every condition and constant for the given agents and
/// moments. `noise` enters the mean-square quantities and `noise4` the
/// fourth-order ones.
pub fn build_report(
    profiles: &[AgentProfile],
    noise: NoiseParams,
    noise4: NoiseParams,
    ms: &MomentSet,
) -> Result<StabilityReport> {
    let n = ms.n_agents();
    if profiles.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: profiles.len(),
        });
    }
    let alpha = noise.alpha;
    let alpha4 = noise4.alpha;
    let mut agents = Vec::with_capacity(n);
    for (k, p) in profiles.iter().enumerate() {
        let mbar = ms.mbar[k];
        if !(mbar > 0.0) {
            return Err(Error::ZeroMeanStep(k));
        }
        if !(p.lambda_min > 0.0 && p.lambda_max >= p.lambda_min) {
            return Err(Error::param(
                format!("agents[{k}]"),
                "need 0 < lambda_min <= lambda_max",
            ));
        }
        let c_mu = ms.step_variance(k);
        let [_, mu2, mu4] = ms.mu_moments[k];
        let second = mbar * mbar + c_mu;
        let (lmin, lmax) = (p.lambda_min, p.lambda_max);
        agents.push(AgentStability {
            mbar,
            c_mu,
            mu2,
            mu4,
            lambda_min: lmin,
            lambda_max: lmax,
            gamma_sq: 1.0 - 2.0 * mbar * lmin + second * lmax * lmax,
            ms_ratio: second / mbar,
            ms_limit: lmin / (alpha + lmax * lmax),
            fourth_ratio: mu4.sqrt() / mbar,
            fourth_limit: lmin / (3.0 * lmax * lmax + 4.0 * alpha4),
            relaxed_factor: 1.0 - 2.0 * mbar * lmin + second * (lmax * lmax + alpha),
            mu_upper: p.step.map(|s| s.upper()),
            model_bound: p.step.map(|s| model_bound(&s, lmin, lmax, alpha)),
        });
    }

    let max_over = |f: &dyn Fn(&AgentStability) -> f64| {
        agents.iter().map(f).fold(f64::NEG_INFINITY, f64::max)
    };
    let beta = max_over(&|a| a.gamma_sq + alpha * (a.mbar * a.mbar + a.c_mu));
    let theta = max_over(&|a| a.mbar * a.mbar + a.c_mu);
    let nu_o = max_over(&|a| a.mu2 / a.mbar);
    let nu = max_over(&|a| a.fourth_ratio);
    let kappa = ms.kappa();
    let lmin_all = agents.iter().map(|a| a.lambda_min).fold(f64::INFINITY, f64::min);
    let b = kappa * noise.sigma_v_sq / lmin_all;
    let b4 = 3.0 * noise4.sigma_v_sq * (kappa + 1.0) / lmin_all;

    let ms_condition = Verdict::all(agents.iter().map(|a| Verdict::strict_less(a.ms_ratio, a.ms_limit)));
    let fourth_condition =
        Verdict::all(agents.iter().map(|a| Verdict::strict_less(a.fourth_ratio, a.fourth_limit)));
    let relaxed_condition =
        Verdict::all(agents.iter().map(|a| Verdict::strict_less(a.relaxed_factor.abs(), 1.0)));
    let known = agents.iter().all(|a| a.mu_upper.is_some());
    let ms_sufficient = known.then(|| {
        Verdict::all(
            agents
                .iter()
                .map(|a| Verdict::strict_less(a.mu_upper.unwrap(), a.ms_limit)),
        )
    });
    let model_specific_bound = known.then(|| {
        Verdict::all(
            agents
                .iter()
                .map(|a| Verdict::strict_less(a.mu_upper.unwrap(), a.model_bound.unwrap())),
        )
    });

    let report = StabilityReport {
        agents,
        alpha,
        sigma_v_sq: noise.sigma_v_sq,
        alpha4,
        sigma_v_sq4: noise4.sigma_v_sq,
        beta,
        theta,
        kappa,
        nu_o,
        nu,
        b,
        b4,
        ms_condition,
        ms_sufficient,
        fourth_condition,
        model_specific_bound,
        relaxed_condition,
    };
    debug_assert!(
        report.invariant_violations().is_empty(),
        "{:?}",
        report.invariant_violations()
    );
    Ok(report)
}

/// Largest admissible upper step limit `μ_k` for a step law.
///
/// Deterministic and on-off steps share `λ_min/(α+λ_max²)`; a Beta law with
/// `ζ = φξ` stretches it by `1 + φξ/(1+ξ)`.
pub fn model_bound(step: &StepSize, lambda_min: f64, lambda_max: f64, alpha: f64) -> f64 {
    let base = lambda_min / (alpha + lambda_max * lambda_max);
    match *step {
        StepSize::Constant { .. } | StepSize::Bernoulli { .. } => base,
        StepSize::Beta { xi, zeta, .. } => {
            let bound = (1.0 + zeta / (1.0 + xi)) * base;
            debug_assert!(bound > base);
            bound
        }
    }
}

/// [`model_bound`] for a Beta law written with `ζ = φξ`.
pub fn beta_model_bound(xi: f64, phi: f64, lambda_min: f64, lambda_max: f64, alpha: f64) -> f64 {
    model_bound(
        &StepSize::Beta {
            xi,
            zeta: phi * xi,
            mu: 1.0,
        },
        lambda_min,
        lambda_max,
        alpha,
    )
}

/// Per-agent [`model_bound`].
pub fn model_bounds(sm: &StepSizeModel, profiles: &[AgentProfile], alpha: f64) -> Vec<f64> {
    sm.agents()
        .iter()
        .zip(profiles)
        .map(|(s, p)| model_bound(s, p.lambda_min, p.lambda_max, alpha))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    /// `values[j] = ε²(j−1)`, so `values[0]` is the initial condition.
    pub values: Vec<f64>,
    /// `θσ_v²/(1−β)`.
    pub limit: f64,
    /// `b·ν₀`.
    pub b_nu_o: f64,
    pub divergent: bool,
}

/// The worst-agent MSD recursion unrolled:
/// `ε²(i) = β^{i+1}ε²(−1) + θσ_v²(1−β^{i+1})/(1−β)`.
pub fn bound_envelope(
    report: &StabilityReport,
    eps0_sq: f64,
    horizon: usize,
    sigma_v_sq: f64,
) -> Result<Envelope> {
    if !(eps0_sq >= 0.0 && eps0_sq.is_finite()) {
        return Err(Error::param("eps0_sq", "must be finite and nonnegative"));
    }
    let beta = report.beta;
    let drive = report.theta * sigma_v_sq;
    let divergent = beta.abs() >= 1.0;
    let limit = if divergent {
        f64::INFINITY
    } else {
        drive / (1.0 - beta)
    };
    let mut values = Vec::with_capacity(horizon + 1);
    let mut e = eps0_sq;
    values.push(e);
    for _ in 0..horizon {
        // iterate the recursion itself; it equals the closed form
        e = beta * e + drive;
        values.push(e);
    }
    let b_nu_o = report.kappa * sigma_v_sq / min_lambda(report) * report.nu_o;
    if report.ms_condition.is_pass() {
        debug_assert!(limit <= b_nu_o * (1.0 + 1e-12), "{limit} > {b_nu_o}");
    }
    Ok(Envelope {
        values,
        limit,
        b_nu_o,
        divergent,
    })
}

fn min_lambda(report: &StabilityReport) -> f64 {
    report
        .agents
        .iter()
        .map(|a| a.lambda_min)
        .fold(f64::INFINITY, f64::min)
}

/// `b₄²ν²`, the asymptotic bound on the worst fourth-order error moment.
pub fn fourth_bound(report: &StabilityReport) -> Result<f64> {
    if report.fourth_condition != Verdict::Pass {
        let (k, a) = report
            .agents
            .iter()
            .enumerate()
            .max_by(|x, y| {
                (x.1.fourth_ratio / x.1.fourth_limit).total_cmp(&(y.1.fourth_ratio / y.1.fourth_limit))
            })
            .expect("non-empty report");
        return Err(Error::ConditionFailed(format!(
            "fourth-order condition is {}: agent {k} has sqrt(mu4)/mu1 = {:.6} vs limit {:.6}",
            report.fourth_condition, a.fourth_ratio, a.fourth_limit
        )));
    }
    Ok(report.b4 * report.b4 * report.nu * report.nu)
}
