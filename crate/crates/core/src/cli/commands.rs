use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::Experiment;
use crate::costs::QuadraticCost;
use crate::crcalc::ComplexVec;
use crate::engine::{
    recursion_equivalence, run_experiment, steady_state, ExperimentRecord, Network, RunOptions,
    SteadyState,
};
use crate::error::{Error, Result};
use crate::netmodel::{
    analytic_moments, check_independence, check_left_stochastic, check_lemma4_pattern,
    compare_moments, empirical_moments, neighborhood_union, MomentSet, STOCHASTIC_TOL,
};
use crate::stability::{bound_envelope, build_report, AgentProfile, StabilityReport, Verdict};
use crate::stats::ols_slope;

/// Process exit codes shared by every command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    ConditionFailed = 1,
    UsageError = 2,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

/// Command-line overrides of the config's run section.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub horizon: Option<usize>,
    /// Worker threads for parallel trials; never changes results.
    pub threads: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, exp: &mut Experiment) {
        if let Some(s) = self.seed {
            exp.config.run.base_seed = s;
        }
        if let Some(t) = self.trials {
            exp.config.run.n_trials = t;
        }
        if let Some(h) = self.horizon {
            exp.config.run.horizon = h;
        }
    }

    fn run_options(&self, exp: &Experiment) -> RunOptions {
        let base = exp.run_options();
        RunOptions {
            n_trials: self.trials.unwrap_or(base.n_trials),
            horizon: self.horizon.unwrap_or(base.horizon),
            base_seed: self.seed.unwrap_or(base.base_seed),
            threads: self.threads,
            ..base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    Skip,
    Info,
}

impl CheckStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "fail",
            CheckStatus::Skip => "skip",
            CheckStatus::Info => "info",
        }
    }

    fn from_bool(ok: bool) -> Self {
        if ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        }
    }
}

/// One named, machine-readable check result.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: String,
    pub name: String,
    pub status: CheckStatus,
    pub measured: Option<f64>,
    pub se: Option<f64>,
    /// The bound or tolerance `measured` is held against.
    pub tolerance: Option<f64>,
    pub detail: String,
}

impl Check {
    fn new(suite: &str, name: &str, status: CheckStatus) -> Self {
        Check {
            suite: suite.into(),
            name: name.into(),
            status,
            measured: None,
            se: None,
            tolerance: None,
            detail: String::new(),
        }
    }

    fn value(mut self, measured: f64, tolerance: f64) -> Self {
        self.measured = Some(measured);
        self.tolerance = Some(tolerance);
        self
    }

    fn with_se(mut self, se: f64) -> Self {
        self.se = Some(se);
        self
    }

    fn detail(mut self, d: impl Into<String>) -> Self {
        self.detail = d.into();
        self
    }

    fn failed(&self) -> bool {
        self.status == CheckStatus::Fail
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn checks_csv(checks: &[Check]) -> String {
    let mut s = String::from("suite,check,status,measured,se,tolerance,detail\n");
    for c in checks {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            c.suite,
            c.name,
            c.status.as_str(),
            opt(c.measured),
            opt(c.se),
            opt(c.tolerance),
            csv_field(&c.detail)
        );
    }
    s
}

/// What a command produced.
#[derive(Debug, Clone)]
pub struct CommandOutput {
    pub status: ExitStatus,
    /// Human-readable summary for stdout.
    pub message: String,
    pub files: Vec<PathBuf>,
}

fn write(dir: &Path, name: &str, contents: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let p = dir.join(name);
    fs::write(&p, contents)?;
    files.push(p);
    Ok(())
}

pub fn analytic(exp: &Experiment) -> Result<MomentSet> {
    let net = &exp.network;
    analytic_moments(net.graph(), net.steps(), net.combination())
}

pub fn stability_report(exp: &Experiment) -> Result<StabilityReport> {
    let ms = analytic(exp)?;
    let profiles = AgentProfile::from_model(exp.network.costs(), exp.network.steps());
    build_report(&profiles, exp.noise, exp.noise4, &ms)
}

/// Writes `stability.txt` (key = value) and `stability.csv` (per agent).
/// Succeeds iff the mean-square condition passes.
pub fn command_stability(exp: &Experiment, out: &Path) -> Result<CommandOutput> {
    let report = stability_report(exp)?;
    let mut files = Vec::new();
    write(out, "stability.txt", &report.to_key_value(), &mut files)?;
    write(out, "stability.csv", &report.to_csv(), &mut files)?;
    let status = if report.ms_condition == Verdict::Pass {
        ExitStatus::Success
    } else {
        ExitStatus::ConditionFailed
    };
    let message = format!(
        "ms_condition = {}\nbeta = {}\ntheta = {}\nfourth_condition = {}\n",
        report.ms_condition, report.beta, report.theta, report.fourth_condition
    );
    Ok(CommandOutput {
        status,
        message,
        files,
    })
}

/// Default Monte-Carlo draws for the moment comparison.
pub const MOMENT_SAMPLES: usize = 100_000;

/// Writes `moments.csv` (analytic vs empirical, entrywise) and
/// `edges.csv` (the mean graph).
pub fn command_moments(exp: &Experiment, out: &Path, samples: usize) -> Result<CommandOutput> {
    let checks = suite_moments(exp, samples)?;
    let net = &exp.network;
    let ms = analytic(exp)?;
    let mut rng = ChaCha8Rng::seed_from_u64(exp.config.run.base_seed);
    let emp = empirical_moments(net.graph(), net.steps(), net.combination(), samples, &mut rng)?;
    let cmp = compare_moments(&ms, &emp, 3.0);
    let mut csv = String::from("quantity,analytic,empirical,se,status\n");
    for d in &cmp.entries {
        let ok = crate::netmodel::within_se(d.expected, d.measured, d.se, 3.0);
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            csv_field(&d.quantity),
            d.expected,
            d.measured,
            d.se,
            CheckStatus::from_bool(ok).as_str()
        );
    }
    let mut files = Vec::new();
    write(out, "moments.csv", &csv, &mut files)?;
    write(out, "edges.csv", &net.graph().to_edge_csv(), &mut files)?;
    write(out, "moment_checks.csv", &checks_csv(&checks), &mut files)?;
    finish(checks, files)
}

fn finish(checks: Vec<Check>, files: Vec<PathBuf>) -> Result<CommandOutput> {
    let failed = checks.iter().filter(|c| c.failed()).count();
    let mut message = String::new();
    for c in &checks {
        let _ = writeln!(
            message,
            "[{}] {}/{}{}{}",
            c.status.as_str(),
            c.suite,
            c.name,
            c.measured.map(|m| format!(" measured={m:.6e}")).unwrap_or_default(),
            c.tolerance.map(|t| format!(" bound={t:.6e}")).unwrap_or_default(),
        );
    }
    Ok(CommandOutput {
        status: if failed == 0 {
            ExitStatus::Success
        } else {
            ExitStatus::ConditionFailed
        },
        message,
        files,
    })
}

/// Simulation output and its analysis.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub record: ExperimentRecord,
    pub report: StabilityReport,
    pub steady: Option<SteadyState>,
    pub checks: Vec<Check>,
}

/// Runs the Monte-Carlo experiment and checks it against the bounds.
/// Divergent trials are excluded from averages only when the mean-square
/// condition fails.
pub fn simulate(exp: &Experiment, overrides: &Overrides) -> Result<Simulation> {
    let report = stability_report(exp)?;
    let mut opts = overrides.run_options(exp);
    opts.exclude_divergent = report.ms_condition != Verdict::Pass;
    let record = run_experiment(&exp.network, &opts)?;
    let steady = steady_state(&record, exp.config.run.window_fraction).ok();
    let checks = analyze("simulate", exp, &record, &report, steady.as_ref())?;
    Ok(Simulation {
        record,
        report,
        steady,
        checks,
    })
}

/// Writes `timeseries.csv`, `trials.csv` and `summary.csv`.
pub fn command_simulate(exp: &Experiment, out: &Path, overrides: &Overrides) -> Result<CommandOutput> {
    let sim = simulate(exp, overrides)?;
    sim.record.write_csv(out)?;
    let mut files = vec![
        out.join(crate::engine::TIMESERIES_FILE),
        out.join(crate::engine::TRIALS_FILE),
    ];
    write(out, "summary.csv", &checks_csv(&sim.checks), &mut files)?;
    let mut result = finish(sim.checks, files)?;
    if let Some(s) = &sim.steady {
        result.message = format!(
            "steady-state msd_max = {:.6e} ± {:.2e} (b*nu_o = {:.6e}, envelope limit = {:.6e})\n{}",
            s.msd_max.value,
            s.msd_max.se,
            sim.report.ms_bound(),
            sim.report.envelope_limit(),
            result.message
        );
    }
    Ok(result)
}

/// Bound checks for a finished run.
pub fn analyze(
    suite: &str,
    exp: &Experiment,
    record: &ExperimentRecord,
    report: &StabilityReport,
    steady: Option<&SteadyState>,
) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let worst_ratio = report
        .agents
        .iter()
        .map(|a| a.ms_ratio / a.ms_limit)
        .fold(0.0, f64::max);
    checks.push(
        Check::new(
            suite,
            "ms_condition",
            match report.ms_condition {
                Verdict::Pass => CheckStatus::Pass,
                _ => CheckStatus::Fail,
            },
        )
        .value(worst_ratio, 1.0)
        .detail(format!(
            "max_k ((mu^2+c)/mu) / (lambda_min/(alpha+lambda_max^2)) is {}",
            report.ms_condition
        )),
    );
    let n_div = record.n_diverged();
    checks.push(
        Check::new(suite, "diverged_trials", CheckStatus::Info)
            .value(n_div as f64, record.n_trials() as f64)
            .detail(format!(
                "{} excluded from averages{}",
                record.n_excluded(),
                if record.all_trials_diverged {
                    "; every trial diverged"
                } else {
                    ""
                }
            )),
    );

    if report.ms_condition != Verdict::Pass {
        for name in ["steady_msd_vs_b_nu_o", "steady_msd_vs_envelope_limit", "envelope_dominance"] {
            checks.push(
                Check::new(suite, name, CheckStatus::Skip)
                    .detail("mean-square condition does not hold"),
            );
        }
        return Ok(checks);
    }

    let env = bound_envelope(
        report,
        exp.network.initial_worst_msd(),
        record.horizon(),
        report.sigma_v_sq,
    )?;
    let (worst_i, worst_excess) = record
        .msd_max
        .mean
        .iter()
        .zip(&record.msd_max.se)
        .zip(&env.values)
        .map(|((m, se), e)| m - 2.0 * se - e)
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, x)| if x > acc.1 { (i, x) } else { acc });
    checks.push(
        Check::new(suite, "envelope_dominance", CheckStatus::from_bool(worst_excess <= 0.0))
            .value(worst_excess, 0.0)
            .detail(format!(
                "max_i (msd_max(i) - 2se - envelope(i)), worst at iteration {worst_i}"
            )),
    );

    match steady {
        Some(s) => {
            let b = report.ms_bound();
            checks.push(
                Check::new(
                    suite,
                    "steady_msd_vs_b_nu_o",
                    CheckStatus::from_bool(s.msd_max.below(b, 2.0)),
                )
                .value(s.msd_max.value, b)
                .with_se(s.msd_max.se)
                .detail("steady msd_max + 2se <= b*nu_o"),
            );
            let lim = report.envelope_limit();
            checks.push(
                Check::new(
                    suite,
                    "steady_msd_vs_envelope_limit",
                    CheckStatus::from_bool(s.msd_max.value <= lim + 2.0 * s.msd_max.se),
                )
                .value(s.msd_max.value, lim)
                .with_se(s.msd_max.se)
                .detail("steady msd_max <= theta*sigma_v^2/(1-beta) + 2se"),
            );
            if report.fourth_condition == Verdict::Pass {
                let b4 = report.b4 * report.b4 * report.nu * report.nu;
                checks.push(
                    Check::new(
                        suite,
                        "steady_m4_vs_b4_sq_nu_sq",
                        CheckStatus::from_bool(s.m4_max.value <= b4 + 2.0 * s.m4_max.se),
                    )
                    .value(s.m4_max.value, b4)
                    .with_se(s.m4_max.se)
                    .detail("steady m4_max <= b4^2 nu^2 + 2se"),
                );
            } else {
                checks.push(
                    Check::new(suite, "steady_m4_vs_b4_sq_nu_sq", CheckStatus::Skip)
                        .detail(format!("fourth-order condition is {}", report.fourth_condition)),
                );
            }
            checks.push(
                Check::new(suite, "steady_disagreement", CheckStatus::Info)
                    .value(s.disagreement.value, s.msd_max.value)
                    .with_se(s.disagreement.se)
                    .detail("pair-mean disagreement; tolerance column holds msd_max"),
            );
        }
        None => {
            for name in ["steady_msd_vs_b_nu_o", "steady_msd_vs_envelope_limit"] {
                checks.push(
                    Check::new(suite, name, CheckStatus::Skip)
                        .detail("run too short for a steady-state window"),
                );
            }
        }
    }
    Ok(checks)
}

pub const SUITES: [&str; 7] = ["moments", "lemmas", "recursion", "bounds", "scaling", "fourth", "all"];

/// Runs a named verification suite and writes `verify.csv`.
pub fn command_verify(
    exp: &Experiment,
    suite: &str,
    out: &Path,
    overrides: &Overrides,
) -> Result<CommandOutput> {
    let checks = run_suite(exp, suite, overrides)?;
    let mut files = Vec::new();
    write(out, "verify.csv", &checks_csv(&checks), &mut files)?;
    finish(checks, files)
}

pub fn run_suite(exp: &Experiment, suite: &str, overrides: &Overrides) -> Result<Vec<Check>> {
    match suite {
        "moments" => suite_moments(exp, MOMENT_SAMPLES),
        "lemmas" => suite_lemmas(exp),
        "recursion" => suite_recursion(exp),
        "bounds" => suite_bounds(exp, overrides),
        "scaling" => suite_scaling(exp, overrides),
        "fourth" => suite_fourth(exp, overrides),
        "all" => {
            let mut v = Vec::new();
            for s in &SUITES[..SUITES.len() - 1] {
                v.extend(run_suite(exp, s, overrides)?);
            }
            Ok(v)
        }
        other => Err(Error::Unsupported(format!(
            "unknown suite `{other}` (expected one of {})",
            SUITES.join(", ")
        ))),
    }
}

pub fn suite_moments(exp: &Experiment, samples: usize) -> Result<Vec<Check>> {
    let net = &exp.network;
    let ms = analytic(exp)?;
    let mut rng = ChaCha8Rng::seed_from_u64(exp.config.run.base_seed);
    let emp = empirical_moments(net.graph(), net.steps(), net.combination(), samples, &mut rng)?;
    let cmp = compare_moments(&ms, &emp, 3.0);
    let indep = check_independence(&emp);
    let first = |v: &[crate::netmodel::Discrepancy]| v.first().map(|d| d.to_string()).unwrap_or_default();
    Ok(vec![
        Check::new("moments", "analytic_vs_empirical", CheckStatus::from_bool(cmp.passed()))
            .value(cmp.max_z, 3.0)
            .detail(format!(
                "{} entries, {} outside 3 SE over {samples} draws; measured is max |z| {}",
                cmp.checked,
                cmp.failures.len(),
                first(&cmp.failures)
            )),
        Check::new("moments", "step_weight_independence", CheckStatus::from_bool(indep.passed()))
            .value(indep.violations.len() as f64, 0.0)
            .detail(format!(
                "{} step/weight covariances checked at 3 SE",
                indep.checked
            )),
    ])
}

pub fn suite_lemmas(exp: &Experiment) -> Result<Vec<Check>> {
    let net = &exp.network;
    let g = net.graph();
    let ms = analytic(exp)?;
    let seed = exp.config.run.base_seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let emp = empirical_moments(g, net.steps(), net.combination(), MOMENT_SAMPLES, &mut rng)?;
    let mut out = Vec::new();

    let exact = check_left_stochastic(&ms, None);
    out.push(
        Check::new("lemmas", "left_stochastic", CheckStatus::from_bool(exact.passed()))
            .value(exact.violations.len() as f64, STOCHASTIC_TOL)
            .detail(describe(&exact)),
    );
    let mc = check_left_stochastic(&ms, Some(&emp));
    out.push(
        Check::new("lemmas", "second_moment_vs_empirical", CheckStatus::from_bool(mc.passed()))
            .value(mc.violations.len() as f64, 3.0)
            .detail(describe(&mc)),
    );
    let pat = check_lemma4_pattern(g, &ms, Some(&emp));
    out.push(
        Check::new("lemmas", "uncorrelated_link_pattern", CheckStatus::from_bool(pat.passed()))
            .value(pat.violations.len() as f64, 3.0)
            .detail(describe(&pat)),
    );
    let n = crate::netmodel::required_samples(net.combination()).max(100);
    let nb = neighborhood_union(g, net.combination(), n, &mut rng)?;
    out.push(
        Check::new("lemmas", "neighborhood_union", CheckStatus::from_bool(nb.check.passed()))
            .value(nb.n_samples as f64, nb.required as f64)
            .detail(describe(&nb.check)),
    );

    // every draw: left-stochastic on the mean graph, steps within limits
    let mut worst_col: f64 = 0.0;
    let mut off_support = 0usize;
    let mut out_of_range = 0usize;
    let mut a = DMatrix::zeros(g.n_agents(), g.n_agents());
    for _ in 0..1000 {
        net.combination().sample_into(&mut rng, &mut a);
        let m = net.steps().sample_diag(&mut rng);
        for k in 0..g.n_agents() {
            worst_col = worst_col.max((a.column(k).sum() - 1.0).abs());
            for l in 0..g.n_agents() {
                let x = a[(l, k)];
                if !(0.0..=1.0).contains(&x) || (x != 0.0 && g.abar()[(l, k)] == 0.0) {
                    off_support += 1;
                }
            }
            if !(0.0..=net.steps().agent(k).upper()).contains(&m[k]) {
                out_of_range += 1;
            }
        }
    }
    out.push(
        Check::new(
            "lemmas",
            "sampled_matrices",
            CheckStatus::from_bool(worst_col <= 1e-14 && off_support == 0 && out_of_range == 0),
        )
        .value(worst_col, 1e-14)
        .detail(format!(
            "1000 draws: {off_support} weights off the mean graph or outside [0,1], \
             {out_of_range} steps outside [0, mu_k]"
        )),
    );
    Ok(out)
}

fn describe(rep: &crate::netmodel::CheckReport) -> String {
    match rep.violations.first() {
        None => format!("{} checked", rep.checked),
        Some(v) => format!("{} of {} violated, first: {v}", rep.violations.len(), rep.checked),
    }
}

/// Relative tolerance for the direct vs error-form comparison.
pub const EQUIVALENCE_TOL: f64 = 1e-10;

pub fn suite_recursion(exp: &Experiment) -> Result<Vec<Check>> {
    let net = &exp.network;
    let eq = recursion_equivalence(net, 500, exp.config.run.base_seed)?;
    let mut out = vec![Check::new(
        "recursion",
        "error_form_equivalence",
        CheckStatus::from_bool(eq.max_rel_err <= EQUIVALENCE_TOL),
    )
    .value(eq.max_rel_err, EQUIVALENCE_TOL)
    .detail(format!("{} shared-draw steps", eq.steps))];

    // exact data started at the minimizer must stay there
    let exact: Vec<QuadraticCost> = net
        .costs()
        .iter()
        .map(|c| QuadraticCost::new(c.r_u().clone(), c.w_opt().clone(), 0.0))
        .collect::<Result<_>>()?;
    let fixed = Network::new(
        net.graph().clone(),
        exact,
        net.steps().clone(),
        net.combination().clone(),
    )?
    .with_initial(vec![net.w_opt().clone(); net.n_agents()])?;
    let worst = fixed_point_drift(&fixed, 200, exp.config.run.base_seed);
    out.push(
        Check::new("recursion", "fixed_point", CheckStatus::from_bool(worst <= 1e-12))
            .value(worst, 1e-12)
            .detail("max relative drift from w° over 200 noise-free steps"),
    );
    Ok(out)
}

fn fixed_point_drift(net: &Network, steps: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = net.initial_state();
    let wo = net.w_opt().as_slice();
    let scale = net.w_opt().norm_sq().max(f64::MIN_POSITIVE);
    let n = net.n_agents();
    let mut a = DMatrix::zeros(n, n);
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        net.combination().sample_into(&mut rng, &mut a);
        let m = net.steps().sample_diag(&mut rng);
        let data: Vec<_> = net.costs().iter().map(|c| c.sample_data(&mut rng)).collect();
        crate::engine::atc_step(&mut state, &a, &m, &data, net.costs()).expect("validated");
        for k in 0..n {
            worst = worst.max((state.error_sq(k, wo) / scale).sqrt());
        }
    }
    worst
}

/// Iterations before divergence must show up in the negative control.
pub const DIVERGENCE_WINDOW: usize = 1000;
/// MSD level that counts as an observed divergence.
pub const DIVERGENCE_LEVEL: f64 = 1e6;

pub fn suite_bounds(exp: &Experiment, overrides: &Overrides) -> Result<Vec<Check>> {
    let report = stability_report(exp)?;
    if report.ms_condition == Verdict::Pass {
        let sim = simulate(exp, overrides)?;
        return Ok(sim
            .checks
            .into_iter()
            .map(|mut c| {
                c.suite = "bounds".into();
                c
            })
            .collect());
    }

    // negative control: the condition fails, so divergence should be seen
    let expect_divergence = report.agents.iter().any(|a| a.relaxed_factor > 1.0);
    let mut opts = overrides.run_options(exp);
    opts.horizon = opts.horizon.min(DIVERGENCE_WINDOW);
    opts.exclude_divergent = true;
    opts.divergence_threshold = DIVERGENCE_LEVEL;
    let record = run_experiment(&exp.network, &opts)?;
    let peak = record.peak_msd.iter().cloned().fold(0.0, f64::max);
    let finite = record
        .msd_max
        .mean
        .iter()
        .chain(&record.m4_max.mean)
        .all(|x| x.is_finite());
    let mut out = vec![Check::new("bounds", "ms_condition", CheckStatus::Info)
        .detail(format!("condition is {}; running the divergence control", report.ms_condition))];
    let observed = peak > DIVERGENCE_LEVEL && record.n_diverged() > 0;
    out.push(
        Check::new(
            "bounds",
            "divergence_observed",
            if expect_divergence {
                CheckStatus::from_bool(observed)
            } else {
                CheckStatus::Info
            },
        )
        .value(peak, DIVERGENCE_LEVEL)
        .detail(format!(
            "{} of {} trials flagged within {} iterations{}",
            record.n_diverged(),
            record.n_trials(),
            opts.horizon,
            if expect_divergence {
                ""
            } else {
                "; mean-square growth factor is below 1 so divergence is not implied"
            }
        )),
    );
    out.push(
        Check::new("bounds", "outputs_finite", CheckStatus::from_bool(finite))
            .detail("no NaN or infinity in the aggregated series"),
    );
    Ok(out)
}

/// Step limits swept by the scaling suite.
pub const SCALING_STEPS: [f64; 3] = [0.04, 0.02, 0.01];

/// Horizon long enough that the envelope transient is below 1% of its
/// limit throughout the steady-state window.
pub fn settled_horizon(report: &StabilityReport, eps0_sq: f64, window_fraction: f64) -> usize {
    let lim = report.envelope_limit();
    if !(report.beta > 0.0 && report.beta < 1.0) || eps0_sq <= 0.01 * lim {
        return 0;
    }
    let start = ((0.01 * lim / eps0_sq).ln() / report.beta.ln()).ceil();
    (start / (1.0 - window_fraction)).ceil() as usize
}

pub fn suite_scaling(exp: &Experiment, overrides: &Overrides) -> Result<Vec<Check>> {
    let mut points = Vec::new();
    for &mu in &SCALING_STEPS {
        let e = exp.with_max_step(mu)?;
        let report = stability_report(&e)?;
        if report.ms_condition != Verdict::Pass {
            return Ok(vec![Check::new("scaling", "sweep", CheckStatus::Skip)
                .detail(format!("mean-square condition fails at mu = {mu}"))]);
        }
        let mut o = *overrides;
        let wf = e.config.run.window_fraction;
        let h = settled_horizon(&report, e.network.initial_worst_msd(), wf);
        o.horizon = Some(o.horizon.unwrap_or(e.config.run.horizon).max(h));
        let sim = simulate(&e, &o)?;
        let s = sim.steady.ok_or_else(|| {
            Error::ConditionFailed(format!("no steady-state window at mu = {mu}"))
        })?;
        points.push((mu, report.nu, s));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.2.msd_max.value.ln()).collect();
    let slope = ols_slope(&lx, &ly);
    let mut out = vec![Check::new(
        "scaling",
        "msd_slope_vs_nu",
        CheckStatus::from_bool((0.8..=1.2).contains(&slope)),
    )
    .value(slope, 1.0)
    .detail(format!(
        "log-log slope over mu = {:?}; must lie in [0.8, 1.2]",
        SCALING_STEPS
    ))];

    // ratios ordered by decreasing nu
    let mut ordered = true;
    let mut worst_gap = f64::INFINITY;
    for w in points.windows(2) {
        let (hi, lo) = (&w[0].2.ratio, &w[1].2.ratio);
        let gap = (hi.value - lo.value) / hi.se.hypot(lo.se).max(f64::MIN_POSITIVE);
        worst_gap = worst_gap.min(gap);
        ordered &= gap > 2.0;
    }
    let ratios: Vec<String> = points
        .iter()
        .map(|p| format!("{:.4e}±{:.1e}", p.2.ratio.value, p.2.ratio.se))
        .collect();
    out.push(
        Check::new("scaling", "clustering_ratio_decreasing", CheckStatus::from_bool(ordered))
            .value(worst_gap, 2.0)
            .detail(format!(
                "disagreement/msd_max = [{}]; measured is the smallest gap in combined SEs",
                ratios.join(", ")
            )),
    );
    Ok(out)
}

pub fn suite_fourth(exp: &Experiment, overrides: &Overrides) -> Result<Vec<Check>> {
    let report = stability_report(exp)?;
    if report.fourth_condition != Verdict::Pass {
        let a = report
            .agents
            .iter()
            .max_by(|x, y| (x.fourth_ratio / x.fourth_limit).total_cmp(&(y.fourth_ratio / y.fourth_limit)))
            .expect("non-empty");
        return Ok(vec![Check::new("fourth", "steady_m4_vs_b4_sq_nu_sq", CheckStatus::Skip)
            .value(a.fourth_ratio, a.fourth_limit)
            .detail(format!("fourth-order condition is {}", report.fourth_condition))]);
    }
    let sim = simulate(exp, overrides)?;
    Ok(sim
        .checks
        .into_iter()
        .filter(|c| c.name == "steady_m4_vs_b4_sq_nu_sq")
        .map(|mut c| {
            c.suite = "fourth".into();
            c
        })
        .collect())
}

/// `w°` of the experiment as `[re, im]` pairs; handy for bindings.
pub fn w_opt_pairs(w: &ComplexVec) -> Vec<[f64; 2]> {
    w.as_slice().iter().map(|z| [z.re, z.im]).collect()
}
