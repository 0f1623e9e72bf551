use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::costs::{noise_params, noise_params_fourth, NoiseParams, QuadraticCost};
use crate::crcalc::ComplexVec;
use crate::engine::{Network, RunOptions};
use crate::error::{Error, FieldError, Result};
use crate::netmodel::{CombinationModel, Link, LinkWeight, MeanGraph, StepSize, StepSizeModel};

/// Complex numbers are written as `[re, im]` pairs.
pub type Pair = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network: NetworkSpec,
    pub cost: CostSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub step_model: StepModelSpec,
    pub combination_model: CombinationSpec,
    pub run: RunSpec,
    #[serde(default)]
    pub outputs: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub agents: usize,
    /// Undirected edges, 0-based; each yields links in both directions.
    #[serde(default)]
    pub edges: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceSpec {
    Identity,
    ScaledIdentity { scale: f64 },
    Diag { values: Vec<f64> },
    /// Row-major Hermitian matrix of `[re, im]` entries.
    Matrix { entries: Vec<Vec<Pair>> },
}

impl Default for CovarianceSpec {
    fn default() -> Self {
        CovarianceSpec::Identity
    }
}

impl CovarianceSpec {
    fn build(&self, m: usize) -> std::result::Result<DMatrix<Complex64>, String> {
        let c = |re: f64| Complex64::new(re, 0.0);
        match self {
            CovarianceSpec::Identity => Ok(DMatrix::identity(m, m)),
            CovarianceSpec::ScaledIdentity { scale } => Ok(DMatrix::identity(m, m) * c(*scale)),
            CovarianceSpec::Diag { values } => {
                if values.len() != m {
                    return Err(format!("expected {m} diagonal values, found {}", values.len()));
                }
                Ok(DMatrix::from_diagonal(&values.iter().map(|&v| c(v)).collect::<Vec<_>>().into()))
            }
            CovarianceSpec::Matrix { entries } => {
                if entries.len() != m || entries.iter().any(|r| r.len() != m) {
                    return Err(format!("expected a {m}x{m} matrix"));
                }
                Ok(DMatrix::from_fn(m, m, |i, j| {
                    Complex64::new(entries[i][j][0], entries[i][j][1])
                }))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerAgent<T> {
    All(T),
    Each(Vec<T>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    /// The common minimizer `w°`; its length sets `M`.
    pub w_opt: Vec<Pair>,
    #[serde(default)]
    pub r_u: CovarianceSpec,
    /// Per-agent replacements for `r_u`.
    #[serde(default)]
    pub r_u_agents: BTreeMap<usize, CovarianceSpec>,
    pub sigma_n_sq: PerAgent<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    /// Supply the gradient-noise constants directly. The fourth-order pair
    /// defaults to the second-order one.
    Override {
        alpha: f64,
        sigma_v_sq: f64,
        #[serde(default)]
        fourth: Option<NoiseParams>,
    },
    /// Fit them per agent by Monte Carlo and take the worst case.
    Fit {
        #[serde(default = "default_fit_samples")]
        samples: usize,
        /// Defaults to `max(1, ‖w° − w_init‖)` over agents.
        #[serde(default)]
        radius: Option<f64>,
        #[serde(default)]
        seed: u64,
    },
}

fn default_fit_samples() -> usize {
    20_000
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::Fit {
            samples: default_fit_samples(),
            radius: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepModelSpec {
    pub default: StepSize,
    #[serde(default)]
    pub agents: BTreeMap<usize, StepSize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub from: usize,
    pub to: usize,
    pub weight: LinkWeight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombinationSpec {
    pub default: LinkWeight,
    /// Per directed link replacements; the link must lie on an edge.
    #[serde(default)]
    pub links: Vec<LinkSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub n_trials: usize,
    pub horizon: usize,
    pub base_seed: u64,
    #[serde(default = "default_window")]
    pub window_fraction: f64,
    /// Initial iterates per agent; zero when absent.
    #[serde(default)]
    pub init: Option<Vec<Vec<Pair>>>,
}

fn default_window() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub directory: Option<PathBuf>,
}

/// A validated config with everything the commands need built.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub network: Network,
    pub noise: NoiseParams,
    pub noise4: NoiseParams,
}

impl Experiment {
    pub fn run_options(&self) -> RunOptions {
        RunOptions::new(
            self.config.run.n_trials,
            self.config.run.horizon,
            self.config.run.base_seed,
        )
    }

    pub fn output_dir(&self) -> PathBuf {
        self.config
            .outputs
            .directory
            .clone()
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    /// Same experiment with every agent's step law rescaled so the largest
    /// upper step limit equals `mu_max`.
    pub fn with_max_step(&self, mu_max: f64) -> Result<Experiment> {
        let current = self
            .network
            .steps()
            .agents()
            .iter()
            .map(|s| s.upper())
            .fold(0.0, f64::max);
        let steps = self.network.steps().scaled(mu_max / current)?;
        let network = Network::new(
            self.network.graph().clone(),
            self.network.costs().to_vec(),
            steps,
            self.network.combination().clone(),
        )?
        .with_initial(self.network.initial().to_vec())?;
        Ok(Experiment {
            network,
            ..self.clone()
        })
    }
}

/// Reads and validates a JSON config. Syntax errors carry line and column;
/// semantic errors carry field paths.
pub fn parse_config(path: &Path) -> Result<Experiment> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text, path)
}

pub fn parse_config_str(text: &str, path: &Path) -> Result<Experiment> {
    let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    validate(config)
}

struct Errors(Vec<FieldError>);

impl Errors {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(FieldError {
            path: path.into(),
            message: message.into(),
        });
    }

    fn from_error(&mut self, prefix: &str, e: Error) {
        match e {
            Error::InvalidParameter { field, reason } => {
                self.push(format!("{prefix}.{field}"), reason)
            }
            other => self.push(prefix, other.to_string()),
        }
    }
}

fn to_complex(pairs: &[Pair]) -> Vec<Complex64> {
    pairs.iter().map(|p| Complex64::new(p[0], p[1])).collect()
}

/// Checks every module-level invariant and builds the experiment. All
/// problems found are reported together.
pub fn validate(config: ExperimentConfig) -> Result<Experiment> {
    let mut errs = Errors(Vec::new());
    let n = config.network.agents;
    if n == 0 {
        errs.push("network.agents", "must be at least 1");
        return Err(Error::Validation(errs.0));
    }

    // edges
    let mut seen = std::collections::BTreeSet::new();
    for (i, &[a, b]) in config.network.edges.iter().enumerate() {
        let p = format!("network.edges[{i}]");
        if a >= n || b >= n {
            errs.push(p, format!("agent index out of range 0..{n}"));
        } else if a == b {
            errs.push(p, "self-loops are implicit");
        } else if !seen.insert((a.min(b), a.max(b))) {
            errs.push(p, "duplicate edge");
        }
    }

    // costs
    let m = config.cost.w_opt.len();
    let mut w_opt = None;
    if m == 0 {
        errs.push("cost.w_opt", "must have at least one entry");
    } else {
        match ComplexVec::new(to_complex(&config.cost.w_opt)) {
            Ok(w) => w_opt = Some(w),
            Err(e) => errs.push("cost.w_opt", e.to_string()),
        }
    }
    let sigmas: Vec<f64> = match &config.cost.sigma_n_sq {
        PerAgent::All(s) => vec![*s; n],
        PerAgent::Each(v) => {
            if v.len() != n {
                errs.push("cost.sigma_n_sq", format!("expected {n} values, found {}", v.len()));
            }
            v.clone()
        }
    };
    for k in config.cost.r_u_agents.keys().filter(|&&k| k >= n) {
        errs.push(format!("cost.r_u_agents.{k}"), "agent index out of range");
    }
    let mut costs = Vec::new();
    if let Some(w) = &w_opt {
        for k in 0..n.min(sigmas.len()) {
            let (path, spec) = match config.cost.r_u_agents.get(&k) {
                Some(s) => (format!("cost.r_u_agents.{k}"), s),
                None => ("cost.r_u".to_string(), &config.cost.r_u),
            };
            let r = match spec.build(m) {
                Ok(r) => r,
                Err(msg) => {
                    errs.push(path, msg);
                    continue;
                }
            };
            match QuadraticCost::new(r, w.clone(), sigmas[k]) {
                Ok(c) => costs.push(c),
                Err(Error::InvalidParameter { reason, .. }) => {
                    errs.push(format!("cost.sigma_n_sq[{k}]"), reason)
                }
                Err(e) => errs.push(path, e.to_string()),
            }
        }
    }

    // step model
    let mut steps = vec![config.step_model.default; n];
    for (&k, s) in &config.step_model.agents {
        if k >= n {
            errs.push(format!("step_model.agents.{k}"), "agent index out of range");
        } else {
            steps[k] = *s;
        }
    }
    if let Err((f, msg)) = config.step_model.default.validate() {
        errs.push(format!("step_model.default.{f}"), msg);
    }
    for (&k, s) in &config.step_model.agents {
        if let Err((f, msg)) = s.validate() {
            errs.push(format!("step_model.agents.{k}.{f}"), msg);
        }
    }

    // combination model
    let mut weights: BTreeMap<(usize, usize), (String, LinkWeight)> = BTreeMap::new();
    for &[a, b] in &config.network.edges {
        if a < n && b < n && a != b {
            let d = config.combination_model.default;
            weights.insert((a, b), ("combination_model.default".into(), d));
            weights.insert((b, a), ("combination_model.default".into(), d));
        }
    }
    for (i, l) in config.combination_model.links.iter().enumerate() {
        let p = format!("combination_model.links[{i}]");
        if !weights.contains_key(&(l.from, l.to)) {
            errs.push(p, format!("link {} -> {} is not on an edge", l.from, l.to));
        } else {
            weights.insert((l.from, l.to), (format!("{p}.weight"), l.weight));
        }
    }
    let mut reported = std::collections::BTreeSet::new();
    for (path, w) in weights.values() {
        if let Err((f, msg)) = w.validate() {
            if reported.insert(path.clone()) {
                errs.push(format!("{path}.{f}"), msg);
            }
        }
    }
    for k in 0..n {
        let into: Vec<_> = weights.iter().filter(|((_, to), _)| *to == k).collect();
        let sum: f64 = into.iter().map(|(_, (_, w))| w.upper()).sum();
        if sum > 1.0 {
            let terms: Vec<String> = into
                .iter()
                .map(|((from, _), (p, w))| format!("a[{from}->{k}] = {} ({p})", w.upper()))
                .collect();
            errs.push(
                format!("combination_model (links into agent {k})"),
                format!("maximum weights sum to {sum} > 1: {}", terms.join(" + ")),
            );
        }
    }

    // run
    let run = &config.run;
    if run.n_trials == 0 {
        errs.push("run.n_trials", "must be at least 1");
    }
    if !(run.window_fraction > 0.0 && run.window_fraction <= 0.5) {
        errs.push("run.window_fraction", "must lie in (0, 0.5]");
    }
    let mut init = None;
    if let Some(rows) = &run.init {
        if rows.len() != n {
            errs.push("run.init", format!("expected {n} agents, found {}", rows.len()));
        } else {
            let mut v = Vec::new();
            for (k, r) in rows.iter().enumerate() {
                if r.len() != m {
                    errs.push(format!("run.init[{k}]"), format!("expected {m} entries"));
                } else {
                    match ComplexVec::new(to_complex(r)) {
                        Ok(w) => v.push(w),
                        Err(e) => errs.push(format!("run.init[{k}]"), e.to_string()),
                    }
                }
            }
            init = Some(v);
        }
    }

    // noise
    match &config.noise {
        NoiseSpec::Override {
            alpha,
            sigma_v_sq,
            fourth,
        } => {
            if let Err(e) = NoiseParams::new(*alpha, *sigma_v_sq) {
                errs.from_error("noise", e);
            }
            if let Some(f) = fourth {
                if let Err(e) = NoiseParams::new(f.alpha, f.sigma_v_sq) {
                    errs.from_error("noise.fourth", e);
                }
            }
        }
        NoiseSpec::Fit { samples, radius, .. } => {
            if *samples < crate::costs::MIN_NOISE_SAMPLES {
                errs.push(
                    "noise.samples",
                    format!("need at least {}", crate::costs::MIN_NOISE_SAMPLES),
                );
            }
            if let Some(r) = radius {
                if !(*r > 0.0 && r.is_finite()) {
                    errs.push("noise.radius", "must be positive");
                }
            }
        }
    }

    if !errs.0.is_empty() {
        return Err(Error::Validation(errs.0));
    }

    // structural checks that need the assembled pieces
    let links: Vec<Link> = weights
        .iter()
        .map(|(&(from, to), (_, weight))| Link {
            from,
            to,
            weight: *weight,
        })
        .collect();
    let combination = CombinationModel::new(n, links).map_err(|e| {
        Error::Validation(vec![FieldError {
            path: "combination_model".into(),
            message: e.to_string(),
        }])
    })?;
    let graph: MeanGraph = combination.mean_graph().map_err(|e| {
        Error::Validation(vec![FieldError {
            path: "network.edges".into(),
            message: e.to_string(),
        }])
    })?;
    let steps = StepSizeModel::new(steps)?;
    let mut network = Network::new(graph, costs, steps, combination)?;
    if let Some(init) = init {
        network = network.with_initial(init)?;
    }

    let (noise, noise4) = match &config.noise {
        NoiseSpec::Override {
            alpha,
            sigma_v_sq,
            fourth,
        } => {
            let p = NoiseParams::new(*alpha, *sigma_v_sq)?;
            (p, fourth.unwrap_or(p))
        }
        NoiseSpec::Fit {
            samples,
            radius,
            seed,
        } => {
            let radius = radius.unwrap_or_else(|| network.initial_worst_msd().sqrt().max(1.0));
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut second = Vec::new();
            let mut fourth = Vec::new();
            for c in network.costs() {
                second.push(noise_params(c, *samples, radius, &mut rng)?);
                fourth.push(noise_params_fourth(c, *samples, radius, &mut rng)?);
            }
            (
                NoiseParams::worst_case(&second),
                NoiseParams::worst_case(&fourth),
            )
        }
    };

    Ok(Experiment {
        config,
        network,
        noise,
        noise4,
    })
}
