use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::graph::MeanGraph;
use crate::error::{Error, Result};

/// Randomness of one agent's step-size `μ_k(i) ∈ [0, μ_k]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSize {
    Constant { mu: f64 },
    /// `μ` with probability `q`, else 0.
    Bernoulli { q: f64, mu: f64 },
    /// `μ·x` with `x ~ Beta(xi, zeta)`.
    Beta { xi: f64, zeta: f64, mu: f64 },
}

impl StepSize {
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let pos = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err((name, format!("must be positive and finite, got {v}")))
            }
        };
        match *self {
            StepSize::Constant { mu } => pos("mu", mu),
            StepSize::Bernoulli { q, mu } => {
                if !(q > 0.0 && q < 1.0) {
                    return Err(("q", format!("must lie in (0, 1), got {q}")));
                }
                pos("mu", mu)
            }
            StepSize::Beta { xi, zeta, mu } => {
                pos("xi", xi)?;
                pos("zeta", zeta)?;
                pos("mu", mu)
            }
        }
    }

    /// Upper limit `μ_k` of the realizations.
    pub fn upper(&self) -> f64 {
        match *self {
            StepSize::Constant { mu } | StepSize::Bernoulli { mu, .. } | StepSize::Beta { mu, .. } => mu,
        }
    }

    /// `E[μ_k(i)^m]`.
    pub fn raw_moment(&self, m: u32) -> f64 {
        match *self {
            StepSize::Constant { mu } => mu.powi(m as i32),
            StepSize::Bernoulli { q, mu } => q * mu.powi(m as i32),
            StepSize::Beta { xi, zeta, mu } => {
                mu.powi(m as i32) * beta_raw_moment(xi, zeta, m)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.raw_moment(1)
    }

    /// `c_{μ,k,k}`, written from the closed forms rather than `E[μ²] - μ̄²`.
    pub fn variance(&self) -> f64 {
        match *self {
            StepSize::Constant { .. } => 0.0,
            StepSize::Bernoulli { q, mu } => q * (1.0 - q) * mu * mu,
            StepSize::Beta { xi, zeta, mu } => beta_variance(xi, zeta) * mu * mu,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            StepSize::Constant { mu } => mu,
            StepSize::Bernoulli { q, mu } => {
                if rng.random::<f64>() < q {
                    mu
                } else {
                    0.0
                }
            }
            StepSize::Beta { xi, zeta, mu } => mu * sample_beta(xi, zeta, rng),
        }
    }
}

/// `∏_{j<m} (ξ+j)/(ξ+ζ+j)`.
pub(crate) fn beta_raw_moment(xi: f64, zeta: f64, m: u32) -> f64 {
    (0..m)
        .map(|j| (xi + j as f64) / (xi + zeta + j as f64))
        .product()
}

fn beta_variance(xi: f64, zeta: f64) -> f64 {
    let s = xi + zeta;
    xi * zeta / (s * s * (s + 1.0))
}

/// Ratio of two Gamma variates.
pub(crate) fn sample_beta<R: Rng + ?Sized>(xi: f64, zeta: f64, rng: &mut R) -> f64 {
    let x = Gamma::new(xi, 1.0).expect("validated shape").sample(rng);
    let y = Gamma::new(zeta, 1.0).expect("validated shape").sample(rng);
    if x + y == 0.0 {
        // both underflowed; only reachable for tiny shapes
        return if xi >= zeta { 1.0 } else { 0.0 };
    }
    x / (x + y)
}

/// Per-agent step-size randomness. Agents draw independently.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSizeModel {
    agents: Vec<StepSize>,
}

impl StepSizeModel {
    pub fn new(agents: Vec<StepSize>) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::param("step_model", "needs at least one agent"));
        }
        for (k, s) in agents.iter().enumerate() {
            s.validate()
                .map_err(|(f, msg)| Error::param(format!("step_model[{k}].{f}"), msg))?;
        }
        Ok(StepSizeModel { agents })
    }

    pub fn uniform(n: usize, step: StepSize) -> Result<Self> {
        Self::new(vec![step; n])
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn agents(&self) -> &[StepSize] {
        &self.agents
    }

    pub fn agent(&self, k: usize) -> &StepSize {
        &self.agents[k]
    }

    /// Diagonal entries of `M_i`, drawn in agent order.
    pub fn sample_diag<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.agents.iter().map(|s| s.sample(rng)).collect()
    }

    pub fn sample_step_matrix<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let d = self.sample_diag(rng);
        DMatrix::from_diagonal(&d.into())
    }

    /// Same model with every upper limit multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.agents
                .iter()
                .map(|s| match *s {
                    StepSize::Constant { mu } => StepSize::Constant { mu: mu * factor },
                    StepSize::Bernoulli { q, mu } => StepSize::Bernoulli { q, mu: mu * factor },
                    StepSize::Beta { xi, zeta, mu } => StepSize::Beta {
                        xi,
                        zeta,
                        mu: mu * factor,
                    },
                })
                .collect(),
        )
    }
}

/// Randomness of one off-diagonal combination weight `a_lk(i) ∈ [0, a_lk]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LinkWeight {
    /// `a` with probability `eta`, else 0 (link failure).
    Bernoulli { eta: f64, a: f64 },
    /// `a·y` with `y ~ Beta(xi, zeta)`.
    Beta { xi: f64, zeta: f64, a: f64 },
}

impl LinkWeight {
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let check_a = |a: f64| {
            if a > 0.0 && a < 1.0 {
                Ok(())
            } else {
                Err(("a", format!("must lie in (0, 1), got {a}")))
            }
        };
        match *self {
            LinkWeight::Bernoulli { eta, a } => {
                if !(eta > 0.0 && eta <= 1.0) {
                    return Err(("eta", format!("must lie in (0, 1], got {eta}")));
                }
                check_a(a)
            }
            LinkWeight::Beta { xi, zeta, a } => {
                if !(xi.is_finite() && xi > 0.0) {
                    return Err(("xi", format!("must be positive, got {xi}")));
                }
                if !(zeta.is_finite() && zeta > 0.0) {
                    return Err(("zeta", format!("must be positive, got {zeta}")));
                }
                check_a(a)
            }
        }
    }

    pub fn upper(&self) -> f64 {
        match *self {
            LinkWeight::Bernoulli { a, .. } | LinkWeight::Beta { a, .. } => a,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            LinkWeight::Bernoulli { eta, a } => eta * a,
            LinkWeight::Beta { xi, zeta, a } => xi / (xi + zeta) * a,
        }
    }

    /// `c_{a,lk,lk}`.
    pub fn variance(&self) -> f64 {
        match *self {
            LinkWeight::Bernoulli { eta, a } => eta * (1.0 - eta) * a * a,
            LinkWeight::Beta { xi, zeta, a } => beta_variance(xi, zeta) * a * a,
        }
    }

    /// Probability that a single draw is strictly positive.
    pub fn activation_probability(&self) -> f64 {
        match *self {
            LinkWeight::Bernoulli { eta, .. } => eta,
            LinkWeight::Beta { .. } => 1.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            LinkWeight::Bernoulli { eta, a } => {
                if eta >= 1.0 || rng.random::<f64>() < eta {
                    a
                } else {
                    0.0
                }
            }
            LinkWeight::Beta { xi, zeta, a } => a * sample_beta(xi, zeta, rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub from: usize,
    pub to: usize,
    pub weight: LinkWeight,
}

/// Spatially uncorrelated random combination weights. Each agent's own
/// weight absorbs the remainder: `a_kk(i) = 1 - Σ_{l≠k} a_lk(i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinationModel {
    n: usize,
    /// sorted by `(to, from)`; this is also the draw order
    links: Vec<Link>,
}

impl CombinationModel {
    pub fn new(n: usize, mut links: Vec<Link>) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("combination_model", "needs at least one agent"));
        }
        for (i, l) in links.iter().enumerate() {
            if l.from >= n || l.to >= n {
                return Err(Error::param(
                    format!("links[{i}]"),
                    format!("agent index out of range 0..{n}"),
                ));
            }
            if l.from == l.to {
                return Err(Error::param(
                    format!("links[{i}]"),
                    "self-weights are induced, not specified",
                ));
            }
            l.weight
                .validate()
                .map_err(|(f, msg)| Error::param(format!("links[{i}].{f}"), msg))?;
        }
        links.sort_by_key(|l| (l.to, l.from));
        if let Some(w) = links.windows(2).find(|w| (w[0].to, w[0].from) == (w[1].to, w[1].from)) {
            return Err(Error::param(
                format!("link {}->{}", w[0].from, w[0].to),
                "specified twice",
            ));
        }
        for k in 0..n {
            let sum: f64 = links.iter().filter(|l| l.to == k).map(|l| l.weight.upper()).sum();
            if sum > 1.0 {
                return Err(Error::WeightBudget { agent: k, sum });
            }
        }
        Ok(CombinationModel { n, links })
    }

    /// The same weight on both directions of every undirected edge.
    pub fn uniform_undirected(n: usize, edges: &[(usize, usize)], weight: LinkWeight) -> Result<Self> {
        let links = edges
            .iter()
            .flat_map(|&(a, b)| {
                [
                    Link { from: a, to: b, weight },
                    Link { from: b, to: a, weight },
                ]
            })
            .collect();
        Self::new(n, links)
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn links_into(&self, k: usize) -> impl Iterator<Item = &Link> {
        self.links.iter().filter(move |l| l.to == k)
    }

    /// `Ā`, with `ā_kk = 1 - Σ_{l≠k} ā_lk`.
    pub fn mean_matrix(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for l in &self.links {
            a[(l.from, l.to)] = l.weight.mean();
        }
        for k in 0..self.n {
            let off: f64 = self.links_into(k).map(|l| l.weight.mean()).sum();
            a[(k, k)] = 1.0 - off;
        }
        a
    }

    pub fn mean_graph(&self) -> Result<MeanGraph> {
        MeanGraph::new(self.mean_matrix())
    }

    /// Checks that the model's links are exactly the graph's off-diagonal
    /// support and that their means reproduce `Ā`.
    pub fn check_against(&self, graph: &MeanGraph) -> Result<()> {
        if graph.n_agents() != self.n {
            return Err(Error::DimensionMismatch {
                expected: graph.n_agents(),
                found: self.n,
            });
        }
        let mine: Vec<(usize, usize)> = self.links.iter().map(|l| (l.from, l.to)).collect();
        if mine != graph.links() {
            return Err(Error::param(
                "combination_model",
                "links do not match the mean graph topology",
            ));
        }
        let diff = (self.mean_matrix() - graph.abar()).amax();
        if diff > 1e-12 {
            return Err(Error::param(
                "combination_model",
                format!("link means differ from the mean graph weights by {diff:e}"),
            ));
        }
        Ok(())
    }

    /// Draws `A_i`: each link in `(to, from)` order, then the absorbed
    /// diagonal. Entries off the mean graph are exactly zero.
    pub fn sample_matrix<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        self.sample_into(rng, &mut a);
        a
    }

    pub(crate) fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, a: &mut DMatrix<f64>) {
        a.fill(0.0);
        let mut col_sum = vec![0.0; self.n];
        for l in &self.links {
            let v = l.weight.sample(rng);
            a[(l.from, l.to)] = v;
            col_sum[l.to] += v;
        }
        for (k, s) in col_sum.into_iter().enumerate() {
            a[(k, k)] = 1.0 - s;
        }
    }
}
