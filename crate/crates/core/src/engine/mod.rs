//! The asynchronous adapt-then-combine recursion, its error-form twin and
//! Monte-Carlo experiments built on them.

mod record;
mod run;

pub use record::{
    read_record, steady_state, Estimate, ExperimentRecord, Series, SteadyState, MIN_WINDOW,
    TIMESERIES_FILE, TRIALS_FILE,
};
pub use run::{
    recursion_equivalence, run_experiment, run_trial, run_trial_until, Equivalence, RunOptions, TrialOutcome,
    DIVERGENCE_THRESHOLD,
};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::costs::{stochastic_gradient_into, DataSample, QuadraticCost};
use crate::crcalc::{ComplexVec, ConjugateEmbedding};
use crate::error::{Error, Result};
use crate::netmodel::{CombinationModel, MeanGraph, StepSizeModel};

/// A fully specified network: topology, per-agent costs and the two
/// randomness models, plus the initial iterates.
#[derive(Debug, Clone)]
pub struct Network {
    graph: MeanGraph,
    costs: Vec<QuadraticCost>,
    steps: StepSizeModel,
    combination: CombinationModel,
    w_init: Vec<ComplexVec>,
}

impl Network {
    /// Validates that every piece describes the same `N` agents and `M`
    /// parameters and that the costs share one minimizer. Iterates start at
    /// zero.
    pub fn new(
        graph: MeanGraph,
        costs: Vec<QuadraticCost>,
        steps: StepSizeModel,
        combination: CombinationModel,
    ) -> Result<Self> {
        let n = graph.n_agents();
        for found in [costs.len(), steps.n_agents(), combination.n_agents()] {
            if found != n {
                return Err(Error::DimensionMismatch { expected: n, found });
            }
        }
        combination.check_against(&graph)?;
        let m = costs[0].w_opt().len();
        for (k, c) in costs.iter().enumerate() {
            if c.w_opt().len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    found: c.w_opt().len(),
                });
            }
            if c.w_opt() != costs[0].w_opt() {
                return Err(Error::param(
                    format!("costs[{k}].w_opt"),
                    "all agents must share the same minimizer",
                ));
            }
        }
        Ok(Network {
            graph,
            costs,
            steps,
            combination,
            w_init: vec![ComplexVec::zeros(m); n],
        })
    }

    pub fn with_initial(mut self, w_init: Vec<ComplexVec>) -> Result<Self> {
        if w_init.len() != self.n_agents() {
            return Err(Error::DimensionMismatch {
                expected: self.n_agents(),
                found: w_init.len(),
            });
        }
        if let Some(w) = w_init.iter().find(|w| w.len() != self.dim()) {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: w.len(),
            });
        }
        self.w_init = w_init;
        Ok(self)
    }

    pub fn n_agents(&self) -> usize {
        self.graph.n_agents()
    }

    pub fn dim(&self) -> usize {
        self.costs[0].w_opt().len()
    }

    pub fn graph(&self) -> &MeanGraph {
        &self.graph
    }

    pub fn costs(&self) -> &[QuadraticCost] {
        &self.costs
    }

    pub fn steps(&self) -> &StepSizeModel {
        &self.steps
    }

    pub fn combination(&self) -> &CombinationModel {
        &self.combination
    }

    pub fn w_opt(&self) -> &ComplexVec {
        self.costs[0].w_opt()
    }

    pub fn initial(&self) -> &[ComplexVec] {
        &self.w_init
    }

    pub fn initial_state(&self) -> NetworkState {
        NetworkState::new(&self.w_init)
    }

    /// `max_k ‖w° − w_{k,−1}‖²`.
    pub fn initial_worst_msd(&self) -> f64 {
        let wo = self.w_opt().as_dvector();
        self.w_init
            .iter()
            .map(|w| (wo - w.as_dvector()).norm_squared())
            .fold(0.0, f64::max)
    }
}

/// Current iterates `w_{k,i}` and intermediates `ψ_{k,i}` of all agents.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    n: usize,
    m: usize,
    w: Vec<Complex64>,
    psi: Vec<Complex64>,
    iteration: u64,
    diverged: bool,
}

impl NetworkState {
    pub fn new(w: &[ComplexVec]) -> Self {
        let n = w.len();
        let m = w.first().map_or(0, |v| v.len());
        let flat: Vec<Complex64> = w.iter().flat_map(|v| v.as_slice().iter().copied()).collect();
        NetworkState {
            n,
            m,
            psi: flat.clone(),
            w: flat,
            iteration: 0,
            diverged: false,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn w(&self, k: usize) -> &[Complex64] {
        &self.w[k * self.m..(k + 1) * self.m]
    }

    pub fn psi(&self, k: usize) -> &[Complex64] {
        &self.psi[k * self.m..(k + 1) * self.m]
    }

    pub fn iterate(&self, k: usize) -> ComplexVec {
        ComplexVec::new(self.w(k).to_vec()).unwrap_or_else(|_| ComplexVec::zeros(self.m))
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn diverged(&self) -> bool {
        self.diverged
    }

    /// `‖w° − w_k‖²`.
    pub fn error_sq(&self, k: usize, w_opt: &[Complex64]) -> f64 {
        self.w(k)
            .iter()
            .zip(w_opt)
            .map(|(a, b)| (b - a).norm_sqr())
            .sum()
    }

    /// `‖w_k − w_l‖²`.
    pub fn distance_sq(&self, k: usize, l: usize) -> f64 {
        self.w(k)
            .iter()
            .zip(self.w(l))
            .map(|(a, b)| (a - b).norm_sqr())
            .sum()
    }
}

/// One asynchronous ATC iteration:
/// `ψ_k = w_k − μ_k(i)·∇̂J_k(w_k)`, then `w_k = Σ_ℓ a_ℓk(i)·ψ_ℓ`.
///
/// A non-finite iterate flags the state as diverged instead of failing.
pub fn atc_step(
    state: &mut NetworkState,
    a: &DMatrix<f64>,
    m_diag: &[f64],
    data: &[DataSample],
    costs: &[QuadraticCost],
) -> Result<()> {
    let (n, m) = (state.n, state.m);
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: a.nrows(),
        });
    }
    for found in [m_diag.len(), data.len(), costs.len()] {
        if found != n {
            return Err(Error::DimensionMismatch { expected: n, found });
        }
    }
    if let Some(s) = data.iter().find(|s| s.u.len() != m) {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: s.u.len(),
        });
    }

    let mut grad = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..n {
        let w = &state.w[k * m..(k + 1) * m];
        stochastic_gradient_into(&data[k].u, data[k].d, w, &mut grad);
        let mu = m_diag[k];
        for j in 0..m {
            state.psi[k * m + j] = w[j] - grad[j] * mu;
        }
    }
    for k in 0..n {
        for j in 0..m {
            let mut acc = Complex64::new(0.0, 0.0);
            for l in 0..n {
                let c = a[(l, k)];
                if c != 0.0 {
                    acc += state.psi[l * m + j] * c;
                }
            }
            state.w[k * m + j] = acc;
        }
    }
    state.iteration += 1;
    if state.w.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        state.diverged = true;
    }
    Ok(())
}

/// Stacks per-agent extended errors `[w̃_k; conj w̃_k]` into one vector.
pub fn stack_errors(errs: &[ConjugateEmbedding]) -> DVector<Complex64> {
    let parts: Vec<Complex64> = errs
        .iter()
        .flat_map(|e| e.as_dvector().iter().copied())
        .collect();
    DVector::from_vec(parts)
}

/// Agent `k`'s `w̃_k` from a stacked extended error vector.
pub fn unstack_error(err: &DVector<Complex64>, k: usize, m: usize) -> ComplexVec {
    ComplexVec::new(err.rows(2 * m * k, m).iter().copied().collect())
        .unwrap_or_else(|_| ComplexVec::zeros(m))
}

/// The error recursion in extended coordinates,
/// `e ← 𝒜ᵀ(I − ℳℋ)e + 𝒜ᵀℳ·v`, with `𝒜 = A⊗I_{2M}`, `ℳ = M⊗I_{2M}` and
/// `ℋ = blkdiag(R_k, R_kᵀ)`. The matrices are formed explicitly, so this is
/// meant as a reference, not a fast path.
///
/// `noise` holds each agent's extended gradient noise `[v_k; conj v_k]`.
pub fn error_step(
    err: &DVector<Complex64>,
    a: &DMatrix<f64>,
    m_diag: &[f64],
    noise: &DVector<Complex64>,
    costs: &[QuadraticCost],
) -> Result<DVector<Complex64>> {
    let n = costs.len();
    if n == 0 {
        return Err(Error::param("costs", "need at least one agent"));
    }
    let m2 = 2 * costs[0].w_opt().len();
    let dim = n * m2;
    for found in [err.len(), noise.len()] {
        if found != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found,
            });
        }
    }
    if a.nrows() != n || a.ncols() != n || m_diag.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: a.nrows(),
        });
    }
    let eye = DMatrix::<Complex64>::identity(m2, m2);
    let to_c = |x: &f64| Complex64::new(*x, 0.0);
    let big_a = a.map(|x| to_c(&x)).kronecker(&eye);
    let big_m = DMatrix::from_diagonal(&DVector::from_iterator(n, m_diag.iter().map(to_c))).kronecker(&eye);
    let mut big_h = DMatrix::<Complex64>::zeros(dim, dim);
    for (k, c) in costs.iter().enumerate() {
        if c.w_opt().len() * 2 != m2 {
            return Err(Error::DimensionMismatch {
                expected: m2 / 2,
                found: c.w_opt().len(),
            });
        }
        big_h
            .view_mut((k * m2, k * m2), (m2, m2))
            .copy_from(c.extended_hessian().matrix());
    }
    let eye_all = DMatrix::<Complex64>::identity(dim, dim);
    let at = big_a.transpose();
    Ok(&at * ((eye_all - &big_m * big_h) * err) + &at * (big_m * noise))
}
