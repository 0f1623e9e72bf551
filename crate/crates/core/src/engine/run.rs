use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::record::{ExperimentRecord, Series};
use super::{atc_step, error_step, Network, NetworkState};
use crate::costs::{DataSample, QuadraticCost};
use crate::crcalc::{embed_conjugate, ComplexVec};
use crate::error::{Error, Result};
use crate::stats::{pairwise_reduce, Welford};

/// Default squared error above which a trial halts and is flagged
/// divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Trials per aggregation block. Fixed so the reduction tree never depends
/// on the worker count.
const CHUNK_TRIALS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub n_trials: usize,
    pub horizon: usize,
    pub base_seed: u64,
    /// Worker threads; `None` uses rayon's default. Never affects results.
    pub threads: Option<usize>,
    /// Drop divergent trials from the averages (meant for configurations
    /// that fail the stability condition).
    pub exclude_divergent: bool,
    /// Worst-agent squared error that counts as divergence.
    pub divergence_threshold: f64,
}

impl RunOptions {
    pub fn new(n_trials: usize, horizon: usize, base_seed: u64) -> Self {
        RunOptions {
            n_trials,
            horizon,
            base_seed,
            threads: None,
            exclude_divergent: false,
            divergence_threshold: DIVERGENCE_THRESHOLD,
        }
    }
}

/// Per-iteration observables of one trial, in the cell layout of
/// [`Layout`].
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub seed: u64,
    pub diverged: bool,
    /// Largest `max_k ‖w̃_k‖²` reached.
    pub peak_msd: f64,
    pub(crate) cells: Vec<f64>,
}

/// Cell offsets of one recorded iteration:
/// `[msd_k.., m4_k.., disagreement_k.., pair_mean, pair_(k,l)..]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub n: usize,
    pub pairs: usize,
}

impl Layout {
    pub fn new(n: usize) -> Self {
        Layout {
            n,
            pairs: n * (n - 1) / 2,
        }
    }
    pub fn width(&self) -> usize {
        3 * self.n + 1 + self.pairs
    }
    pub fn msd(&self, k: usize) -> usize {
        k
    }
    pub fn m4(&self, k: usize) -> usize {
        self.n + k
    }
    pub fn dis(&self, k: usize) -> usize {
        2 * self.n + k
    }
    pub fn pair_mean(&self) -> usize {
        3 * self.n
    }
    pub fn pair(&self, p: usize) -> usize {
        3 * self.n + 1 + p
    }
}

fn observe(state: &NetworkState, w_opt: &[Complex64], layout: Layout, row: &mut [f64]) {
    let n = layout.n;
    for k in 0..n {
        let e = state.error_sq(k, w_opt);
        row[layout.msd(k)] = e;
        row[layout.m4(k)] = e * e;
        row[layout.dis(k)] = 0.0;
    }
    let mut p = 0;
    let mut pair_sum = 0.0;
    for k in 0..n {
        for l in k + 1..n {
            let d = state.distance_sq(k, l);
            row[layout.pair(p)] = d;
            row[layout.dis(k)] += d;
            row[layout.dis(l)] += d;
            pair_sum += d;
            p += 1;
        }
    }
    if n > 1 {
        for k in 0..n {
            row[layout.dis(k)] /= (n - 1) as f64;
        }
        row[layout.pair_mean()] = pair_sum / layout.pairs as f64;
    } else {
        row[layout.pair_mean()] = 0.0;
    }
}

/// Draws `(A_i, M_i, data_i)` in that order.
fn draw(
    net: &Network,
    rng: &mut ChaCha8Rng,
    a: &mut DMatrix<f64>,
    data: &mut Vec<DataSample>,
) -> Vec<f64> {
    net.combination.sample_into(rng, a);
    let m = net.steps.sample_diag(rng);
    data.clear();
    data.extend(net.costs.iter().map(|c| c.sample_data(rng)));
    m
}

/// Runs one trial with its own RNG stream `seed`, halting at
/// [`DIVERGENCE_THRESHOLD`].
pub fn run_trial(net: &Network, horizon: usize, seed: u64) -> TrialOutcome {
    run_trial_until(net, horizon, seed, DIVERGENCE_THRESHOLD)
}

/// [`run_trial`] with an explicit divergence threshold. After divergence
/// the last finite observation is repeated to the horizon.
pub fn run_trial_until(net: &Network, horizon: usize, seed: u64, threshold: f64) -> TrialOutcome {
    let layout = Layout::new(net.n_agents());
    let width = layout.width();
    let w_opt = net.w_opt().as_slice().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = vec![0.0; (horizon + 1) * width];
    let mut state = net.initial_state();
    observe(&state, &w_opt, layout, &mut cells[..width]);
    let worst = |row: &[f64]| (0..layout.n).map(|k| row[layout.msd(k)]).fold(0.0, f64::max);
    let mut peak = worst(&cells[..width]);
    let mut diverged = false;

    let mut a = DMatrix::zeros(layout.n, layout.n);
    let mut data = Vec::with_capacity(layout.n);
    for i in 1..=horizon {
        let (prev, rest) = cells.split_at_mut(i * width);
        let prev = &prev[(i - 1) * width..];
        let row = &mut rest[..width];
        if diverged {
            row.copy_from_slice(prev);
            continue;
        }
        let m = draw(net, &mut rng, &mut a, &mut data);
        atc_step(&mut state, &a, &m, &data, &net.costs).expect("dimensions validated by Network");
        observe(&state, &w_opt, layout, row);
        if state.diverged() || row.iter().any(|x| !x.is_finite()) {
            // keep the last finite observation
            row.copy_from_slice(prev);
            diverged = true;
        } else {
            let w = worst(row);
            peak = peak.max(w);
            if w > threshold {
                diverged = true;
            }
        }
    }
    TrialOutcome {
        seed,
        diverged,
        peak_msd: peak,
        cells,
    }
}

fn accumulate(trials: &[&TrialOutcome], len: usize) -> Vec<Welford> {
    (0..len)
        .map(|c| {
            let singles: Vec<Welford> = trials
                .iter()
                .map(|t| {
                    let mut w = Welford::new();
                    w.push(t.cells[c]);
                    w
                })
                .collect();
            pairwise_reduce(&singles, &|a, b| a.merge(b)).unwrap_or_default()
        })
        .collect()
}

fn merge_into(total: &mut Vec<Welford>, part: Vec<Welford>) {
    if total.is_empty() {
        *total = part;
    } else {
        for (t, p) in total.iter_mut().zip(part) {
            *t = t.merge(&p);
        }
    }
}

/// Monte-Carlo estimate of the MSD, disagreement and fourth-moment series.
///
/// Trial `t` uses seed `base_seed ^ t`. Trials run in parallel; results are
/// bit-identical for any thread count.
pub fn run_experiment(net: &Network, opts: &RunOptions) -> Result<ExperimentRecord> {
    if opts.n_trials == 0 {
        return Err(Error::param("n_trials", "must be at least 1"));
    }
    if opts.threads == Some(0) {
        return Err(Error::param("threads", "must be at least 1"));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = opts.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::param("threads", e.to_string()))?;

    let layout = Layout::new(net.n_agents());
    let len = (opts.horizon + 1) * layout.width();
    let seeds: Vec<u64> = (0..opts.n_trials as u64).map(|t| opts.base_seed ^ t).collect();

    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut diverged = Vec::with_capacity(opts.n_trials);
    let mut peak = Vec::with_capacity(opts.n_trials);
    for chunk in seeds.chunks(CHUNK_TRIALS) {
        let outcomes: Vec<TrialOutcome> = pool.install(|| {
            chunk
                .par_iter()
                .map(|&s| run_trial_until(net, opts.horizon, s, opts.divergence_threshold))
                .collect()
        });
        for t in &outcomes {
            diverged.push(t.diverged);
            peak.push(t.peak_msd);
        }
        let (good, bad): (Vec<&TrialOutcome>, Vec<&TrialOutcome>) = if opts.exclude_divergent {
            outcomes.iter().partition(|t| !t.diverged)
        } else {
            (outcomes.iter().collect(), Vec::new())
        };
        if !good.is_empty() {
            merge_into(&mut kept, accumulate(&good, len));
        }
        if !bad.is_empty() {
            merge_into(&mut dropped, accumulate(&bad, len));
        }
    }

    let n_div = diverged.iter().filter(|&&d| d).count();
    let (acc, n_excluded, all_diverged) = if kept.is_empty() {
        // nothing converged: report the divergent trials rather than NaN
        (dropped, 0, true)
    } else if opts.exclude_divergent {
        (kept, n_div, false)
    } else {
        (kept, 0, n_div == opts.n_trials)
    };

    let width = layout.width();
    let n = layout.n;
    let cell = |i: usize, c: usize| acc[i * width + c];
    let series = |c: usize| -> Series {
        let mut s = Series::with_capacity(opts.horizon + 1);
        for i in 0..=opts.horizon {
            let w = cell(i, c);
            s.push(w.mean(), w.stderr());
        }
        s
    };
    let msd = (0..n).map(|k| series(layout.msd(k))).collect();
    let m4 = (0..n).map(|k| series(layout.m4(k))).collect();
    let disagreement = (0..n).map(|k| series(layout.dis(k))).collect();
    let network_disagreement = series(layout.pair_mean());
    let mut worst_pair = Series::with_capacity(opts.horizon + 1);
    for i in 0..=opts.horizon {
        let best = (0..layout.pairs)
            .map(|p| cell(i, layout.pair(p)))
            .max_by(|a, b| a.mean().total_cmp(&b.mean()));
        match best {
            Some(w) => worst_pair.push(w.mean(), w.stderr()),
            None => worst_pair.push(0.0, 0.0),
        }
    }

    Ok(ExperimentRecord::assemble(
        opts.base_seed,
        seeds,
        diverged,
        peak,
        n_excluded,
        all_diverged,
        msd,
        disagreement,
        m4,
        network_disagreement,
        worst_pair,
    ))
}

/// Outcome of running the direct and error-form recursions side by side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equivalence {
    /// Iterations actually compared.
    pub steps: usize,
    /// Largest `‖w̃_direct − w̃_errorform‖ / ‖w̃_direct‖` over the run.
    pub max_rel_err: f64,
}

/// Runs [`atc_step`] and [`error_step`] on the same draws for up to `steps`
/// iterations and reports how far the two error trajectories drift apart.
/// Stops early once the error passes [`DIVERGENCE_THRESHOLD`].
pub fn recursion_equivalence(net: &Network, steps: usize, seed: u64) -> Result<Equivalence> {
    let n = net.n_agents();
    let m = net.dim();
    let wo = net.w_opt().as_dvector().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = net.initial_state();
    let errs: Vec<Complex64> = net
        .initial()
        .iter()
        .flat_map(|w| {
            let e = ComplexVec::new((&wo - w.as_dvector()).iter().copied().collect())
                .expect("finite initial iterate");
            embed_conjugate(&e).as_dvector().iter().copied().collect::<Vec<_>>()
        })
        .collect();
    let mut err = DVector::from_vec(errs);
    let mut a = DMatrix::zeros(n, n);
    let mut data = Vec::with_capacity(n);
    let mut max_rel: f64 = 0.0;
    let mut taken = 0;
    for _ in 0..steps {
        let mu = draw(net, &mut rng, &mut a, &mut data);
        let noise = extended_noise(&err, &data, &net.costs, m)?;
        atc_step(&mut state, &a, &mu, &data, &net.costs)?;
        err = error_step(&err, &a, &mu, &noise, &net.costs)?;

        let mut diff = 0.0;
        let mut norm = 0.0;
        for k in 0..n {
            for j in 0..m {
                let direct = wo[j] - state.w(k)[j];
                diff += (direct - err[2 * m * k + j]).norm_sqr();
                norm += direct.norm_sqr();
            }
        }
        let rel = if norm > 0.0 { (diff / norm).sqrt() } else { diff.sqrt() };
        max_rel = max_rel.max(rel);
        taken += 1;
        if norm > DIVERGENCE_THRESHOLD || !norm.is_finite() {
            break;
        }
    }
    Ok(Equivalence {
        steps: taken,
        max_rel_err: max_rel,
    })
}

/// `[v_k; conj v_k]` evaluated at the error form's own iterate `w° − e_k`.
fn extended_noise(
    err: &DVector<Complex64>,
    data: &[DataSample],
    costs: &[QuadraticCost],
    m: usize,
) -> Result<DVector<Complex64>> {
    let mut out = DVector::zeros(err.len());
    for (k, (c, s)) in costs.iter().zip(data).enumerate() {
        let w: Vec<Complex64> = (0..m).map(|j| c.w_opt().as_slice()[j] - err[2 * m * k + j]).collect();
        let w = ComplexVec::new(w)?;
        let v = c.gradient_noise(&w, s)?;
        for (j, z) in v.as_slice().iter().enumerate() {
            out[2 * m * k + j] = *z;
            out[2 * m * k + m + j] = z.conj();
        }
    }
    Ok(out)
}
