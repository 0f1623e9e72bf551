use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use rand::Rng;

use super::graph::{MeanGraph, STOCHASTIC_TOL};
use super::models::{CombinationModel, StepSizeModel};
use crate::error::{Error, Result};
use crate::stats::{covariance_se, mean_se, Welford};

/// Kronecker-sized matrices are kept dense up to this many agents.
pub const DENSE_AGENT_LIMIT: usize = 32;

/// Minimum draws for [`empirical_moments`].
pub const MIN_MOMENT_SAMPLES: usize = 10_000;

/// Per-link miss probability targeted by [`required_samples`].
pub const NEIGHBORHOOD_MISS_PROB: f64 = 1e-6;

/// An `N² × N²` matrix, dense for small networks and a sorted sparse map
/// otherwise. Indices follow the Kronecker convention
/// `(A⊗B)[iN+j, kN+l] = A[i,k]·B[j,l]`.
#[derive(Debug, Clone, PartialEq)]
pub enum KronMatrix {
    Dense(DMatrix<f64>),
    Sparse {
        dim: usize,
        entries: BTreeMap<(usize, usize), f64>,
    },
}

impl KronMatrix {
    pub fn zeros(n_agents: usize) -> Self {
        let dim = n_agents * n_agents;
        if n_agents <= DENSE_AGENT_LIMIT {
            KronMatrix::Dense(DMatrix::zeros(dim, dim))
        } else {
            KronMatrix::Sparse {
                dim,
                entries: BTreeMap::new(),
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            KronMatrix::Dense(m) => m.nrows(),
            KronMatrix::Sparse { dim, .. } => *dim,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            KronMatrix::Dense(m) => m[(i, j)],
            KronMatrix::Sparse { entries, .. } => entries.get(&(i, j)).copied().unwrap_or(0.0),
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        match self {
            KronMatrix::Dense(m) => m[(i, j)] = v,
            KronMatrix::Sparse { entries, .. } => {
                if v == 0.0 {
                    entries.remove(&(i, j));
                } else {
                    entries.insert((i, j), v);
                }
            }
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let cur = self.get(i, j);
        self.set(i, j, cur + v);
    }

    /// Nonzero entries in row-major order.
    pub fn nonzeros(&self) -> Vec<((usize, usize), f64)> {
        match self {
            KronMatrix::Dense(m) => {
                let mut out = Vec::new();
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        if m[(i, j)] != 0.0 {
                            out.push(((i, j), m[(i, j)]));
                        }
                    }
                }
                out
            }
            KronMatrix::Sparse { entries, .. } => entries.iter().map(|(&k, &v)| (k, v)).collect(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            KronMatrix::Dense(m) => m.clone(),
            KronMatrix::Sparse { dim, entries } => {
                let mut m = DMatrix::zeros(*dim, *dim);
                for (&(i, j), &v) in entries {
                    m[(i, j)] = v;
                }
                m
            }
        }
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.dim()];
        for ((_, j), v) in self.nonzeros() {
            s[j] += v;
        }
        s
    }

    pub fn is_zero(&self) -> bool {
        self.nonzeros().is_empty()
    }
}

/// First and second-order moments of `{M_i, A_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet {
    /// Diagonal of `M̄`.
    pub mbar: Vec<f64>,
    /// `E[(M−M̄)⊗(M−M̄)]`.
    pub c_m: KronMatrix,
    pub abar: DMatrix<f64>,
    /// `E[(A−Ā)⊗(A−Ā)]`.
    pub c_a: KronMatrix,
    /// Per agent `(μ̄⁽¹⁾, μ̄⁽²⁾, μ̄⁽⁴⁾)`.
    pub mu_moments: Vec<[f64; 3]>,
}

impl MomentSet {
    /// Assembles a moment set from raw parts, e.g. a correlated `C_A`
    /// that has no analytic generator here.
    pub fn from_parts(
        mbar: Vec<f64>,
        c_m: KronMatrix,
        abar: DMatrix<f64>,
        c_a: KronMatrix,
        mu_moments: Vec<[f64; 3]>,
    ) -> Result<Self> {
        let n = mbar.len();
        for (what, found) in [
            ("abar", abar.nrows()),
            ("abar", abar.ncols()),
            ("mu_moments", mu_moments.len()),
        ] {
            if found != n {
                return Err(Error::param(what, format!("expected {n} agents, found {found}")));
            }
        }
        for (what, m) in [("c_m", &c_m), ("c_a", &c_a)] {
            if m.dim() != n * n {
                return Err(Error::param(what, format!("expected dimension {}", n * n)));
            }
        }
        Ok(MomentSet {
            mbar,
            c_m,
            abar,
            c_a,
            mu_moments,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.mbar.len()
    }

    pub fn mbar_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.mbar.clone().into())
    }

    /// `c_{μ,k,k}`.
    pub fn step_variance(&self, k: usize) -> f64 {
        let n = self.n_agents();
        self.c_m.get(k * n + k, k * n + k)
    }

    /// `(Ā⊗Ā + C_A)[r, c]`.
    pub fn second_moment_entry(&self, r: usize, c: usize) -> f64 {
        let n = self.n_agents();
        self.abar[(r / n, c / n)] * self.abar[(r % n, c % n)] + self.c_a.get(r, c)
    }

    /// `κ = max_k μ̄_k / min_k μ̄_k`.
    pub fn kappa(&self) -> f64 {
        let max = self.mbar.iter().cloned().fold(f64::MIN, f64::max);
        let min = self.mbar.iter().cloned().fold(f64::MAX, f64::min);
        max / min
    }
}

/// Closed-form moments of the spatially uncorrelated model.
pub fn analytic_moments(
    graph: &MeanGraph,
    sm: &StepSizeModel,
    cm: &CombinationModel,
) -> Result<MomentSet> {
    let n = graph.n_agents();
    if sm.n_agents() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: sm.n_agents(),
        });
    }
    cm.check_against(graph)?;

    let mbar: Vec<f64> = sm.agents().iter().map(|s| s.mean()).collect();
    let mut c_m = KronMatrix::zeros(n);
    for (k, s) in sm.agents().iter().enumerate() {
        c_m.set(k * n + k, k * n + k, s.variance());
    }
    let mu_moments = sm
        .agents()
        .iter()
        .map(|s| [s.raw_moment(1), s.raw_moment(2), s.raw_moment(4)])
        .collect();

    let mut c_a = KronMatrix::zeros(n);
    for link in cm.links() {
        let (l, k) = (link.from, link.to);
        let c = link.weight.variance();
        if c == 0.0 {
            continue;
        }
        let col = k * n + k;
        c_a.add(l * n + l, col, c);
        c_a.add(l * n + k, col, -c);
        c_a.add(k * n + k, col, c);
        c_a.add(k * n + l, col, -c);
    }

    Ok(MomentSet {
        mbar,
        c_m,
        abar: graph.abar().clone(),
        c_a,
        mu_moments,
    })
}

/// Positions where the uncorrelated-link model may place nonzero `C_A`
/// entries: rows `{ℓN+ℓ, ℓN+k, kN+k, kN+ℓ}` of column `kN+k` per link.
pub fn lemma4_pattern(graph: &MeanGraph) -> BTreeSet<(usize, usize)> {
    let n = graph.n_agents();
    let mut out = BTreeSet::new();
    for (l, k) in graph.links() {
        let col = k * n + k;
        for row in [l * n + l, l * n + k, k * n + k, k * n + l] {
            out.insert((row, col));
        }
    }
    out
}

/// Monte-Carlo estimate of a [`MomentSet`] plus the statistics needed to
/// judge it.
#[derive(Debug, Clone)]
pub struct EmpiricalMoments {
    pub n_samples: usize,
    pub estimate: MomentSet,
    pub mbar_se: Vec<f64>,
    pub c_m_se: KronMatrix,
    pub abar_se: DMatrix<f64>,
    pub c_a_se: KronMatrix,
    pub mu_moments_se: Vec<[f64; 3]>,
    /// `E[A⊗A]` over pairs of mean-graph entries.
    pub aa: KronMatrix,
    pub aa_se: KronMatrix,
    /// Covariance between each step-size and each combination entry.
    pub cross_cov: Vec<CrossCovariance>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossCovariance {
    pub agent: usize,
    pub entry: (usize, usize),
    pub value: f64,
    pub se: f64,
}

/// Sample means and Kronecker covariances from `n_samples` joint draws of
/// `(A_i, M_i)`, in that order.
pub fn empirical_moments<R: Rng + ?Sized>(
    graph: &MeanGraph,
    sm: &StepSizeModel,
    cm: &CombinationModel,
    n_samples: usize,
    rng: &mut R,
) -> Result<EmpiricalMoments> {
    if n_samples < MIN_MOMENT_SAMPLES {
        return Err(Error::param(
            "n_samples",
            format!("need at least {MIN_MOMENT_SAMPLES}, got {n_samples}"),
        ));
    }
    let n = graph.n_agents();
    if sm.n_agents() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: sm.n_agents(),
        });
    }
    cm.check_against(graph)?;

    // support entries (l, k), column-major
    let support: Vec<(usize, usize)> = (0..n)
        .flat_map(|k| graph.neighbors(k).iter().map(move |&l| (l, k)).collect::<Vec<_>>())
        .collect();
    let mut a_samples = vec![Vec::with_capacity(n_samples); support.len()];
    let mut m_samples = vec![Vec::with_capacity(n_samples); n];
    let mut a = DMatrix::zeros(n, n);
    for _ in 0..n_samples {
        cm.sample_into(rng, &mut a);
        let m = sm.sample_diag(rng);
        for (s, &(l, k)) in a_samples.iter_mut().zip(&support) {
            s.push(a[(l, k)]);
        }
        for (s, v) in m_samples.iter_mut().zip(m) {
            s.push(v);
        }
    }

    let mut mbar = vec![0.0; n];
    let mut mbar_se = vec![0.0; n];
    let mut mu_moments = vec![[0.0; 3]; n];
    let mut mu_moments_se = vec![[0.0; 3]; n];
    for k in 0..n {
        (mbar[k], mbar_se[k]) = mean_se(&m_samples[k]);
        for (slot, p) in [1, 2, 4].into_iter().enumerate() {
            let pow: Vec<f64> = m_samples[k].iter().map(|x| x.powi(p)).collect();
            (mu_moments[k][slot], mu_moments_se[k][slot]) = mean_se(&pow);
        }
    }
    let mut c_m = KronMatrix::zeros(n);
    let mut c_m_se = KronMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let (v, se) = covariance_se(&m_samples[i], &m_samples[j]);
            c_m.set(i * n + j, i * n + j, v);
            c_m_se.set(i * n + j, i * n + j, se);
        }
    }

    let mut abar = DMatrix::zeros(n, n);
    let mut abar_se = DMatrix::zeros(n, n);
    for (s, &(l, k)) in a_samples.iter().zip(&support) {
        let (m, se) = mean_se(s);
        abar[(l, k)] = m;
        abar_se[(l, k)] = se;
    }
    let mut c_a = KronMatrix::zeros(n);
    let mut c_a_se = KronMatrix::zeros(n);
    let mut aa = KronMatrix::zeros(n);
    let mut aa_se = KronMatrix::zeros(n);
    for (x, &(i, k)) in support.iter().enumerate() {
        for (y, &(j, l)) in support.iter().enumerate() {
            let (r, c) = (i * n + j, k * n + l);
            let (v, se) = covariance_se(&a_samples[x], &a_samples[y]);
            c_a.set(r, c, v);
            c_a_se.set(r, c, se);
            let mut w = Welford::new();
            for (p, q) in a_samples[x].iter().zip(&a_samples[y]) {
                w.push(p * q);
            }
            aa.set(r, c, w.mean());
            aa_se.set(r, c, w.stderr());
        }
    }

    let mut cross_cov = Vec::new();
    for (agent, ms) in m_samples.iter().enumerate() {
        for (x, &entry) in support.iter().enumerate() {
            let (value, se) = covariance_se(ms, &a_samples[x]);
            cross_cov.push(CrossCovariance {
                agent,
                entry,
                value,
                se,
            });
        }
    }

    Ok(EmpiricalMoments {
        n_samples,
        estimate: MomentSet {
            mbar,
            c_m,
            abar,
            c_a,
            mu_moments,
        },
        mbar_se,
        c_m_se,
        abar_se,
        c_a_se,
        mu_moments_se,
        aa,
        aa_se,
        cross_cov,
    })
}

/// One failed entrywise comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct Discrepancy {
    pub quantity: String,
    pub expected: f64,
    pub measured: f64,
    pub se: f64,
}

impl std::fmt::Display for Discrepancy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: expected {:e}, measured {:e} (se {:e})",
            self.quantity, self.expected, self.measured, self.se
        )
    }
}

/// `|measured − expected| ≤ z·se`, or exact to 1e-12 when the estimate has
/// no spread.
pub fn within_se(expected: f64, measured: f64, se: f64, z: f64) -> bool {
    let d = (measured - expected).abs();
    if se == 0.0 {
        d <= 1e-12
    } else {
        d <= z * se
    }
}

/// Result of comparing analytic moments with a Monte-Carlo estimate.
#[derive(Debug, Clone, Default)]
pub struct MomentComparison {
    pub checked: usize,
    /// Every compared entry, in comparison order.
    pub entries: Vec<Discrepancy>,
    pub failures: Vec<Discrepancy>,
    /// Largest `|diff| / se` seen (entries with `se = 0` excluded).
    pub max_z: f64,
}

impl MomentComparison {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn check(&mut self, quantity: impl FnOnce() -> String, expected: f64, measured: f64, se: f64, z: f64) {
        self.checked += 1;
        if se > 0.0 {
            self.max_z = self.max_z.max((measured - expected).abs() / se);
        }
        let d = Discrepancy {
            quantity: quantity(),
            expected,
            measured,
            se,
        };
        if !within_se(expected, measured, se, z) {
            self.failures.push(d.clone());
        }
        self.entries.push(d);
    }
}

/// Entrywise comparison of every estimated quantity at `z` standard errors.
pub fn compare_moments(analytic: &MomentSet, emp: &EmpiricalMoments, z: f64) -> MomentComparison {
    let n = analytic.n_agents();
    let e = &emp.estimate;
    let mut cmp = MomentComparison::default();
    for k in 0..n {
        cmp.check(|| format!("mbar[{k}]"), analytic.mbar[k], e.mbar[k], emp.mbar_se[k], z);
        for (slot, p) in [1, 2, 4].into_iter().enumerate() {
            cmp.check(
                || format!("mu_moment{p}[{k}]"),
                analytic.mu_moments[k][slot],
                e.mu_moments[k][slot],
                emp.mu_moments_se[k][slot],
                z,
            );
        }
    }
    for r in 0..n * n {
        for c in 0..n * n {
            let (a, m) = (analytic.c_m.get(r, c), e.c_m.get(r, c));
            if a != 0.0 || m != 0.0 {
                cmp.check(|| format!("c_m[{r},{c}]"), a, m, emp.c_m_se.get(r, c), z);
            }
        }
    }
    for l in 0..n {
        for k in 0..n {
            cmp.check(
                || format!("abar[{l},{k}]"),
                analytic.abar[(l, k)],
                e.abar[(l, k)],
                emp.abar_se[(l, k)],
                z,
            );
        }
    }
    // every position either side can populate
    let mut positions: BTreeSet<(usize, usize)> =
        analytic.c_a.nonzeros().into_iter().map(|(p, _)| p).collect();
    positions.extend(e.c_a.nonzeros().into_iter().map(|(p, _)| p));
    for (r, c) in positions {
        cmp.check(
            || format!("c_a[{r},{c}]"),
            analytic.c_a.get(r, c),
            e.c_a.get(r, c),
            emp.c_a_se.get(r, c),
            z,
        );
    }
    cmp
}

/// A violated structural property.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ColumnSum {
        matrix: &'static str,
        column: usize,
        sum: f64,
    },
    NegativeEntry {
        matrix: &'static str,
        row: usize,
        column: usize,
        value: f64,
    },
    SecondMoment(Discrepancy),
    Pattern {
        row: usize,
        column: usize,
        value: f64,
        se: f64,
    },
    Neighborhood {
        agent: usize,
        expected: BTreeSet<usize>,
        found: BTreeSet<usize>,
    },
    CrossCorrelation(CrossCovariance),
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::ColumnSum { matrix, column, sum } => {
                write!(f, "{matrix}: column {column} sums to {sum}")
            }
            Violation::NegativeEntry {
                matrix,
                row,
                column,
                value,
            } => write!(f, "{matrix}: entry [{row},{column}] = {value:e} < 0"),
            Violation::SecondMoment(d) => write!(f, "E[A⊗A] mismatch at {d}"),
            Violation::Pattern {
                row,
                column,
                value,
                se,
            } => write!(
                f,
                "C_A[{row},{column}] = {value:e} (se {se:e}) outside the uncorrelated-link pattern"
            ),
            Violation::Neighborhood {
                agent,
                expected,
                found,
            } => write!(f, "agent {agent}: realized union {found:?} != {expected:?}"),
            Violation::CrossCorrelation(c) => write!(
                f,
                "step {} vs a[{},{}] covariance {:e} (se {:e})",
                c.agent, c.entry.0, c.entry.1, c.value, c.se
            ),
        }
    }
}

/// Outcome of a structural check; empty `violations` means pass.
#[derive(Debug, Clone, Default)]
pub struct CheckReport {
    pub checked: usize,
    pub violations: Vec<Violation>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// `Āᵀ1 = 1`, `(Ā⊗Ā + C_A)ᵀ1 = 1` and nonnegativity; when `emp` is given,
/// also `Ā⊗Ā + C_A ≈ E[A⊗A]` within 3 standard errors.
pub fn check_left_stochastic(ms: &MomentSet, emp: Option<&EmpiricalMoments>) -> CheckReport {
    let n = ms.n_agents();
    let mut rep = CheckReport::default();
    let abar_cols: Vec<f64> = (0..n).map(|k| ms.abar.column(k).sum()).collect();
    for (k, &s) in abar_cols.iter().enumerate() {
        rep.checked += 1;
        if (s - 1.0).abs() > STOCHASTIC_TOL {
            rep.violations.push(Violation::ColumnSum {
                matrix: "abar",
                column: k,
                sum: s,
            });
        }
        for l in 0..n {
            if ms.abar[(l, k)] < -1e-14 {
                rep.violations.push(Violation::NegativeEntry {
                    matrix: "abar",
                    row: l,
                    column: k,
                    value: ms.abar[(l, k)],
                });
            }
        }
    }

    // column sums of Ā⊗Ā factor as products of Ā's column sums
    let ca_cols = ms.c_a.column_sums();
    for c in 0..n * n {
        rep.checked += 1;
        let s = abar_cols[c / n] * abar_cols[c % n] + ca_cols[c];
        if (s - 1.0).abs() > STOCHASTIC_TOL {
            rep.violations.push(Violation::ColumnSum {
                matrix: "abar⊗abar + c_a",
                column: c,
                sum: s,
            });
        }
    }
    // Ā⊗Ā ≥ 0, so only entries where C_A is negative can go below zero
    for ((r, c), v) in ms.c_a.nonzeros() {
        if v < 0.0 {
            let total = ms.second_moment_entry(r, c);
            if total < -1e-14 {
                rep.violations.push(Violation::NegativeEntry {
                    matrix: "abar⊗abar + c_a",
                    row: r,
                    column: c,
                    value: total,
                });
            }
        }
    }

    if let Some(emp) = emp {
        for ((r, c), measured) in emp.aa.nonzeros() {
            rep.checked += 1;
            let expected = ms.second_moment_entry(r, c);
            let se = emp.aa_se.get(r, c);
            if !within_se(expected, measured, se, 3.0) {
                rep.violations.push(Violation::SecondMoment(Discrepancy {
                    quantity: format!("[{r},{c}]"),
                    expected,
                    measured,
                    se,
                }));
            }
        }
    }
    rep
}

/// Analytic `C_A` must vanish exactly off the uncorrelated-link pattern;
/// empirical entries there must be within 3 SE of zero.
pub fn check_lemma4_pattern(
    graph: &MeanGraph,
    analytic: &MomentSet,
    emp: Option<&EmpiricalMoments>,
) -> CheckReport {
    let pattern = lemma4_pattern(graph);
    let mut rep = CheckReport::default();
    for ((r, c), v) in analytic.c_a.nonzeros() {
        rep.checked += 1;
        if !pattern.contains(&(r, c)) {
            rep.violations.push(Violation::Pattern {
                row: r,
                column: c,
                value: v,
                se: 0.0,
            });
        }
    }
    if let Some(emp) = emp {
        for ((r, c), v) in emp.estimate.c_a.nonzeros() {
            if pattern.contains(&(r, c)) {
                continue;
            }
            rep.checked += 1;
            let se = emp.c_a_se.get(r, c);
            if !within_se(0.0, v, se, 3.0) {
                rep.violations.push(Violation::Pattern {
                    row: r,
                    column: c,
                    value: v,
                    se,
                });
            }
        }
    }
    rep
}

/// Step-sizes and combination weights must be uncorrelated.
pub fn check_independence(emp: &EmpiricalMoments) -> CheckReport {
    let mut rep = CheckReport::default();
    for c in &emp.cross_cov {
        rep.checked += 1;
        if !within_se(0.0, c.value, c.se, 3.0) {
            rep.violations.push(Violation::CrossCorrelation(*c));
        }
    }
    rep
}

/// Draws needed so every link shows up at least once with probability
/// `≥ 1 − 10⁻⁶`.
pub fn required_samples(cm: &CombinationModel) -> usize {
    cm.links()
        .iter()
        .map(|l| {
            let p = l.weight.activation_probability();
            if p >= 1.0 {
                1
            } else {
                (NEIGHBORHOOD_MISS_PROB.ln() / (1.0 - p).ln()).ceil() as usize
            }
        })
        .max()
        .unwrap_or(1)
}

#[derive(Debug, Clone)]
pub struct NeighborhoodReport {
    pub n_samples: usize,
    pub required: usize,
    pub unions: Vec<BTreeSet<usize>>,
    pub check: CheckReport,
}

/// Union over `n_samples` draws of `{ℓ : a_ℓk(i) > 0}` compared with the
/// mean graph's support of each column.
pub fn neighborhood_union<R: Rng + ?Sized>(
    graph: &MeanGraph,
    cm: &CombinationModel,
    n_samples: usize,
    rng: &mut R,
) -> Result<NeighborhoodReport> {
    cm.check_against(graph)?;
    let required = required_samples(cm);
    if n_samples < required {
        return Err(Error::param(
            "n_samples",
            format!("need at least {required} draws for the miss probability target"),
        ));
    }
    let n = graph.n_agents();
    let mut unions = vec![BTreeSet::new(); n];
    let mut a = DMatrix::zeros(n, n);
    for _ in 0..n_samples {
        cm.sample_into(rng, &mut a);
        for k in 0..n {
            for l in 0..n {
                if a[(l, k)] > 0.0 {
                    unions[k].insert(l);
                }
            }
        }
    }
    let mut check = CheckReport::default();
    for (k, u) in unions.iter().enumerate() {
        check.checked += 1;
        let expected = graph.support(k);
        if *u != expected {
            check.violations.push(Violation::Neighborhood {
                agent: k,
                expected,
                found: u.clone(),
            });
        }
    }
    Ok(NeighborhoodReport {
        n_samples,
        required,
        unions,
        check,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::models::{LinkWeight, StepSize};

    fn ring3() -> (MeanGraph, StepSizeModel, CombinationModel) {
        let cm = CombinationModel::uniform_undirected(
            3,
            &[(0, 1), (1, 2), (0, 2)],
            LinkWeight::Bernoulli { eta: 0.8, a: 0.5 },
        )
        .unwrap();
        let sm = StepSizeModel::uniform(3, StepSize::Bernoulli { q: 0.5, mu: 0.1 }).unwrap();
        (cm.mean_graph().unwrap(), sm, cm)
    }

    #[test]
    fn two_agent_link_covariance() {
        let cm = CombinationModel::uniform_undirected(
            2,
            &[(0, 1)],
            LinkWeight::Bernoulli { eta: 0.8, a: 0.5 },
        )
        .unwrap();
        let g = cm.mean_graph().unwrap();
        let sm = StepSizeModel::uniform(2, StepSize::Constant { mu: 0.1 }).unwrap();
        let ms = analytic_moments(&g, &sm, &cm).unwrap();
        // link 1 -> 0 (agents "2 -> 1" counted from one)
        assert!((ms.abar[(1, 0)] - 0.4).abs() < 1e-15);
        assert!((ms.c_a.get(3, 0) - 0.04).abs() < 1e-15);
        assert!((ms.c_a.get(2, 0) + 0.04).abs() < 1e-15);
        assert!(ms.c_m.is_zero());
    }

    #[test]
    fn analytic_ring_is_left_stochastic() {
        let (g, sm, cm) = ring3();
        let ms = analytic_moments(&g, &sm, &cm).unwrap();
        assert!(check_left_stochastic(&ms, None).passed());
        assert!(check_lemma4_pattern(&g, &ms, None).passed());
        assert!((ms.step_variance(1) - 0.0025).abs() < 1e-18);
    }

    #[test]
    fn bad_column_is_named() {
        let (g, sm, cm) = ring3();
        let mut ms = analytic_moments(&g, &sm, &cm).unwrap();
        ms.abar[(0, 2)] -= 0.1;
        let rep = check_left_stochastic(&ms, None);
        assert!(matches!(
            rep.violations[0],
            Violation::ColumnSum { matrix: "abar", column: 2, .. }
        ));
    }

    #[test]
    fn sparse_storage_agrees_with_dense() {
        let mut d = KronMatrix::zeros(2);
        let mut s = KronMatrix::Sparse {
            dim: 4,
            entries: BTreeMap::new(),
        };
        for m in [&mut d, &mut s] {
            m.add(1, 2, 0.5);
            m.add(1, 2, -0.25);
            m.set(3, 0, 1.0);
        }
        assert_eq!(d.to_dense(), s.to_dense());
        assert_eq!(d.column_sums(), s.column_sums());
    }

    #[test]
    fn required_samples_for_eta_08() {
        let (_, _, cm) = ring3();
        // (0.2)^9 ≈ 5e-7 ≤ 1e-6 < (0.2)^8
        assert_eq!(required_samples(&cm), 9);
    }
}
