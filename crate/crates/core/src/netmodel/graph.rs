use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Column-sum tolerance for left-stochastic checks.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// The fixed topology induced by the mean combination matrix.
///
/// `abar[(l, k)]` is the mean weight agent `k` assigns to agent `l`;
/// columns sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanGraph {
    abar: DMatrix<f64>,
    neighbors: Vec<BTreeSet<usize>>,
}

impl MeanGraph {
    pub fn new(abar: DMatrix<f64>) -> Result<Self> {
        let n = abar.nrows();
        if n == 0 || abar.ncols() != n {
            return Err(Error::param("abar", "must be a non-empty square matrix"));
        }
        for k in 0..n {
            let col = abar.column(k);
            if let Some(l) = col.iter().position(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::param(
                    format!("abar[{l},{k}]"),
                    "entries must be finite and nonnegative",
                ));
            }
            let s: f64 = col.sum();
            if (s - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::param(
                    format!("abar column {k}"),
                    format!("sums to {s}, expected 1"),
                ));
            }
        }
        let neighbors = (0..n)
            .map(|k| {
                let mut s: BTreeSet<usize> = (0..n).filter(|&l| abar[(l, k)] > 0.0).collect();
                s.insert(k);
                s
            })
            .collect();
        let g = MeanGraph { abar, neighbors };
        g.check_connected()?;
        Ok(g)
    }

    pub fn n_agents(&self) -> usize {
        self.abar.nrows()
    }

    pub fn abar(&self) -> &DMatrix<f64> {
        &self.abar
    }

    /// `𝒩_k`, always containing `k`.
    pub fn neighbors(&self, k: usize) -> &BTreeSet<usize> {
        &self.neighbors[k]
    }

    /// `{l : ā_lk > 0}`.
    pub fn support(&self, k: usize) -> BTreeSet<usize> {
        (0..self.n_agents())
            .filter(|&l| self.abar[(l, k)] > 0.0)
            .collect()
    }

    /// Off-diagonal links `(l, k)` with `l ∈ 𝒩_k \ {k}`, ordered by `(k, l)`.
    pub fn links(&self) -> Vec<(usize, usize)> {
        let n = self.n_agents();
        (0..n)
            .flat_map(|k| {
                self.neighbors[k]
                    .iter()
                    .filter(move |&&l| l != k)
                    .map(move |&l| (l, k))
            })
            .collect()
    }

    fn check_connected(&self) -> Result<()> {
        let n = self.n_agents();
        // strongly connected iff every agent reaches and is reached from 0
        for transpose in [false, true] {
            let mut seen = vec![false; n];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(v) = stack.pop() {
                for u in 0..n {
                    let w = if transpose {
                        self.abar[(u, v)]
                    } else {
                        self.abar[(v, u)]
                    };
                    if u != v && w > 0.0 && !seen[u] {
                        seen[u] = true;
                        stack.push(u);
                    }
                }
            }
            if let Some(k) = seen.iter().position(|s| !s) {
                return Err(Error::Disconnected(k));
            }
        }
        Ok(())
    }

    /// Edge list `from,to,abar` including self-loops, column-major order.
    pub fn to_edge_csv(&self) -> String {
        let mut out = String::from("from,to,abar\n");
        let n = self.n_agents();
        for k in 0..n {
            for l in 0..n {
                let a = self.abar[(l, k)];
                if a > 0.0 {
                    let _ = writeln!(out, "{l},{k},{a}");
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring3() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[0.2, 0.4, 0.4, 0.4, 0.2, 0.4, 0.4, 0.4, 0.2])
    }

    #[test]
    fn ring_neighbors_and_links() {
        let g = MeanGraph::new(ring3()).unwrap();
        assert_eq!(g.neighbors(0), &BTreeSet::from([0, 1, 2]));
        assert_eq!(g.links().len(), 6);
        assert!(g.to_edge_csv().starts_with("from,to,abar\n0,0,0.2\n"));
    }

    #[test]
    fn rejects_bad_columns_and_disconnected() {
        let mut a = ring3();
        a[(0, 1)] = 0.3;
        assert!(MeanGraph::new(a).is_err());
        let a = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(MeanGraph::new(a), Err(Error::Disconnected(1))));
    }
}
