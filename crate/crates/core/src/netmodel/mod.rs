//! The random network: mean graph, step-size and combination processes,
//! and their first/second-order moments.

mod graph;
mod models;
mod moments;

pub use graph::{MeanGraph, STOCHASTIC_TOL};
pub use models::{CombinationModel, Link, LinkWeight, StepSize, StepSizeModel};
pub use moments::{
    analytic_moments, check_independence, check_left_stochastic, check_lemma4_pattern,
    compare_moments, empirical_moments, lemma4_pattern, neighborhood_union, required_samples,
    within_se, CheckReport, CrossCovariance, Discrepancy, EmpiricalMoments, KronMatrix,
    MomentComparison, MomentSet, NeighborhoodReport, Violation, DENSE_AGENT_LIMIT,
    MIN_MOMENT_SAMPLES, NEIGHBORHOOD_MISS_PROB,
};

use nalgebra::DMatrix;
use rand::Rng;

/// Draws `M_i`.
pub fn sample_step_matrix<R: Rng + ?Sized>(model: &StepSizeModel, rng: &mut R) -> DMatrix<f64> {
    model.sample_step_matrix(rng)
}

/// Draws `A_i` on `graph`; the model must describe the graph's links.
pub fn sample_combination_matrix<R: Rng + ?Sized>(
    graph: &MeanGraph,
    model: &CombinationModel,
    rng: &mut R,
) -> crate::Result<DMatrix<f64>> {
    model.check_against(graph)?;
    Ok(model.sample_matrix(rng))
}
