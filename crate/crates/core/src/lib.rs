//! Asynchronous diffusion adaptation over random networks.
//!
//! Agents run adapt-then-combine diffusion LMS where step-sizes, link
//! activity and combination weights are random at every iteration. The
//! crate simulates the recursion, computes the first/second-order moment
//! model of the randomness, checks the mean-square and fourth-order
//! stability conditions, and verifies the resulting error bounds by
//! Monte Carlo.

pub mod crcalc;
pub mod cli;
pub mod costs;
pub mod error;
pub mod engine;
pub mod netmodel;
pub mod stability;
pub mod stats;

pub use error::{Error, Result};
