//! Exact solvers, classifiers and brute-force oracles for finite-horizon
//! two-agent decentralized MDPs.

pub mod classifier;
pub mod comm;
pub mod error;
pub mod goals;
pub mod io;
pub mod mdp;
pub mod oracle;
pub mod model;
pub mod policy;
pub mod scenarios;
pub mod sim;

pub use error::{Error, Result};

/// Tolerance for stochasticity and factorization checks.
pub const TOL_P: f64 = 1e-9;
/// Tolerance for value comparisons.
pub const TOL_V: f64 = 1e-9;
