//! Mesh-free solver for quasi-linear elliptic and parabolic interface problems.
//!
//! Each subdomain carries a randomized feature network whose output
//! coefficients are fitted by Gauss-Newton on a collocation least-squares
//! system. A second, convex subproblem then fits a sine-feature correction
//! `u_N + eps * u_p` that removes most of the remaining error.

pub mod assembly;
pub mod basis;
pub mod config;
pub mod error;
pub mod geometry;
mod jet;
pub mod metrics;
pub mod perturbation;
pub mod problem;
pub mod run;
pub mod solver;

pub use error::{Error, Result};
