//! Implicit zeroth-order solvers for stochastic mathematical programs with
//! equilibrium constraints.
//!
//! The upper level is driven by spherical-smoothing gradient estimates of the
//! implicit objective `x -> E[f~(x, y(x[,w]), w)]`; the lower-level solution
//! `y` comes from projection methods for strongly monotone variational
//! inequalities or from exact oracles.

pub mod baselines;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod lower_level;
pub mod problems;
pub mod smoothing;
pub mod vecops;
pub mod zsol;

pub use error::{Result, SmpecError};
