//! Core library for robust approximate dynamic programming on continuous-time
//! linear-quadratic problems.
//!
//! The crate is organized around one recurring object: the differential matrix
//! Riccati equation dP/dt = A'P + PA - P B R^{-1} B' P + Q and its Euler
//! discretizations, run either from exact model data or from trajectory-based
//! estimates, with additive perturbations treated as first-class inputs.

pub mod mat;
pub mod riccati;
pub mod vi;
pub mod adp;
pub mod ergodic;
pub mod decentralized;

pub use mat::{DenseMatrix, SymMatrix};
