//! Truncated Fock-space simulation of nonlinear coherent thermodynamic devices.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod distiller;
pub mod engine;
pub mod error;
pub mod filters;
pub mod fock;
pub mod harness;
pub mod linalg;
pub mod montecarlo;
pub mod optics;
pub mod sensing;
pub mod spin_cat;
pub mod thermo;

pub use error::{Error, Result};
