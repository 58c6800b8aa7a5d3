//! Simulation and asymptotics for one-dimensional aggregation with noise:
//! interacting particles, the mean-field PDE, two-spike quasi-steady states
//! and the slow mass exchange between them.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod kernels;
pub mod metadyn;
pub mod particles;
pub mod pde;
pub mod quadrature;
pub mod quasisteady;
pub mod runner;
pub mod tridiag;
pub mod validate;

pub use error::{Error, Result};
pub use kernels::{Kernel, KernelSpec};
