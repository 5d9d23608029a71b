//! Random walks in balanced random environments on `Z^d`: environment
//! generators, exact stationary densities of periodized environments,
//! maximum-principle checkers and the percolation machinery behind the
//! explicit-constant estimates.

// coordinates are indexed by axis throughout; `!(x >= a)` also rejects NaN
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod contact;
pub mod corpus;
pub mod elliptic;
pub mod env;
pub mod error;
pub mod grid;
pub mod io;
pub mod lattice;
pub mod linalg;
pub mod percolation;
pub mod rng;
pub mod stationary;
pub mod stats;
pub mod walk;

pub use env::{EnvSpec, Environment, KernelField, LayerLaw, SiteKernel};
pub use error::{Error, Result};
pub use lattice::{LatticeBox, Site};
