//! Simulation toolkit for fast coherent control of the nitrogen-14 nuclear
//! spin of NV centers via dynamical-decoupling conditional rotation gates
//! under a weak off-axis magnetic field.
//!
//! The crate models the coupled electron-nuclear spin system exactly
//! ([`model`]), provides the second-order effective-coupling theory and its
//! exact-diagonalization oracle ([`effective`]), builds timed pulse sequences
//! ([`sequence`]), evolves density matrices through them ([`propagator`]),
//! and reproduces the headline measurements as deterministic parameter scans
//! ([`experiments`]). The `nvdd` binary drives everything from a TOML
//! configuration ([`config`]).

pub mod config;
pub mod effective;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod model;
pub mod propagator;
pub mod report;
pub mod sequence;

pub use error::{NvError, Result};
