//! Numerical laboratory for the mollified continuous directed polymer in d ≥ 3:
//! partition functions, Brownian and bridge exponential functionals, the 𝔥_β
//! integral equation, and fluctuation ensembles with their Gaussian reference laws.

pub mod acceptance;
pub mod cli;
pub mod config;
pub mod error;
pub mod fluctuations;
pub mod functionals;
pub mod mollifier;
pub mod noise;
pub mod polymer;
pub mod quad;
pub mod stats;

pub use error::{Error, Result};

/// Content hash of the crate sources at build time.
pub const BUILD_HASH: &str = env!("POLYMERLAB_BUILD_HASH");
