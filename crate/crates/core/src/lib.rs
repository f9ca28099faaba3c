//! Langevin dynamics of Coulomb and Riesz gases.
//!
//! The crate covers the full pipeline: pair kernels and confining
//! potentials, the O(N²) force loop, the exponential Lyapunov function
//! `W = exp(aH + Ψ)` with its generator in closed form, sample-based
//! drift constants, kinetic Langevin integrators, HMC and overdamped
//! samplers for the Gibbs measure, and post-processing diagnostics.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod integrators;
pub mod io;
pub mod kernels;
pub mod lyapunov;
pub mod potentials;
pub mod rng;
pub mod samplers;
pub mod system;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
