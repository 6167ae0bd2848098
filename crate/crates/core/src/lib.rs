//! Reconstruction of the initial temperature of `∂_t u − p(t) u_xx = 0` on
//! an interval from noisy samples of `u(·, T)` on a subinterval.
//!
//! The crate is organised bottom-up:
//!
//! - [`spectral`]: sine eigenbasis, exact propagator, projections, Gram matrices.
//! - [`fd_oracle`]: Crank–Nicolson reference solver used to cross-check the propagator.
//! - [`filtering`]: capped-gain backward filter and its a-priori parameter rule.
//! - [`observability`]: explicit observability constants and empirical checks.
//! - [`control`]: impulse controls at one time from a quadratic functional.
//! - [`local_backward`]: the subdomain-to-whole-domain reconstruction pipeline.
//! - [`harness`]: configuration, noise injection and δ-sweeps.

pub mod control;
pub mod error;
pub mod fd_oracle;
pub mod filtering;
pub mod harness;
pub mod local_backward;
pub mod observability;
pub mod spectral;

pub use error::{Error, Result};
