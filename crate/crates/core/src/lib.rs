//! Debiased estimation of statistical functionals via efficient influence
//! functions.
//!
//! The crate covers the full loop: finite-support laws and mixture paths
//! ([`distributions`]), a catalog of estimands with analytic influence
//! functions ([`estimands`]), numerical Gateaux derivatives that check those
//! functions ([`gateaux`]), cross-fitted one-step, estimating-equation and
//! targeted estimators ([`estimation`]) Monte Carlo experiments
//! ([`simulation`]) and the command-line front end ([`cli`]).

pub mod cli;
pub mod distributions;
pub mod error;
pub mod estimands;
pub mod estimation;
pub mod gateaux;
pub mod learners;
pub mod seed;
pub mod simulation;

pub use error::{Error, Result};
