//! Simulation and verification toolkit for noisy multi-agent emergence
//! dynamics.
//!
//! The library is organized around six concerns:
//!
//! - [`quotient`]: ensemble states modulo common shifts, their inner
//!   products and isometric coordinate frames;
//! - [`operators`]: interaction kernels, graph Laplacians, the induced
//!   contraction operators and their spectral quantities on the quotient;
//! - [`noise`]: per-draw noise laws, exact norm distributions, path
//!   structures and deterministic seed streams;
//! - [`systems`]: the four coupled dynamical systems (two discrete, two
//!   continuous) and their integrators;
//! - [`theory`]: closed-form constants, hypothesis checks, probability
//!   bounds and trajectory-level envelope verification;
//! - [`harness`]: scenario configuration, Monte Carlo estimation and
//!   parameter sweeps.

pub mod cli;
pub mod error;
pub mod harness;
pub mod noise;
pub mod operators;
pub mod quotient;
pub mod systems;
pub mod theory;

pub use error::{EmergenceError, Result};
