//! Simulation and analysis toolkit for waveguide QED with collectively
//! coupled two-level emitters.
//!
//! The crate covers the physical model ([`model`]), master-equation
//! propagation ([`evolve`]), exact multi-time correlations by quantum
//! regression ([`correlate`]), spectral-diffusion ensembles and detector
//! response ([`noise`]), the Jacobi/cumulant analysis chain ([`analysis`]),
//! Monte-Carlo photon records ([`trajectories`]) and time-tag histogramming
//! ([`tagstream`]). [`config`] and [`cli`] drive the `wgqed` binary.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod correlate;
pub mod error;
pub mod evolve;
pub mod linalg;
pub mod model;
pub mod noise;
pub mod tagstream;
pub mod trajectories;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
