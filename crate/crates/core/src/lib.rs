//! Adiabatic transport of dark spaces under purely dissipative Lindblad
//! dynamics: exact evolution, the effective dark-space Lindbladian, scaling
//! sweeps and gauge checks.

pub mod acceptance;
pub mod analysis;
pub mod config;
pub mod effective;
pub mod error;
pub mod lindblad;
pub mod linalg;
pub mod ode;
pub mod protocol;
pub mod quadrature;
pub mod runner;

pub use error::{Error, Result};
