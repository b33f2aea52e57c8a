//! Monotone semigroups of controlled Markov processes: Monte Carlo dynamic
//! programming, generator estimation, viscosity checks and independent
//! oracles.

pub mod campaign;
pub mod config;
pub mod costs;
pub mod dynamics;
pub mod engine;
pub mod error;
pub mod generator;
pub mod grid;
pub mod lattice;
pub mod oracle;
pub mod pde;
pub mod rng;
pub mod viscosity;

pub use error::{Error, Result};
