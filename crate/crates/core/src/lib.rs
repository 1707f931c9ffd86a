//! Circuit-level Monte Carlo simulation of the toric code under scattering,
//! field dephasing and leakage, for hyperfine, Zeeman and mixed-species ion
//! architectures, decoded by exact minimum-weight perfect matching.

pub mod channels;
pub mod cli;
pub mod decoder;
pub mod enumerate;
pub mod error;
pub mod experiment;
pub mod lattice;
pub mod simulator;

pub use error::{Error, Result};
