//! Bayesian online learning in non-stationary streams.
//!
//! A method is assembled from five independent choices: a measurement model
//! ([`measurement`]), an auxiliary variable tracking regime changes, a conditional
//! prior built from it ([`priors`]), a Gaussian posterior update ([`posterior`]) and a
//! weighting over auxiliary values ([`weighting`]). [`agents`] wires them into named
//! methods, [`datagen`] produces the synthetic benchmark streams and [`harness`] runs
//! prequential experiments over them.

pub mod agents;
pub mod datagen;
pub mod error;
pub mod harness;
pub mod measurement;
pub mod numeric;
pub mod posterior;
pub mod priors;
pub mod rng;
pub mod weighting;

pub use error::{BoneError, Result};
pub use numeric::{GaussBelief, LinearDynamics, LogWeight};
