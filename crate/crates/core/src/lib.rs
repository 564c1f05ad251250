//! Simulation and numerical analysis of piecewise deterministic Markov
//! processes (PDMPs).
//!
//! * [`flow`]: deterministic flows, hazards, exact jump-time sampling.
//! * [`process`]: the generic PDMP state machine and trajectory simulation.
//! * [`models`]: constructors for concrete biological models and the
//!   individual-based population engine.
//! * [`analysis`]: stationary densities and stability/sweeping
//!   classification of two-state switching systems, Hörmander checks.
//! * [`density`]: finite-volume solvers for the forward equations.
//! * [`stats`]: empirical densities, distances, goodness of fit.

pub mod analysis;
pub mod density;
pub mod error;
pub mod field;
pub mod flow;
pub mod models;
pub mod numerics;
pub mod process;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use field::ScalarField;
pub use flow::{Domain, Flow, Hazard, SamplingMethod};
pub use process::{PdmpModel, ProcessState, Trajectory};
