//! Core library for OFDM integrated sensing and communication experiments:
//! resource grids and allocation masks, channel synthesis, Fisher
//! information and Cramer-Rao bounds, resource allocation solvers, and
//! delay-Doppler estimators.
//!
//! Conventions used throughout:
//!
//! * Grids are M x N arrays, rows indexed by subcarrier m, columns by
//!   symbol n. Vectorized cell l = m + M*n (frequency fastest).
//! * Phases are referenced to centered indices m_c = m - floor(M/2),
//!   n_c = n - floor(N/2).
//! * Powers are in watts, delays in seconds, Doppler in hertz.

pub mod allocator;
pub mod channel;
pub mod config;
pub mod crb;
pub mod estimator;
pub mod grid;
pub mod io;
pub mod rng;

pub use config::{ExperimentConfig, SolverKind};
pub use grid::{AllocationMask, DopplerNorm, GridError, MaskViolation, ResourceGrid, TargetParams};
