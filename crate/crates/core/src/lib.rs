//! Simulation and analysis toolkit for quantum key distribution with a
//! room-temperature telecom single-photon source using time-bin and phase
//! encoding.
//!
//! The crate is organised along the physical chain and the post-processing
//! that follows it:
//!
//! - [`source`]: photon-number statistics and the multi-photon bound
//! - [`optics`]: time-bin/phase states, interferometer visibility, PMD
//! - [`channel`]: fibre loss, noise and the closed-form gains/error rates
//! - [`simulate`]: reproducible per-pulse Monte Carlo producing tallies
//! - [`protocol`]: sifting, background correction, RFI statistics
//! - [`keyrate`]: finite-size secure key rate and loss sweeps
//! - [`correlate`]: coincidence histograms and g2 fitting
//! - [`config`]: the flat `key = value` run configuration
//! - [`cli`]: the `qkdsim` front end

pub mod channel;
pub mod cli;
pub mod config;
pub mod correlate;
pub mod error;
pub mod keyrate;
pub mod optics;
pub mod protocol;
pub mod simulate;
pub mod source;

pub use error::{Error, Result};
