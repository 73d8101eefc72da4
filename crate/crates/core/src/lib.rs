//! Beamforming for intelligent reflecting surfaces with a practical,
//! phase-dependent reflection amplitude.

pub mod channel;
pub mod error;
pub mod harness;
pub mod mu_solver;
pub mod numopt;
pub mod phasemodel;
pub mod su_solver;

pub use error::{Error, Result};
pub use phasemodel::{PhaseShiftModel, ReflectionState};
