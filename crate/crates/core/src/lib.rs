//! Simulation and analysis toolkit for time-resolved coincidence measurements
//! of photon pairs generated by spontaneous four-wave mixing in a microring.

pub mod axis;
pub mod biphoton;
pub mod coincidence;
pub mod device;
pub mod error;
pub mod lsq;
pub mod schmidt;
pub mod stats;
pub mod tags;
pub mod units;

pub use error::{Error, Result};
