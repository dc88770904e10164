//! Online teacher-student learning for two-layer soft-committee networks.
//!
//! The crate simulates a student network learning a fixed teacher from a
//! stream of random inputs, with plain SGD or hidden-unit dropout, and tracks
//! the macroscopic order parameters that determine the generalization error.

pub mod error;
pub mod harness;
pub mod orderparams;
pub mod learning;
pub mod model;
pub mod rng;

pub use error::{Result, SimError};
