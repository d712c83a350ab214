//! Bulk-surface phase-field simulator for lipid raft formation coupled to
//! cholesterol exchange with a bulk reservoir.

pub mod bulk;
pub mod error;
pub mod harness;
pub mod model;
pub mod potential;
pub mod steady;
pub mod stepper;
pub mod surface;

pub use error::{Error, Result};
