//! Deep hybrid active inference for a planar tool-use task.

pub mod agent;
pub mod belief;
pub mod config;
pub mod discrete;
pub mod env;
pub mod error;
pub mod harness;
pub mod hybrid;
pub mod ie;
pub mod kinematics;
pub mod svg;
pub mod trace;
pub mod tracking;

pub use error::{Error, Result};
