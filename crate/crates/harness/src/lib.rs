//! Experiment orchestration for the teacher-student curriculum simulator:
//! configuration, task filtering, the SOAR and baseline arms, student
//! evaluation, reports and the external-backend protocol.

pub mod arms;
pub mod bridge;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod layout;
pub mod report;
pub mod soar;
pub mod split;
pub mod store;

pub use config::{Mixing, Profile, RunConfig};
pub use error::{HarnessError, Result};
