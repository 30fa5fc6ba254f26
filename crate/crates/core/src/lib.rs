//! Scheduling agent for recurring live events: event data model, a learned
//! environment emulator, a multi-task policy-gradient learner, and off-policy
//! evaluation.

pub mod agent;
pub mod config;
pub mod emulator;
pub mod error;
pub mod eval;
pub mod importance;
pub mod learner;
pub mod events;
pub mod nn;
pub mod seed;

pub use error::{Error, Result};
