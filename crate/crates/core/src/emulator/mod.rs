//! Learned environment: a behaviour model fitted to a historical event log
//! and the episodic simulation built on top of it.

pub mod env;
pub mod io;
pub mod model;

pub use env::{reset, EnvState, StepResult};
pub use io::{load_model, save_model};
pub use model::{fit_behaviour_model, BehaviourModel, EmulatorLosses, EmulatorOutputs};
