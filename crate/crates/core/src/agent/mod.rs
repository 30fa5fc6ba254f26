//! Featurization, state encoding, action selection and the replay buffer.

pub mod actor;
pub mod buffer;
pub mod features;

pub use actor::{argmax, select_action};
pub use buffer::{ReplayBuffer, TaskId, TaskSet, Transition};
pub use features::{build_feature, encode_state, feature_dim, window_features, EventFeature, NormStats};
