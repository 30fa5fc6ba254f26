//! Joint training of the scheduling policy and its task-weighted critic.
//!
//! Two interleaved updates share one replay batch: the policy step moves the
//! state encoder and actor heads along advantage-weighted log probabilities,
//! and the learner step regresses the weighted action values toward observed
//! rewards, moving the task embeddings, the row scorer and the value head.
//! Each step sees the other's parameters as constants.

pub mod checkpoint;
pub mod losses;
pub mod params;
pub mod train;
pub mod update;

pub use checkpoint::{load_agent, save_agent};
pub use losses::{
    advantage_terms, learner_loss, policy_loss, q_value, UpdateBatch, PROB_FLOOR,
};
pub use params::{AgentParams, OptimizerState, ParamGroup, GROUPS};
pub use train::{read_curves, train, uniform_probs, write_curves, EpisodeCurve, TrainedAgent};
pub use update::{apply_learner_update, apply_policy_update, apply_updates, UpdateReport};
