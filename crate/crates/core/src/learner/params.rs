//! The full trainable parameter tuple and its five named groups.
//!
//! Group routing is the core learning invariant: the policy loss updates the
//! encoder and actor groups, the learner loss updates the task-embedding,
//! task-scoring and value groups, and nothing else ever moves.

use rand::Rng;

use crate::config::{ActorMode, RunConfig};
use crate::error::{Error, Result};
use crate::importance::ImportanceParams;
use crate::nn::{Activation, AdamState, DenseParams, TimeLstmParams};

/// The five independently optimized parameter groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Recurrent state encoder (policy loss).
    Encoder,
    /// Actor head(s) (policy loss).
    Actor,
    /// Task-embedding transformer (learner loss).
    TaskEmbed,
    /// Task-scoring head (learner loss).
    TaskScore,
    /// Action-value head (learner loss).
    Value,
}

pub const GROUPS: [ParamGroup; 5] = [
    ParamGroup::Encoder,
    ParamGroup::Actor,
    ParamGroup::TaskEmbed,
    ParamGroup::TaskScore,
    ParamGroup::Value,
];

impl ParamGroup {
    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Encoder => "encoder",
            ParamGroup::Actor => "actor",
            ParamGroup::TaskEmbed => "task_embed",
            ParamGroup::TaskScore => "task_score",
            ParamGroup::Value => "value",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        GROUPS.iter().copied().find(|g| g.name() == name)
    }
}

#[derive(Debug, Clone)]
pub struct AgentParams {
    pub encoder: TimeLstmParams,
    /// One entry in shared mode, one per task otherwise.
    pub actors: Vec<DenseParams>,
    pub importance: ImportanceParams,
    pub q: DenseParams,
}

impl AgentParams {
    pub fn new(config: &RunConfig, input_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let encoder =
            TimeLstmParams::new(input_dim, config.state_dim, config.lstm_activation, rng)?;
        let actor_count = match config.actor_mode {
            ActorMode::Shared => 1,
            ActorMode::PerTaskHeads => config.tasks.count(),
        };
        let mut actors = Vec::with_capacity(actor_count);
        for _ in 0..actor_count {
            actors.push(DenseParams::new(
                &[config.state_dim, config.actor_hidden, config.slot_count],
                &[Activation::Sigmoid, Activation::Softmax],
                rng,
            )?);
        }
        let importance = ImportanceParams::new(
            config.state_dim,
            config.embed_dim,
            config.gtrxl_layers,
            config.gtrxl_heads,
            config.importance_hidden,
            config.buffer_size,
            rng,
        )?;
        let q = DenseParams::new(
            &[config.state_dim + config.slot_count, config.q_hidden, 1],
            &[Activation::Sigmoid, Activation::Identity],
            rng,
        )?;
        Ok(Self { encoder, actors, importance, q })
    }

    /// Actor head serving the task at canonical position `task_pos`.
    pub fn actor_for(&self, task_pos: usize) -> &DenseParams {
        if self.actors.len() == 1 {
            &self.actors[0]
        } else {
            &self.actors[task_pos]
        }
    }

    /// Index into `actors` for canonical task position `task_pos`.
    pub fn actor_index(&self, task_pos: usize) -> usize {
        if self.actors.len() == 1 {
            0
        } else {
            task_pos
        }
    }

    pub fn group(&self, g: ParamGroup) -> Vec<f64> {
        match g {
            ParamGroup::Encoder => self.encoder.flat(),
            ParamGroup::Actor => {
                let mut out = Vec::new();
                for a in &self.actors {
                    out.extend(a.flat());
                }
                out
            }
            ParamGroup::TaskEmbed => self.importance.gtrxl.flat(),
            ParamGroup::TaskScore => self.importance.score.flat(),
            ParamGroup::Value => self.q.flat(),
        }
    }

    pub fn set_group(&mut self, g: ParamGroup, flat: &[f64]) -> Result<()> {
        match g {
            ParamGroup::Encoder => self.encoder.set_flat(flat),
            ParamGroup::Actor => {
                let want: usize = self.actors.iter().map(|a| a.flat_len()).sum();
                if flat.len() != want {
                    return Err(Error::Domain(format!(
                        "actor group of {} values, expected {want}",
                        flat.len()
                    )));
                }
                let mut offset = 0;
                for a in &mut self.actors {
                    let len = a.flat_len();
                    a.set_flat(&flat[offset..offset + len])?;
                    offset += len;
                }
                Ok(())
            }
            ParamGroup::TaskEmbed => self.importance.gtrxl.set_flat(flat),
            ParamGroup::TaskScore => self.importance.score.set_flat(flat),
            ParamGroup::Value => self.q.set_flat(flat),
        }
    }

    pub fn group_len(&self, g: ParamGroup) -> usize {
        match g {
            ParamGroup::Encoder => self.encoder.flat_len(),
            ParamGroup::Actor => self.actors.iter().map(|a| a.flat_len()).sum(),
            ParamGroup::TaskEmbed => self.importance.gtrxl.flat_len(),
            ParamGroup::TaskScore => self.importance.score.flat_len(),
            ParamGroup::Value => self.q.flat_len(),
        }
    }
}

/// One Adam accumulator per parameter group, in [`GROUPS`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub states: Vec<AdamState>,
}

impl OptimizerState {
    pub fn new(params: &AgentParams) -> Self {
        Self { states: GROUPS.iter().map(|&g| AdamState::new(params.group_len(g))).collect() }
    }

    pub fn state_mut(&mut self, g: ParamGroup) -> &mut AdamState {
        let idx = GROUPS.iter().position(|&x| x == g).expect("known group");
        &mut self.states[idx]
    }

    pub fn state(&self, g: ParamGroup) -> &AdamState {
        let idx = GROUPS.iter().position(|&x| x == g).expect("known group");
        &self.states[idx]
    }
}
