//! The episode loop: roll each task's environment forward under the current
//! policy, fill the replay buffer, and run the interleaved updates whenever
//! it drains.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{
    select_action, window_features, NormStats, ReplayBuffer, TaskId, Transition,
};
use crate::config::RunConfig;
use crate::emulator::{reset, BehaviourModel};
use crate::error::{Error, Result};
use crate::events::{Event, EventLog};
use crate::nn::tape::softmax_rows;
use crate::seed::derive_seed;

use super::losses::UpdateBatch;
use super::params::{AgentParams, OptimizerState};
use super::update::{apply_updates, UpdateReport};

/// One task's training curve sample for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeCurve {
    pub episode: usize,
    pub task: TaskId,
    /// Undiscounted per-step average over the episode.
    pub mean_reward: f64,
    /// Sum of gamma^t r_t over the episode; gamma plays no other role under
    /// the immediate-reward target.
    pub discounted_return: f64,
    /// Mean policy loss over the updates applied during this episode; the
    /// previous episode's value is carried forward when none landed here.
    pub loss_policy: f64,
    pub loss_learner: f64,
}

/// Everything training produces: parameters, optimizer state, the feature
/// scaling they assume, and the per-episode curves.
#[derive(Debug, Clone)]
pub struct TrainedAgent {
    pub params: AgentParams,
    pub opt: OptimizerState,
    pub config: RunConfig,
    pub stats: NormStats,
    pub input_dim: usize,
    pub seed: u64,
    pub curves: Vec<EpisodeCurve>,
    /// Every update step's losses in order, across all episodes.
    pub updates: Vec<UpdateReport>,
}

impl TrainedAgent {
    /// Actor probabilities for a raw event window, for the task at canonical
    /// position `task_pos`.
    pub fn action_probs(&self, window: &[Event], task_pos: usize) -> Result<Vec<f64>> {
        let feats = window_features(window, &self.stats, self.config.slot_count);
        let xs: Vec<&[f64]> = feats.iter().map(|f| f.x.as_slice()).collect();
        let deltas: Vec<f64> = feats.iter().map(|f| f.delta).collect();
        let state = self.params.encoder.encode_value(&xs, &deltas)?;
        let row = ndarray::Array2::from_shape_vec((1, state.len()), state.to_vec())
            .expect("row shape");
        let out = self.params.actor_for(task_pos).forward(&row)?;
        Ok(out.row(0).to_vec())
    }
}

/// Uniform probabilities over the slots; the baseline policy evaluation
/// compares against.
pub fn uniform_probs(slot_count: usize) -> Vec<f64> {
    let zeros = ndarray::Array2::zeros((1, slot_count));
    softmax_rows(&zeros).row(0).to_vec()
}

fn check_compatibility(config: &RunConfig, model: &BehaviourModel, log: &EventLog) -> Result<()> {
    if config.window != model.window() {
        return Err(Error::Config(format!(
            "config window {} does not match the fitted behaviour window {}",
            config.window,
            model.window()
        )));
    }
    if config.slot_count != model.slot_count() {
        return Err(Error::Config(format!(
            "config slot count {} does not match the behaviour model's {}",
            config.slot_count,
            model.slot_count()
        )));
    }
    if log.slot_count != config.slot_count {
        return Err(Error::Config(format!(
            "log slot count {} does not match config {}",
            log.slot_count, config.slot_count
        )));
    }
    Ok(())
}

/// Trains the scheduling agent against the fitted behaviour model.
///
/// Every task runs its own environment; the lanes advance in lockstep and
/// the replay buffer drains into an update as soon as every lane has filled
/// its quota. Leftover transitions stay buffered across episode boundaries
/// (their episode-end flags keep return bootstrapping honest).
pub fn train(
    config: &RunConfig,
    model: &BehaviourModel,
    log: &EventLog,
    seed: u64,
) -> Result<TrainedAgent> {
    config.validate()?;
    log.validate()?;
    check_compatibility(config, model, log)?;
    let input_dim = model.input_dim();
    let stats = model.stats().clone();

    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "agent-init", 0));
    let mut params = AgentParams::new(config, input_dim, &mut init_rng)?;
    let mut opt = OptimizerState::new(&params);
    let mut buffer = ReplayBuffer::new(config.buffer_size, config.tasks)?;

    let tasks = config.tasks.active();
    let mut curves = Vec::with_capacity(config.episodes * tasks.len());
    let mut updates = Vec::new();
    let mut last_policy_loss = 0.0;
    let mut last_learner_loss = 0.0;

    for episode in 0..config.episodes {
        let mut envs = Vec::with_capacity(tasks.len());
        let mut explore = Vec::with_capacity(tasks.len());
        for &task in tasks {
            envs.push(reset(model, log, config.horizon, derive_seed(seed, task.name(), episode as u64))?);
            explore.push(ChaCha8Rng::seed_from_u64(derive_seed(
                seed,
                &format!("explore-{}", task.name()),
                episode as u64,
            )));
        }
        let mut rewards: Vec<Vec<f64>> = vec![Vec::with_capacity(config.horizon); tasks.len()];
        let mut reports: Vec<UpdateReport> = Vec::new();

        for _t in 0..config.horizon {
            for (pos, &task) in tasks.iter().enumerate() {
                let window = window_features(envs[pos].window(), &stats, config.slot_count);
                let xs: Vec<&[f64]> = window.iter().map(|f| f.x.as_slice()).collect();
                let deltas: Vec<f64> = window.iter().map(|f| f.delta).collect();
                let state = params.encoder.encode_value(&xs, &deltas)?;
                let (action, probs) = select_action(
                    state.as_slice().expect("contiguous state"),
                    params.actor_for(pos),
                    config.epsilon,
                    &mut explore[pos],
                )?;
                let step = envs[pos].step(model, action)?;
                let reward = match task {
                    TaskId::Engagement => step.engagement,
                    TaskId::Adoption => step.adoption,
                };
                let next_window = window_features(envs[pos].window(), &stats, config.slot_count);
                buffer.push(Transition {
                    task,
                    window,
                    action_index: action,
                    action_probs: probs,
                    reward,
                    behaviour_prob: step.behaviour_prob,
                    next_window,
                    end_of_episode: step.done,
                })?;
                rewards[pos].push(reward);
            }
            if buffer.ready() {
                let drained = buffer.drain()?;
                let batch = UpdateBatch::assemble(&drained, &params.encoder, config)?;
                reports.push(apply_updates(&mut params, &mut opt, &batch, config)?);
            }
        }

        if let Some(mean_policy) = mean_of(reports.iter().map(|r| r.policy_loss)) {
            last_policy_loss = mean_policy;
        }
        if let Some(mean_learner) = mean_of(reports.iter().map(|r| r.learner_loss)) {
            last_learner_loss = mean_learner;
        }
        updates.extend(reports.iter().copied());
        for (pos, &task) in tasks.iter().enumerate() {
            let total: f64 = rewards[pos].iter().sum();
            let discounted: f64 = rewards[pos]
                .iter()
                .enumerate()
                .map(|(t, r)| config.gamma.powi(t as i32) * r)
                .sum();
            curves.push(EpisodeCurve {
                episode,
                task,
                mean_reward: total / config.horizon as f64,
                discounted_return: discounted,
                loss_policy: last_policy_loss,
                loss_learner: last_learner_loss,
            });
        }
    }

    Ok(TrainedAgent { params, opt, config: config.clone(), stats, input_dim, seed, curves, updates })
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let collected: Vec<f64> = values.collect();
    if collected.is_empty() {
        None
    } else {
        Some(collected.iter().sum::<f64>() / collected.len() as f64)
    }
}

/// Writes curves as `episode,task,mean_reward,discounted_return,loss_policy,
/// loss_learner`, one row per task per episode.
pub fn write_curves(path: &Path, curves: &[EpisodeCurve]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["episode", "task", "mean_reward", "discounted_return", "loss_policy", "loss_learner"])
        .map_err(|e| Error::Data(format!("write header: {e}")))?;
    for c in curves {
        w.write_record([
            c.episode.to_string(),
            c.task.name().to_string(),
            format!("{:.17e}", c.mean_reward),
            format!("{:.17e}", c.discounted_return),
            format!("{:.17e}", c.loss_policy),
            format!("{:.17e}", c.loss_learner),
        ])
        .map_err(|e| Error::Data(format!("write row: {e}")))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_curves(path: &Path) -> Result<Vec<EpisodeCurve>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| Error::Data(format!("read curve row: {e}")))?;
        if row.len() != 6 {
            return Err(Error::Data(format!("curve row has {} fields, expected 6", row.len())));
        }
        let task = match &row[1] {
            "engagement" => TaskId::Engagement,
            "adoption" => TaskId::Adoption,
            other => return Err(Error::Data(format!("unknown task name {other}"))),
        };
        let num = |i: usize| -> Result<f64> {
            row[i]
                .parse::<f64>()
                .map_err(|e| Error::Data(format!("curve field {i} ({}): {e}", &row[i])))
        };
        out.push(EpisodeCurve {
            episode: row[0]
                .parse::<usize>()
                .map_err(|e| Error::Data(format!("episode ({}): {e}", &row[0])))?,
            task,
            mean_reward: num(2)?,
            discounted_return: num(3)?,
            loss_policy: num(4)?,
            loss_learner: num(5)?,
        });
    }
    Ok(out)
}
