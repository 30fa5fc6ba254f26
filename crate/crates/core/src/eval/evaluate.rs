//! Multi-trial greedy evaluation against the behaviour model.

use serde::{Deserialize, Serialize};

use crate::agent::{argmax, TaskId};
use crate::config::RunConfig;
use crate::emulator::{reset, BehaviourModel};
use crate::error::{Error, Result};
use crate::events::{Event, EventLog};
use crate::learner::{uniform_probs, TrainedAgent};
use crate::seed::derive_seed;

use super::ncis::{ncis, TrajectoryRecord, TrajectoryStep};

/// One trial's two reward estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub eng_ncis: f64,
    pub ad_ncis: f64,
}

/// Evaluation output: per-trial estimates plus their means, keyed by the
/// configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub eng_ncis: f64,
    pub ad_ncis: f64,
    pub per_trial: Vec<TrialMetrics>,
    pub delta: f64,
    pub trials: usize,
    pub seed_list: Vec<u64>,
    pub config_hash: String,
}

/// Rolls the environment forward for its whole horizon, always taking the
/// policy's argmax slot, and records both policies' probabilities for the
/// chosen slot alongside both rewards.
pub fn rollout_greedy(
    policy: &mut dyn FnMut(&[Event]) -> Result<Vec<f64>>,
    model: &BehaviourModel,
    log: &EventLog,
    horizon: usize,
    seed: u64,
) -> Result<TrajectoryRecord> {
    let mut env = reset(model, log, horizon, seed)?;
    let mut steps = Vec::with_capacity(horizon);
    while !env.done() {
        let probs = policy(env.window())?;
        if probs.len() != model.slot_count() {
            return Err(Error::Domain(format!(
                "policy produced {} probabilities for {} slots",
                probs.len(),
                model.slot_count()
            )));
        }
        let action = argmax(&probs);
        let step = env.step(model, action)?;
        steps.push(TrajectoryStep {
            target_prob: probs[action],
            behaviour_prob: step.behaviour_prob,
            reward_engagement: step.engagement,
            reward_adoption: step.adoption,
        });
    }
    Ok(TrajectoryRecord { steps })
}

/// Repeated greedy rollouts under any probability-producing policy. Trial i
/// resets from its own derived seed; the record keeps the whole list.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_policy(
    policy: &mut dyn FnMut(&[Event]) -> Result<Vec<f64>>,
    model: &BehaviourModel,
    log: &EventLog,
    config: &RunConfig,
    seed: u64,
) -> Result<MetricsRecord> {
    if config.trials == 0 {
        return Err(Error::Config("evaluation needs at least one trial".into()));
    }
    let mut per_trial = Vec::with_capacity(config.trials);
    let mut seed_list = Vec::with_capacity(config.trials);
    for i in 0..config.trials {
        let trial_seed = derive_seed(seed, "trial", i as u64);
        let traj = rollout_greedy(policy, model, log, config.horizon, trial_seed)?;
        per_trial.push(TrialMetrics {
            eng_ncis: ncis(&traj, TaskId::Engagement, config.delta, config.ncis_mode)?,
            ad_ncis: ncis(&traj, TaskId::Adoption, config.delta, config.ncis_mode)?,
        });
        seed_list.push(trial_seed);
    }
    let n = per_trial.len() as f64;
    Ok(MetricsRecord {
        eng_ncis: per_trial.iter().map(|t| t.eng_ncis).sum::<f64>() / n,
        ad_ncis: per_trial.iter().map(|t| t.ad_ncis).sum::<f64>() / n,
        per_trial,
        delta: config.delta,
        trials: config.trials,
        seed_list,
        config_hash: config.hash(),
    })
}

/// Evaluates a trained agent with its own config (trial count, cap,
/// estimator mode, horizon). Rollouts are greedy; in per-task-head mode the
/// first active task's head drives the single rollout policy.
pub fn evaluate(
    agent: &TrainedAgent,
    model: &BehaviourModel,
    log: &EventLog,
    seed: u64,
) -> Result<MetricsRecord> {
    if agent.input_dim != model.input_dim() {
        return Err(Error::Domain(format!(
            "agent features of width {} do not fit the behaviour model's {}",
            agent.input_dim,
            model.input_dim()
        )));
    }
    if agent.config.slot_count != model.slot_count() || agent.config.window != model.window() {
        return Err(Error::Domain(format!(
            "agent trained for {} slots / window {}, model provides {} / {}",
            agent.config.slot_count,
            agent.config.window,
            model.slot_count(),
            model.window()
        )));
    }
    let mut policy = |window: &[Event]| agent.action_probs(window, 0);
    evaluate_policy(&mut policy, model, log, &agent.config, seed)
}

/// The uniform-random baseline measured through the same estimator.
pub fn evaluate_uniform(
    model: &BehaviourModel,
    log: &EventLog,
    config: &RunConfig,
    seed: u64,
) -> Result<MetricsRecord> {
    let probs = uniform_probs(config.slot_count);
    let mut policy = |_: &[Event]| Ok(probs.clone());
    evaluate_policy(&mut policy, model, log, config, seed)
}
