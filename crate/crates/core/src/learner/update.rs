//! One optimization step over a drained batch.
//!
//! Both gradient sets are evaluated against the same parameter snapshot, all
//! five are checked finite, and only then are any Adam steps taken, so a
//! failed update leaves parameters and optimizer state untouched.

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::Tape;

use super::losses::{
    advantage_terms, learner_loss_graph, policy_loss_graph, LearnerVars, PolicyVars, UpdateBatch,
};
use super::params::{AgentParams, OptimizerState, ParamGroup};

/// What one update did, for curves and logs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateReport {
    pub policy_loss: f64,
    pub learner_loss: f64,
    /// Action probabilities that hit the floor inside the policy log.
    pub floor_hits: usize,
}

/// Gradients for the policy step: encoder then actor, flattened per group.
pub fn compute_policy_grads(
    params: &AgentParams,
    batch: &UpdateBatch,
    config: &RunConfig,
) -> Result<(f64, usize, Vec<f64>, Vec<f64>)> {
    let (adv, _) = advantage_terms(params, batch, config)?;
    let mut tape = Tape::new();
    let vars = PolicyVars::build(params, &mut tape);
    let (loss, floor_hits) = policy_loss_graph(params, &mut tape, &vars, batch, &adv)?;
    let grads = tape.backward(loss)?;
    Ok((
        tape.scalar(loss),
        floor_hits,
        grads.flat(&vars.encoder_all()),
        grads.flat(&vars.actors_all()),
    ))
}

/// Gradients for the learner step: task embeddings, row scorer, value head.
pub fn compute_learner_grads(
    params: &AgentParams,
    batch: &UpdateBatch,
    config: &RunConfig,
) -> Result<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let mut tape = Tape::new();
    let vars = LearnerVars::build(params, &mut tape);
    let loss = learner_loss_graph(&params.importance, &params.q, &mut tape, &vars, batch, config)?;
    let grads = tape.backward(loss)?;
    Ok((
        tape.scalar(loss),
        grads.flat(&vars.importance.gtrxl.all()),
        grads.flat(&vars.importance.score.all()),
        grads.flat(&vars.q.all()),
    ))
}

fn ensure_finite(group: ParamGroup, grads: &[f64]) -> Result<()> {
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite gradient in {} parameters; update aborted",
            group.name()
        )));
    }
    Ok(())
}

fn step_group(
    params: &mut AgentParams,
    opt: &mut OptimizerState,
    group: ParamGroup,
    grads: &[f64],
    lr: f64,
) -> Result<()> {
    let mut flat = params.group(group);
    opt.state_mut(group).step(&mut flat, grads, lr)?;
    params.set_group(group, &flat)
}

/// Policy step alone: moves only the encoder and actor groups.
pub fn apply_policy_update(
    params: &mut AgentParams,
    opt: &mut OptimizerState,
    batch: &UpdateBatch,
    config: &RunConfig,
) -> Result<(f64, usize)> {
    let (loss, floor_hits, g_enc, g_act) = compute_policy_grads(params, batch, config)?;
    ensure_finite(ParamGroup::Encoder, &g_enc)?;
    ensure_finite(ParamGroup::Actor, &g_act)?;
    step_group(params, opt, ParamGroup::Encoder, &g_enc, config.alpha)?;
    step_group(params, opt, ParamGroup::Actor, &g_act, config.alpha)?;
    Ok((loss, floor_hits))
}

/// Learner step alone: moves only the weighting and value groups.
pub fn apply_learner_update(
    params: &mut AgentParams,
    opt: &mut OptimizerState,
    batch: &UpdateBatch,
    config: &RunConfig,
) -> Result<f64> {
    let (loss, g_embed, g_score, g_q) = compute_learner_grads(params, batch, config)?;
    ensure_finite(ParamGroup::TaskEmbed, &g_embed)?;
    ensure_finite(ParamGroup::TaskScore, &g_score)?;
    ensure_finite(ParamGroup::Value, &g_q)?;
    step_group(params, opt, ParamGroup::TaskEmbed, &g_embed, config.alpha)?;
    step_group(params, opt, ParamGroup::TaskScore, &g_score, config.alpha)?;
    step_group(params, opt, ParamGroup::Value, &g_q, config.alpha)?;
    Ok(loss)
}

/// Both steps from one snapshot. Every gradient is validated before any
/// parameter moves; a non-finite value anywhere aborts the whole update.
pub fn apply_updates(
    params: &mut AgentParams,
    opt: &mut OptimizerState,
    batch: &UpdateBatch,
    config: &RunConfig,
) -> Result<UpdateReport> {
    let (policy_loss, floor_hits, g_enc, g_act) = compute_policy_grads(params, batch, config)?;
    let (learner_loss, g_embed, g_score, g_q) = compute_learner_grads(params, batch, config)?;
    ensure_finite(ParamGroup::Encoder, &g_enc)?;
    ensure_finite(ParamGroup::Actor, &g_act)?;
    ensure_finite(ParamGroup::TaskEmbed, &g_embed)?;
    ensure_finite(ParamGroup::TaskScore, &g_score)?;
    ensure_finite(ParamGroup::Value, &g_q)?;
    step_group(params, opt, ParamGroup::Encoder, &g_enc, config.alpha)?;
    step_group(params, opt, ParamGroup::Actor, &g_act, config.alpha)?;
    step_group(params, opt, ParamGroup::TaskEmbed, &g_embed, config.alpha)?;
    step_group(params, opt, ParamGroup::TaskScore, &g_score, config.alpha)?;
    step_group(params, opt, ParamGroup::Value, &g_q, config.alpha)?;
    Ok(UpdateReport { policy_loss, learner_loss, floor_hits })
}
