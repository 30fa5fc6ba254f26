//! The two joint losses and the action-value head.
//!
//! Both losses share one advantage term r - m * q per (task, buffer row). The
//! policy loss treats that term as a constant and differentiates only the log
//! probability of the taken action (encoder and actor parameters); the
//! learner loss differentiates the term itself (task weighting and value
//! parameters) with the encoded states held constant.

use ndarray::Array2;

use crate::agent::{EventFeature, TaskId, Transition};
use crate::config::{QActionMode, RunConfig, TargetMode};
use crate::error::{Error, Result};
use crate::importance::{ImportanceParams, ImportanceVars, WeightMatrix};
use crate::nn::{DenseParams, DenseVars, Tape, TimeLstmParams, TimeLstmVars, Var};

use super::params::AgentParams;

/// Probability floor inside log; hits are counted and reported.
pub const PROB_FLOOR: f64 = 1e-12;

/// Drained transitions rearranged into per-task tensors. States are encoded
/// once at assembly time with the then-current encoder and enter the learner
/// loss as constants.
#[derive(Debug, Clone)]
pub struct UpdateBatch {
    pub tasks: Vec<TaskId>,
    /// Per task, per row: the feature window behind each state.
    pub windows: Vec<Vec<Vec<EventFeature>>>,
    /// Per task: rows x d_s encoded states (constants).
    pub states: Vec<Array2<f64>>,
    /// Per task: rows x d_a action vectors fed to the value head.
    pub actions: Vec<Array2<f64>>,
    /// Per task: the slot index actually taken at each row.
    pub action_indices: Vec<Vec<usize>>,
    /// Per task: regression target per row (immediate reward or an in-batch
    /// discounted return).
    pub targets: Vec<Vec<f64>>,
    pub rows: usize,
}

impl UpdateBatch {
    pub fn assemble(
        drained: &[(TaskId, Vec<Transition>)],
        encoder: &TimeLstmParams,
        config: &RunConfig,
    ) -> Result<Self> {
        if drained.is_empty() {
            return Err(Error::Domain("update batch needs at least one task".into()));
        }
        let rows = drained[0].1.len();
        if rows == 0 || drained.iter().any(|(_, b)| b.len() != rows) {
            return Err(Error::Domain("task batches must share one positive length".into()));
        }
        let d_s = encoder.state_dim();
        let mut tasks = Vec::new();
        let mut windows = Vec::new();
        let mut states = Vec::new();
        let mut actions = Vec::new();
        let mut action_indices = Vec::new();
        let mut targets = Vec::new();
        for (task, batch) in drained {
            tasks.push(*task);
            let d_a = batch[0].action_probs.len();
            let mut s = Array2::zeros((rows, d_s));
            let mut a = Array2::zeros((rows, d_a));
            let mut idx = Vec::with_capacity(rows);
            let mut w = Vec::with_capacity(rows);
            for (k, tr) in batch.iter().enumerate() {
                tr.validate()?;
                if tr.action_probs.len() != d_a {
                    return Err(Error::Domain("action dimension varies within a batch".into()));
                }
                let xs: Vec<&[f64]> = tr.window.iter().map(|f| f.x.as_slice()).collect();
                let deltas: Vec<f64> = tr.window.iter().map(|f| f.delta).collect();
                let enc = encoder.encode_value(&xs, &deltas)?;
                for (j, v) in enc.iter().enumerate() {
                    s[[k, j]] = *v;
                }
                match config.q_action {
                    QActionMode::Probs => {
                        for (j, p) in tr.action_probs.iter().enumerate() {
                            a[[k, j]] = *p;
                        }
                    }
                    QActionMode::OneHot => a[[k, tr.action_index]] = 1.0,
                }
                idx.push(tr.action_index);
                w.push(tr.window.clone());
            }
            let t = match config.target {
                TargetMode::Immediate => batch.iter().map(|tr| tr.reward).collect(),
                TargetMode::NStep => discounted_in_batch(batch, config.gamma),
            };
            windows.push(w);
            states.push(s);
            actions.push(a);
            action_indices.push(idx);
            targets.push(t);
        }
        Ok(Self { tasks, windows, states, actions, action_indices, targets, rows })
    }
}

/// Backward-accumulated discounted returns within one lane, restarting after
/// every episode boundary.
fn discounted_in_batch(batch: &[Transition], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; batch.len()];
    let mut acc = 0.0;
    for (i, tr) in batch.iter().enumerate().rev() {
        if tr.end_of_episode {
            acc = 0.0;
        }
        acc = tr.reward + gamma * acc;
        out[i] = acc;
    }
    out
}

/// Value-head graph over a batch: rows of `states` and `actions` are
/// concatenated and mapped to one scalar per row.
pub fn q_value_graph(
    q: &DenseParams,
    tape: &mut Tape,
    vars: &DenseVars,
    states: Var,
    actions: Var,
) -> Result<Var> {
    let joined = tape.concat_cols(states, actions)?;
    if tape.value(joined).ncols() != q.input_dim() {
        return Err(Error::Domain(format!(
            "state + action width {} does not match value head input {}",
            tape.value(joined).ncols(),
            q.input_dim()
        )));
    }
    q.apply(tape, vars, joined)
}

/// Scalar action value for one state/action pair.
pub fn q_value(q: &DenseParams, state: &[f64], action: &[f64]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = q.build(&mut tape);
    let s = tape.leaf_row(state);
    let a = tape.leaf_row(action);
    let out = q_value_graph(q, &mut tape, &vars, s, a)?;
    Ok(tape.scalar(out))
}

/// Constant advantage terms r - m * q for every task and row, computed from
/// the current parameters without building a gradient path.
pub fn advantage_terms(
    params: &AgentParams,
    batch: &UpdateBatch,
    config: &RunConfig,
) -> Result<(Vec<Vec<f64>>, WeightMatrix)> {
    let m = params.importance.weight_matrix(&batch.states, config.importance_axis)?;
    let mut out = Vec::with_capacity(batch.tasks.len());
    for (t, _) in batch.tasks.iter().enumerate() {
        let qv = params.q.forward(
            &ndarray::concatenate(
                ndarray::Axis(1),
                &[batch.states[t].view(), batch.actions[t].view()],
            )
            .map_err(|e| Error::Domain(format!("state/action concat: {e}")))?,
        )?;
        let mut rows = Vec::with_capacity(batch.rows);
        for k in 0..batch.rows {
            let term = batch.targets[t][k] - m.get(k, t) * qv[[k, 0]];
            if !term.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite advantage for task {} row {k}",
                    batch.tasks[t]
                )));
            }
            rows.push(term);
        }
        out.push(rows);
    }
    Ok((out, m))
}

/// Variables the policy loss differentiates.
pub struct PolicyVars {
    pub encoder: TimeLstmVars,
    pub actors: Vec<DenseVars>,
}

impl PolicyVars {
    pub fn build(params: &AgentParams, tape: &mut Tape) -> Self {
        Self {
            encoder: params.encoder.build(tape),
            actors: params.actors.iter().map(|a| a.build(tape)).collect(),
        }
    }

    /// Encoder variables then actor variables; matches the group layout.
    pub fn encoder_all(&self) -> Vec<Var> {
        self.encoder.all()
    }

    pub fn actors_all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for a in &self.actors {
            out.extend(a.all());
        }
        out
    }
}

/// Builds the policy-loss graph: the negative mean of log-probabilities of
/// the taken actions, each scaled by its constant advantage term. Returns
/// the loss variable and how many probabilities hit the floor.
pub fn policy_loss_graph(
    params: &AgentParams,
    tape: &mut Tape,
    vars: &PolicyVars,
    batch: &UpdateBatch,
    advantages: &[Vec<f64>],
) -> Result<(Var, usize)> {
    if advantages.len() != batch.tasks.len()
        || advantages.iter().any(|a| a.len() != batch.rows)
    {
        return Err(Error::Domain("advantage shape does not match the batch".into()));
    }
    let mut floor_hits = 0usize;
    let mut total: Option<Var> = None;
    for (t, _) in batch.tasks.iter().enumerate() {
        let actor = params.actor_for(t);
        let actor_vars = &vars.actors[params.actor_index(t)];
        // encode every window through the trainable path
        let mut state_rows = Vec::with_capacity(batch.rows);
        for w in &batch.windows[t] {
            let xs: Vec<&[f64]> = w.iter().map(|f| f.x.as_slice()).collect();
            let deltas: Vec<f64> = w.iter().map(|f| f.delta).collect();
            state_rows.push(params.encoder.encode(tape, &vars.encoder, &xs, &deltas)?);
        }
        let states = stack_rows(tape, &state_rows)?;
        let probs = actor.apply(tape, actor_vars, states)?;
        let picked = tape.pick_per_row(probs, batch.action_indices[t].clone())?;
        floor_hits += tape.value(picked).iter().filter(|&&p| p < PROB_FLOOR).count();
        let floored = tape.clamp_min(picked, PROB_FLOOR);
        let logp = tape.log(floored);
        let adv = Array2::from_shape_vec(
            (batch.rows, 1),
            advantages[t].clone(),
        )
        .expect("advantage column");
        let adv = tape.leaf(adv);
        let weighted = tape.mul(logp, adv)?;
        let sum = tape.sum_all(weighted);
        total = Some(match total {
            None => sum,
            Some(acc) => tape.add(acc, sum)?,
        });
    }
    let total = total.expect("at least one task");
    let n = (batch.tasks.len() * batch.rows) as f64;
    Ok((tape.scale(total, -1.0 / n), floor_hits))
}

/// Variables the learner loss differentiates.
pub struct LearnerVars {
    pub importance: ImportanceVars,
    pub q: DenseVars,
}

impl LearnerVars {
    pub fn build(params: &AgentParams, tape: &mut Tape) -> Self {
        Self { importance: params.importance.build(tape), q: params.q.build(tape) }
    }
}

/// Builds the learner-loss graph: mean squared advantage with gradients
/// flowing through the weight matrix and the value head. States and actions
/// enter as constants.
pub fn learner_loss_graph(
    importance: &ImportanceParams,
    q: &DenseParams,
    tape: &mut Tape,
    vars: &LearnerVars,
    batch: &UpdateBatch,
    config: &RunConfig,
) -> Result<Var> {
    let state_leaves: Vec<Var> =
        batch.states.iter().map(|s| tape.leaf(s.clone())).collect();
    let m = importance.weight_matrix_graph(
        tape,
        &vars.importance,
        &state_leaves,
        config.importance_axis,
    )?;
    let mut total: Option<Var> = None;
    for (t, _) in batch.tasks.iter().enumerate() {
        let actions = tape.leaf(batch.actions[t].clone());
        let qv = q_value_graph(q, tape, &vars.q, state_leaves[t], actions)?;
        let m_col = tape.pick_per_row(m, vec![t; batch.rows])?;
        let mq = tape.mul(m_col, qv)?;
        let target = Array2::from_shape_vec((batch.rows, 1), batch.targets[t].clone())
            .expect("target column");
        let target = tape.leaf(target);
        let diff = tape.sub(target, mq)?;
        let sq = tape.mul(diff, diff)?;
        let sum = tape.sum_all(sq);
        total = Some(match total {
            None => sum,
            Some(acc) => tape.add(acc, sum)?,
        });
    }
    let total = total.expect("at least one task");
    let n = (batch.tasks.len() * batch.rows) as f64;
    Ok(tape.scale(total, 1.0 / n))
}

/// Loss values at the current parameters.
pub fn policy_loss(
    params: &AgentParams,
    batch: &UpdateBatch,
    config: &RunConfig,
) -> Result<(f64, usize)> {
    let (adv, _) = advantage_terms(params, batch, config)?;
    let mut tape = Tape::new();
    let vars = PolicyVars::build(params, &mut tape);
    let (loss, hits) = policy_loss_graph(params, &mut tape, &vars, batch, &adv)?;
    Ok((tape.scalar(loss), hits))
}

pub fn learner_loss(params: &AgentParams, batch: &UpdateBatch, config: &RunConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = LearnerVars::build(params, &mut tape);
    let loss =
        learner_loss_graph(&params.importance, &params.q, &mut tape, &vars, batch, config)?;
    Ok(tape.scalar(loss))
}

/// Stacks 1-row variables into one matrix via pairwise reduction, keeping the
/// graph shallow for long batches.
fn stack_rows(tape: &mut Tape, rows: &[Var]) -> Result<Var> {
    if rows.is_empty() {
        return Err(Error::Domain("cannot stack zero rows".into()));
    }
    let mut level: Vec<Var> = rows.to_vec();
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        let mut it = level.chunks(2);
        for pair in &mut it {
            next.push(match pair {
                [a] => *a,
                [a, b] => tape.concat_rows(*a, *b)?,
                _ => unreachable!("chunks of 2"),
            });
        }
        level = next;
    }
    Ok(level[0])
}
