//! Episodic environment wrapped around a fitted behaviour model.
//!
//! An episode starts from a window sampled uniformly from a real log and then
//! unrolls synthetically: each step the agent picks a slot, the model predicts
//! the audience response, and the predicted event is appended to the window.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::features::feature_dim;
use crate::error::{Error, Result};
use crate::events::{Event, EventLog};

use super::model::BehaviourModel;

/// Rolling window plus episode bookkeeping.
#[derive(Debug, Clone)]
pub struct EnvState {
    window: Vec<Event>,
    steps_taken: usize,
    horizon: usize,
    next_date: i64,
    done: bool,
}

/// Outcome of one environment step.
#[derive(Debug, Clone)]
pub struct StepResult {
    /// Predicted engagement of the scheduled event, in (0, 1).
    pub engagement: f64,
    /// Predicted adoption of the scheduled event, >= 0.
    pub adoption: f64,
    /// Behaviour-policy probability of the chosen slot, in (0, 1].
    pub behaviour_prob: f64,
    pub done: bool,
}

/// Left-pad placeholder preceding the first real event of a short history.
fn pad_event(reference: &Event, d_z: usize, date_index: i64, ordinal: usize) -> Event {
    Event {
        event_id: format!("pad{ordinal:03}"),
        slot: 0,
        n: 1,
        m: reference.m,
        u: 0.0,
        v: 0.0,
        z: vec![1.0 / d_z as f64; d_z],
        date_index,
    }
}

/// Starts an episode from a uniformly sampled position of `log`. The window
/// holds the `model.window()` events ending at that position; histories
/// shorter than the window are left-padded with placeholder events.
pub fn reset(
    model: &BehaviourModel,
    log: &EventLog,
    horizon: usize,
    seed: u64,
) -> Result<EnvState> {
    log.validate()?;
    if log.is_empty() {
        return Err(Error::Domain("cannot reset from an empty log".into()));
    }
    if horizon == 0 {
        return Err(Error::Config("episode horizon must be at least 1".into()));
    }
    if log.slot_count != model.slot_count() {
        return Err(Error::Domain(format!(
            "log has {} slots, model {}",
            log.slot_count,
            model.slot_count()
        )));
    }
    let d_z = log.vocab.size();
    if feature_dim(d_z) != model.input_dim() {
        return Err(Error::Domain(format!(
            "log features have dimension {}, model expects {}",
            feature_dim(d_z),
            model.input_dim()
        )));
    }

    let l = model.window();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.gen_range(0..log.len());

    let real_from = (start + 1).saturating_sub(l);
    let real: Vec<Event> = log.events[real_from..=start].to_vec();
    let pad_count = l - real.len();
    let first = &real[0];
    let mut window = Vec::with_capacity(l);
    for k in 0..pad_count {
        let date = first.date_index - (pad_count - k) as i64;
        window.push(pad_event(first, d_z, date, k));
    }
    window.extend(real);

    let next_date = window.last().expect("window is non-empty").date_index + 1;
    Ok(EnvState { window, steps_taken: 0, horizon, next_date, done: false })
}

impl EnvState {
    pub fn window(&self) -> &[Event] {
        &self.window
    }

    pub fn done(&self) -> bool {
        self.done
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Schedules the next event in `slot` and advances the window by the
    /// model's predicted outcome. Audience size, duration and timezone mix
    /// are carried forward from the latest event.
    pub fn step(&mut self, model: &BehaviourModel, slot: usize) -> Result<StepResult> {
        if self.done {
            return Err(Error::State("episode already finished".into()));
        }
        if slot >= model.slot_count() {
            return Err(Error::Domain(format!(
                "slot {slot} outside [0, {})",
                model.slot_count()
            )));
        }
        let out = model.outputs(&self.window, slot)?;
        if !out.engagement.is_finite() || !out.adoption.is_finite() {
            return Err(Error::Numeric(format!(
                "model produced non-finite rewards ({}, {})",
                out.engagement, out.adoption
            )));
        }
        let behaviour_prob = out.slot_probs[slot];
        debug_assert!(behaviour_prob > 0.0 && behaviour_prob <= 1.0);

        let last = self.window.last().expect("window is non-empty");
        let next = Event {
            event_id: format!("env{:05}", self.steps_taken),
            slot,
            n: last.n,
            m: last.m,
            u: out.engagement.clamp(0.0, 1.0),
            v: out.adoption.max(0.0),
            z: last.z.clone(),
            date_index: self.next_date,
        };
        self.window.remove(0);
        self.window.push(next);
        self.next_date += 1;
        self.steps_taken += 1;
        self.done = self.steps_taken >= self.horizon;

        Ok(StepResult {
            engagement: out.engagement,
            adoption: out.adoption,
            behaviour_prob,
            done: self.done,
        })
    }
}
