//! Normalized capped importance sampling over greedy rollouts.
//!
//! The likelihood ratio between the learned policy and the behaviour policy
//! accumulates in log space; only the capped weight is exponentiated, so long
//! trajectories cannot overflow on the way to the cap.

use crate::agent::TaskId;
use crate::config::NcisMode;
use crate::error::{Error, Result};

/// One greedy evaluation step: the probability each policy assigned to the
/// chosen slot plus both observed rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub target_prob: f64,
    pub behaviour_prob: f64,
    pub reward_engagement: f64,
    pub reward_adoption: f64,
}

/// A full evaluation rollout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryRecord {
    pub steps: Vec<TrajectoryStep>,
}

impl TrajectoryRecord {
    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::Domain("trajectory must contain at least one step".into()));
        }
        for (t, s) in self.steps.iter().enumerate() {
            for (label, p) in [("target", s.target_prob), ("behaviour", s.behaviour_prob)] {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(Error::Domain(format!(
                        "step {t}: {label} probability {p} outside (0, 1]"
                    )));
                }
            }
            if !s.reward_engagement.is_finite() || !s.reward_adoption.is_finite() {
                return Err(Error::Domain(format!("step {t}: non-finite reward")));
            }
        }
        Ok(())
    }

    fn rewards(&self, task: TaskId) -> Vec<f64> {
        self.steps
            .iter()
            .map(|s| match task {
                TaskId::Engagement => s.reward_engagement,
                TaskId::Adoption => s.reward_adoption,
            })
            .collect()
    }
}

/// Off-policy reward estimate for one task over one trajectory.
///
/// Trajectory mode caps a single whole-horizon ratio, which makes every
/// step's weight identical and the estimate collapse to the plain reward
/// mean; stepwise mode caps the growing prefix product per step.
pub fn ncis(traj: &TrajectoryRecord, task: TaskId, delta: f64, mode: NcisMode) -> Result<f64> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Domain(format!("cap {delta} must be positive and finite")));
    }
    traj.validate()?;
    let rewards = traj.rewards(task);
    let log_delta = delta.ln();
    let weights: Vec<f64> = match mode {
        NcisMode::Trajectory => {
            let log_ratio: f64 = traj
                .steps
                .iter()
                .map(|s| s.target_prob.ln() - s.behaviour_prob.ln())
                .sum();
            let w = log_ratio.min(log_delta).exp();
            vec![w; rewards.len()]
        }
        NcisMode::Stepwise => {
            let mut prefix = 0.0;
            traj.steps
                .iter()
                .map(|s| {
                    prefix += s.target_prob.ln() - s.behaviour_prob.ln();
                    prefix.min(log_delta).exp()
                })
                .collect()
        }
    };
    let denom: f64 = weights.iter().sum();
    if !(denom > 0.0) {
        return Err(Error::Numeric(format!(
            "importance weights sum to {denom}; every ratio underflowed"
        )));
    }
    let num: f64 = weights.iter().zip(&rewards).map(|(w, r)| w * r).sum();
    Ok(num / denom)
}
