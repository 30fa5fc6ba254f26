//! Per-task FIFO replay buffer with synchronized drain.

use serde::{Deserialize, Serialize};

use super::features::EventFeature;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    Engagement,
    Adoption,
}

impl TaskId {
    pub fn name(self) -> &'static str {
        match self {
            TaskId::Engagement => "engagement",
            TaskId::Adoption => "adoption",
        }
    }
}

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSet {
    Both,
    EngagementOnly,
    AdoptionOnly,
}

impl TaskSet {
    /// Active tasks in canonical order (engagement, adoption).
    pub fn active(self) -> &'static [TaskId] {
        match self {
            TaskSet::Both => &[TaskId::Engagement, TaskId::Adoption],
            TaskSet::EngagementOnly => &[TaskId::Engagement],
            TaskSet::AdoptionOnly => &[TaskId::Adoption],
        }
    }

    pub fn contains(self, task: TaskId) -> bool {
        self.active().contains(&task)
    }

    pub fn count(self) -> usize {
        self.active().len()
    }
}

/// One environment interaction as stored for learning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub task: TaskId,
    pub window: Vec<EventFeature>,
    pub action_index: usize,
    /// Full actor output at rollout time.
    pub action_probs: Vec<f64>,
    pub reward: f64,
    /// Behaviour policy's probability of the chosen slot.
    pub behaviour_prob: f64,
    pub next_window: Vec<EventFeature>,
    /// True when this was the final step of its episode; n-step returns
    /// reset here.
    pub end_of_episode: bool,
}

impl Transition {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.action_probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Data(format!("action probabilities sum to {sum}")));
        }
        if self.action_index >= self.action_probs.len() {
            return Err(Error::Data(format!(
                "action index {} outside the {}-slot vector",
                self.action_index,
                self.action_probs.len()
            )));
        }
        if !self.reward.is_finite() {
            return Err(Error::Data(format!("non-finite reward {}", self.reward)));
        }
        if !(self.behaviour_prob > 0.0 && self.behaviour_prob <= 1.0) {
            return Err(Error::Data(format!(
                "behaviour probability {} outside (0, 1]",
                self.behaviour_prob
            )));
        }
        Ok(())
    }
}

/// FIFO storage per task; a drain is only allowed once every active task
/// holds exactly `capacity` transitions, and it clears the buffer.
#[derive(Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    tasks: TaskSet,
    engagement: Vec<Transition>,
    adoption: Vec<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, tasks: TaskSet) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Domain("buffer capacity must be positive".into()));
        }
        Ok(Self { capacity, tasks, engagement: Vec::new(), adoption: Vec::new() })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    fn lane(&mut self, task: TaskId) -> &mut Vec<Transition> {
        match task {
            TaskId::Engagement => &mut self.engagement,
            TaskId::Adoption => &mut self.adoption,
        }
    }

    pub fn len(&self, task: TaskId) -> usize {
        match task {
            TaskId::Engagement => self.engagement.len(),
            TaskId::Adoption => self.adoption.len(),
        }
    }

    pub fn push(&mut self, transition: Transition) -> Result<()> {
        if !self.tasks.contains(transition.task) {
            return Err(Error::State(format!(
                "task {} is not active in this run",
                transition.task
            )));
        }
        transition.validate()?;
        let capacity = self.capacity;
        let lane = self.lane(transition.task);
        if lane.len() >= capacity {
            return Err(Error::State(format!(
                "{} lane already holds {capacity} transitions; drain before pushing",
                transition.task
            )));
        }
        lane.push(transition);
        Ok(())
    }

    pub fn ready(&self) -> bool {
        self.tasks.active().iter().all(|&t| self.len(t) == self.capacity)
    }

    /// Returns each active task's batch in insertion order and clears the
    /// buffer.
    pub fn drain(&mut self) -> Result<Vec<(TaskId, Vec<Transition>)>> {
        if !self.ready() {
            return Err(Error::State(format!(
                "drain before ready (engagement {}/{}, adoption {}/{})",
                self.engagement.len(),
                self.capacity,
                self.adoption.len(),
                self.capacity
            )));
        }
        let mut out = Vec::with_capacity(self.tasks.count());
        for &task in self.tasks.active() {
            out.push((task, std::mem::take(self.lane(task))));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn transition(task: TaskId, reward: f64) -> Transition {
        Transition {
            task,
            window: vec![],
            action_index: 0,
            action_probs: vec![0.5, 0.5],
            reward,
            behaviour_prob: 0.25,
            next_window: vec![],
            end_of_episode: false,
        }
    }

    #[test]
    fn ready_after_both_tasks_fill() {
        let mut b = ReplayBuffer::new(2, TaskSet::Both).unwrap();
        b.push(transition(TaskId::Engagement, 1.0)).unwrap();
        b.push(transition(TaskId::Engagement, 2.0)).unwrap();
        assert!(!b.ready());
        b.push(transition(TaskId::Adoption, 3.0)).unwrap();
        assert!(!b.ready());
        b.push(transition(TaskId::Adoption, 4.0)).unwrap();
        assert!(b.ready());
    }

    #[test]
    fn drain_preserves_fifo_order_and_clears() {
        let mut b = ReplayBuffer::new(3, TaskSet::Both).unwrap();
        for k in 0..3 {
            b.push(transition(TaskId::Engagement, k as f64)).unwrap();
            b.push(transition(TaskId::Adoption, 10.0 + k as f64)).unwrap();
        }
        let batches = b.drain().unwrap();
        assert_eq!(batches.len(), 2);
        assert_eq!(batches[0].0, TaskId::Engagement);
        let rewards: Vec<f64> = batches[0].1.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![0.0, 1.0, 2.0]);
        let rewards: Vec<f64> = batches[1].1.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![10.0, 11.0, 12.0]);
        assert_eq!(b.len(TaskId::Engagement), 0);
        assert_eq!(b.len(TaskId::Adoption), 0);
        assert!(!b.ready());
    }

    #[test]
    fn push_beyond_capacity_is_a_state_error() {
        let mut b = ReplayBuffer::new(1, TaskSet::Both).unwrap();
        b.push(transition(TaskId::Engagement, 1.0)).unwrap();
        let err = b.push(transition(TaskId::Engagement, 2.0)).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn drain_before_ready_is_a_state_error() {
        let mut b = ReplayBuffer::new(1, TaskSet::Both).unwrap();
        b.push(transition(TaskId::Engagement, 1.0)).unwrap();
        let err = b.drain().unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn single_task_mode_ignores_the_other_lane() {
        let mut b = ReplayBuffer::new(2, TaskSet::EngagementOnly).unwrap();
        assert!(b.push(transition(TaskId::Adoption, 1.0)).is_err());
        b.push(transition(TaskId::Engagement, 1.0)).unwrap();
        b.push(transition(TaskId::Engagement, 2.0)).unwrap();
        assert!(b.ready());
        let batches = b.drain().unwrap();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].0, TaskId::Engagement);
    }

    #[test]
    fn rejects_malformed_transitions() {
        let mut b = ReplayBuffer::new(2, TaskSet::Both).unwrap();
        let mut t = transition(TaskId::Engagement, 1.0);
        t.action_probs = vec![0.9, 0.3];
        assert!(b.push(t).is_err());
        let mut t = transition(TaskId::Engagement, f64::NAN);
        t.reward = f64::NAN;
        assert!(b.push(t).is_err());
        let mut t = transition(TaskId::Engagement, 1.0);
        t.behaviour_prob = 0.0;
        assert!(b.push(t).is_err());
        let mut t = transition(TaskId::Engagement, 1.0);
        t.action_index = 5;
        assert!(b.push(t).is_err());
    }
}
