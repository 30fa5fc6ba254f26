//! Run configuration: one flat key=value file drives generation, emulator
//! fitting, training and evaluation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::TaskSet;
use crate::error::{Error, Result};
use crate::events::{SynthConfig, TimezoneComponent};
use crate::nn::LstmActivation;

/// Which dimension the importance softmax normalizes over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceAxis {
    /// Across tasks within each buffer row (rows of M sum to 1).
    Tasks,
    /// Across the buffer rows within each task column.
    Rows,
}

/// Whether both tasks share one actor head or own one each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorMode {
    Shared,
    PerTaskHeads,
}

/// How the capped importance ratio accumulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NcisMode {
    /// One ratio for the whole trajectory (the weights then cancel).
    Trajectory,
    /// Ratio capped per step over the growing prefix product.
    Stepwise,
}

/// Regression target of the learner loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// The immediate reward, as the loss definitions state.
    Immediate,
    /// Discounted return accumulated within the batch, reset at episode ends.
    NStep,
}

/// Action representation fed to the value network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QActionMode {
    /// Full probability vector from the actor.
    Probs,
    /// One-hot of the sampled slot.
    OneHot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    /// Action space size d_a.
    pub slot_count: usize,
    /// Encoder state width d_s.
    pub state_dim: usize,
    /// Task-embedding width d_y.
    pub embed_dim: usize,
    /// Events per state window l.
    pub window: usize,
    /// Replay capacity per task l_b.
    pub buffer_size: usize,
    pub epsilon: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub episodes: usize,
    pub horizon: usize,
    pub tasks: TaskSet,
    pub actor_hidden: usize,
    pub q_hidden: usize,
    pub importance_hidden: usize,
    pub gtrxl_layers: usize,
    pub gtrxl_heads: usize,
    pub lstm_activation: LstmActivation,
    pub importance_axis: ImportanceAxis,
    pub actor_mode: ActorMode,
    pub ncis_mode: NcisMode,
    pub target: TargetMode,
    pub q_action: QActionMode,
    /// Importance-ratio cap.
    pub delta: f64,
    pub trials: usize,
    pub emulator_epochs: usize,
    pub emulator_lr: f64,
    pub emulator_hidden: usize,
    pub emulator_batch: usize,
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            slot_count: 24,
            state_dim: 128,
            embed_dim: 32,
            window: 15,
            buffer_size: 128,
            epsilon: 0.1,
            gamma: 0.92,
            alpha: 0.001,
            episodes: 300,
            horizon: 200,
            tasks: TaskSet::Both,
            actor_hidden: 64,
            q_hidden: 64,
            importance_hidden: 32,
            gtrxl_layers: 2,
            gtrxl_heads: 2,
            lstm_activation: LstmActivation::Sigmoid,
            importance_axis: ImportanceAxis::Tasks,
            actor_mode: ActorMode::Shared,
            ncis_mode: NcisMode::Stepwise,
            target: TargetMode::Immediate,
            q_action: QActionMode::Probs,
            delta: 10.0,
            trials: 5,
            emulator_epochs: 40,
            emulator_lr: 0.005,
            emulator_hidden: 64,
            emulator_batch: 32,
            train_frac: 0.7,
            val_frac: 0.1,
            test_frac: 0.2,
            synth: SynthConfig::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key} from {value:?}")))
}

fn parse_mixture(value: &str) -> Result<Vec<TimezoneComponent>> {
    let mut out = Vec::new();
    for part in value.split(',') {
        let fields: Vec<&str> = part.split(':').collect();
        if fields.len() != 4 {
            return Err(Error::Config(format!(
                "mixture component {part:?} must be label:weight:preferred_slot:spread"
            )));
        }
        out.push(TimezoneComponent {
            label: fields[0].to_string(),
            weight: parse("synth_mixture weight", fields[1])?,
            preferred_slot: parse("synth_mixture preferred_slot", fields[2])?,
            spread: parse("synth_mixture spread", fields[3])?,
        });
    }
    Ok(out)
}

fn mixture_to_string(mixture: &[TimezoneComponent]) -> String {
    mixture
        .iter()
        .map(|c| format!("{}:{}:{}:{}", c.label, c.weight, c.preferred_slot, c.spread))
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// Applies one key=value override.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "slot_count" => {
                self.slot_count = parse(key, value)?;
                // the generator schedules into the same action space
                self.synth.slot_count = self.slot_count;
            }
            "state_dim" => self.state_dim = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "window" => self.window = parse(key, value)?,
            "buffer_size" => self.buffer_size = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "episodes" => self.episodes = parse(key, value)?,
            "horizon" => self.horizon = parse(key, value)?,
            "tasks" => {
                self.tasks = match value {
                    "both" => TaskSet::Both,
                    "engagement" => TaskSet::EngagementOnly,
                    "adoption" => TaskSet::AdoptionOnly,
                    _ => {
                        return Err(Error::Config(format!(
                            "tasks must be both|engagement|adoption, got {value:?}"
                        )))
                    }
                }
            }
            "actor_hidden" => self.actor_hidden = parse(key, value)?,
            "q_hidden" => self.q_hidden = parse(key, value)?,
            "importance_hidden" => self.importance_hidden = parse(key, value)?,
            "gtrxl_layers" => self.gtrxl_layers = parse(key, value)?,
            "gtrxl_heads" => self.gtrxl_heads = parse(key, value)?,
            "lstm_activation" => {
                self.lstm_activation = match value {
                    "sigmoid" => LstmActivation::Sigmoid,
                    "tanh" => LstmActivation::Tanh,
                    _ => {
                        return Err(Error::Config(format!(
                            "lstm_activation must be sigmoid|tanh, got {value:?}"
                        )))
                    }
                }
            }
            "importance_axis" => {
                self.importance_axis = match value {
                    "tasks" => ImportanceAxis::Tasks,
                    "rows" => ImportanceAxis::Rows,
                    _ => {
                        return Err(Error::Config(format!(
                            "importance_axis must be tasks|rows, got {value:?}"
                        )))
                    }
                }
            }
            "actor_mode" => {
                self.actor_mode = match value {
                    "shared" => ActorMode::Shared,
                    "per_task_heads" => ActorMode::PerTaskHeads,
                    _ => {
                        return Err(Error::Config(format!(
                            "actor_mode must be shared|per_task_heads, got {value:?}"
                        )))
                    }
                }
            }
            "ncis_mode" => {
                self.ncis_mode = match value {
                    "trajectory" => NcisMode::Trajectory,
                    "stepwise" => NcisMode::Stepwise,
                    _ => {
                        return Err(Error::Config(format!(
                            "ncis_mode must be trajectory|stepwise, got {value:?}"
                        )))
                    }
                }
            }
            "target" => {
                self.target = match value {
                    "immediate" => TargetMode::Immediate,
                    "n_step" => TargetMode::NStep,
                    _ => {
                        return Err(Error::Config(format!(
                            "target must be immediate|n_step, got {value:?}"
                        )))
                    }
                }
            }
            "q_action" => {
                self.q_action = match value {
                    "probs" => QActionMode::Probs,
                    "one_hot" => QActionMode::OneHot,
                    _ => {
                        return Err(Error::Config(format!(
                            "q_action must be probs|one_hot, got {value:?}"
                        )))
                    }
                }
            }
            "delta" => self.delta = parse(key, value)?,
            "trials" => self.trials = parse(key, value)?,
            "emulator_epochs" => self.emulator_epochs = parse(key, value)?,
            "emulator_lr" => self.emulator_lr = parse(key, value)?,
            "emulator_hidden" => self.emulator_hidden = parse(key, value)?,
            "emulator_batch" => self.emulator_batch = parse(key, value)?,
            "train_frac" => self.train_frac = parse(key, value)?,
            "val_frac" => self.val_frac = parse(key, value)?,
            "test_frac" => self.test_frac = parse(key, value)?,
            "synth_viewers" => self.synth.viewers = parse(key, value)?,
            "synth_events" => self.synth.events = parse(key, value)?,
            "synth_mixture" => self.synth.mixture = parse_mixture(value)?,
            "synth_engagement_width" => self.synth.engagement_width = parse(key, value)?,
            "synth_engagement_floor" => self.synth.engagement_floor = parse(key, value)?,
            "synth_join_peak" => self.synth.join_peak = parse(key, value)?,
            "synth_join_floor" => self.synth.join_floor = parse(key, value)?,
            "synth_duration_min" => self.synth.duration_min = parse(key, value)?,
            "synth_schedule_spread" => self.synth.schedule_spread = parse(key, value)?,
            "synth_schedule_uniform" => self.synth.schedule_uniform = parse(key, value)?,
            "synth_schedule_drift" => self.synth.schedule_drift = parse(key, value)?,
            "synth_overstay_prob" => self.synth.overstay_prob = parse(key, value)?,
            "synth_date_gap_max" => self.synth.date_gap_max = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Parses a flat key=value file ('#' starts a comment).
    pub fn from_file(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::default();
        for (i, line) in raw.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{} line {}: expected key=value", path.display(), i + 1))
            })?;
            config.apply(key.trim(), value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let positive_dims = [
            ("slot_count", self.slot_count),
            ("state_dim", self.state_dim),
            ("embed_dim", self.embed_dim),
            ("window", self.window),
            ("buffer_size", self.buffer_size),
            ("episodes", self.episodes),
            ("horizon", self.horizon),
            ("actor_hidden", self.actor_hidden),
            ("q_hidden", self.q_hidden),
            ("importance_hidden", self.importance_hidden),
            ("gtrxl_layers", self.gtrxl_layers),
            ("gtrxl_heads", self.gtrxl_heads),
            ("trials", self.trials),
            ("emulator_epochs", self.emulator_epochs),
            ("emulator_hidden", self.emulator_hidden),
            ("emulator_batch", self.emulator_batch),
        ];
        for (name, v) in positive_dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.slot_count < 2 {
            return Err(Error::Config("slot_count must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if !(self.alpha > 0.0) || !(self.emulator_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Config(format!("delta {} must be positive", self.delta)));
        }
        if self.embed_dim % self.gtrxl_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by gtrxl_heads {}",
                self.embed_dim, self.gtrxl_heads
            )));
        }
        if !(self.train_frac > 0.0 && self.val_frac > 0.0 && self.test_frac > 0.0) {
            return Err(Error::Config("split fractions must be positive".into()));
        }
        if (self.train_frac + self.val_frac + self.test_frac - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split fractions must sum to 1".into()));
        }
        self.synth.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.synth.slot_count != self.slot_count {
            return Err(Error::Config(format!(
                "generator slot count {} disagrees with slot_count {}",
                self.synth.slot_count, self.slot_count
            )));
        }
        Ok(())
    }

    /// Canonical key=value listing, sorted by key.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let tasks = match self.tasks {
            TaskSet::Both => "both",
            TaskSet::EngagementOnly => "engagement",
            TaskSet::AdoptionOnly => "adoption",
        };
        let lstm = match self.lstm_activation {
            LstmActivation::Sigmoid => "sigmoid",
            LstmActivation::Tanh => "tanh",
        };
        let axis = match self.importance_axis {
            ImportanceAxis::Tasks => "tasks",
            ImportanceAxis::Rows => "rows",
        };
        let actor_mode = match self.actor_mode {
            ActorMode::Shared => "shared",
            ActorMode::PerTaskHeads => "per_task_heads",
        };
        let ncis = match self.ncis_mode {
            NcisMode::Trajectory => "trajectory",
            NcisMode::Stepwise => "stepwise",
        };
        let target = match self.target {
            TargetMode::Immediate => "immediate",
            TargetMode::NStep => "n_step",
        };
        let q_action = match self.q_action {
            QActionMode::Probs => "probs",
            QActionMode::OneHot => "one_hot",
        };
        let mut kv: Vec<(String, String)> = vec![
            ("seed".into(), self.seed.to_string()),
            ("slot_count".into(), self.slot_count.to_string()),
            ("state_dim".into(), self.state_dim.to_string()),
            ("embed_dim".into(), self.embed_dim.to_string()),
            ("window".into(), self.window.to_string()),
            ("buffer_size".into(), self.buffer_size.to_string()),
            ("epsilon".into(), self.epsilon.to_string()),
            ("gamma".into(), self.gamma.to_string()),
            ("alpha".into(), self.alpha.to_string()),
            ("episodes".into(), self.episodes.to_string()),
            ("horizon".into(), self.horizon.to_string()),
            ("tasks".into(), tasks.into()),
            ("actor_hidden".into(), self.actor_hidden.to_string()),
            ("q_hidden".into(), self.q_hidden.to_string()),
            ("importance_hidden".into(), self.importance_hidden.to_string()),
            ("gtrxl_layers".into(), self.gtrxl_layers.to_string()),
            ("gtrxl_heads".into(), self.gtrxl_heads.to_string()),
            ("lstm_activation".into(), lstm.into()),
            ("importance_axis".into(), axis.into()),
            ("actor_mode".into(), actor_mode.into()),
            ("ncis_mode".into(), ncis.into()),
            ("target".into(), target.into()),
            ("q_action".into(), q_action.into()),
            ("delta".into(), self.delta.to_string()),
            ("trials".into(), self.trials.to_string()),
            ("emulator_epochs".into(), self.emulator_epochs.to_string()),
            ("emulator_lr".into(), self.emulator_lr.to_string()),
            ("emulator_hidden".into(), self.emulator_hidden.to_string()),
            ("emulator_batch".into(), self.emulator_batch.to_string()),
            ("train_frac".into(), self.train_frac.to_string()),
            ("val_frac".into(), self.val_frac.to_string()),
            ("test_frac".into(), self.test_frac.to_string()),
            ("synth_viewers".into(), self.synth.viewers.to_string()),
            ("synth_events".into(), self.synth.events.to_string()),
            ("synth_mixture".into(), mixture_to_string(&self.synth.mixture)),
            ("synth_engagement_width".into(), self.synth.engagement_width.to_string()),
            ("synth_engagement_floor".into(), self.synth.engagement_floor.to_string()),
            ("synth_join_peak".into(), self.synth.join_peak.to_string()),
            ("synth_join_floor".into(), self.synth.join_floor.to_string()),
            ("synth_duration_min".into(), self.synth.duration_min.to_string()),
            ("synth_schedule_spread".into(), self.synth.schedule_spread.to_string()),
            ("synth_schedule_uniform".into(), self.synth.schedule_uniform.to_string()),
            ("synth_schedule_drift".into(), self.synth.schedule_drift.to_string()),
            ("synth_overstay_prob".into(), self.synth.overstay_prob.to_string()),
            ("synth_date_gap_max".into(), self.synth.date_gap_max.to_string()),
        ];
        kv.sort_by(|a, b| a.0.cmp(&b.0));
        kv
    }

    /// SHA-256 over the canonical key=value form.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (k, v) in self.to_kv() {
            hasher.update(k.as_bytes());
            hasher.update(b"=");
            hasher.update(v.as_bytes());
            hasher.update(b"\n");
        }
        format!("{:x}", hasher.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn file_overrides_and_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(
            &path,
            "# comment\nepsilon = 0.25\ntasks=engagement\nsynth_mixture=one:1.0:9:0.0\n\nbuffer_size=16\n",
        )
        .unwrap();
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.epsilon, 0.25);
        assert_eq!(cfg.tasks, TaskSet::EngagementOnly);
        assert_eq!(cfg.buffer_size, 16);
        assert_eq!(cfg.synth.mixture.len(), 1);
        assert_eq!(cfg.synth.mixture[0].preferred_slot, 9);
        // untouched keys keep defaults
        assert_eq!(cfg.gamma, 0.92);
    }

    #[test]
    fn unknown_key_is_config_error() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply("no_such_key", "1").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.apply("epsilon", "often"), Err(Error::Config(_))));
        assert!(matches!(cfg.apply("tasks", "everything"), Err(Error::Config(_))));
        cfg.epsilon = 3.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.gamma = 0.5;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn kv_round_trip_reproduces_config() {
        let mut cfg = RunConfig::default();
        cfg.epsilon = 0.2;
        cfg.tasks = TaskSet::AdoptionOnly;
        cfg.target = TargetMode::NStep;
        let mut rebuilt = RunConfig::default();
        for (k, v) in cfg.to_kv() {
            rebuilt.apply(&k, &v).unwrap();
        }
        assert_eq!(cfg, rebuilt);
    }
}
