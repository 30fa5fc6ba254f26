//! Multi-head behaviour model: from an l-event window it predicts the next
//! event's slot choice (the behaviour policy), engagement and adoption.
//!
//! Architecture: the window's feature vectors are mean-pooled and passed
//! through a two-hidden-layer trunk. The slot head maps the trunk output to
//! slot probabilities; the two reward heads additionally see the candidate
//! slot as a one-hot, so the environment can respond to the agent's action.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{window_features, NormStats};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::events::{Event, EventLog};
use crate::nn::{Activation, AdamState, DenseParams, Tape, Var};
use crate::seed::derive_seed;

pub(crate) const REWARD_HIDDEN: usize = 32;
/// Slot-head floor applied before renormalization; keeps the off-policy
/// denominator away from zero.
pub(crate) const SLOT_PROB_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmulatorLosses {
    pub engagement_mse: f64,
    pub adoption_mse: f64,
    pub slot_cross_entropy: f64,
}

#[derive(Debug, Clone)]
pub struct BehaviourModel {
    pub(crate) trunk: DenseParams,
    pub(crate) slot_head: DenseParams,
    pub(crate) engagement_head: DenseParams,
    pub(crate) adoption_head: DenseParams,
    pub(crate) stats: NormStats,
    pub(crate) window: usize,
    pub(crate) slot_count: usize,
    pub(crate) input_dim: usize,
    pub(crate) hidden: usize,
    pub(crate) losses: EmulatorLosses,
}

#[derive(Debug, Clone)]
pub struct EmulatorOutputs {
    pub engagement: f64,
    pub adoption: f64,
    /// Floored and renormalized; sums to 1, every entry positive.
    pub slot_probs: Vec<f64>,
}

struct HeadVars {
    trunk: crate::nn::DenseVars,
    slot: crate::nn::DenseVars,
    engagement: crate::nn::DenseVars,
    adoption: crate::nn::DenseVars,
}

impl BehaviourModel {
    pub(crate) fn new_untrained(
        input_dim: usize,
        hidden: usize,
        slot_count: usize,
        window: usize,
        stats: NormStats,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            trunk: DenseParams::new(
                &[input_dim, hidden, hidden],
                &[Activation::Sigmoid, Activation::Sigmoid],
                rng,
            )?,
            slot_head: DenseParams::new(&[hidden, slot_count], &[Activation::Softmax], rng)?,
            engagement_head: DenseParams::new(
                &[hidden + slot_count, REWARD_HIDDEN, 1],
                &[Activation::Sigmoid, Activation::Sigmoid],
                rng,
            )?,
            adoption_head: DenseParams::new(
                &[hidden + slot_count, REWARD_HIDDEN, 1],
                &[Activation::Sigmoid, Activation::Softplus],
                rng,
            )?,
            stats,
            window,
            slot_count,
            input_dim,
            hidden,
            losses: EmulatorLosses {
                engagement_mse: f64::NAN,
                adoption_mse: f64::NAN,
                slot_cross_entropy: f64::NAN,
            },
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn slot_count(&self) -> usize {
        self.slot_count
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub(crate) fn set_losses(&mut self, losses: EmulatorLosses) {
        self.losses = losses;
    }

    pub fn losses(&self) -> &EmulatorLosses {
        &self.losses
    }

    /// Mean-pooled feature row for one window of events.
    fn pooled_features(&self, window: &[Event]) -> Result<Vec<f64>> {
        if window.len() != self.window {
            return Err(Error::Domain(format!(
                "window of {} events, model expects {}",
                window.len(),
                self.window
            )));
        }
        let feats = window_features(window, &self.stats, self.slot_count);
        let mut pooled = vec![0.0; self.input_dim];
        for f in &feats {
            if f.x.len() != self.input_dim {
                return Err(Error::Domain(format!(
                    "feature dim {} does not match model input {}",
                    f.x.len(),
                    self.input_dim
                )));
            }
            for (acc, v) in pooled.iter_mut().zip(&f.x) {
                *acc += v;
            }
        }
        for v in &mut pooled {
            *v /= feats.len() as f64;
        }
        Ok(pooled)
    }

    fn build_vars(&self, tape: &mut Tape) -> HeadVars {
        HeadVars {
            trunk: self.trunk.build(tape),
            slot: self.slot_head.build(tape),
            engagement: self.engagement_head.build(tape),
            adoption: self.adoption_head.build(tape),
        }
    }

    /// Graph from pooled inputs (batch rows) and per-row candidate slots to
    /// (slot_probs, engagement, adoption) variables.
    fn forward_graph(
        &self,
        tape: &mut Tape,
        vars: &HeadVars,
        pooled: Var,
        candidate_slots: &[usize],
    ) -> Result<(Var, Var, Var)> {
        let rows = tape.value(pooled).nrows();
        if candidate_slots.len() != rows {
            return Err(Error::Domain("candidate slot count mismatch".into()));
        }
        let trunk_out = self.trunk.apply(tape, &vars.trunk, pooled)?;
        let slot_probs = self.slot_head.apply(tape, &vars.slot, trunk_out)?;
        let mut one_hot = Array2::zeros((rows, self.slot_count));
        for (i, &s) in candidate_slots.iter().enumerate() {
            if s >= self.slot_count {
                return Err(Error::Domain(format!(
                    "slot {s} outside [0, {})",
                    self.slot_count
                )));
            }
            one_hot[[i, s]] = 1.0;
        }
        let one_hot = tape.leaf(one_hot);
        let head_in = tape.concat_cols(trunk_out, one_hot)?;
        let eng = self.engagement_head.apply(tape, &vars.engagement, head_in)?;
        let ado = self.adoption_head.apply(tape, &vars.adoption, head_in)?;
        Ok((slot_probs, eng, ado))
    }

    /// Predictions for one window and candidate slot; runs the same forward
    /// path as fitting.
    pub fn outputs(&self, window: &[Event], candidate_slot: usize) -> Result<EmulatorOutputs> {
        let pooled = self.pooled_features(window)?;
        let mut tape = Tape::new();
        let vars = self.build_vars(&mut tape);
        let pooled = tape.leaf_row(&pooled);
        let (slot_probs, eng, ado) = self.forward_graph(&mut tape, &vars, pooled, &[candidate_slot])?;
        let raw: Vec<f64> = tape.value(slot_probs).row(0).to_vec();
        Ok(EmulatorOutputs {
            engagement: tape.scalar(eng),
            adoption: tape.scalar(ado),
            slot_probs: floor_and_renormalize(&raw),
        })
    }

    /// Behaviour policy probabilities for a window.
    pub fn slot_probs(&self, window: &[Event]) -> Result<Vec<f64>> {
        Ok(self.outputs(window, 0)?.slot_probs)
    }

    pub(crate) fn flat(&self) -> Vec<Vec<f64>> {
        vec![
            self.trunk.flat(),
            self.slot_head.flat(),
            self.engagement_head.flat(),
            self.adoption_head.flat(),
        ]
    }

    pub(crate) fn set_flat(&mut self, groups: &[Vec<f64>]) -> Result<()> {
        if groups.len() != 4 {
            return Err(Error::Data(format!("expected 4 parameter groups, got {}", groups.len())));
        }
        self.trunk.set_flat(&groups[0])?;
        self.slot_head.set_flat(&groups[1])?;
        self.engagement_head.set_flat(&groups[2])?;
        self.adoption_head.set_flat(&groups[3])?;
        Ok(())
    }
}

pub(crate) fn floor_and_renormalize(probs: &[f64]) -> Vec<f64> {
    let floored: Vec<f64> = probs.iter().map(|&p| p.max(SLOT_PROB_FLOOR)).collect();
    let sum: f64 = floored.iter().sum();
    floored.into_iter().map(|p| p / sum).collect()
}

struct TrainingSet {
    /// One pooled feature row per example.
    pooled: Array2<f64>,
    target_slots: Vec<usize>,
    target_u: Vec<f64>,
    target_v: Vec<f64>,
}

fn build_training_set(model: &BehaviourModel, log: &EventLog) -> Result<TrainingSet> {
    let l = model.window;
    let count = log.len() - l;
    let mut pooled = Array2::zeros((count, model.input_dim));
    let mut target_slots = Vec::with_capacity(count);
    let mut target_u = Vec::with_capacity(count);
    let mut target_v = Vec::with_capacity(count);
    for (row, t) in (l..log.len()).enumerate() {
        let window = &log.events[t - l..t];
        let p = model.pooled_features(window)?;
        for (j, v) in p.iter().enumerate() {
            pooled[[row, j]] = *v;
        }
        let next = &log.events[t];
        target_slots.push(next.slot);
        target_u.push(next.u);
        target_v.push(next.v);
    }
    Ok(TrainingSet { pooled, target_slots, target_u, target_v })
}

/// Combined loss over the given example rows. Returns the loss variable plus
/// the per-head components as values.
fn batch_loss(
    model: &BehaviourModel,
    tape: &mut Tape,
    vars: &HeadVars,
    set: &TrainingSet,
    rows: &[usize],
) -> Result<(Var, EmulatorLosses)> {
    let b = rows.len();
    let mut pooled = Array2::zeros((b, model.input_dim));
    let mut slots = Vec::with_capacity(b);
    let mut u = Array2::zeros((b, 1));
    let mut v = Array2::zeros((b, 1));
    for (i, &r) in rows.iter().enumerate() {
        pooled.row_mut(i).assign(&set.pooled.row(r));
        slots.push(set.target_slots[r]);
        u[[i, 0]] = set.target_u[r];
        v[[i, 0]] = set.target_v[r];
    }
    let pooled = tape.leaf(pooled);
    let (slot_probs, eng, ado) = model.forward_graph(tape, vars, pooled, &slots)?;

    let u_t = tape.leaf(u);
    let du = tape.sub(eng, u_t)?;
    let du2 = tape.mul(du, du)?;
    let mse_u = tape.mean_all(du2);

    let v_t = tape.leaf(v);
    let dv = tape.sub(ado, v_t)?;
    let dv2 = tape.mul(dv, dv)?;
    let mse_v = tape.mean_all(dv2);

    let picked = tape.pick_per_row(slot_probs, slots)?;
    let picked = tape.clamp_min(picked, 1e-12);
    let logp = tape.log(picked);
    let mean_logp = tape.mean_all(logp);
    let ce = tape.scale(mean_logp, -1.0);

    let uv = tape.add(mse_u, mse_v)?;
    let loss = tape.add(uv, ce)?;
    let parts = EmulatorLosses {
        engagement_mse: tape.scalar(mse_u),
        adoption_mse: tape.scalar(mse_v),
        slot_cross_entropy: tape.scalar(ce),
    };
    Ok((loss, parts))
}

/// Fits the behaviour model on a training log. Deterministic given the seed:
/// initialization, epoch shuffles and minibatch order all derive from it.
pub fn fit_behaviour_model(
    train_log: &EventLog,
    config: &RunConfig,
    seed: u64,
) -> Result<BehaviourModel> {
    train_log.validate()?;
    let l = config.window;
    if train_log.len() < l + 1 {
        return Err(Error::Domain(format!(
            "log of {} events is shorter than window + 1 = {}",
            train_log.len(),
            l + 1
        )));
    }
    let stats = NormStats::from_log(train_log)?;
    let input_dim = crate::agent::features::feature_dim(train_log.vocab.size());
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "emulator-init", 0));
    let mut model = BehaviourModel::new_untrained(
        input_dim,
        config.emulator_hidden,
        train_log.slot_count,
        l,
        stats,
        &mut init_rng,
    )?;

    let set = build_training_set(&model, train_log)?;
    let example_count = set.target_slots.len();
    let batch = config.emulator_batch.min(example_count);

    let flat_lens: Vec<usize> = model.flat().iter().map(|g| g.len()).collect();
    let mut optimizers: Vec<AdamState> = flat_lens.iter().map(|&n| AdamState::new(n)).collect();

    for epoch in 0..config.emulator_epochs {
        let mut order: Vec<usize> = (0..example_count).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "emulator-epoch", epoch as u64));
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let mut tape = Tape::new();
            let vars = model.build_vars(&mut tape);
            let (loss, _) = batch_loss(&model, &mut tape, &vars, &set, chunk)?;
            let grads = tape.backward(loss)?;
            let var_groups = [
                vars.trunk.all(),
                vars.slot.all(),
                vars.engagement.all(),
                vars.adoption.all(),
            ];
            let mut groups = model.flat();
            for (g, (vars_g, opt)) in var_groups.iter().zip(optimizers.iter_mut()).enumerate() {
                let grad = grads.flat(vars_g);
                opt.step(&mut groups[g], &grad, config.emulator_lr)?;
            }
            model.set_flat(&groups)?;
        }
    }

    // final per-head losses over the full training set
    let mut tape = Tape::new();
    let vars = model.build_vars(&mut tape);
    let all_rows: Vec<usize> = (0..example_count).collect();
    let (_, parts) = batch_loss(&model, &mut tape, &vars, &set, &all_rows)?;
    model.losses = parts;
    Ok(model)
}
