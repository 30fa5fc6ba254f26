//! Synthetic session-log generator.
//!
//! Viewers live in timezones drawn from a mixture; each viewer has a
//! preferred slot. A viewer's attendance fraction is a unimodal function of
//! the circular distance between the event slot and their preferred slot,
//! and their join probability follows the same shape, so engagement and
//! adoption both respond to scheduling. The generator records its own
//! per-event engagement/adoption so aggregation can be round-tripped against
//! it, plus the slot that maximizes expected attendee engagement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EventMeta, TimezoneVocab, ViewerSession};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimezoneComponent {
    pub label: String,
    pub weight: f64,
    pub preferred_slot: usize,
    /// Standard deviation (in slots) of viewer preference around the
    /// component's preferred slot.
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub viewers: usize,
    pub events: usize,
    pub slot_count: usize,
    pub mixture: Vec<TimezoneComponent>,
    /// Width (slots) of the unimodal attendance-fraction curve.
    pub engagement_width: f64,
    /// Attendance fraction far from the preferred slot, in [0, 1).
    pub engagement_floor: f64,
    /// Join probability at zero slot distance.
    pub join_peak: f64,
    /// Join probability far from the preferred slot.
    pub join_floor: f64,
    pub duration_min: f64,
    /// Historical schedules scatter around the dominant preferred slot with
    /// this standard deviation...
    pub schedule_spread: f64,
    /// ...except with this probability the slot is uniform, which keeps all
    /// slots represented in the log.
    pub schedule_uniform: f64,
    /// Organisers settle on the dominant slot over time: an event at progress
    /// p through the log is pinned there with probability drift * p. Late
    /// events then carry both the best slot and the largest cumulative
    /// attendance, the way a maturing community's log looks. 0 disables.
    pub schedule_drift: f64,
    /// Probability that an attendee idles past the event end, exercising the
    /// attendance clamp.
    pub overstay_prob: f64,
    /// Maximum day gap between consecutive events (uniform in 1..=max).
    pub date_gap_max: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            viewers: 400,
            events: 200,
            slot_count: 24,
            mixture: vec![
                TimezoneComponent { label: "tz_a".into(), weight: 0.5, preferred_slot: 9, spread: 0.75 },
                TimezoneComponent { label: "tz_b".into(), weight: 0.3, preferred_slot: 15, spread: 0.75 },
                TimezoneComponent { label: "tz_c".into(), weight: 0.2, preferred_slot: 20, spread: 0.75 },
            ],
            engagement_width: 3.0,
            engagement_floor: 0.05,
            join_peak: 0.9,
            join_floor: 0.05,
            duration_min: 60.0,
            schedule_spread: 4.0,
            schedule_uniform: 0.25,
            schedule_drift: 0.0,
            overstay_prob: 0.05,
            date_gap_max: 3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slot_count < 2 {
            return Err(Error::Domain(format!(
                "slot count {} too small (need >= 2)",
                self.slot_count
            )));
        }
        if self.mixture.is_empty() {
            return Err(Error::Domain("timezone mixture is empty".into()));
        }
        if self.viewers == 0 || self.events == 0 {
            return Err(Error::Domain("need at least one viewer and one event".into()));
        }
        let mut labels = std::collections::HashSet::new();
        for c in &self.mixture {
            if !(c.weight > 0.0) {
                return Err(Error::Domain(format!("mixture weight for {} must be positive", c.label)));
            }
            if c.preferred_slot >= self.slot_count {
                return Err(Error::Domain(format!(
                    "preferred slot {} outside [0, {})",
                    c.preferred_slot, self.slot_count
                )));
            }
            if !(c.spread >= 0.0) {
                return Err(Error::Domain("preference spread must be >= 0".into()));
            }
            if !labels.insert(c.label.clone()) {
                return Err(Error::Domain(format!("duplicate timezone label {}", c.label)));
            }
        }
        if !(self.engagement_width >= 0.0) {
            return Err(Error::Domain("engagement width must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.engagement_floor) {
            return Err(Error::Domain("engagement floor must be in [0, 1)".into()));
        }
        if !(0.0 < self.join_floor && self.join_floor <= self.join_peak && self.join_peak <= 1.0) {
            return Err(Error::Domain("need 0 < join_floor <= join_peak <= 1".into()));
        }
        if !(self.duration_min > 0.0) {
            return Err(Error::Domain("duration must be positive".into()));
        }
        if !(self.schedule_spread >= 0.0)
            || !(0.0..=1.0).contains(&self.schedule_uniform)
            || !(0.0..=1.0).contains(&self.schedule_drift)
        {
            return Err(Error::Domain("invalid schedule parameters".into()));
        }
        if !(0.0..=1.0).contains(&self.overstay_prob) {
            return Err(Error::Domain("overstay probability must be in [0, 1]".into()));
        }
        if self.date_gap_max < 1 {
            return Err(Error::Domain("date gap must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTruth {
    pub event_id: String,
    pub n: usize,
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub per_event: Vec<EventTruth>,
    /// Slot maximizing expected attendee engagement over the viewer
    /// population (ties to the lowest slot).
    pub optimal_slot: usize,
    pub expected_engagement_by_slot: Vec<f64>,
    pub avg_engagement: f64,
    pub avg_adoption: f64,
}

fn circular_distance(a: usize, b: usize, d_a: usize) -> f64 {
    let diff = (a as i64 - b as i64).unsigned_abs() as usize;
    diff.min(d_a - diff) as f64
}

fn unimodal(dist: f64, width: f64) -> f64 {
    if width <= 0.0 {
        if dist == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (-dist * dist / (2.0 * width * width)).exp()
    }
}

fn sample_gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn wrap_slot(raw: f64, d_a: usize) -> usize {
    let d = d_a as i64;
    (((raw.round() as i64) % d + d) % d) as usize
}

struct Viewer {
    preferred_slot: usize,
    timezone_id: usize,
}

/// Deterministic given `seed`. Returns the raw session log, per-event
/// metadata, the timezone vocabulary, and the generator's own bookkeeping.
pub fn generate_synthetic(
    config: &SynthConfig,
    seed: u64,
) -> Result<(Vec<ViewerSession>, Vec<EventMeta>, TimezoneVocab, GroundTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d_a = config.slot_count;
    let m = config.duration_min;

    let vocab = TimezoneVocab::new(config.mixture.iter().map(|c| c.label.clone()).collect())?;
    let weight_total: f64 = config.mixture.iter().map(|c| c.weight).sum();

    let viewers: Vec<Viewer> = (0..config.viewers)
        .map(|_| {
            let mut pick: f64 = rng.gen::<f64>() * weight_total;
            let mut tz = config.mixture.len() - 1;
            for (i, c) in config.mixture.iter().enumerate() {
                if pick < c.weight {
                    tz = i;
                    break;
                }
                pick -= c.weight;
            }
            let comp = &config.mixture[tz];
            let jitter = sample_gaussian(&mut rng) * comp.spread;
            Viewer {
                preferred_slot: wrap_slot(comp.preferred_slot as f64 + jitter, d_a),
                timezone_id: tz,
            }
        })
        .collect();

    let frac_of = |dist: f64| {
        config.engagement_floor + (1.0 - config.engagement_floor) * unimodal(dist, config.engagement_width)
    };
    let join_of = |dist: f64| {
        config.join_floor + (config.join_peak - config.join_floor) * unimodal(dist, config.engagement_width)
    };

    // expected attendee engagement per slot over the realized population
    let expected_engagement_by_slot: Vec<f64> = (0..d_a)
        .map(|s| {
            let mut weight = 0.0;
            let mut value = 0.0;
            for v in &viewers {
                let dist = circular_distance(s, v.preferred_slot, d_a);
                let p = join_of(dist);
                weight += p;
                value += p * frac_of(dist);
            }
            value / weight
        })
        .collect();
    let optimal_slot = expected_engagement_by_slot
        .iter()
        .enumerate()
        .fold((0usize, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0;

    let dominant_slot = config
        .mixture
        .iter()
        .fold((0usize, f64::NEG_INFINITY), |(bs, bw), c| {
            if c.weight > bw {
                (c.preferred_slot, c.weight)
            } else {
                (bs, bw)
            }
        })
        .0;

    let mut sessions = Vec::new();
    let mut metas = Vec::with_capacity(config.events);
    let mut per_event = Vec::with_capacity(config.events);
    let mut prior_counts = vec![0usize; config.viewers];
    let mut date_index: i64 = 0;
    let mut u_total = 0.0;
    let mut v_total = 0.0;

    for t in 0..config.events {
        let progress =
            if config.events > 1 { t as f64 / (config.events - 1) as f64 } else { 0.0 };
        let slot = if rng.gen::<f64>() < config.schedule_drift * progress {
            dominant_slot
        } else if rng.gen::<f64>() < config.schedule_uniform {
            rng.gen_range(0..d_a)
        } else {
            wrap_slot(dominant_slot as f64 + sample_gaussian(&mut rng) * config.schedule_spread, d_a)
        };
        let event_id = format!("ev{t:05}");

        let mut joiners: Vec<(usize, f64)> = Vec::new();
        for (i, viewer) in viewers.iter().enumerate() {
            let dist = circular_distance(slot, viewer.preferred_slot, d_a);
            if rng.gen::<f64>() < join_of(dist) {
                let overstay = rng.gen::<f64>() < config.overstay_prob;
                let leave = if overstay { m + 30.0 } else { frac_of(dist) * m };
                joiners.push((i, leave));
            }
        }
        if joiners.is_empty() {
            // guarantee n >= 1: the closest viewer shows up anyway
            let (best, _) = viewers.iter().enumerate().fold(
                (0usize, f64::INFINITY),
                |(bi, bd), (i, v)| {
                    let d = circular_distance(slot, v.preferred_slot, d_a);
                    if d < bd {
                        (i, d)
                    } else {
                        (bi, bd)
                    }
                },
            );
            let dist = circular_distance(slot, viewers[best].preferred_slot, d_a);
            joiners.push((best, frac_of(dist) * m));
        }

        let n = joiners.len();
        let mut u_sum = 0.0;
        let mut prior_sum = 0usize;
        for &(i, leave) in &joiners {
            u_sum += (leave - 0.0).min(m) / m;
            prior_sum += prior_counts[i];
            sessions.push(ViewerSession {
                event_id: event_id.clone(),
                viewer_id: format!("vw{i:05}"),
                join_offset: 0.0,
                leave_offset: leave,
                timezone_id: viewers[i].timezone_id,
            });
        }
        let u = u_sum / n as f64;
        let v = prior_sum as f64 / n as f64;
        for &(i, _) in &joiners {
            prior_counts[i] += 1;
        }

        metas.push(EventMeta { event_id: event_id.clone(), slot, duration_min: m, date_index });
        per_event.push(EventTruth { event_id, n, u, v });
        u_total += u;
        v_total += v;
        date_index += rng.gen_range(1..=config.date_gap_max);
    }

    let truth = GroundTruth {
        per_event,
        optimal_slot,
        expected_engagement_by_slot,
        avg_engagement: u_total / config.events as f64,
        avg_adoption: v_total / config.events as f64,
    };
    Ok((sessions, metas, vocab, truth))
}
