//! Event featurization and the recurrent state encoding.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{Event, EventLog};
use crate::nn::TimeLstmParams;

/// Min-max ranges frozen from the training split; applying them elsewhere
/// clamps, so no test-set information leaks into scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub n_min: f64,
    pub n_max: f64,
    pub m_min: f64,
    pub m_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl NormStats {
    pub fn from_log(log: &EventLog) -> Result<Self> {
        if log.is_empty() {
            return Err(Error::Data("cannot compute normalization from an empty log".into()));
        }
        let mut s = Self {
            n_min: f64::INFINITY,
            n_max: f64::NEG_INFINITY,
            m_min: f64::INFINITY,
            m_max: f64::NEG_INFINITY,
            v_min: f64::INFINITY,
            v_max: f64::NEG_INFINITY,
        };
        for e in &log.events {
            s.n_min = s.n_min.min(e.n as f64);
            s.n_max = s.n_max.max(e.n as f64);
            s.m_min = s.m_min.min(e.m);
            s.m_max = s.m_max.max(e.m);
            s.v_min = s.v_min.min(e.v);
            s.v_max = s.v_max.max(e.v);
        }
        Ok(s)
    }

    fn scale(x: f64, min: f64, max: f64) -> f64 {
        if max > min {
            ((x - min) / (max - min)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    pub fn scale_n(&self, n: f64) -> f64 {
        Self::scale(n, self.n_min, self.n_max)
    }

    pub fn scale_m(&self, m: f64) -> f64 {
        Self::scale(m, self.m_min, self.m_max)
    }

    pub fn scale_v(&self, v: f64) -> f64 {
        Self::scale(v, self.v_min, self.v_max)
    }
}

/// One event as the encoder sees it: x = [slot, n, m, u, v, z...] with the
/// scaled entries in [0,1], plus the day gap to the previous event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventFeature {
    pub x: Vec<f64>,
    pub delta: f64,
}

/// Feature dimension for a given timezone vocabulary size.
pub fn feature_dim(d_z: usize) -> usize {
    5 + d_z
}

/// Builds one feature vector. The day gap is 0 when there is no previous
/// event.
pub fn build_feature(
    event: &Event,
    prev_event: Option<&Event>,
    stats: &NormStats,
    slot_count: usize,
) -> EventFeature {
    let h = if slot_count > 1 {
        event.slot as f64 / (slot_count - 1) as f64
    } else {
        0.0
    };
    let mut x = Vec::with_capacity(feature_dim(event.z.len()));
    x.push(h);
    x.push(stats.scale_n(event.n as f64));
    x.push(stats.scale_m(event.m));
    x.push(event.u);
    x.push(stats.scale_v(event.v));
    x.extend(event.z.iter().copied());
    let delta = prev_event
        .map(|p| (event.date_index - p.date_index).max(0) as f64)
        .unwrap_or(0.0);
    EventFeature { x, delta }
}

/// Featurizes a window of consecutive events. The first element's gap is 0
/// by convention (its predecessor is outside the window); later gaps come
/// from the date indices.
pub fn window_features(
    window: &[Event],
    stats: &NormStats,
    slot_count: usize,
) -> Vec<EventFeature> {
    window
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let prev = if i == 0 { None } else { Some(&window[i - 1]) };
            build_feature(e, prev, stats, slot_count)
        })
        .collect()
}

/// Runs the shared encoder over a feature window; both tasks use the same
/// parameters.
pub fn encode_state(window: &[EventFeature], encoder: &TimeLstmParams) -> Result<Array1<f64>> {
    let xs: Vec<&[f64]> = window.iter().map(|f| f.x.as_slice()).collect();
    let deltas: Vec<f64> = window.iter().map(|f| f.delta).collect();
    encoder.encode_value(&xs, &deltas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::TimezoneVocab;
    use crate::nn::LstmActivation;
    use approx::assert_abs_diff_eq;

    fn event(id: &str, slot: usize, n: usize, m: f64, u: f64, v: f64, t: i64) -> Event {
        Event {
            event_id: id.into(),
            slot,
            n,
            m,
            u,
            v,
            z: vec![1.0],
            date_index: t,
        }
    }

    fn stats() -> NormStats {
        NormStats { n_min: 10.0, n_max: 110.0, m_min: 30.0, m_max: 90.0, v_min: 0.0, v_max: 4.0 }
    }

    #[test]
    fn training_minimum_scales_to_zero() {
        let e = event("e", 0, 10, 30.0, 0.4, 0.0, 5);
        let f = build_feature(&e, None, &stats(), 24);
        assert_abs_diff_eq!(f.x[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.x[2], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.x[4], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.x[3], 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(f.delta, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn values_above_training_maximum_clamp_to_one() {
        let e = event("e", 23, 500, 240.0, 1.0, 9.0, 5);
        let f = build_feature(&e, None, &stats(), 24);
        assert_abs_diff_eq!(f.x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.x[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.x[2], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.x[4], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn day_gap_from_previous_event() {
        let prev = event("p", 0, 50, 60.0, 0.5, 1.0, 10);
        let e = event("e", 0, 50, 60.0, 0.5, 1.0, 17);
        let f = build_feature(&e, Some(&prev), &stats(), 24);
        assert_abs_diff_eq!(f.delta, 7.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_normalization_range_maps_to_zero() {
        let s = NormStats { n_min: 5.0, n_max: 5.0, m_min: 60.0, m_max: 60.0, v_min: 2.0, v_max: 2.0 };
        let e = event("e", 0, 5, 60.0, 0.5, 2.0, 0);
        let f = build_feature(&e, None, &s, 24);
        assert_abs_diff_eq!(f.x[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.x[2], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.x[4], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn window_features_compute_internal_gaps() {
        let w = vec![
            event("a", 0, 50, 60.0, 0.5, 1.0, 0),
            event("b", 1, 50, 60.0, 0.5, 1.0, 3),
            event("c", 2, 50, 60.0, 0.5, 1.0, 4),
        ];
        let feats = window_features(&w, &stats(), 24);
        assert_abs_diff_eq!(feats[0].delta, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(feats[1].delta, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(feats[2].delta, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn encode_state_is_deterministic_and_shared() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(40);
        let encoder = TimeLstmParams::new(6, 8, LstmActivation::Sigmoid, &mut rng).unwrap();
        let w = vec![
            event("a", 3, 50, 60.0, 0.7, 1.0, 0),
            event("b", 4, 60, 60.0, 0.6, 1.5, 2),
        ];
        let feats = window_features(&w, &stats(), 24);
        let s1 = encode_state(&feats, &encoder).unwrap();
        let s2 = encode_state(&feats, &encoder).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.len(), 8);
    }

    #[test]
    fn norm_stats_from_log() {
        let vocab = TimezoneVocab::new(vec!["utc".into()]).unwrap();
        let log = EventLog::new(
            vec![
                event("a", 0, 10, 30.0, 0.2, 0.0, 0),
                event("b", 1, 110, 90.0, 0.9, 4.0, 1),
            ],
            vocab,
            24,
        )
        .unwrap();
        let s = NormStats::from_log(&log).unwrap();
        assert_eq!(s, stats());
    }
}
