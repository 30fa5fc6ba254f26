//! Session-to-event aggregation and chronological splitting.

use std::collections::{BTreeMap, HashMap, HashSet};

use super::{Event, EventLog, EventMeta, TimezoneVocab, ViewerSession};
use crate::error::{Error, Result};

/// Mean fraction of the event duration attended, one session per viewer.
/// Attendance is clamped to the duration.
pub fn compute_engagement(sessions: &[ViewerSession], m: f64) -> Result<f64> {
    if sessions.is_empty() {
        return Err(Error::Domain("no viewers".into()));
    }
    if !(m > 0.0) {
        return Err(Error::Domain(format!("duration {m} must be positive")));
    }
    let mut total = 0.0;
    for s in sessions {
        s.validate()?;
        total += (s.leave_offset - s.join_offset).min(m) / m;
    }
    Ok(total / sessions.len() as f64)
}

/// Mean number of distinct prior events attended by the current audience. A
/// viewer counts an event if they have any session for it, regardless of
/// duration.
pub fn compute_adoption(history: &[ViewerSession], current: &[ViewerSession]) -> Result<f64> {
    if current.is_empty() {
        return Err(Error::Domain("no viewers".into()));
    }
    let mut attended: HashMap<&str, HashSet<&str>> = HashMap::new();
    for s in history {
        attended.entry(s.viewer_id.as_str()).or_default().insert(s.event_id.as_str());
    }
    let viewers: HashSet<&str> = current.iter().map(|s| s.viewer_id.as_str()).collect();
    let total: usize = viewers
        .iter()
        .map(|v| attended.get(v).map_or(0, |e| e.len()))
        .sum();
    Ok(total as f64 / viewers.len() as f64)
}

/// Total length of the union of [join, leave) intervals.
fn union_length(mut intervals: Vec<(f64, f64)>) -> f64 {
    intervals.sort_by(|a, b| a.partial_cmp(b).expect("finite offsets"));
    let mut total = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for (j, l) in intervals {
        match cur {
            None => cur = Some((j, l)),
            Some((cj, cl)) => {
                if j <= cl {
                    cur = Some((cj, cl.max(l)));
                } else {
                    total += cl - cj;
                    cur = Some((j, l));
                }
            }
        }
    }
    if let Some((cj, cl)) = cur {
        total += cl - cj;
    }
    total
}

/// Builds one Event per event_id: engagement over merged per-viewer
/// attendance, adoption from each viewer's distinct prior events, n as the
/// distinct viewer count and z as the attendee timezone histogram.
pub fn aggregate_events(
    session_log: &[ViewerSession],
    event_meta: &[EventMeta],
    vocab: &TimezoneVocab,
    slot_count: usize,
) -> Result<EventLog> {
    let mut meta_by_id: HashMap<&str, &EventMeta> = HashMap::new();
    for m in event_meta {
        if meta_by_id.insert(m.event_id.as_str(), m).is_some() {
            return Err(Error::Data(format!("duplicate event metadata for {}", m.event_id)));
        }
    }
    let mut sessions_by_event: HashMap<&str, Vec<&ViewerSession>> = HashMap::new();
    for s in session_log {
        s.validate()?;
        if s.timezone_id >= vocab.size() {
            return Err(Error::Data(format!(
                "session {}/{} has timezone index {} outside vocabulary of {}",
                s.event_id,
                s.viewer_id,
                s.timezone_id,
                vocab.size()
            )));
        }
        if !meta_by_id.contains_key(s.event_id.as_str()) {
            return Err(Error::Data(format!(
                "session references unknown event {}",
                s.event_id
            )));
        }
        sessions_by_event.entry(s.event_id.as_str()).or_default().push(s);
    }

    let mut metas: Vec<&EventMeta> = event_meta.iter().collect();
    metas.sort_by_key(|m| m.date_index);

    // distinct events attended so far, keyed by viewer
    let mut prior_counts: HashMap<String, usize> = HashMap::new();
    let mut events = Vec::with_capacity(metas.len());
    for meta in metas {
        let sessions = sessions_by_event
            .get(meta.event_id.as_str())
            .ok_or_else(|| Error::Data(format!("event {} has no sessions", meta.event_id)))?;

        // per-viewer interval union and a deterministic timezone choice;
        // BTreeMap fixes the iteration (and fp summation) order
        let mut viewers: BTreeMap<&str, (Vec<(f64, f64)>, usize)> = BTreeMap::new();
        for s in sessions {
            let entry = viewers
                .entry(s.viewer_id.as_str())
                .or_insert_with(|| (Vec::new(), s.timezone_id));
            entry.0.push((s.join_offset, s.leave_offset));
            entry.1 = entry.1.min(s.timezone_id);
        }

        let merged: Vec<ViewerSession> = viewers
            .iter()
            .map(|(viewer_id, (intervals, tz))| ViewerSession {
                event_id: meta.event_id.clone(),
                viewer_id: (*viewer_id).to_string(),
                join_offset: 0.0,
                leave_offset: union_length(intervals.clone()),
                timezone_id: *tz,
            })
            .collect();

        let n = merged.len();
        let u = compute_engagement(&merged, meta.duration_min)?;
        let prior_total: usize = viewers
            .keys()
            .map(|v| prior_counts.get(*v).copied().unwrap_or(0))
            .sum();
        let v = prior_total as f64 / n as f64;

        let mut z = vec![0.0; vocab.size()];
        for (_, (_, tz)) in &viewers {
            z[*tz] += 1.0;
        }
        for p in &mut z {
            *p /= n as f64;
        }

        for viewer in viewers.keys() {
            *prior_counts.entry((*viewer).to_string()).or_insert(0) += 1;
        }

        events.push(Event {
            event_id: meta.event_id.clone(),
            slot: meta.slot,
            n,
            m: meta.duration_min,
            u,
            v,
            z,
            date_index: meta.date_index,
        });
    }

    EventLog::new(events, vocab.clone(), slot_count)
}

/// Contiguous chronological train/val/test slices. Counts are
/// floor(frac * T) for train and val; the remainder goes to test.
pub fn split_chronological(
    log: &EventLog,
    fractions: (f64, f64, f64),
) -> Result<(EventLog, EventLog, EventLog)> {
    let (ft, fv, fe) = fractions;
    if !(ft > 0.0 && fv > 0.0 && fe > 0.0) {
        return Err(Error::Domain("split fractions must be positive".into()));
    }
    if (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!(
            "split fractions sum to {}, expected 1",
            ft + fv + fe
        )));
    }
    if log.len() < 10 {
        return Err(Error::Domain(format!(
            "log of {} events is too small to split (need >= 10)",
            log.len()
        )));
    }
    log.validate()?;
    let t = log.len();
    let n_train = (ft * t as f64).floor() as usize;
    let n_val = (fv * t as f64).floor() as usize;
    let n_test = t - n_train - n_val;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Domain("a split slice would be empty".into()));
    }
    let mk = |events: &[Event]| EventLog {
        events: events.to_vec(),
        vocab: log.vocab.clone(),
        slot_count: log.slot_count,
    };
    Ok((
        mk(&log.events[..n_train]),
        mk(&log.events[n_train..n_train + n_val]),
        mk(&log.events[n_train + n_val..]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn sess(event: &str, viewer: &str, join: f64, leave: f64, tz: usize) -> ViewerSession {
        ViewerSession {
            event_id: event.into(),
            viewer_id: viewer.into(),
            join_offset: join,
            leave_offset: leave,
            timezone_id: tz,
        }
    }

    fn meta(event: &str, slot: usize, m: f64, t: i64) -> EventMeta {
        EventMeta { event_id: event.into(), slot, duration_min: m, date_index: t }
    }

    #[test]
    fn engagement_full_attendance_is_one() {
        let s = vec![sess("e", "a", 0.0, 60.0, 0), sess("e", "b", 0.0, 60.0, 0)];
        assert_abs_diff_eq!(compute_engagement(&s, 60.0).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn engagement_zero_length_session_is_zero() {
        let s = vec![sess("e", "a", 10.0, 10.0, 0)];
        assert_abs_diff_eq!(compute_engagement(&s, 60.0).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn engagement_half_and_full_average() {
        // attendance 30 and 60 of a 60 minute event: (0.5 + 1.0) / 2
        let s = vec![sess("e", "a", 0.0, 30.0, 0), sess("e", "b", 0.0, 60.0, 0)];
        assert_abs_diff_eq!(compute_engagement(&s, 60.0).unwrap(), 0.75, epsilon = 1e-12);
    }

    #[test]
    fn engagement_clamps_overstay() {
        let s = vec![sess("e", "a", 0.0, 500.0, 0)];
        assert_abs_diff_eq!(compute_engagement(&s, 60.0).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn engagement_rejects_bad_inputs() {
        assert!(compute_engagement(&[], 60.0).is_err());
        let s = vec![sess("e", "a", 0.0, 60.0, 0)];
        assert!(compute_engagement(&s, 0.0).is_err());
        assert!(compute_engagement(&s, -5.0).is_err());
    }

    #[test]
    fn adoption_empty_history_is_zero() {
        let cur = vec![sess("e2", "a", 0.0, 10.0, 0)];
        assert_abs_diff_eq!(compute_adoption(&[], &cur).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn adoption_mean_of_prior_counts() {
        // viewer a attended 1 prior event, viewer b attended 3
        let history = vec![
            sess("p1", "a", 0.0, 10.0, 0),
            sess("p1", "b", 0.0, 10.0, 0),
            sess("p2", "b", 0.0, 10.0, 0),
            sess("p3", "b", 0.0, 10.0, 0),
        ];
        let cur = vec![sess("e", "a", 0.0, 10.0, 0), sess("e", "b", 0.0, 10.0, 0)];
        assert_abs_diff_eq!(compute_adoption(&history, &cur).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn adoption_everyone_attended_everything() {
        let p = 4usize;
        let viewers = ["a", "b", "c"];
        let mut history = Vec::new();
        for k in 0..p {
            for v in viewers {
                history.push(sess(&format!("p{k}"), v, 0.0, 10.0, 0));
            }
        }
        let cur: Vec<_> = viewers.iter().map(|v| sess("e", v, 0.0, 10.0, 0)).collect();
        assert_abs_diff_eq!(compute_adoption(&history, &cur).unwrap(), p as f64, epsilon = 1e-12);
    }

    #[test]
    fn adoption_duplicate_history_sessions_count_once() {
        let history = vec![sess("p1", "a", 0.0, 5.0, 0), sess("p1", "a", 7.0, 9.0, 0)];
        let cur = vec![sess("e", "a", 0.0, 10.0, 0)];
        assert_abs_diff_eq!(compute_adoption(&history, &cur).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn aggregate_single_viewer_event() {
        let vocab = TimezoneVocab::new(vec!["utc".into()]).unwrap();
        let log = aggregate_events(
            &[sess("e1", "a", 0.0, 60.0, 0)],
            &[meta("e1", 3, 60.0, 0)],
            &vocab,
            24,
        )
        .unwrap();
        assert_eq!(log.len(), 1);
        let e = &log.events[0];
        assert_eq!(e.n, 1);
        assert_abs_diff_eq!(e.u, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.v, 0.0, epsilon = 1e-12);
        assert_eq!(e.slot, 3);
    }

    #[test]
    fn aggregate_merges_duplicate_sessions_by_union() {
        let vocab = TimezoneVocab::new(vec!["utc".into()]).unwrap();
        // overlapping [0,30) and [20,40): union 40; plus disjoint [50,60)
        let log = aggregate_events(
            &[
                sess("e1", "a", 0.0, 30.0, 0),
                sess("e1", "a", 20.0, 40.0, 0),
                sess("e1", "a", 50.0, 60.0, 0),
            ],
            &[meta("e1", 0, 100.0, 0)],
            &vocab,
            24,
        )
        .unwrap();
        let e = &log.events[0];
        assert_eq!(e.n, 1);
        assert_abs_diff_eq!(e.u, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn aggregate_rejects_unknown_event() {
        let vocab = TimezoneVocab::new(vec!["utc".into()]).unwrap();
        let err = aggregate_events(
            &[sess("ghost", "a", 0.0, 10.0, 0)],
            &[meta("e1", 0, 60.0, 0)],
            &vocab,
            24,
        )
        .unwrap_err();
        assert!(err.to_string().contains("ghost"));
    }

    #[test]
    fn aggregate_accumulates_adoption_chronologically() {
        let vocab = TimezoneVocab::new(vec!["utc".into()]).unwrap();
        let sessions = vec![
            sess("e1", "a", 0.0, 60.0, 0),
            sess("e2", "a", 0.0, 60.0, 0),
            sess("e2", "b", 0.0, 60.0, 0),
            sess("e3", "a", 0.0, 60.0, 0),
            sess("e3", "b", 0.0, 60.0, 0),
        ];
        let metas = vec![meta("e1", 0, 60.0, 0), meta("e2", 1, 60.0, 2), meta("e3", 2, 60.0, 5)];
        let log = aggregate_events(&sessions, &metas, &vocab, 24).unwrap();
        assert_abs_diff_eq!(log.events[0].v, 0.0, epsilon = 1e-12);
        // a has 1 prior, b has 0
        assert_abs_diff_eq!(log.events[1].v, 0.5, epsilon = 1e-12);
        // a has 2 priors, b has 1
        assert_abs_diff_eq!(log.events[2].v, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn aggregate_timezone_histogram() {
        let vocab = TimezoneVocab::new(vec!["x".into(), "y".into()]).unwrap();
        let log = aggregate_events(
            &[
                sess("e1", "a", 0.0, 60.0, 0),
                sess("e1", "b", 0.0, 60.0, 1),
                sess("e1", "c", 0.0, 60.0, 1),
                sess("e1", "d", 0.0, 60.0, 1),
            ],
            &[meta("e1", 0, 60.0, 0)],
            &vocab,
            24,
        )
        .unwrap();
        let e = &log.events[0];
        assert_abs_diff_eq!(e.z[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(e.z[1], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn split_exact_fractions() {
        let vocab = TimezoneVocab::new(vec!["utc".into()]).unwrap();
        let events: Vec<Event> = (0..10)
            .map(|i| Event {
                event_id: format!("e{i}"),
                slot: 0,
                n: 1,
                m: 60.0,
                u: 0.5,
                v: 0.0,
                z: vec![1.0],
                date_index: i,
            })
            .collect();
        let log = EventLog::new(events, vocab, 24).unwrap();
        let (tr, va, te) = split_chronological(&log, (0.7, 0.1, 0.2)).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (7, 1, 2));
        assert_eq!(tr.events[6].event_id, "e6");
        assert_eq!(va.events[0].event_id, "e7");
        assert_eq!(te.events[0].event_id, "e8");
    }

    #[test]
    fn split_remainder_goes_to_test() {
        // floor(0.7 * 833) = 583, floor(0.1 * 833) = 83, remainder 167
        let vocab = TimezoneVocab::new(vec!["utc".into()]).unwrap();
        let events: Vec<Event> = (0..833)
            .map(|i| Event {
                event_id: format!("e{i}"),
                slot: 0,
                n: 1,
                m: 60.0,
                u: 0.5,
                v: 0.0,
                z: vec![1.0],
                date_index: i,
            })
            .collect();
        let log = EventLog::new(events, vocab, 24).unwrap();
        let (tr, va, te) = split_chronological(&log, (0.7, 0.1, 0.2)).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (583, 83, 167));
    }

    #[test]
    fn split_rejects_bad_inputs() {
        let vocab = TimezoneVocab::new(vec!["utc".into()]).unwrap();
        let events: Vec<Event> = (0..5)
            .map(|i| Event {
                event_id: format!("e{i}"),
                slot: 0,
                n: 1,
                m: 60.0,
                u: 0.5,
                v: 0.0,
                z: vec![1.0],
                date_index: i,
            })
            .collect();
        let small = EventLog::new(events.clone(), vocab.clone(), 24).unwrap();
        assert!(split_chronological(&small, (0.7, 0.1, 0.2)).is_err());

        let mut shuffled: Vec<Event> = (0..12)
            .map(|i| Event {
                event_id: format!("e{i}"),
                slot: 0,
                n: 1,
                m: 60.0,
                u: 0.5,
                v: 0.0,
                z: vec![1.0],
                date_index: i,
            })
            .collect();
        shuffled.swap(3, 9);
        let bad = EventLog { events: shuffled, vocab, slot_count: 24 };
        assert!(split_chronological(&bad, (0.7, 0.1, 0.2)).is_err());
    }

    proptest! {
        // engagement stays in [0,1] and grows when any viewer stays longer
        #[test]
        fn engagement_bounded_and_monotone(
            stays in proptest::collection::vec(0.0f64..200.0, 1..20),
            bump in 1.0f64..50.0,
            idx in 0usize..20,
            m in 1.0f64..180.0,
        ) {
            let sessions: Vec<ViewerSession> = stays
                .iter()
                .enumerate()
                .map(|(i, &k)| sess("e", &format!("v{i}"), 0.0, k, 0))
                .collect();
            let base = compute_engagement(&sessions, m).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&base));
            let idx = idx % sessions.len();
            let mut longer = sessions;
            longer[idx].leave_offset += bump;
            let more = compute_engagement(&longer, m).unwrap();
            prop_assert!(more + 1e-12 >= base);
        }

        // appending one attended event per viewer raises adoption by exactly 1
        #[test]
        fn adoption_additive_shift(prior in 0usize..5, viewers in 1usize..8) {
            let ids: Vec<String> = (0..viewers).map(|i| format!("v{i}")).collect();
            let mut history = Vec::new();
            for k in 0..prior {
                for v in &ids {
                    history.push(sess(&format!("p{k}"), v, 0.0, 10.0, 0));
                }
            }
            let cur: Vec<ViewerSession> =
                ids.iter().map(|v| sess("e", v, 0.0, 10.0, 0)).collect();
            let before = compute_adoption(&history, &cur).unwrap();
            for v in &ids {
                history.push(sess("extra", v, 0.0, 10.0, 0));
            }
            let after = compute_adoption(&history, &cur).unwrap();
            prop_assert!((after - before - 1.0).abs() < 1e-12);
        }

        // shuffling sessions and splitting them at integer points leaves the
        // aggregate unchanged
        #[test]
        fn aggregate_order_and_split_independent(
            seed in 0u64..1000,
            split_at in 1u32..59,
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let vocab = TimezoneVocab::new(vec!["x".into(), "y".into()]).unwrap();
            let metas = vec![meta("e1", 0, 60.0, 0), meta("e2", 1, 60.0, 1)];
            let base = vec![
                sess("e1", "a", 0.0, 60.0, 0),
                sess("e1", "b", 0.0, 45.0, 1),
                sess("e2", "a", 0.0, 30.0, 0),
                sess("e2", "c", 5.0, 60.0, 1),
            ];
            let reference = aggregate_events(&base, &metas, &vocab, 24).unwrap();

            let mut resplit = Vec::new();
            for s in &base {
                let p = split_at as f64;
                if s.join_offset < p && p < s.leave_offset {
                    let mut first = s.clone();
                    first.leave_offset = p;
                    let mut second = s.clone();
                    second.join_offset = p;
                    resplit.push(first);
                    resplit.push(second);
                } else {
                    resplit.push(s.clone());
                }
            }
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            resplit.shuffle(&mut rng);
            let again = aggregate_events(&resplit, &metas, &vocab, 24).unwrap();
            prop_assert_eq!(reference, again);
        }
    }
}
