//! Event data model: viewer sessions, aggregated events, chronological
//! splitting, ingestion and synthetic log generation.

pub mod aggregate;
pub mod io;
pub mod synth;

pub use aggregate::{aggregate_events, compute_adoption, compute_engagement, split_chronological};
pub use io::{
    read_event_log, read_event_meta_csv, read_sessions_csv, write_event_log,
    write_event_meta_csv, write_sessions_csv,
};
pub use synth::{generate_synthetic, GroundTruth, SynthConfig, TimezoneComponent};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One viewer's contiguous presence in one event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewerSession {
    pub event_id: String,
    pub viewer_id: String,
    /// Minutes from event start, >= 0.
    pub join_offset: f64,
    /// Minutes from event start, >= join_offset. May exceed the event
    /// duration; attendance is clamped during aggregation.
    pub leave_offset: f64,
    pub timezone_id: usize,
}

impl ViewerSession {
    pub fn validate(&self) -> Result<()> {
        if !self.join_offset.is_finite() || !self.leave_offset.is_finite() {
            return Err(Error::Data(format!(
                "session {}/{} has non-finite offsets",
                self.event_id, self.viewer_id
            )));
        }
        if self.join_offset < 0.0 || self.leave_offset < self.join_offset {
            return Err(Error::Data(format!(
                "session {}/{} violates 0 <= join <= leave (join {}, leave {})",
                self.event_id, self.viewer_id, self.join_offset, self.leave_offset
            )));
        }
        Ok(())
    }
}

/// Ordered timezone label vocabulary; a session stores an index into it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimezoneVocab {
    names: Vec<String>,
}

impl TimezoneVocab {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Data("timezone vocabulary is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if !seen.insert(n.clone()) {
                return Err(Error::Data(format!("duplicate timezone label {n}")));
            }
        }
        Ok(Self { names })
    }

    pub fn size(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.names.iter().position(|n| n == label)
    }
}

/// Builds a vocabulary incrementally in order of first appearance.
#[derive(Debug, Default)]
pub struct VocabBuilder {
    names: Vec<String>,
    index: std::collections::HashMap<String, usize>,
}

impl VocabBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, label: &str) -> usize {
        if let Some(&i) = self.index.get(label) {
            return i;
        }
        let i = self.names.len();
        self.names.push(label.to_string());
        self.index.insert(label.to_string(), i);
        i
    }

    pub fn finish(self) -> Result<TimezoneVocab> {
        TimezoneVocab::new(self.names)
    }
}

/// One live event with aggregated audience statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub event_id: String,
    /// Timestamp slot in [0, slot_count).
    pub slot: usize,
    /// Distinct viewer count, >= 1.
    pub n: usize,
    /// Duration in minutes, > 0.
    pub m: f64,
    /// Average engagement in [0, 1].
    pub u: f64,
    /// Average adoption, >= 0.
    pub v: f64,
    /// Timezone distribution over the vocabulary; entries >= 0, sum 1.
    pub z: Vec<f64>,
    /// Step ordinal; strictly increasing within a log.
    pub date_index: i64,
}

impl Event {
    pub fn validate(&self, slot_count: usize, d_z: usize) -> Result<()> {
        if self.slot >= slot_count {
            return Err(Error::Data(format!(
                "event {} slot {} outside [0, {slot_count})",
                self.event_id, self.slot
            )));
        }
        if self.n == 0 {
            return Err(Error::Data(format!("event {} has no viewers", self.event_id)));
        }
        if !(self.m > 0.0) {
            return Err(Error::Data(format!(
                "event {} duration {} must be positive",
                self.event_id, self.m
            )));
        }
        if !(0.0..=1.0).contains(&self.u) {
            return Err(Error::Data(format!(
                "event {} engagement {} outside [0,1]",
                self.event_id, self.u
            )));
        }
        if !(self.v >= 0.0) {
            return Err(Error::Data(format!(
                "event {} adoption {} negative or NaN",
                self.event_id, self.v
            )));
        }
        if self.z.len() != d_z {
            return Err(Error::Data(format!(
                "event {} timezone vector has length {}, vocabulary {d_z}",
                self.event_id,
                self.z.len()
            )));
        }
        let sum: f64 = self.z.iter().sum();
        if self.z.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Data(format!(
                "event {} timezone vector must be a distribution (sum {sum})",
                self.event_id
            )));
        }
        Ok(())
    }
}

/// Chronologically ordered event list with its shared vocabulary and slot
/// count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub events: Vec<Event>,
    pub vocab: TimezoneVocab,
    pub slot_count: usize,
}

impl EventLog {
    pub fn new(events: Vec<Event>, vocab: TimezoneVocab, slot_count: usize) -> Result<Self> {
        let log = Self { events, vocab, slot_count };
        log.validate()?;
        Ok(log)
    }

    pub fn validate(&self) -> Result<()> {
        if self.slot_count == 0 {
            return Err(Error::Data("slot count must be positive".into()));
        }
        for e in &self.events {
            e.validate(self.slot_count, self.vocab.size())?;
        }
        for pair in self.events.windows(2) {
            if pair[1].date_index <= pair[0].date_index {
                return Err(Error::Data(format!(
                    "date_index not strictly increasing at events {} -> {}",
                    pair[0].event_id, pair[1].event_id
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Per-event schedule metadata accompanying a session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMeta {
    pub event_id: String,
    pub slot: usize,
    pub duration_min: f64,
    pub date_index: i64,
}
