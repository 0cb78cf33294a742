use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Episode endpoint: discharge (`0`) or deterioration/ICU transfer (`1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Stable,
    Deteriorated,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Stable => 0,
            Label::Deteriorated => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Stable),
            1 => Some(Label::Deteriorated),
            _ => None,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Deteriorated
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        Label::from_u8(v).ok_or_else(|| serde::de::Error::custom(format!("label must be 0 or 1, got {v}")))
    }
}

/// One observation epoch: time (hours), mark vector and channel presence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub y: Vec<f64>,
    pub mask: Vec<bool>,
}

impl Event {
    pub fn full(t: f64, y: Vec<f64>) -> Self {
        let mask = vec![true; y.len()];
        Self { t, y, mask }
    }
}

/// One patient record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub events: Vec<Event>,
    pub censor_time: f64,
    pub label: Label,
}

impl Episode {
    pub fn times(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.t).collect()
    }

    pub fn n_channels(&self) -> Option<usize> {
        self.events.first().map(|e| e.y.len())
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev = f64::NEG_INFINITY;
        for (m, e) in self.events.iter().enumerate() {
            if !(e.t >= 0.0 && e.t > prev) {
                return Err(Error::Precondition(format!(
                    "episode {}: event {m} at t = {} is not strictly after {prev} (and >= 0)",
                    self.id, e.t
                )));
            }
            if e.y.len() != e.mask.len() {
                return Err(Error::ShapeMismatch(format!(
                    "episode {}: event {m} has {} values but {} mask entries",
                    self.id,
                    e.y.len(),
                    e.mask.len()
                )));
            }
            prev = e.t;
        }
        if prev > self.censor_time {
            return Err(Error::Precondition(format!(
                "episode {}: last event at {prev} is after censor_time {}",
                self.id, self.censor_time
            )));
        }
        if let Some(q) = self.n_channels() {
            if self.events.iter().any(|e| e.y.len() != q) {
                return Err(Error::ShapeMismatch(format!("episode {}: ragged mark vectors", self.id)));
            }
        }
        Ok(())
    }

    /// Events with `t <= until`.
    pub fn prefix(&self, until: f64) -> &[Event] {
        let n = self.events.partition_point(|e| e.t <= until);
        &self.events[..n]
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("episode serialization cannot fail")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let ep: Episode =
            serde_json::from_str(line).map_err(|e| Error::Parameter(format!("episode JSON: {e}")))?;
        ep.validate()?;
        Ok(ep)
    }
}

/// Latent trajectory. `states` are 0-based in memory and 1-based in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePath {
    #[serde(with = "one_based")]
    pub states: Vec<usize>,
    pub sojourns: Vec<f64>,
    pub jump_times: Vec<f64>,
}

impl StatePath {
    pub fn final_state(&self) -> usize {
        *self.states.last().expect("state path is never empty")
    }

    pub fn end_time(&self) -> f64 {
        self.jump_times.last().copied().unwrap_or(0.0) + self.sojourns.last().copied().unwrap_or(0.0)
    }

    /// Index of the path segment active at time `t`.
    pub fn segment_at(&self, t: f64) -> usize {
        self.jump_times.partition_point(|&tau| tau <= t).saturating_sub(1)
    }

    pub fn state_at(&self, t: f64) -> usize {
        self.states[self.segment_at(t)]
    }

    /// Time spent in each state over `[lo, hi)`, indexed by state.
    pub fn occupancy(&self, lo: f64, hi: f64, n_states: usize) -> Vec<f64> {
        let mut occ = vec![0.0; n_states];
        for (n, &s) in self.states.iter().enumerate() {
            let a = self.jump_times[n].max(lo);
            let b = (self.jump_times[n] + self.sojourns[n]).min(hi);
            if b > a {
                occ[s] += b - a;
            }
        }
        occ
    }
}

mod one_based {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[usize], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| x + 1))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<usize>, D::Error> {
        let raw = Vec::<usize>::deserialize(d)?;
        raw.into_iter()
            .map(|x| x.checked_sub(1).ok_or_else(|| serde::de::Error::custom("states are 1-based")))
            .collect()
    }
}
