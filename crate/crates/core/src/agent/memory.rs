use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{GroupCounts, Observation, RouteId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub period: u32,
    pub action: RouteId,
    pub own_time: f64,
    pub group_counts: GroupCounts,
}

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("observation for period {got} cannot follow period {last}")]
    OutOfOrder { last: u32, got: u32 },
    #[error("observation route {observed} does not match action {action}")]
    ActionMismatch { action: RouteId, observed: RouteId },
}

/// Rounds to the 0.1-minute precision used everywhere times are shown.
pub fn round_tenth(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Append-only trip history of one traveler.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryStore {
    entries: Vec<MemoryEntry>,
}

/// Lengths of the short and long retrieval windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub t_s: u32,
    pub t_l: u32,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { t_s: 4, t_l: 24 }
    }
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn last(&self) -> Option<&MemoryEntry> {
        self.entries.last()
    }

    /// Records the outcome of `action`. The observation must be for the period
    /// right after the last stored one (period 1 on an empty store).
    pub fn perceive(&mut self, action: RouteId, obs: &Observation) -> Result<(), MemoryError> {
        let last = self.entries.last().map_or(0, |e| e.period);
        if obs.period != last + 1 {
            return Err(MemoryError::OutOfOrder { last, got: obs.period });
        }
        if obs.own_route != action {
            return Err(MemoryError::ActionMismatch { action, observed: obs.own_route });
        }
        self.entries.push(MemoryEntry { period: obs.period, action, own_time: obs.own_time, group_counts: obs.group_counts });
        Ok(())
    }

    /// Builds a store from entries with strictly increasing periods. Gaps are
    /// allowed so partial histories can be represented.
    pub fn from_entries(entries: Vec<MemoryEntry>) -> Result<Self, MemoryError> {
        for w in entries.windows(2) {
            if w[1].period <= w[0].period {
                return Err(MemoryError::OutOfOrder { last: w[0].period, got: w[1].period });
            }
        }
        Ok(Self { entries })
    }

    /// Entries with period in `[max(1, t - len), t - 1]`.
    pub fn window(&self, t: u32, len: u32) -> &[MemoryEntry] {
        let lo = t.saturating_sub(len).max(1);
        let start = self.entries.partition_point(|e| e.period < lo);
        let end = self.entries.partition_point(|e| e.period < t);
        &self.entries[start..end.max(start)]
    }

    pub fn retrieve_short(&self, t: u32, cfg: &RetrievalConfig) -> &[MemoryEntry] {
        self.window(t, cfg.t_s)
    }

    pub fn retrieve_long(&self, t: u32, cfg: &RetrievalConfig) -> &[MemoryEntry] {
        self.window(t, cfg.t_l)
    }

    /// The store as it looked before period `t`.
    pub fn truncated_before(&self, t: u32) -> MemoryStore {
        let end = self.entries.partition_point(|e| e.period < t);
        MemoryStore { entries: self.entries[..end].to_vec() }
    }

    /// Choice made in the most recent stored period before `t`.
    pub fn previous_choice(&self, t: u32) -> Option<RouteId> {
        let end = self.entries.partition_point(|e| e.period < t);
        end.checked_sub(1).map(|i| self.entries[i].action)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn obs(period: u32, route: RouteId, time: f64) -> Observation {
        Observation { period, own_route: route, own_time: time, group_counts: GroupCounts { expressway: 5, local: 4 } }
    }

    fn filled(n: u32) -> MemoryStore {
        let mut s = MemoryStore::new();
        for p in 1..=n {
            s.perceive(RouteId::Expressway, &obs(p, RouteId::Expressway, 10.0 + p as f64)).unwrap();
        }
        s
    }

    #[test]
    fn perceive_appends() {
        let mut s = MemoryStore::new();
        s.perceive(RouteId::Local1, &obs(1, RouteId::Local1, 15.9)).unwrap();
        assert_eq!(s.len(), 1);

        let mut s = filled(80);
        let before = s.entries().to_vec();
        s.perceive(RouteId::Expressway, &obs(81, RouteId::Expressway, 3.0)).unwrap();
        assert_eq!(s.len(), 81);
        assert_eq!(&s.entries()[..80], &before[..]);
    }

    #[test]
    fn perceive_rejects_out_of_order() {
        let mut s = filled(80);
        assert_eq!(
            s.perceive(RouteId::Expressway, &obs(80, RouteId::Expressway, 1.0)),
            Err(MemoryError::OutOfOrder { last: 80, got: 80 })
        );
        assert_eq!(s.len(), 80);
        let mut empty = MemoryStore::new();
        assert!(empty.perceive(RouteId::Expressway, &obs(2, RouteId::Expressway, 1.0)).is_err());
    }

    #[test]
    fn retrieval_windows() {
        let s = filled(30);
        let cfg = RetrievalConfig::default();
        assert!(s.retrieve_short(1, &cfg).is_empty());
        assert!(s.retrieve_long(1, &cfg).is_empty());
        let periods: Vec<u32> = s.retrieve_short(10, &cfg).iter().map(|e| e.period).collect();
        assert_eq!(periods, vec![6, 7, 8, 9]);
        let periods: Vec<u32> = s.retrieve_long(3, &cfg).iter().map(|e| e.period).collect();
        assert_eq!(periods, vec![1, 2]);
        assert_eq!(s.retrieve_long(30, &cfg).len(), 24);
        assert_eq!(s.previous_choice(1), None);
        assert_eq!(s.previous_choice(5), Some(RouteId::Expressway));
    }

    #[test]
    fn rounding() {
        assert_eq!(round_tenth(5.375), 5.4);
        assert_eq!(round_tenth(16.115), 16.1);
        assert_eq!(format!("{:.1}", round_tenth(0.25)), "0.3");
    }

    proptest! {
        #[test]
        fn short_is_suffix_of_long(n in 0u32..60, t in 1u32..70, ts in 1u32..10, extra in 0u32..30) {
            let s = filled(n);
            let cfg = RetrievalConfig { t_s: ts, t_l: ts + extra };
            let short = s.retrieve_short(t, &cfg);
            let long = s.retrieve_long(t, &cfg);
            prop_assert!(long.ends_with(short));
            for e in long {
                prop_assert!(e.period < t && e.period >= t.saturating_sub(cfg.t_l).max(1));
            }
        }
    }
}
