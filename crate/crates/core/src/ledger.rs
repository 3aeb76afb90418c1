//! Reservation bookkeeping for flow sessions. Quantities are stored in
//! fixed-point micro-units so allocations and releases cancel exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SCALE: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceKey {
    Link(String),
    Cpu(String),
    Net(String),
    Ram(String),
}

/// An amount held by a session, in fixed-point micro-units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Units(pub i64);

impl Units {
    pub fn from_f64(v: f64) -> Self {
        Units((v * SCALE).round() as i64)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / SCALE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRelease {
    pub flow_id: String,
    pub class: u32,
    pub start_slot: u64,
    pub holdings: Vec<(ResourceKey, Units)>,
    pub released: bool,
}

/// Tracks every open reservation session and the total held per resource.
#[derive(Debug, Clone, Default)]
pub struct ResourceLedger {
    sessions: BTreeMap<(String, u64), FlowRelease>,
    held: BTreeMap<ResourceKey, i64>,
    allocated_total: i64,
    released_total: i64,
}

impl ResourceLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens the session `(flow_id, start_slot)`. Reopening a live session is
    /// rejected as a double allocation.
    pub fn allocate(
        &mut self,
        flow_id: &str,
        class: u32,
        start_slot: u64,
        holdings: impl IntoIterator<Item = (ResourceKey, f64)>,
    ) -> Result<()> {
        let key = (flow_id.to_string(), start_slot);
        if self.sessions.get(&key).is_some_and(|s| !s.released) {
            return Err(Error::invalid(
                "flow session",
                format!("{flow_id}@{start_slot} already allocated"),
            ));
        }
        let holdings: Vec<(ResourceKey, Units)> = holdings
            .into_iter()
            .map(|(k, v)| (k, Units::from_f64(v)))
            .collect();
        for (k, u) in &holdings {
            *self.held.entry(k.clone()).or_insert(0) += u.0;
            self.allocated_total += u.0;
        }
        self.sessions.insert(
            key,
            FlowRelease {
                flow_id: flow_id.to_string(),
                class,
                start_slot,
                holdings,
                released: false,
            },
        );
        Ok(())
    }

    /// Returns everything the session holds. A second release of the same
    /// session is an error.
    pub fn release_resources(&mut self, flow_id: &str, start_slot: u64) -> Result<FlowRelease> {
        let key = (flow_id.to_string(), start_slot);
        let Some(session) = self.sessions.get_mut(&key) else {
            return Err(Error::UnknownRelease {
                flow: flow_id.to_string(),
                start_slot,
            });
        };
        if session.released {
            return Err(Error::DoubleRelease {
                flow: flow_id.to_string(),
                start_slot,
            });
        }
        session.released = true;
        for (k, u) in &session.holdings {
            *self.held.get_mut(k).expect("held entry") -= u.0;
            self.released_total += u.0;
        }
        Ok(session.clone())
    }

    pub fn held(&self, key: &ResourceKey) -> f64 {
        Units(self.held.get(key).copied().unwrap_or(0)).to_f64()
    }

    pub fn open_sessions(&self) -> impl Iterator<Item = &FlowRelease> {
        self.sessions.values().filter(|s| !s.released)
    }

    /// `allocated - released` minus what open sessions hold; zero when the
    /// books balance.
    pub fn imbalance(&self) -> i64 {
        let open: i64 = self
            .open_sessions()
            .flat_map(|s| s.holdings.iter())
            .map(|(_, u)| u.0)
            .sum();
        let held: i64 = self.held.values().sum();
        (self.allocated_total - self.released_total - open).abs() + (held - open).abs()
    }

    /// Releases every open session, e.g. at scenario end.
    pub fn release_all(&mut self) -> Result<()> {
        let keys: Vec<(String, u64)> = self
            .sessions
            .iter()
            .filter(|(_, s)| !s.released)
            .map(|(k, _)| k.clone())
            .collect();
        for (flow, t0) in keys {
            self.release_resources(&flow, t0)?;
        }
        Ok(())
    }

    pub fn all_zero(&self) -> bool {
        self.held.values().all(|v| *v == 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn release_returns_holdings() {
        let mut l = ResourceLedger::new();
        l.allocate(
            "f1",
            0,
            0,
            [
                (ResourceKey::Link("a".into()), 0.3),
                (ResourceKey::Cpu("s1".into()), 1.7),
            ],
        )
        .unwrap();
        l.allocate("f2", 0, 5, [(ResourceKey::Link("a".into()), 0.1)])
            .unwrap();
        assert!((l.held(&ResourceKey::Link("a".into())) - 0.4).abs() < 1e-12);
        assert_eq!(l.imbalance(), 0);
        l.release_resources("f1", 0).unwrap();
        assert!((l.held(&ResourceKey::Link("a".into())) - 0.1).abs() < 1e-12);
        assert_eq!(l.imbalance(), 0);
        l.release_all().unwrap();
        assert!(l.all_zero());
        assert_eq!(l.imbalance(), 0);
    }

    #[test]
    fn double_and_unknown_release_rejected() {
        let mut l = ResourceLedger::new();
        l.allocate("f", 1, 3, [(ResourceKey::Ram("s".into()), 2.0)])
            .unwrap();
        l.release_resources("f", 3).unwrap();
        assert!(matches!(
            l.release_resources("f", 3),
            Err(Error::DoubleRelease { .. })
        ));
        assert!(matches!(
            l.release_resources("g", 3),
            Err(Error::UnknownRelease { .. })
        ));
        assert!(l.allocate("f", 1, 4, []).is_ok());
        assert!(l.allocate("f", 1, 4, []).is_err());
    }
}
