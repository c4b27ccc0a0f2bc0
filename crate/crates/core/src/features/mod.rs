//! Lagged feature construction.
//!
//! A row for vehicle `i`, key `j` (stop or segment) at time `t` holds the
//! cyclic time encoding, hourly weather, one-hot vehicle and key, and the two
//! most recent observed durations on `j`. An observation becomes usable as a
//! lag once it has ended, and only strictly before `t`.

mod dataset;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::types::{Timestamp, VehicleId};

pub use dataset::{assemble_dataset, Dataset, FeatureEncoder, FeatureRow, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagScope {
    /// Lags come from the same vehicle's history on the key.
    PerVehicle,
    /// Lags come from any vehicle's history on the key.
    Fleet,
}

impl LagScope {
    pub fn as_str(self) -> &'static str {
        match self {
            LagScope::PerVehicle => "per_vehicle",
            LagScope::Fleet => "fleet",
        }
    }
}

impl std::str::FromStr for LagScope {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "per_vehicle" | "per-vehicle" => Ok(LagScope::PerVehicle),
            "fleet" => Ok(LagScope::Fleet),
            other => Err(crate::Error::invalid(format!("unknown lag scope {other:?}"))),
        }
    }
}

/// One observed duration on a key.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub vehicle: VehicleId,
    pub key: String,
    pub start: Timestamp,
    /// When the duration became known.
    pub end: Timestamp,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lags {
    /// most recent observation, seconds
    pub l1: f64,
    /// second most recent observation, seconds
    pub l2: f64,
    pub imputed: [bool; 2],
}

#[derive(Debug, Default)]
struct Series {
    ends: Vec<Timestamp>,
    values: Vec<f64>,
    /// prefix[k] = sum of the first k values
    prefix: Vec<f64>,
}

impl Series {
    fn from_pairs(mut pairs: Vec<(Timestamp, f64)>) -> Self {
        pairs.sort_by_key(|p| p.0);
        let mut prefix = Vec::with_capacity(pairs.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for p in &pairs {
            acc += p.1;
            prefix.push(acc);
        }
        Self {
            ends: pairs.iter().map(|p| p.0).collect(),
            values: pairs.iter().map(|p| p.1).collect(),
            prefix,
        }
    }

    fn available_before(&self, t: Timestamp) -> usize {
        self.ends.partition_point(|e| *e < t)
    }

    fn mean_of_first(&self, k: usize) -> Option<f64> {
        (k > 0).then(|| self.prefix[k] / k as f64)
    }
}

/// Time-indexed observation history answering "what were the lags on key
/// `j` for vehicle `i` at time `t`" without looking at anything that ended at
/// or after `t`.
#[derive(Debug)]
pub struct LagIndex {
    scope: LagScope,
    /// scope group -> key -> series
    by_key: HashMap<Option<VehicleId>, HashMap<String, Series>>,
    /// scope group -> all keys
    by_group: HashMap<Option<VehicleId>, Series>,
}

impl LagIndex {
    pub fn new(observations: &[Observation], scope: LagScope) -> Self {
        let group = |v: &VehicleId| match scope {
            LagScope::PerVehicle => Some(v.clone()),
            LagScope::Fleet => None,
        };
        let mut keyed: HashMap<Option<VehicleId>, HashMap<String, Vec<(Timestamp, f64)>>> =
            HashMap::new();
        let mut grouped: HashMap<Option<VehicleId>, Vec<(Timestamp, f64)>> = HashMap::new();
        for o in observations {
            let g = group(&o.vehicle);
            keyed
                .entry(g.clone())
                .or_default()
                .entry(o.key.clone())
                .or_default()
                .push((o.end, o.value));
            grouped.entry(g).or_default().push((o.end, o.value));
        }
        Self {
            scope,
            by_key: keyed
                .into_iter()
                .map(|(g, m)| (g, m.into_iter().map(|(k, v)| (k, Series::from_pairs(v))).collect()))
                .collect(),
            by_group: grouped
                .into_iter()
                .map(|(g, v)| (g, Series::from_pairs(v)))
                .collect(),
        }
    }

    pub fn scope(&self) -> LagScope {
        self.scope
    }

    /// Missing lags fall back to the causal mean on the key, then the causal
    /// mean over all keys (both within the scope), then 0.
    pub fn lags_at(&self, vehicle: &VehicleId, key: &str, t: Timestamp) -> Lags {
        let g = match self.scope {
            LagScope::PerVehicle => Some(vehicle.clone()),
            LagScope::Fleet => None,
        };
        let series = self.by_key.get(&g).and_then(|m| m.get(key));
        let (n, recent) = match series {
            Some(s) => {
                let n = s.available_before(t);
                (n, s)
            }
            None => (0, &EMPTY_SERIES),
        };
        let fallback = || {
            recent.mean_of_first(n).unwrap_or_else(|| {
                self.by_group
                    .get(&g)
                    .and_then(|s| s.mean_of_first(s.available_before(t)))
                    .unwrap_or(0.0)
            })
        };
        let (l1, i1) = if n >= 1 {
            (recent.values[n - 1], false)
        } else {
            (fallback(), true)
        };
        let (l2, i2) = if n >= 2 {
            (recent.values[n - 2], false)
        } else {
            (fallback(), true)
        };
        Lags {
            l1,
            l2,
            imputed: [i1, i2],
        }
    }
}

static EMPTY_SERIES: Series = Series {
    ends: Vec::new(),
    values: Vec::new(),
    prefix: Vec::new(),
};

/// Lags for every observation, evaluated at its own start time.
pub fn build_lags(observations: &[Observation], scope: LagScope) -> Vec<Lags> {
    let index = LagIndex::new(observations, scope);
    observations
        .iter()
        .map(|o| index.lags_at(&o.vehicle, &o.key, o.start))
        .collect()
}
