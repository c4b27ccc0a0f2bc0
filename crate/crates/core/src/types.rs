//! Domain types shared by every stage of the pipeline.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Timestamp = DateTime<Utc>;

/// Seconds from `a` to `b` at microsecond resolution.
pub fn secs_between(a: Timestamp, b: Timestamp) -> f64 {
    let d = b - a;
    match d.num_microseconds() {
        Some(us) => us as f64 / 1e6,
        None => d.num_milliseconds() as f64 / 1e3,
    }
}

/// `t + secs`, rounded to the nearest microsecond.
pub fn add_secs(t: Timestamp, secs: f64) -> Timestamp {
    t + Duration::microseconds((secs * 1e6).round() as i64)
}

macro_rules! string_id {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

string_id!(VehicleId);
string_id!(StopId);

/// One telemetry sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpsFix {
    pub vehicle_id: VehicleId,
    pub timestamp: Timestamp,
    pub lat: f64,
    pub lon: f64,
    /// km/h; absent on GPS-only sites.
    pub speed: Option<f64>,
}

impl GpsFix {
    pub fn new(
        vehicle_id: VehicleId,
        timestamp: Timestamp,
        lat: f64,
        lon: f64,
        speed: Option<f64>,
    ) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::invalid(format!("coordinate out of range: ({lat}, {lon})")));
        }
        if let Some(s) = speed {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::invalid(format!("speed must be finite and >= 0, got {s}")));
            }
        }
        Ok(Self {
            vehicle_id,
            timestamp,
            lat,
            lon,
            speed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stop {
    pub stop_id: StopId,
    #[serde(default)]
    pub name: String,
    pub lat: f64,
    pub lon: f64,
    /// meters
    pub radius: f64,
}

/// Directed stop-to-stop portion of a route.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Segment {
    pub from_stop: StopId,
    pub to_stop: StopId,
}

impl Segment {
    pub const SEPARATOR: &'static str = "->";

    pub fn new(from_stop: StopId, to_stop: StopId) -> Self {
        Self { from_stop, to_stop }
    }

    /// Key string used in datasets and event files, e.g. `S1->S2`.
    pub fn key(&self) -> String {
        format!("{}{}{}", self.from_stop, Self::SEPARATOR, self.to_stop)
    }

    pub fn parse_key(key: &str) -> Option<Self> {
        let (a, b) = key.split_once(Self::SEPARATOR)?;
        if a.is_empty() || b.is_empty() || a == b {
            return None;
        }
        Some(Self::new(StopId::from(a), StopId::from(b)))
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub route_id: String,
    pub stops: Vec<StopId>,
    /// Alternative visit orders for zones where stop radii overlap.
    #[serde(default)]
    pub stop_order_exceptions: Vec<Vec<StopId>>,
}

impl Route {
    /// A route whose last stop equals its first is driven as a loop.
    pub fn is_closed(&self) -> bool {
        self.stops.len() > 2 && self.stops.first() == self.stops.last()
    }

    fn sequences(&self) -> impl Iterator<Item = &Vec<StopId>> {
        std::iter::once(&self.stops).chain(self.stop_order_exceptions.iter())
    }

    /// Directed segments in route order, followed by any extra pairs only
    /// reachable through the stop-order exceptions.
    pub fn segments(&self) -> Vec<Segment> {
        let mut out: Vec<Segment> = Vec::new();
        for seq in self.sequences() {
            for w in seq.windows(2) {
                let s = Segment::new(w[0].clone(), w[1].clone());
                if !out.contains(&s) {
                    out.push(s);
                }
            }
        }
        out
    }

    /// Main-order segments only, one per consecutive stop pair.
    pub fn ordered_segments(&self) -> Vec<Segment> {
        self.stops
            .windows(2)
            .map(|w| Segment::new(w[0].clone(), w[1].clone()))
            .collect()
    }

    pub fn has_segment(&self, from: &StopId, to: &StopId) -> bool {
        self.sequences()
            .any(|seq| seq.windows(2).any(|w| &w[0] == from && &w[1] == to))
    }

    /// Stops that may legally follow `stop`.
    pub fn successors(&self, stop: &StopId) -> BTreeSet<StopId> {
        let mut out = BTreeSet::new();
        for seq in self.sequences() {
            for w in seq.windows(2) {
                if &w[0] == stop {
                    out.insert(w[1].clone());
                }
            }
        }
        out
    }

    pub fn contains(&self, stop: &StopId) -> bool {
        self.sequences().any(|seq| seq.contains(stop))
    }
}

/// Stops and routes of one pilot site.
#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub stops: Vec<Stop>,
    pub routes: Vec<Route>,
    index: HashMap<StopId, usize>,
}

impl Site {
    pub fn new(stops: Vec<Stop>, routes: Vec<Route>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, s) in stops.iter().enumerate() {
            if !(s.radius > 0.0) {
                return Err(Error::invalid(format!("stop {} has non-positive radius", s.stop_id)));
            }
            if index.insert(s.stop_id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate stop id {}", s.stop_id)));
            }
        }
        for r in &routes {
            if r.stops.len() < 2 {
                return Err(Error::invalid(format!("route {} has fewer than 2 stops", r.route_id)));
            }
            for seq in r.sequences() {
                for w in seq.windows(2) {
                    if w[0] == w[1] {
                        return Err(Error::invalid(format!(
                            "route {} repeats stop {} consecutively",
                            r.route_id, w[0]
                        )));
                    }
                }
                for s in seq {
                    if !index.contains_key(s) {
                        return Err(Error::invalid(format!(
                            "route {} references unknown stop {s}",
                            r.route_id
                        )));
                    }
                }
            }
        }
        Ok(Self {
            stops,
            routes,
            index,
        })
    }

    pub fn stop(&self, id: &StopId) -> Option<&Stop> {
        self.index.get(id).map(|&i| &self.stops[i])
    }

    pub fn route(&self, route_id: &str) -> Option<&Route> {
        self.routes.iter().find(|r| r.route_id == route_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellEvent {
    pub vehicle_id: VehicleId,
    pub stop_id: StopId,
    pub start: Timestamp,
    pub end: Timestamp,
}

impl DwellEvent {
    pub fn duration(&self) -> f64 {
        secs_between(self.start, self.end)
    }

    pub fn is_bypass(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEvent {
    pub vehicle_id: VehicleId,
    pub segment: Segment,
    pub start: Timestamp,
    pub end: Timestamp,
}

impl RunEvent {
    pub fn duration(&self) -> f64 {
        secs_between(self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Dwell,
    Run,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::Dwell => "dwell",
            Target::Run => "run",
        }
    }

    /// Physical lower bound applied to regression outputs.
    pub fn floor(self) -> f64 {
        match self {
            Target::Dwell => 0.0,
            Target::Run => 1.0,
        }
    }
}

impl std::str::FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dwell" => Ok(Target::Dwell),
            "run" => Ok(Target::Run),
            other => Err(Error::invalid(format!("unknown target {other:?}"))),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Event {
    Dwell(DwellEvent),
    Run(RunEvent),
}

impl Event {
    pub fn target(&self) -> Target {
        match self {
            Event::Dwell(_) => Target::Dwell,
            Event::Run(_) => Target::Run,
        }
    }

    pub fn vehicle(&self) -> &VehicleId {
        match self {
            Event::Dwell(d) => &d.vehicle_id,
            Event::Run(r) => &r.vehicle_id,
        }
    }

    pub fn start(&self) -> Timestamp {
        match self {
            Event::Dwell(d) => d.start,
            Event::Run(r) => r.start,
        }
    }

    pub fn end(&self) -> Timestamp {
        match self {
            Event::Dwell(d) => d.end,
            Event::Run(r) => r.end,
        }
    }

    pub fn duration(&self) -> f64 {
        secs_between(self.start(), self.end())
    }

    /// Stop id for dwell events, `from->to` for run events.
    pub fn key(&self) -> String {
        match self {
            Event::Dwell(d) => d.stop_id.0.clone(),
            Event::Run(r) => r.segment.key(),
        }
    }
}

/// Hourly weather observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherRecord {
    /// Truncated to the hour.
    pub hour: Timestamp,
    pub conditions: Conditions,
}

/// Weather values joined onto an event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conditions {
    /// °C
    pub temperature: f64,
    /// mm/h
    pub precipitation: f64,
    /// m/s
    pub windspeed: f64,
}

impl Conditions {
    pub fn to_array(self) -> [f64; 3] {
        [self.temperature, self.precipitation, self.windspeed]
    }
}
