//! Turns raw traces into alternating dwell/run event streams.
//!
//! A vehicle dwells when it is stationary inside a stop radius. Crossing a
//! radius without any stationary fix yields a zero-duration dwell placed at
//! the fix closest to the stop center. Running time spans from the end of one
//! dwell to the start of the next.

mod sampling;
mod weather;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_distance, point_to_chord_distance, within_stop_radius};
use crate::par;
use crate::types::{
    Conditions, DwellEvent, Event, GpsFix, Route, RunEvent, Segment, Site, StopId, Timestamp,
    VehicleId, WeatherRecord,
};

pub use sampling::{detect_sampling_rate_change, discard_low_rate, RateChange};
pub use weather::{floor_to_hour, join_weather};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMode {
    SpeedAndGps,
    GpsOnly,
}

/// Depot, parking lot or any other area whose fixes are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionZone {
    pub lat: f64,
    pub lon: f64,
    pub radius_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingRateCheck {
    /// Relative change of the rolling median period that counts as a change.
    pub tolerance: f64,
    /// Number of inter-fix periods on each side of a candidate boundary.
    pub window: usize,
    /// Drop the lower-rate side of every change (otherwise only report).
    pub discard_lower_rate: bool,
}

impl Default for SamplingRateCheck {
    fn default() -> Self {
        Self {
            tolerance: 0.5,
            window: 12,
            discard_lower_rate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub detection_mode: DetectionMode,
    /// meters; GPS-only mode treats smaller displacements as standstill
    pub jitter_threshold_m: f64,
    pub exclusion_zones: Vec<ExclusionZone>,
    /// Maximum distance from the stop-to-stop chords before a fix is off-route.
    pub corridor_m: f64,
    pub max_weather_gap_h: f64,
    /// Fix gaps longer than this split a vehicle trace into sessions.
    pub session_gap_s: f64,
    pub sampling_rate: Option<SamplingRateCheck>,
    /// vehicle id -> route id; vehicles not listed run the first route.
    pub vehicle_routes: BTreeMap<String, String>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            detection_mode: DetectionMode::SpeedAndGps,
            jitter_threshold_m: 2.0,
            exclusion_zones: Vec::new(),
            corridor_m: 100.0,
            max_weather_gap_h: 3.0,
            session_gap_s: 300.0,
            sampling_rate: None,
            vehicle_routes: BTreeMap::new(),
        }
    }
}

impl PreprocessConfig {
    pub fn gps_only(jitter_threshold_m: f64) -> Self {
        Self {
            detection_mode: DetectionMode::GpsOnly,
            jitter_threshold_m,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.detection_mode == DetectionMode::GpsOnly && !(self.jitter_threshold_m > 0.0) {
            return Err(Error::Config("jitter_threshold_m must be > 0 in gps_only mode".into()));
        }
        if self.exclusion_zones.iter().any(|z| !(z.radius_m > 0.0)) {
            return Err(Error::Config("exclusion zone radii must be > 0".into()));
        }
        if !(self.corridor_m > 0.0) || !(self.session_gap_s > 0.0) || self.max_weather_gap_h < 0.0 {
            return Err(Error::Config(
                "corridor_m and session_gap_s must be > 0, max_weather_gap_h >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// One event plus the weather joined onto it (`None` = weather missing).
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub event: Event,
    pub conditions: Option<Conditions>,
}

/// Per-vehicle, time-ordered dwell/run events.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventStream {
    pub records: Vec<EventRecord>,
}

impl EventStream {
    pub fn from_events(events: impl IntoIterator<Item = Event>) -> Self {
        let mut s = Self {
            records: events
                .into_iter()
                .map(|event| EventRecord {
                    event,
                    conditions: None,
                })
                .collect(),
        };
        s.sort();
        s
    }

    /// Sort by vehicle, then start, then end (dwell before run on ties).
    pub fn sort(&mut self) {
        self.records.sort_by(|a, b| {
            a.event
                .vehicle()
                .cmp(b.event.vehicle())
                .then(a.event.start().cmp(&b.event.start()))
                .then(a.event.end().cmp(&b.event.end()))
                .then(a.event.target().cmp(&b.event.target()))
        });
    }

    pub fn events(&self) -> impl Iterator<Item = &Event> {
        self.records.iter().map(|r| &r.event)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn vehicles(&self) -> Vec<VehicleId> {
        let mut v: Vec<VehicleId> = self.events().map(|e| e.vehicle().clone()).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn by_vehicle(&self) -> BTreeMap<VehicleId, Vec<&EventRecord>> {
        let mut out: BTreeMap<VehicleId, Vec<&EventRecord>> = BTreeMap::new();
        for r in &self.records {
            out.entry(r.event.vehicle().clone()).or_default().push(r);
        }
        out
    }
}

/// Standstill test between consecutive fixes of one vehicle.
pub fn is_stationary(prev: &GpsFix, cur: &GpsFix, config: &PreprocessConfig) -> Result<bool> {
    match config.detection_mode {
        DetectionMode::SpeedAndGps => match cur.speed {
            Some(s) => Ok(s == 0.0),
            None => Err(Error::Config(format!(
                "speed_and_gps mode but fix of {} at {} has no speed",
                cur.vehicle_id, cur.timestamp
            ))),
        },
        DetectionMode::GpsOnly => {
            let d = haversine_distance((prev.lat, prev.lon), (cur.lat, cur.lon));
            Ok(d < config.jitter_threshold_m)
        }
    }
}

fn stationary_flags(fixes: &[GpsFix], config: &PreprocessConfig) -> Result<Vec<bool>> {
    let mut out = Vec::with_capacity(fixes.len());
    for (i, cur) in fixes.iter().enumerate() {
        let flag = match (config.detection_mode, i) {
            // no displacement to compare against yet
            (DetectionMode::GpsOnly, 0) => false,
            (_, 0) => is_stationary(cur, cur, config)?,
            _ => is_stationary(&fixes[i - 1], cur, config)?,
        };
        out.push(flag);
    }
    Ok(out)
}

fn in_exclusion_zone(fix: &GpsFix, zones: &[ExclusionZone]) -> bool {
    zones
        .iter()
        .any(|z| haversine_distance((fix.lat, fix.lon), (z.lat, z.lon)) <= z.radius_m)
}

/// Drops fixes inside exclusion zones or farther than the corridor from every
/// chord of the route. Order is retained.
pub fn exclude_off_route(
    trace: &[GpsFix],
    route: &Route,
    site: &Site,
    config: &PreprocessConfig,
) -> Vec<GpsFix> {
    let chords: Vec<((f64, f64), (f64, f64))> = route
        .segments()
        .iter()
        .filter_map(|s| {
            let a = site.stop(&s.from_stop)?;
            let b = site.stop(&s.to_stop)?;
            Some(((a.lat, a.lon), (b.lat, b.lon)))
        })
        .collect();
    trace
        .iter()
        .filter(|f| !in_exclusion_zone(f, &config.exclusion_zones))
        .filter(|f| {
            chords
                .iter()
                .any(|&(a, b)| point_to_chord_distance((f.lat, f.lon), a, b) <= config.corridor_m)
        })
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StopResolution {
    Stop(StopId),
    Outside,
    /// Overlapping radii with no legal successor of the last visited stop.
    Ambiguous(Vec<StopId>),
}

/// Maps a fix to the stop it belongs to, disambiguating overlapping radii by
/// the route order (and its stop-order exceptions).
pub fn resolve_stop(
    fix: &GpsFix,
    route: &Route,
    site: &Site,
    last_visited: Option<&StopId>,
) -> StopResolution {
    let mut candidates: Vec<StopId> = Vec::new();
    for id in route.stops.iter().chain(route.stop_order_exceptions.iter().flatten()) {
        if candidates.contains(id) {
            continue;
        }
        if let Some(stop) = site.stop(id) {
            if within_stop_radius(fix, stop) {
                candidates.push(id.clone());
            }
        }
    }
    match candidates.len() {
        0 => StopResolution::Outside,
        1 => StopResolution::Stop(candidates.remove(0)),
        _ => {
            let Some(last) = last_visited else {
                return StopResolution::Ambiguous(candidates);
            };
            // still at the stop we were last resolved to
            if candidates.contains(last) {
                return StopResolution::Stop(last.clone());
            }
            let next = route.successors(last);
            let legal: Vec<&StopId> = candidates.iter().filter(|c| next.contains(*c)).collect();
            if legal.len() == 1 {
                StopResolution::Stop(legal[0].clone())
            } else {
                StopResolution::Ambiguous(candidates)
            }
        }
    }
}

/// Events detected on one trace plus human-readable diagnostics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Detection {
    pub events: Vec<Event>,
    pub diagnostics: Vec<String>,
}

struct Visit {
    stop: StopId,
    fixes: Vec<usize>,
}

/// Detects dwell and run events on a single-vehicle, time-ordered trace.
pub fn detect_events(
    trace: &[GpsFix],
    route: &Route,
    site: &Site,
    config: &PreprocessConfig,
) -> Result<Detection> {
    let mut out = Detection::default();
    if trace.is_empty() {
        return Ok(out);
    }
    let vehicle = trace[0].vehicle_id.clone();
    for w in trace.windows(2) {
        if w[1].vehicle_id != vehicle {
            return Err(Error::invalid("detect_events expects a single-vehicle trace"));
        }
        if w[1].timestamp <= w[0].timestamp {
            return Err(Error::invalid(format!(
                "trace of {vehicle} not strictly time-ordered at {}",
                w[1].timestamp
            )));
        }
    }

    let fixes = exclude_off_route(trace, route, site, config);
    if fixes.is_empty() {
        out.diagnostics
            .push(format!("{vehicle}: all {} fixes excluded or off-route", trace.len()));
        return Ok(out);
    }
    let n = fixes.len();
    let stationary = stationary_flags(&fixes, config)?;

    let mut visits: Vec<Visit> = Vec::new();
    let mut state: Option<StopId> = None;
    for (i, fix) in fixes.iter().enumerate() {
        match resolve_stop(fix, route, site, state.as_ref()) {
            StopResolution::Stop(s) => {
                match visits.last_mut() {
                    Some(v) if v.stop == s => v.fixes.push(i),
                    _ => visits.push(Visit {
                        stop: s.clone(),
                        fixes: vec![i],
                    }),
                }
                state = Some(s);
            }
            StopResolution::Outside => {}
            StopResolution::Ambiguous(c) => out.diagnostics.push(format!(
                "{vehicle}: fix at {} inside overlapping radii {:?} with no legal successor; skipped",
                fix.timestamp,
                c.iter().map(|s| s.as_str()).collect::<Vec<_>>()
            )),
        }
    }
    if visits.is_empty() {
        out.diagnostics.push(format!("{vehicle}: trace never enters a stop radius"));
        return Ok(out);
    }

    // (stop, dwell start, dwell end if observed)
    let mut prev: Option<(StopId, Option<Timestamp>)> = None;
    for v in visits {
        let stat: Vec<usize> = v.fixes.iter().copied().filter(|&k| stationary[k]).collect();
        let (start, end) = match (stat.first(), stat.last()) {
            (Some(&a), Some(&b)) => {
                let end = (b + 1 < n).then(|| fixes[b + 1].timestamp);
                (fixes[a].timestamp, end)
            }
            _ => {
                let (first, last) = (v.fixes[0], *v.fixes.last().unwrap());
                if first == 0 || last == n - 1 {
                    // radius crossing cut by the trace boundary: not a bypass we can time
                    prev = None;
                    continue;
                }
                let stop = site.stop(&v.stop).expect("route stops resolve");
                let closest = v
                    .fixes
                    .iter()
                    .copied()
                    .min_by(|&a, &b| {
                        let da = haversine_distance((fixes[a].lat, fixes[a].lon), (stop.lat, stop.lon));
                        let db = haversine_distance((fixes[b].lat, fixes[b].lon), (stop.lat, stop.lon));
                        da.total_cmp(&db)
                    })
                    .unwrap();
                let t = closest_approach(&fixes, closest, (stop.lat, stop.lon));
                (t, Some(t))
            }
        };

        if let Some((prev_stop, prev_end)) = &prev {
            match prev_end {
                Some(pe) if route.has_segment(prev_stop, &v.stop) => {
                    if start > *pe {
                        out.events.push(Event::Run(RunEvent {
                            vehicle_id: vehicle.clone(),
                            segment: Segment::new(prev_stop.clone(), v.stop.clone()),
                            start: *pe,
                            end: start,
                        }));
                    } else {
                        out.diagnostics.push(format!(
                            "{vehicle}: non-positive running time {prev_stop}->{} at {start}",
                            v.stop
                        ));
                    }
                }
                Some(_) => out.diagnostics.push(format!(
                    "{vehicle}: {prev_stop}->{} at {start} is not a route segment (missed stop?)",
                    v.stop
                )),
                None => {}
            }
        }
        if let Some(e) = end {
            out.events.push(Event::Dwell(DwellEvent {
                vehicle_id: vehicle.clone(),
                stop_id: v.stop.clone(),
                start,
                end: e,
            }));
        }
        prev = Some((v.stop, end));
    }
    Ok(out)
}

/// Time of minimum distance to `center` around the closest fix `c`. With a
/// speed channel the passage is extrapolated from the fix before `c`, which
/// still lies on the approach chord; otherwise the closest fix is used.
fn closest_approach(fixes: &[GpsFix], c: usize, center: (f64, f64)) -> Timestamp {
    let t_c = fixes[c].timestamp;
    if c == 0 || c + 1 >= fixes.len() {
        return t_c;
    }
    let p = &fixes[c - 1];
    match p.speed {
        Some(v) if v > 0.0 => {
            let d = haversine_distance((p.lat, p.lon), center);
            let t = crate::types::add_secs(p.timestamp, d / (v / 3.6));
            t.clamp(p.timestamp, fixes[c + 1].timestamp)
        }
        _ => t_c,
    }
}

/// Splits a time-ordered trace wherever consecutive fixes are more than
/// `gap_s` apart.
pub fn split_sessions(trace: &[GpsFix], gap_s: f64) -> Vec<&[GpsFix]> {
    let mut out = Vec::new();
    let mut begin = 0;
    for i in 1..trace.len() {
        if crate::types::secs_between(trace[i - 1].timestamp, trace[i].timestamp) > gap_s {
            out.push(&trace[begin..i]);
            begin = i;
        }
    }
    if begin < trace.len() {
        out.push(&trace[begin..]);
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOutput {
    pub stream: EventStream,
    pub rate_changes: Vec<(VehicleId, RateChange)>,
    pub diagnostics: Vec<String>,
}

/// Full preprocessing: group by vehicle, drop lower-rate data, split sessions,
/// detect events and join weather. Vehicles are processed in parallel.
pub fn run_pipeline(
    fixes: &[GpsFix],
    site: &Site,
    weather: &[WeatherRecord],
    config: &PreprocessConfig,
) -> Result<PipelineOutput> {
    config.validate()?;
    if site.routes.is_empty() {
        return Err(Error::invalid("site has no routes"));
    }
    let mut by_vehicle: BTreeMap<VehicleId, Vec<GpsFix>> = BTreeMap::new();
    for f in fixes {
        by_vehicle.entry(f.vehicle_id.clone()).or_default().push(f.clone());
    }
    let groups: Vec<(VehicleId, Vec<GpsFix>)> = by_vehicle.into_iter().collect();

    let per_vehicle = par::map(&groups, |(vehicle, trace)| -> Result<PipelineOutput> {
        let mut trace = trace.clone();
        trace.sort_by_key(|f| f.timestamp);
        trace.dedup_by_key(|f| f.timestamp);
        let route = match config.vehicle_routes.get(vehicle.as_str()) {
            Some(id) => site
                .route(id)
                .ok_or_else(|| Error::Config(format!("vehicle {vehicle}: unknown route {id}")))?,
            None => &site.routes[0],
        };
        let mut out = PipelineOutput::default();
        if let Some(check) = &config.sampling_rate {
            let changes = detect_sampling_rate_change(&trace, check.tolerance, check.window);
            if !changes.is_empty() && check.discard_lower_rate {
                let before = trace.len();
                trace = discard_low_rate(&trace, &changes, check.tolerance);
                out.diagnostics.push(format!(
                    "{vehicle}: {} rate change(s); discarded {} lower-rate fixes",
                    changes.len(),
                    before - trace.len()
                ));
            }
            out.rate_changes
                .extend(changes.into_iter().map(|c| (vehicle.clone(), c)));
        }
        let mut events = Vec::new();
        for session in split_sessions(&trace, config.session_gap_s) {
            let d = detect_events(session, route, site, config)?;
            events.extend(d.events);
            out.diagnostics.extend(d.diagnostics);
        }
        out.stream = EventStream::from_events(events);
        Ok(out)
    });

    let mut merged = PipelineOutput::default();
    let mut events = Vec::new();
    for r in per_vehicle {
        let r = r?;
        events.extend(r.stream.records.into_iter().map(|x| x.event));
        merged.rate_changes.extend(r.rate_changes);
        merged.diagnostics.extend(r.diagnostics);
    }
    merged.stream = join_weather(EventStream::from_events(events), weather, config.max_weather_gap_h)?;
    Ok(merged)
}

#[cfg(test)]
mod tests;
