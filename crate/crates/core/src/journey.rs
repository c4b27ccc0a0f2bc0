//! Journey-level travel times: running times between consecutive stops plus
//! the dwell times at every intermediate stop.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::{LagIndex, Observation};
use crate::graph::SnapshotQuery;
use crate::models::ModelArtifact;
use crate::preprocess::EventStream;
use crate::timeenc::encode_time;
use crate::types::{add_secs, Conditions, Event, Route, Segment, StopId, Target, Timestamp, VehicleId};

/// `T_{i,j}` given the run predictions for segments `i..j` and the dwell
/// predictions for the stops strictly between `i` and `j`.
pub fn aggregate_travel_time(run_preds: &[f64], dwell_preds: &[f64]) -> Result<f64> {
    Ok(*cumulative_travel_times(run_preds, dwell_preds)?.last().expect("non-empty"))
}

/// `[T_{i,i}, T_{i,i+1}, ..., T_{i,j}]`.
pub fn cumulative_travel_times(run_preds: &[f64], dwell_preds: &[f64]) -> Result<Vec<f64>> {
    if dwell_preds.len() + 1 != run_preds.len().max(1) || (run_preds.is_empty() && !dwell_preds.is_empty()) {
        return Err(Error::invalid(format!(
            "{} segment predictions need {} intermediate dwell predictions, got {}",
            run_preds.len(),
            run_preds.len().saturating_sub(1),
            dwell_preds.len()
        )));
    }
    if let Some(bad) = run_preds.iter().chain(dwell_preds).find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::invalid(format!("prediction {bad} is not a finite non-negative duration")));
    }
    let mut out = Vec::with_capacity(run_preds.len() + 1);
    out.push(0.0);
    let mut t = 0.0;
    for (k, r) in run_preds.iter().enumerate() {
        if k > 0 {
            t += dwell_preds[k - 1];
        }
        t += r;
        out.push(t);
    }
    Ok(out)
}

/// One event to predict inside a journey.
#[derive(Debug, Clone)]
pub struct SegmentRequest<'a> {
    pub target: Target,
    pub vehicle: &'a VehicleId,
    /// stop id (dwell) or segment key (run)
    pub key: String,
    /// stop index of the dwell, or of the segment's origin
    pub index: usize,
    pub departure: Timestamp,
    /// estimated start of the event, from predictions so far
    pub at: Timestamp,
    pub weather: [f64; 3],
}

pub trait SegmentPredictor: Sync {
    fn predict(&self, req: &SegmentRequest) -> Result<f64>;
}

/// A trained model with lag state frozen at departure time.
pub struct ModelPredictor<'a> {
    pub model: &'a ModelArtifact,
    history: LagIndex,
}

impl<'a> ModelPredictor<'a> {
    pub fn new(model: &'a ModelArtifact, observations: &[Observation]) -> Self {
        Self {
            model,
            history: LagIndex::new(observations, model.scope),
        }
    }

    pub fn from_stream(model: &'a ModelArtifact, stream: &EventStream) -> Self {
        Self::new(model, &observations(stream, model.target))
    }
}

impl SegmentPredictor for ModelPredictor<'_> {
    fn predict(&self, req: &SegmentRequest) -> Result<f64> {
        if req.target != self.model.target {
            return Err(Error::invalid(format!(
                "{} model asked for a {} prediction",
                self.model.target, req.target
            )));
        }
        let lags = self.history.lags_at(req.vehicle, &req.key, req.departure);
        let time_enc = encode_time(req.at);
        self.model.predict_query(
            &SnapshotQuery {
                vehicle: req.vehicle,
                timestamp: req.departure,
                time_enc: &time_enc,
                weather: &req.weather,
                key: &req.key,
                lags,
            },
            &self.history,
        )
    }
}

pub fn observations(stream: &EventStream, target: Target) -> Vec<Observation> {
    stream
        .events()
        .filter(|e| e.target() == target)
        .map(|e| Observation {
            vehicle: e.vehicle().clone(),
            key: e.key(),
            start: e.start(),
            end: e.end(),
            value: e.duration(),
        })
        .collect()
}

/// Cumulative predicted travel times from the origin along a stop sequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JourneyPrediction {
    pub origin: usize,
    /// `cumulative[j - origin] = T_{origin,j}`
    pub cumulative: Vec<f64>,
    pub run_preds: Vec<f64>,
    pub dwell_preds: Vec<f64>,
    pub dwell_sum: f64,
    pub run_sum: f64,
}

/// Predicts `T_{i,m}` for every `m` in `i..=j` along `stops`, with lag state
/// frozen at `departure`.
#[allow(clippy::too_many_arguments)]
pub fn predict_journey(
    dwell: &dyn SegmentPredictor,
    run: &dyn SegmentPredictor,
    vehicle: &VehicleId,
    departure: Timestamp,
    weather: Conditions,
    stops: &[StopId],
    i: usize,
    j: usize,
) -> Result<JourneyPrediction> {
    if i >= j || j >= stops.len() {
        return Err(Error::invalid(format!(
            "journey needs origin < destination on a {}-stop sequence, got {i}..{j}",
            stops.len()
        )));
    }
    let weather = weather.to_array();
    let mut run_preds = Vec::with_capacity(j - i);
    let mut dwell_preds = Vec::with_capacity(j - i - 1);
    let mut elapsed = 0.0;
    for k in i..j {
        if k > i {
            let d = dwell.predict(&SegmentRequest {
                target: Target::Dwell,
                vehicle,
                key: stops[k].0.clone(),
                index: k,
                departure,
                at: add_secs(departure, elapsed),
                weather,
            })?;
            elapsed += d;
            dwell_preds.push(d);
        }
        let r = run.predict(&SegmentRequest {
            target: Target::Run,
            vehicle,
            key: Segment::new(stops[k].clone(), stops[k + 1].clone()).key(),
            index: k,
            departure,
            at: add_secs(departure, elapsed),
            weather,
        })?;
        elapsed += r;
        run_preds.push(r);
    }
    let cumulative = cumulative_travel_times(&run_preds, &dwell_preds)?;
    Ok(JourneyPrediction {
        origin: i,
        cumulative,
        dwell_sum: dwell_preds.iter().sum(),
        run_sum: run_preds.iter().sum(),
        run_preds,
        dwell_preds,
    })
}

/// An observed pass over a route, from its first stop to its last.
#[derive(Debug, Clone, PartialEq)]
pub struct Journey {
    pub vehicle: VehicleId,
    pub stops: Vec<StopId>,
    /// start of the first run
    pub departure: Timestamp,
    pub weather: Conditions,
    pub run_actual: Vec<f64>,
    /// intermediate stops only
    pub dwell_actual: Vec<f64>,
}

impl Journey {
    pub fn actual_cumulative(&self) -> Vec<f64> {
        cumulative_travel_times(&self.run_actual, &self.dwell_actual).expect("observed durations are valid")
    }
}

#[derive(Debug, Default)]
pub struct JourneyExtraction {
    pub journeys: Vec<Journey>,
    pub diagnostics: Vec<String>,
}

/// Complete passes over `route.stops`, per vehicle. A pass that breaks off
/// (missing event, wrong stop, missing weather) is reported and skipped.
pub fn extract_journeys(stream: &EventStream, route: &Route) -> JourneyExtraction {
    let mut out = JourneyExtraction::default();
    let stops = &route.stops;
    let n = stops.len();
    if n < 2 {
        return out;
    }
    for (vehicle, recs) in stream.by_vehicle() {
        let mut k = 0;
        while k < recs.len() {
            let start_here = matches!(&recs[k].event, Event::Run(r) if r.segment.from_stop == stops[0] && r.segment.to_stop == stops[1]);
            if !start_here {
                k += 1;
                continue;
            }
            let departure = recs[k].event.start();
            let mut run_actual = Vec::with_capacity(n - 1);
            let mut dwell_actual = Vec::with_capacity(n - 2);
            let mut pos = k;
            let mut broken = None;
            for seg in 0..n - 1 {
                if seg > 0 {
                    match recs.get(pos).map(|r| &r.event) {
                        Some(Event::Dwell(d)) if d.stop_id == stops[seg] => dwell_actual.push(d.duration()),
                        _ => {
                            broken = Some(format!("expected dwell at {}", stops[seg]));
                            break;
                        }
                    }
                    pos += 1;
                }
                match recs.get(pos).map(|r| &r.event) {
                    Some(Event::Run(r)) if r.segment.from_stop == stops[seg] && r.segment.to_stop == stops[seg + 1] => {
                        run_actual.push(r.duration())
                    }
                    _ => {
                        broken = Some(format!("expected run {}->{}", stops[seg], stops[seg + 1]));
                        break;
                    }
                }
                pos += 1;
            }
            match (broken, recs[k].conditions) {
                (Some(why), _) => {
                    out.diagnostics
                        .push(format!("{vehicle}: journey departing {departure} incomplete: {why}"));
                    k += 1;
                }
                (None, None) => {
                    out.diagnostics
                        .push(format!("{vehicle}: journey departing {departure} has no weather"));
                    k = pos;
                }
                (None, Some(weather)) => {
                    out.journeys.push(Journey {
                        vehicle: vehicle.clone(),
                        stops: stops.clone(),
                        departure,
                        weather,
                        run_actual,
                        dwell_actual,
                    });
                    k = pos;
                }
            }
        }
    }
    out.journeys
        .sort_by(|a, b| a.departure.cmp(&b.departure).then_with(|| a.vehicle.cmp(&b.vehicle)));
    out
}

/// Returns the observed durations of known journeys.
#[derive(Debug, Default)]
pub struct OraclePredictor {
    table: HashMap<(VehicleId, Timestamp, usize, Target), f64>,
}

impl OraclePredictor {
    pub fn new(journeys: &[Journey]) -> Self {
        let mut table = HashMap::new();
        for j in journeys {
            for (k, &r) in j.run_actual.iter().enumerate() {
                table.insert((j.vehicle.clone(), j.departure, k, Target::Run), r);
            }
            for (k, &d) in j.dwell_actual.iter().enumerate() {
                table.insert((j.vehicle.clone(), j.departure, k + 1, Target::Dwell), d);
            }
        }
        Self { table }
    }
}

impl SegmentPredictor for OraclePredictor {
    fn predict(&self, req: &SegmentRequest) -> Result<f64> {
        self.table
            .get(&(req.vehicle.clone(), req.departure, req.index, req.target))
            .copied()
            .ok_or_else(|| Error::invalid(format!("no observed {} at index {}", req.target, req.index)))
    }
}

/// Constant outputs per target.
pub struct ConstantPredictor(pub f64);

impl SegmentPredictor for ConstantPredictor {
    fn predict(&self, _: &SegmentRequest) -> Result<f64> {
        Ok(self.0)
    }
}
