use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{build_lags, LagScope, Lags, Observation};
use crate::error::{Error, Result};
use crate::models::linalg::Matrix;
use crate::preprocess::EventStream;
use crate::timeenc::encode_time;
use crate::types::{add_secs, Target, Timestamp, VehicleId};

/// Ordered id list with reverse lookup.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    items: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(items: Vec<String>) -> Self {
        let index = items.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self { items, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.items
    }
}

impl Vocab {
    /// Sorted, deduplicated vocabulary.
    pub fn sorted(items: impl IntoIterator<Item = String>) -> Self {
        let mut v: Vec<String> = items.into_iter().collect();
        v.sort();
        v.dedup();
        v.into()
    }

    pub fn get(&self, s: &str) -> Option<usize> {
        self.index.get(s).copied()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }
}

/// Fixed vehicle and key vocabularies that turn a row into a numeric vector:
/// `[tod sin/cos, dow sin/cos, temp, precip, wind, one-hot vehicle,
/// one-hot key, l1, l2, l1 imputed, l2 imputed]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub vehicles: Vocab,
    pub keys: Vocab,
}

impl FeatureEncoder {
    pub const TIME_DIM: usize = 4;
    pub const WEATHER_DIM: usize = 3;

    pub fn new(vehicles: Vocab, keys: Vocab) -> Self {
        Self { vehicles, keys }
    }

    /// Vocabulary from every event of `target` in the stream, plus `extra_keys`
    /// (e.g. all graph nodes).
    pub fn from_stream(stream: &EventStream, target: Target, extra_keys: &[String]) -> Self {
        let events = stream.events().filter(|e| e.target() == target);
        let vehicles = Vocab::sorted(stream.events().map(|e| e.vehicle().0.clone()));
        let keys = Vocab::sorted(events.map(|e| e.key()).chain(extra_keys.iter().cloned()));
        Self { vehicles, keys }
    }

    /// Numeric feature dimension without the two imputation flags.
    pub fn base_dim(&self) -> usize {
        Self::TIME_DIM + Self::WEATHER_DIM + self.vehicles.len() + self.keys.len() + 2
    }

    pub fn dim(&self) -> usize {
        self.base_dim() + 2
    }

    pub fn key_offset(&self) -> usize {
        Self::TIME_DIM + Self::WEATHER_DIM + self.vehicles.len()
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut out: Vec<String> = ["tod_sin", "tod_cos", "dow_sin", "dow_cos", "temp_c", "precip_mm", "wind_ms"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        out.extend(self.vehicles.items().iter().map(|v| format!("veh={v}")));
        out.extend(self.keys.items().iter().map(|k| format!("key={k}")));
        out.extend(["lag1", "lag2", "lag1_imputed", "lag2_imputed"].iter().map(|s| s.to_string()));
        out
    }

    pub fn vehicle_index(&self, v: &VehicleId) -> Result<usize> {
        self.vehicles
            .get(v.as_str())
            .ok_or_else(|| Error::Vocabulary(format!("vehicle {v} not in training vocabulary")))
    }

    pub fn key_index(&self, key: &str) -> Result<usize> {
        self.keys
            .get(key)
            .ok_or_else(|| Error::Vocabulary(format!("key {key} not in training vocabulary")))
    }

    pub fn encode_into(
        &self,
        out: &mut [f64],
        time_enc: &[f64; 4],
        weather: &[f64; 3],
        vehicle: usize,
        key: usize,
        lags: &Lags,
    ) {
        debug_assert_eq!(out.len(), self.dim());
        out.fill(0.0);
        out[..4].copy_from_slice(time_enc);
        out[4..7].copy_from_slice(weather);
        out[7 + vehicle] = 1.0;
        let k0 = self.key_offset();
        out[k0 + key] = 1.0;
        let l0 = k0 + self.keys.len();
        out[l0] = lags.l1;
        out[l0 + 1] = lags.l2;
        out[l0 + 2] = if lags.imputed[0] { 1.0 } else { 0.0 };
        out[l0 + 3] = if lags.imputed[1] { 1.0 } else { 0.0 };
    }

    pub fn encode(&self, row: &FeatureRow) -> Result<Vec<f64>> {
        let v = self.vehicle_index(&row.vehicle)?;
        let k = self.key_index(&row.key)?;
        let mut out = vec![0.0; self.dim()];
        self.encode_into(&mut out, &row.time_enc, &row.weather, v, k, &row.lags);
        Ok(out)
    }
}

/// One supervised example.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub vehicle: VehicleId,
    pub key: String,
    pub timestamp: Timestamp,
    pub time_enc: [f64; 4],
    pub weather: [f64; 3],
    pub lags: Lags,
    /// seconds
    pub y: f64,
}

impl FeatureRow {
    /// End of the observed event; `timestamp + y` at microsecond resolution.
    pub fn end(&self) -> Timestamp {
        add_secs(self.timestamp, self.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub target: Target,
    pub scope: LagScope,
    pub encoder: FeatureEncoder,
    pub rows: Vec<FeatureRow>,
    /// Every observation of the target, rows or not; the lag source for
    /// graph snapshots and journeys.
    pub history: Vec<Observation>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.y).collect()
    }

    pub fn matrix(&self) -> Result<Matrix> {
        let d = self.dim();
        let mut m = Matrix::zeros(self.rows.len(), d);
        for (i, row) in self.rows.iter().enumerate() {
            let v = self.encoder.vehicle_index(&row.vehicle)?;
            let k = self.encoder.key_index(&row.key)?;
            self.encoder
                .encode_into(m.row_mut(i), &row.time_enc, &row.weather, v, k, &row.lags);
        }
        Ok(m)
    }

    /// Observations reconstructed from the rows alone.
    pub fn row_observations(&self) -> Vec<Observation> {
        self.rows
            .iter()
            .map(|r| Observation {
                vehicle: r.vehicle.clone(),
                key: r.key.clone(),
                start: r.timestamp,
                end: r.end(),
                value: r.y,
            })
            .collect()
    }

    pub fn filter(&self, keep: impl Fn(&FeatureRow) -> bool) -> Dataset {
        Dataset {
            target: self.target,
            scope: self.scope,
            encoder: self.encoder.clone(),
            rows: self.rows.iter().filter(|r| keep(r)).cloned().collect(),
            history: self.history.clone(),
        }
    }
}

/// Builds one row per event of `target`. Every event (including those
/// without weather) feeds the lag history; weather-missing events get no row.
pub fn assemble_dataset(
    stream: &EventStream,
    target: Target,
    scope: LagScope,
    encoder: &FeatureEncoder,
) -> Result<Dataset> {
    let records: Vec<_> = stream
        .records
        .iter()
        .filter(|r| r.event.target() == target)
        .collect();
    let observations: Vec<Observation> = records
        .iter()
        .map(|r| Observation {
            vehicle: r.event.vehicle().clone(),
            key: r.event.key(),
            start: r.event.start(),
            end: r.event.end(),
            value: r.event.duration(),
        })
        .collect();
    let lags = build_lags(&observations, scope);

    let mut rows = Vec::with_capacity(records.len());
    for ((rec, obs), lags) in records.iter().zip(&observations).zip(lags) {
        encoder.vehicle_index(&obs.vehicle)?;
        encoder.key_index(&obs.key)?;
        let Some(c) = rec.conditions else { continue };
        rows.push(FeatureRow {
            vehicle: obs.vehicle.clone(),
            key: obs.key.clone(),
            timestamp: obs.start,
            time_enc: encode_time(obs.start),
            weather: c.to_array(),
            lags,
            y: obs.value,
        });
    }
    rows.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.vehicle.cmp(&b.vehicle))
            .then_with(|| a.key.cmp(&b.key))
    });
    Ok(Dataset {
        target,
        scope,
        encoder: encoder.clone(),
        rows,
        history: observations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::EventRecord;
    use crate::types::{Conditions, DwellEvent, Event, RunEvent, Segment};
    use chrono::{TimeZone, Utc};

    fn base() -> Timestamp {
        Utc.with_ymd_and_hms(2023, 5, 1, 8, 0, 0).unwrap()
    }

    fn dwell(v: &str, stop: &str, at: f64, dur: f64) -> Event {
        Event::Dwell(DwellEvent {
            vehicle_id: v.into(),
            stop_id: stop.into(),
            start: add_secs(base(), at),
            end: add_secs(base(), at + dur),
        })
    }

    fn run(v: &str, a: &str, b: &str, at: f64, dur: f64) -> Event {
        Event::Run(RunEvent {
            vehicle_id: v.into(),
            segment: Segment::new(a.into(), b.into()),
            start: add_secs(base(), at),
            end: add_secs(base(), at + dur),
        })
    }

    fn with_weather(events: Vec<Event>) -> EventStream {
        let mut s = EventStream::from_events(events);
        for r in &mut s.records {
            r.conditions = Some(Conditions {
                temperature: 5.0,
                precipitation: 0.0,
                windspeed: 2.0,
            });
        }
        s
    }

    #[test]
    fn dimension_arithmetic() {
        let vehicles = Vocab::sorted((0..3).map(|i| format!("v{i}")));
        let keys = Vocab::sorted((0..15).map(|i| format!("S{i}")));
        let enc = FeatureEncoder::new(vehicles, keys);
        assert_eq!(enc.base_dim(), 27);
        assert_eq!(enc.dim(), 29);
        assert_eq!(enc.feature_names().len(), 29);
    }

    #[test]
    fn zero_dwell_and_run_targets_kept() {
        let s = with_weather(vec![
            dwell("v1", "A", 0.0, 20.0),
            run("v1", "A", "B", 20.0, 95.0),
            dwell("v1", "B", 115.0, 0.0),
        ]);
        let enc = FeatureEncoder::from_stream(&s, Target::Dwell, &[]);
        let d = assemble_dataset(&s, Target::Dwell, LagScope::Fleet, &enc).unwrap();
        assert_eq!(d.targets(), vec![20.0, 0.0]);
        let enc = FeatureEncoder::from_stream(&s, Target::Run, &[]);
        let r = assemble_dataset(&s, Target::Run, LagScope::Fleet, &enc).unwrap();
        assert_eq!(r.targets(), vec![95.0]);
        let x = r.matrix().unwrap();
        assert_eq!(x.cols(), 4 + 3 + 1 + 1 + 4);
    }

    #[test]
    fn one_hot_blocks_have_single_one() {
        let s = with_weather(vec![
            dwell("v1", "A", 0.0, 20.0),
            dwell("v2", "B", 100.0, 30.0),
            dwell("v1", "C", 200.0, 25.0),
        ]);
        let enc = FeatureEncoder::from_stream(&s, Target::Dwell, &[]);
        let d = assemble_dataset(&s, Target::Dwell, LagScope::PerVehicle, &enc).unwrap();
        let x = d.matrix().unwrap();
        for i in 0..x.rows() {
            let row = x.row(i);
            let veh: f64 = row[7..9].iter().sum();
            let key: f64 = row[9..12].iter().sum();
            assert_eq!((veh, key), (1.0, 1.0));
        }
    }

    #[test]
    fn unknown_id_is_hard_error() {
        let s = with_weather(vec![dwell("v1", "A", 0.0, 20.0), dwell("v9", "A", 60.0, 20.0)]);
        let enc = FeatureEncoder::new(Vocab::sorted(["v1".to_string()]), Vocab::sorted(["A".to_string()]));
        assert!(matches!(
            assemble_dataset(&s, Target::Dwell, LagScope::Fleet, &enc),
            Err(Error::Vocabulary(_))
        ));
    }

    #[test]
    fn weather_missing_excluded_but_still_a_lag() {
        let mut s = with_weather(vec![dwell("v1", "A", 0.0, 20.0), dwell("v1", "A", 600.0, 30.0)]);
        s.records[0].conditions = None;
        let enc = FeatureEncoder::from_stream(&s, Target::Dwell, &[]);
        let d = assemble_dataset(&s, Target::Dwell, LagScope::Fleet, &enc).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.rows[0].lags.l1, 20.0);
        let _ = EventRecord {
            event: dwell("v", "A", 0.0, 1.0),
            conditions: None,
        };
    }

    #[test]
    fn deterministic() {
        let s = with_weather(vec![
            dwell("v1", "A", 0.0, 20.0),
            dwell("v2", "A", 10.0, 30.0),
            dwell("v1", "B", 200.0, 25.0),
        ]);
        let enc = FeatureEncoder::from_stream(&s, Target::Dwell, &[]);
        let a = assemble_dataset(&s, Target::Dwell, LagScope::Fleet, &enc).unwrap();
        let b = assemble_dataset(&s, Target::Dwell, LagScope::Fleet, &enc).unwrap();
        assert_eq!(a, b);
    }
}
