//! On-disk formats: CSV for traces, stops, weather, events, datasets and
//! profiles; JSON for routes, metrics and configs. Readers check the header
//! and report the offending line and column.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use csv::StringRecord;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::ProfileRow;
use crate::features::{Dataset, FeatureEncoder, FeatureRow, LagScope, Lags, Vocab};
use crate::preprocess::{EventRecord, EventStream};
use crate::types::{
    Conditions, DwellEvent, Event, GpsFix, Route, RunEvent, Segment, Stop, Target, Timestamp, VehicleId,
    WeatherRecord,
};

pub const TRACE_HEADER: [&str; 5] = ["vehicle_id", "timestamp", "lat", "lon", "speed_kmh"];
pub const STOP_HEADER: [&str; 5] = ["stop_id", "name", "lat", "lon", "radius_m"];
pub const WEATHER_HEADER: [&str; 4] = ["hour_iso", "temp_c", "precip_mm", "wind_ms"];
pub const EVENT_HEADER: [&str; 9] = [
    "kind",
    "vehicle_id",
    "key",
    "start_iso",
    "end_iso",
    "duration_s",
    "temp_c",
    "precip_mm",
    "wind_ms",
];
pub const PROFILE_HEADER: [&str; 5] = ["stop_index", "mean_err_s", "max_pos_s", "max_neg_s", "mean_abs_s"];
pub const DATASET_META: [&str; 5] = ["target", "scope", "vehicle_id", "key", "timestamp_iso"];

pub fn format_time(t: Timestamp) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

pub fn parse_time(s: &str) -> std::result::Result<Timestamp, String> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| format!("{s:?} is not an ISO-8601 timestamp ({e})"))
}

fn num(v: f64) -> String {
    format!("{v}")
}

struct Reader {
    path: PathBuf,
    inner: csv::Reader<File>,
    header: Vec<String>,
}

fn open_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

impl Reader {
    fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| open_error(path, e))?;
        let mut inner = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
        let header = inner
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        Ok(Self {
            path: path.to_path_buf(),
            inner,
            header,
        })
    }

    fn expect_header(&self, expected: &[&str]) -> Result<()> {
        if self.header.iter().map(String::as_str).ne(expected.iter().copied()) {
            return Err(self.err(1, format!("header {:?}, expected {:?}", self.header, expected)));
        }
        Ok(())
    }

    fn err(&self, line: u64, msg: String) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            msg,
        }
    }

    fn records(&mut self) -> Result<Vec<(u64, StringRecord)>> {
        let mut out = Vec::new();
        for rec in self.inner.records() {
            let rec = rec.map_err(|e| csv_error(&self.path, e))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            out.push((line, rec));
        }
        Ok(out)
    }

    fn field<T: FromStr>(&self, rec: &StringRecord, line: u64, col: usize) -> Result<T> {
        let raw = rec.get(col).unwrap_or("");
        raw.parse::<T>().map_err(|_| {
            self.err(
                line,
                format!("column {} ({}): cannot parse {raw:?}", col + 1, self.header[col]),
            )
        })
    }

    fn finite(&self, rec: &StringRecord, line: u64, col: usize) -> Result<f64> {
        let v: f64 = self.field(rec, line, col)?;
        if !v.is_finite() {
            return Err(self.err(line, format!("column {} ({}): {v} is not finite", col + 1, self.header[col])));
        }
        Ok(v)
    }

    fn time(&self, rec: &StringRecord, line: u64, col: usize) -> Result<Timestamp> {
        parse_time(rec.get(col).unwrap_or(""))
            .map_err(|m| self.err(line, format!("column {} ({}): {m}", col + 1, self.header[col])))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: e.to_string(),
    }
}

fn write_csv<I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

fn strings(h: &[&str]) -> Vec<String> {
    h.iter().map(|s| s.to_string()).collect()
}

pub fn write_traces(path: &Path, fixes: &[GpsFix]) -> Result<()> {
    write_csv(
        path,
        &strings(&TRACE_HEADER),
        fixes.iter().map(|f| {
            vec![
                f.vehicle_id.0.clone(),
                format_time(f.timestamp),
                num(f.lat),
                num(f.lon),
                f.speed.map(num).unwrap_or_default(),
            ]
        }),
    )
}

pub fn read_traces(path: &Path) -> Result<Vec<GpsFix>> {
    let mut r = Reader::open(path)?;
    r.expect_header(&TRACE_HEADER)?;
    let mut out = Vec::new();
    for (line, rec) in r.records()? {
        let speed = match rec.get(4).unwrap_or("") {
            "" => None,
            _ => Some(r.finite(&rec, line, 4)?),
        };
        let fix = GpsFix::new(
            VehicleId::new(rec.get(0).unwrap_or("")),
            r.time(&rec, line, 1)?,
            r.finite(&rec, line, 2)?,
            r.finite(&rec, line, 3)?,
            speed,
        )
        .map_err(|e| r.err(line, e.to_string()))?;
        out.push(fix);
    }
    Ok(out)
}

/// Every `*.csv` trace file in `dir`, in file-name order.
pub fn read_trace_dir(dir: &Path) -> Result<Vec<GpsFix>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid(format!("no .csv traces in {}", dir.display())));
    }
    let mut out = Vec::new();
    for f in files {
        out.extend(read_traces(&f)?);
    }
    Ok(out)
}

/// One file per vehicle, `<dir>/<vehicle_id>.csv`.
pub fn write_trace_dir(dir: &Path, fixes: &[GpsFix]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut by_vehicle: std::collections::BTreeMap<&VehicleId, Vec<GpsFix>> = Default::default();
    for f in fixes {
        by_vehicle.entry(&f.vehicle_id).or_default().push(f.clone());
    }
    for (v, f) in by_vehicle {
        write_traces(&dir.join(format!("{v}.csv")), &f)?;
    }
    Ok(())
}

pub fn write_stops(path: &Path, stops: &[Stop]) -> Result<()> {
    write_csv(
        path,
        &strings(&STOP_HEADER),
        stops
            .iter()
            .map(|s| vec![s.stop_id.0.clone(), s.name.clone(), num(s.lat), num(s.lon), num(s.radius)]),
    )
}

pub fn read_stops(path: &Path) -> Result<Vec<Stop>> {
    let mut r = Reader::open(path)?;
    r.expect_header(&STOP_HEADER)?;
    let mut out = Vec::new();
    for (line, rec) in r.records()? {
        out.push(Stop {
            stop_id: rec.get(0).unwrap_or("").into(),
            name: rec.get(1).unwrap_or("").to_string(),
            lat: r.finite(&rec, line, 2)?,
            lon: r.finite(&rec, line, 3)?,
            radius: r.finite(&rec, line, 4)?,
        });
    }
    Ok(out)
}

pub fn write_weather(path: &Path, weather: &[WeatherRecord]) -> Result<()> {
    write_csv(
        path,
        &strings(&WEATHER_HEADER),
        weather.iter().map(|w| {
            vec![
                format_time(w.hour),
                num(w.conditions.temperature),
                num(w.conditions.precipitation),
                num(w.conditions.windspeed),
            ]
        }),
    )
}

pub fn read_weather(path: &Path) -> Result<Vec<WeatherRecord>> {
    let mut r = Reader::open(path)?;
    r.expect_header(&WEATHER_HEADER)?;
    let mut out = Vec::new();
    for (line, rec) in r.records()? {
        out.push(WeatherRecord {
            hour: r.time(&rec, line, 0)?,
            conditions: Conditions {
                temperature: r.finite(&rec, line, 1)?,
                precipitation: r.finite(&rec, line, 2)?,
                windspeed: r.finite(&rec, line, 3)?,
            },
        });
    }
    Ok(out)
}

pub fn write_events(path: &Path, stream: &EventStream) -> Result<()> {
    write_csv(
        path,
        &strings(&EVENT_HEADER),
        stream.records.iter().map(|r| {
            let e = &r.event;
            let w = |f: fn(&Conditions) -> f64| r.conditions.as_ref().map(|c| num(f(c))).unwrap_or_default();
            vec![
                e.target().as_str().to_string(),
                e.vehicle().0.clone(),
                e.key(),
                format_time(e.start()),
                format_time(e.end()),
                num(e.duration()),
                w(|c| c.temperature),
                w(|c| c.precipitation),
                w(|c| c.windspeed),
            ]
        }),
    )
}

pub fn read_events(path: &Path) -> Result<EventStream> {
    let mut r = Reader::open(path)?;
    r.expect_header(&EVENT_HEADER)?;
    let mut records = Vec::new();
    for (line, rec) in r.records()? {
        let kind: Target = r.field(&rec, line, 0)?;
        let vehicle = VehicleId::new(rec.get(1).unwrap_or(""));
        let key = rec.get(2).unwrap_or("");
        let start = r.time(&rec, line, 3)?;
        let end = r.time(&rec, line, 4)?;
        if end < start {
            return Err(r.err(line, "end_iso precedes start_iso".into()));
        }
        let event = match kind {
            Target::Dwell => Event::Dwell(DwellEvent {
                vehicle_id: vehicle,
                stop_id: key.into(),
                start,
                end,
            }),
            Target::Run => Event::Run(RunEvent {
                vehicle_id: vehicle,
                segment: Segment::parse_key(key)
                    .ok_or_else(|| r.err(line, format!("column 3 (key): {key:?} is not FROM->TO")))?,
                start,
                end,
            }),
        };
        let cells: Vec<&str> = (6..9).map(|c| rec.get(c).unwrap_or("")).collect();
        let conditions = if cells.iter().all(|c| c.is_empty()) {
            None
        } else {
            Some(Conditions {
                temperature: r.finite(&rec, line, 6)?,
                precipitation: r.finite(&rec, line, 7)?,
                windspeed: r.finite(&rec, line, 8)?,
            })
        };
        records.push(EventRecord { event, conditions });
    }
    let mut s = EventStream { records };
    s.sort();
    Ok(s)
}

pub fn dataset_header(encoder: &FeatureEncoder) -> Vec<String> {
    let mut h = strings(&DATASET_META);
    h.extend(encoder.feature_names());
    h.push("y".into());
    h
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let x = ds.matrix()?;
    write_csv(
        path,
        &dataset_header(&ds.encoder),
        ds.rows.iter().enumerate().map(|(i, r)| {
            let mut cells = vec![
                ds.target.as_str().to_string(),
                ds.scope.as_str().to_string(),
                r.vehicle.0.clone(),
                r.key.clone(),
                format_time(r.timestamp),
            ];
            cells.extend(x.row(i).iter().map(|v| num(*v)));
            cells.push(num(r.y));
            cells
        }),
    )
}

/// Reads a dataset written by [`write_dataset`]. The vocabularies come from
/// the header; the lag history is rebuilt from the rows.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut r = Reader::open(path)?;
    let h = r.header.clone();
    let meta = DATASET_META.len();
    if h.len() < meta + 12 || h[..meta] != DATASET_META || h.last().map(String::as_str) != Some("y") {
        return Err(r.err(1, format!("not a dataset header: {h:?}")));
    }
    let vehicles: Vec<String> = h.iter().filter_map(|c| c.strip_prefix("veh=").map(str::to_string)).collect();
    let keys: Vec<String> = h.iter().filter_map(|c| c.strip_prefix("key=").map(str::to_string)).collect();
    let encoder = FeatureEncoder::new(Vocab::sorted(vehicles.clone()), Vocab::sorted(keys.clone()));
    let mut expected = strings(&DATASET_META);
    expected.extend(encoder.feature_names());
    expected.push("y".into());
    if h != expected {
        return Err(r.err(1, "dataset header columns are out of the canonical order".into()));
    }
    let l0 = meta + encoder.key_offset() + encoder.keys.len();
    let mut rows = Vec::new();
    let mut target_scope: Option<(Target, LagScope)> = None;
    for (line, rec) in r.records()? {
        let target: Target = r.field(&rec, line, 0)?;
        let scope: LagScope = r.field(&rec, line, 1)?;
        match target_scope {
            None => target_scope = Some((target, scope)),
            Some(ts) if ts != (target, scope) => {
                return Err(r.err(line, "target/scope differ from the first row".into()))
            }
            _ => {}
        }
        let f = |c: usize| r.finite(&rec, line, meta + c);
        let flag = |c: usize| -> Result<bool> {
            match f(c)? {
                v if v == 0.0 => Ok(false),
                v if v == 1.0 => Ok(true),
                v => Err(r.err(line, format!("column {}: imputation flag {v} is not 0/1", meta + c + 1))),
            }
        };
        let lag_col = l0 - meta;
        rows.push(FeatureRow {
            vehicle: VehicleId::new(rec.get(2).unwrap_or("")),
            key: rec.get(3).unwrap_or("").to_string(),
            timestamp: r.time(&rec, line, 4)?,
            time_enc: [f(0)?, f(1)?, f(2)?, f(3)?],
            weather: [f(4)?, f(5)?, f(6)?],
            lags: Lags {
                l1: f(lag_col)?,
                l2: f(lag_col + 1)?,
                imputed: [flag(lag_col + 2)?, flag(lag_col + 3)?],
            },
            y: r.finite(&rec, line, h.len() - 1)?,
        });
        let row = rows.last().expect("just pushed");
        encoder
            .vehicle_index(&row.vehicle)
            .and_then(|_| encoder.key_index(&row.key))
            .map_err(|e| r.err(line, e.to_string()))?;
    }
    let (target, scope) = target_scope.ok_or_else(|| r.err(1, "dataset has no rows".into()))?;
    let mut ds = Dataset {
        target,
        scope,
        encoder,
        rows,
        history: Vec::new(),
    };
    ds.history = ds.row_observations();
    Ok(ds)
}

pub fn write_profile(path: &Path, rows: &[ProfileRow]) -> Result<()> {
    write_csv(
        path,
        &strings(&PROFILE_HEADER),
        rows.iter().map(|p| {
            vec![
                p.stop_index.to_string(),
                num(p.mean_err_s),
                num(p.max_pos_s),
                num(p.max_neg_s),
                num(p.mean_abs_s),
            ]
        }),
    )
}

pub fn read_profile(path: &Path) -> Result<Vec<ProfileRow>> {
    let mut r = Reader::open(path)?;
    r.expect_header(&PROFILE_HEADER)?;
    let mut out = Vec::new();
    for (line, rec) in r.records()? {
        out.push(ProfileRow {
            stop_index: r.field(&rec, line, 0)?,
            mean_err_s: r.finite(&rec, line, 1)?,
            max_pos_s: r.finite(&rec, line, 2)?,
            max_neg_s: r.finite(&rec, line, 3)?,
            mean_abs_s: r.finite(&rec, line, 4)?,
        });
    }
    Ok(out)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| open_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line() as u64,
        msg: format!("column {}: {e}", e.column()),
    })
}

pub fn write_routes(path: &Path, routes: &[Route]) -> Result<()> {
    write_json(path, routes)
}

pub fn read_routes(path: &Path) -> Result<Vec<Route>> {
    read_json(path)
}
