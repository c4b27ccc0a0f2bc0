use std::collections::BTreeMap;

use chrono::{Duration, DurationRound};

use crate::error::{Error, Result};
use crate::types::{secs_between, Conditions, Timestamp, WeatherRecord};

use super::EventStream;

pub fn floor_to_hour(t: Timestamp) -> Timestamp {
    t.duration_trunc(Duration::hours(1)).expect("hour truncation in range")
}

/// Attaches the weather of the event's start hour, falling back to the
/// nearest earlier record at most `max_gap_h` hours older. Events without
/// such a record keep `conditions = None` (weather-missing).
pub fn join_weather(mut stream: EventStream, weather: &[WeatherRecord], max_gap_h: f64) -> Result<EventStream> {
    let mut table: BTreeMap<Timestamp, Conditions> = BTreeMap::new();
    for w in weather {
        let hour = floor_to_hour(w.hour);
        if table.insert(hour, w.conditions).is_some() {
            return Err(Error::invalid(format!("duplicate weather hour {hour}")));
        }
    }
    for rec in &mut stream.records {
        let hour = floor_to_hour(rec.event.start());
        rec.conditions = table
            .range(..=hour)
            .next_back()
            .filter(|(h, _)| secs_between(**h, hour) <= max_gap_h * 3600.0)
            .map(|(_, c)| *c);
    }
    Ok(stream)
}
