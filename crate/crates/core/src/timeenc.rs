//! Cyclic encodings of time-of-day and day-of-week.

use std::f64::consts::TAU;

use chrono::{Datelike, Timelike};

use crate::types::Timestamp;

/// `[sin tod, cos tod, sin dow, cos dow]`; Monday is day 0.
pub fn encode_time(t: Timestamp) -> [f64; 4] {
    let secs = t.num_seconds_from_midnight() as f64 + t.nanosecond() as f64 * 1e-9;
    let tod = TAU * secs / 86_400.0;
    let dow = TAU * t.weekday().num_days_from_monday() as f64 / 7.0;
    [tod.sin(), tod.cos(), dow.sin(), dow.cos()]
}

/// Hours since midnight as a real number.
pub fn hour_of_day(t: Timestamp) -> f64 {
    (t.num_seconds_from_midnight() as f64 + t.nanosecond() as f64 * 1e-9) / 3600.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    #[test]
    fn zero_quarter_and_half_turns() {
        // 2023-01-02 is a Monday
        let monday = Utc.with_ymd_and_hms(2023, 1, 2, 0, 0, 0).unwrap();
        let e = encode_time(monday);
        assert_eq!(e, [0.0, 1.0, 0.0, 1.0]);

        let six = encode_time(Utc.with_ymd_and_hms(2023, 1, 5, 6, 0, 0).unwrap());
        assert!((six[0] - 1.0).abs() < 1e-12 && six[1].abs() < 1e-12);

        let noon = encode_time(Utc.with_ymd_and_hms(2023, 1, 7, 12, 0, 0).unwrap());
        assert!(noon[0].abs() < 1e-12 && (noon[1] + 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn pairs_on_unit_circle(secs in 0i64..4_000_000_000) {
            let t = Utc.timestamp_opt(secs, 0).unwrap();
            let e = encode_time(t);
            prop_assert!((e[0] * e[0] + e[1] * e[1] - 1.0).abs() < 1e-12);
            prop_assert!((e[2] * e[2] + e[3] * e[3] - 1.0).abs() < 1e-12);
        }
    }
}
