use chrono::{TimeZone, Utc};

use super::*;
use crate::geo::displace;
use crate::types::{add_secs, Stop};

const ORIGIN: (f64, f64) = (58.41, 15.62);

fn t0() -> Timestamp {
    Utc.with_ymd_and_hms(2023, 3, 6, 10, 0, 0).unwrap()
}

fn stop_at(id: &str, east: f64, north: f64, radius: f64) -> Stop {
    let (lat, lon) = displace(ORIGIN, east, north);
    Stop {
        stop_id: id.into(),
        name: id.to_string(),
        lat,
        lon,
        radius,
    }
}

fn route(ids: &[&str]) -> Route {
    Route {
        route_id: "r1".into(),
        stops: ids.iter().map(|&s| StopId::from(s)).collect(),
        stop_order_exceptions: vec![],
    }
}

fn fix(t: f64, east: f64, north: f64, speed: Option<f64>) -> GpsFix {
    let (lat, lon) = displace(ORIGIN, east, north);
    GpsFix::new("v1".into(), add_secs(t0(), t), lat, lon, speed).unwrap()
}

fn durations(d: &Detection) -> Vec<(Target, String, f64)> {
    d.events
        .iter()
        .map(|e| (e.target(), e.key(), e.duration()))
        .collect()
}

use crate::types::Target;

#[test]
fn stationary_rules() {
    let cfg = PreprocessConfig::default();
    let a = fix(0.0, 0.0, 0.0, Some(3.0));
    let b = fix(5.0, 10.0, 0.0, Some(0.0));
    assert!(is_stationary(&a, &b, &cfg).unwrap());
    assert!(!is_stationary(&b, &a, &cfg).unwrap());
    let no_speed = fix(5.0, 0.0, 0.0, None);
    assert!(matches!(is_stationary(&a, &no_speed, &cfg), Err(Error::Config(_))));

    let mut gps = PreprocessConfig::gps_only(2.0);
    let c = fix(5.0, 1.2, 0.0, None);
    assert!(is_stationary(&no_speed, &c, &gps).unwrap());
    let d = fix(5.0, 2.0, 0.0, None);
    gps.jitter_threshold_m = haversine_distance((no_speed.lat, no_speed.lon), (d.lat, d.lon));
    assert!(!is_stationary(&no_speed, &d, &gps).unwrap(), "threshold comparison is strict");
}

/// Stationary at A for t=0..20, moving until t=120, stationary at B for
/// t=120..130, moving again from t=135.
fn two_stop_trace() -> (Site, Vec<GpsFix>) {
    let site = Site::new(
        vec![stop_at("A", 0.0, 0.0, 15.0), stop_at("B", 400.0, 0.0, 15.0)],
        vec![route(&["A", "B"])],
    )
    .unwrap();
    let mut trace = Vec::new();
    for k in 0..30 {
        let t = 5.0 * k as f64;
        let f = if t <= 20.0 {
            fix(t, 0.0, 0.0, Some(0.0))
        } else if t < 120.0 {
            let frac = (t - 20.0) / 100.0;
            fix(t, 400.0 * frac, 0.0, Some(14.4))
        } else if t <= 130.0 {
            fix(t, 400.0, 0.0, Some(0.0))
        } else {
            fix(t, 400.0 + 4.0 * (t - 130.0), 0.0, Some(14.4))
        };
        trace.push(f);
    }
    (site, trace)
}

#[test]
fn hand_traced_two_stop_example() {
    let (site, trace) = two_stop_trace();
    let d = detect_events(&trace, &site.routes[0], &site, &PreprocessConfig::default()).unwrap();
    assert_eq!(
        durations(&d),
        vec![
            (Target::Dwell, "A".to_string(), 25.0),
            (Target::Run, "A->B".to_string(), 95.0),
            (Target::Dwell, "B".to_string(), 15.0),
        ]
    );
    // coverage: run starts at the dwell end and ends at the next dwell start
    assert_eq!(d.events[0].end(), d.events[1].start());
    assert_eq!(d.events[1].end(), d.events[2].start());
}

#[test]
fn bypass_yields_zero_dwell_at_closest_approach() {
    let site = Site::new(
        vec![
            stop_at("A", 0.0, 0.0, 15.0),
            stop_at("B", 200.0, 0.0, 15.0),
            stop_at("C", 400.0, 0.0, 15.0),
        ],
        vec![route(&["A", "B", "C"])],
    )
    .unwrap();
    // 12 km/h = 10/3 m/s, sampled every 5 s => 16.67 m between fixes
    let v = 10.0 / 3.0;
    let mut trace = Vec::new();
    for k in 0..4 {
        trace.push(fix(5.0 * k as f64, 0.0, 0.0, Some(0.0)));
    }
    let depart = 20.0;
    let mut t = depart;
    loop {
        t += 5.0;
        let x = (t - depart) * v - 3.0;
        if x >= 400.0 {
            break;
        }
        trace.push(fix(t, x, 0.0, Some(12.0)));
    }
    for k in 0..4 {
        trace.push(fix(t + 5.0 * k as f64, 400.0, 0.0, Some(0.0)));
    }
    trace.push(fix(t + 20.0, 405.0, 0.0, Some(5.0)));

    let d = detect_events(&trace, &site.routes[0], &site, &PreprocessConfig::default()).unwrap();
    let kinds: Vec<(Target, String)> = d.events.iter().map(|e| (e.target(), e.key())).collect();
    assert_eq!(
        kinds,
        vec![
            (Target::Dwell, "A".into()),
            (Target::Run, "A->B".into()),
            (Target::Dwell, "B".into()),
            (Target::Run, "B->C".into()),
            (Target::Dwell, "C".into()),
        ]
    );
    let Event::Dwell(b) = &d.events[2] else { panic!() };
    assert_eq!(b.duration(), 0.0);
    // with speed: x = (t - 20) * v - 3 reaches 200 at t = 20 + 203 / v
    let passage = 20.0 + 203.0 / v;
    assert!((crate::types::secs_between(t0(), b.start) - passage).abs() < 1e-3);
    assert_eq!(d.events[1].end(), b.start);
    assert_eq!(d.events[3].start(), b.start);

    // without speed the closest fix itself is used
    let gps: Vec<GpsFix> = trace.iter().map(|f| GpsFix { speed: None, ..f.clone() }).collect();
    let d = detect_events(&gps, &site.routes[0], &site, &PreprocessConfig::gps_only(2.0)).unwrap();
    let b = d
        .events
        .iter()
        .find_map(|e| match e {
            Event::Dwell(x) if x.stop_id.as_str() == "B" => Some(x.clone()),
            _ => None,
        })
        .unwrap();
    let best = gps
        .iter()
        .min_by(|p, q| {
            let s = site.stop(&"B".into()).unwrap();
            haversine_distance((p.lat, p.lon), (s.lat, s.lon))
                .total_cmp(&haversine_distance((q.lat, q.lon), (s.lat, s.lon)))
        })
        .unwrap();
    assert_eq!(b.start, best.timestamp);
    assert_eq!(b.duration(), 0.0);
}

#[test]
fn stationary_outside_radius_stays_in_run() {
    let (site, mut trace) = two_stop_trace();
    // traffic stop halfway: set three mid-run fixes to standstill
    for f in trace.iter_mut().filter(|f| {
        let s = crate::types::secs_between(t0(), f.timestamp);
        (60.0..=70.0).contains(&s)
    }) {
        f.speed = Some(0.0);
    }
    let d = detect_events(&trace, &site.routes[0], &site, &PreprocessConfig::default()).unwrap();
    assert_eq!(d.events.len(), 3);
    assert_eq!(d.events[1].duration(), 95.0);
}

#[test]
fn exclusion_zone_trace_has_no_events() {
    let (site, trace) = two_stop_trace();
    let cfg = PreprocessConfig {
        exclusion_zones: vec![ExclusionZone {
            lat: ORIGIN.0,
            lon: ORIGIN.1,
            radius_m: 5_000.0,
        }],
        ..PreprocessConfig::default()
    };
    let d = detect_events(&trace, &site.routes[0], &site, &cfg).unwrap();
    assert!(d.events.is_empty());
    assert!(!d.diagnostics.is_empty());
}

#[test]
fn empty_and_never_at_stop() {
    let (site, _) = two_stop_trace();
    let cfg = PreprocessConfig::default();
    let d = detect_events(&[], &site.routes[0], &site, &cfg).unwrap();
    assert!(d.events.is_empty());
    let trace: Vec<GpsFix> = (0..10).map(|k| fix(k as f64, 200.0, 0.0, Some(0.0))).collect();
    let d = detect_events(&trace, &site.routes[0], &site, &cfg).unwrap();
    assert!(d.events.is_empty());
    assert!(d.diagnostics.iter().any(|m| m.contains("never enters")));
}

#[test]
fn off_route_filter() {
    let (site, _) = two_stop_trace();
    let cfg = PreprocessConfig {
        exclusion_zones: vec![ExclusionZone {
            lat: displace(ORIGIN, 200.0, 50.0).0,
            lon: displace(ORIGIN, 200.0, 50.0).1,
            radius_m: 20.0,
        }],
        ..PreprocessConfig::default()
    };
    let depot = fix(0.0, 200.0, 50.0, Some(0.0));
    let far = fix(5.0, 200.0, 600.0, Some(0.0));
    let on = fix(10.0, 200.0, 3.0, Some(10.0));
    let kept = exclude_off_route(&[depot, far, on.clone()], &site.routes[0], &site, &cfg);
    assert_eq!(kept, vec![on]);
}

#[test]
fn overlapping_radii_use_route_order() {
    // C and D on opposite sides of the road, radii overlap
    let site = Site::new(
        vec![
            stop_at("B", 0.0, 0.0, 15.0),
            stop_at("C", 300.0, 5.0, 15.0),
            stop_at("D", 300.0, -5.0, 15.0),
        ],
        vec![route(&["B", "C", "D"])],
    )
    .unwrap();
    let r = &site.routes[0];
    let only_c = fix(0.0, 300.0, 18.0, None);
    assert_eq!(resolve_stop(&only_c, r, &site, None), StopResolution::Stop("C".into()));
    let both = fix(0.0, 300.0, 0.0, None);
    assert_eq!(
        resolve_stop(&both, r, &site, Some(&"B".into())),
        StopResolution::Stop("C".into())
    );
    assert_eq!(
        resolve_stop(&both, r, &site, Some(&"C".into())),
        StopResolution::Stop("C".into())
    );
    assert!(matches!(resolve_stop(&both, r, &site, None), StopResolution::Ambiguous(_)));
    let outside = fix(0.0, 150.0, 0.0, None);
    assert_eq!(resolve_stop(&outside, r, &site, Some(&"B".into())), StopResolution::Outside);
}

#[test]
fn exceptions_extend_legal_successors() {
    let mut r = route(&["A", "B", "C"]);
    r.stop_order_exceptions = vec![vec!["A".into(), "C".into()]];
    assert!(r.has_segment(&"A".into(), &"C".into()));
    assert!(r.successors(&"A".into()).contains(&StopId::from("C")));
}

fn periodic(periods: &[(usize, f64)], jitter: impl Fn(usize) -> f64) -> Vec<GpsFix> {
    let mut t = 0.0;
    let mut out = vec![fix(0.0, 0.0, 0.0, None)];
    let mut k = 0;
    for &(count, p) in periods {
        for _ in 0..count {
            t += p + jitter(k);
            k += 1;
            out.push(fix(t, 0.0, 0.0, None));
        }
    }
    out
}

#[test]
fn sampling_rate_change_detection() {
    let constant = periodic(&[(720, 5.0)], |_| 0.0);
    assert!(detect_sampling_rate_change(&constant, 0.5, 12).is_empty());

    // 1 h at 5 s, then 30 s
    let stepped = periodic(&[(720, 5.0), (100, 30.0)], |_| 0.0);
    let ch = detect_sampling_rate_change(&stepped, 0.5, 12);
    assert_eq!(ch.len(), 1);
    let transition = stepped[720].timestamp;
    let off = crate::types::secs_between(transition, ch[0].at).abs();
    assert!(off <= 12.0 * 30.0, "change at {} vs {}", ch[0].at, transition);
    assert_eq!((ch[0].old_period, ch[0].new_period), (5.0, 30.0));

    let kept = discard_low_rate(&stepped, &ch, 0.5);
    assert!(kept.len() >= 700 && kept.len() <= 721 + 6, "{}", kept.len());
    assert!(kept.last().unwrap().timestamp <= stepped[730].timestamp);

    let jittered = periodic(&[(720, 5.0)], |k| if k % 2 == 0 { 0.2 } else { -0.2 });
    assert!(detect_sampling_rate_change(&jittered, 0.5, 12).is_empty());

    let short = periodic(&[(10, 5.0)], |_| 0.0);
    assert!(detect_sampling_rate_change(&short, 0.5, 12).is_empty());
}

fn weather_at(h: u32) -> WeatherRecord {
    WeatherRecord {
        hour: Utc.with_ymd_and_hms(2023, 3, 6, h, 0, 0).unwrap(),
        conditions: Conditions {
            temperature: h as f64,
            precipitation: 0.0,
            windspeed: 1.0,
        },
    }
}

fn one_event_at(h: u32, m: u32) -> EventStream {
    let start = Utc.with_ymd_and_hms(2023, 3, 6, h, m, 0).unwrap();
    EventStream::from_events([Event::Dwell(DwellEvent {
        vehicle_id: "v1".into(),
        stop_id: "A".into(),
        start,
        end: add_secs(start, 20.0),
    })])
}

#[test]
fn weather_join_rules() {
    let w = vec![weather_at(9), weather_at(10)];
    let s = join_weather(one_event_at(10, 37), &w, 3.0).unwrap();
    assert_eq!(s.records[0].conditions.unwrap().temperature, 10.0);

    let s = join_weather(one_event_at(10, 37), &w[..1], 3.0).unwrap();
    assert_eq!(s.records[0].conditions.unwrap().temperature, 9.0);

    let s = join_weather(one_event_at(14, 37), &w[..1], 3.0).unwrap();
    assert_eq!(s.records[0].conditions, None);

    let dup = vec![weather_at(9), weather_at(9)];
    assert!(join_weather(one_event_at(10, 0), &dup, 3.0).is_err());
}

#[test]
fn sessions_split_on_gaps() {
    let trace: Vec<GpsFix> = [0.0, 5.0, 10.0, 1000.0, 1005.0]
        .iter()
        .map(|&t| fix(t, 0.0, 0.0, None))
        .collect();
    let s = split_sessions(&trace, 300.0);
    assert_eq!(s.iter().map(|x| x.len()).collect::<Vec<_>>(), vec![3, 2]);
}
