use chrono::{TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::features::assemble_dataset;
use crate::graph::build_graph;
use crate::preprocess::EventStream;
use crate::types::{add_secs, Conditions, DwellEvent, Event, Route, RunEvent, Segment, StopId};

fn route() -> Route {
    Route {
        route_id: "loop".into(),
        stops: ["A", "B", "C", "A"].iter().map(|s| StopId::from(*s)).collect(),
        stop_order_exceptions: vec![],
    }
}

/// Two vehicles looping A-B-C; stop B is skipped about half the time.
fn stream(seed: u64, loops: usize) -> EventStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t0 = Utc.with_ymd_and_hms(2023, 6, 5, 7, 0, 0).unwrap();
    let mut events = Vec::new();
    for (vi, v) in ["v1", "v2"].iter().enumerate() {
        let mut t = 97.0 * vi as f64;
        for _ in 0..loops {
            for (a, b) in [("A", "B"), ("B", "C"), ("C", "A")] {
                let dwell = if a == "B" && rng.random_bool(0.5) {
                    0.0
                } else {
                    rng.random_range(15.0..30.0)
                };
                events.push(Event::Dwell(DwellEvent {
                    vehicle_id: (*v).into(),
                    stop_id: a.into(),
                    start: add_secs(t0, t),
                    end: add_secs(t0, t + dwell),
                }));
                t += dwell;
                let run = 60.0 + 10.0 * vi as f64 + rng.random_range(0.0..20.0);
                events.push(Event::Run(RunEvent {
                    vehicle_id: (*v).into(),
                    segment: Segment::new(a.into(), b.into()),
                    start: add_secs(t0, t),
                    end: add_secs(t0, t + run),
                }));
                t += run;
            }
        }
    }
    let mut s = EventStream::from_events(events);
    for r in &mut s.records {
        r.conditions = Some(Conditions {
            temperature: 10.0,
            precipitation: 0.0,
            windspeed: 1.0,
        });
    }
    s
}

fn dataset(target: Target, seed: u64) -> (Dataset, GraphSpec) {
    let g = build_graph(&[route()], target);
    let s = stream(seed, 25);
    let enc = FeatureEncoder::from_stream(&s, target, &g.nodes);
    (assemble_dataset(&s, target, LagScope::PerVehicle, &enc).unwrap(), g)
}

fn small_hp() -> Hyperparams {
    Hyperparams {
        ridge: 1e-3,
        rf: ForestParams {
            n_trees: 10,
            max_depth: Some(6),
            ..Default::default()
        },
        gbt: GbtParams {
            n_rounds: 20,
            ..Default::default()
        },
        mlp: MlpParams {
            hidden: vec![8, 8],
            epochs: 5,
            batch: 16,
            step_size: 1e-2,
        },
        gcn: GcnParams {
            hidden: 8,
            epochs: 20,
            step_size: 1e-2,
        },
    }
}

#[test]
fn save_load_reproduces_predictions_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for target in [Target::Dwell, Target::Run] {
        let (ds, g) = dataset(target, 1);
        for kind in ModelKind::ALL {
            let m = train(kind, &ds, Some(&g), &small_hp(), 7).unwrap();
            let path = dir.path().join(format!("{kind}.json"));
            m.save(&path).unwrap();
            let back = ModelArtifact::load(&path).unwrap();
            assert_eq!(back, m, "{kind}");
            let a = m.predict_dataset(&ds).unwrap();
            let b = back.predict_dataset(&ds).unwrap();
            assert_eq!(
                a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                "{kind}"
            );
        }
    }
}

#[test]
fn retraining_is_bit_exact() {
    let (ds, g) = dataset(Target::Dwell, 2);
    for kind in ModelKind::ALL {
        let a = train(kind, &ds, Some(&g), &small_hp(), 3).unwrap();
        let b = train(kind, &ds, Some(&g), &small_hp(), 3).unwrap();
        assert_eq!(a, b, "{kind}");
    }
}

#[test]
fn schema_mismatch_is_explicit() {
    let (ds, _) = dataset(Target::Run, 3);
    let m = train(ModelKind::Mean, &ds, None, &small_hp(), 0).unwrap();
    let json = m.to_json().unwrap();
    let bumped = json.replace("\"version\":1", "\"version\":99");
    assert!(matches!(ModelArtifact::from_json(&bumped), Err(Error::Schema(_))));
    let other = json.replace(ARTIFACT_FORMAT, "something-else");
    assert!(matches!(ModelArtifact::from_json(&other), Err(Error::Schema(_))));
}

#[test]
fn graph_models_require_graph() {
    let (ds, _) = dataset(Target::Dwell, 4);
    assert!(train(ModelKind::Gcn, &ds, None, &small_hp(), 0).is_err());
}

#[test]
fn regression_outputs_respect_floors() {
    for target in [Target::Dwell, Target::Run] {
        let (ds, g) = dataset(target, 5);
        for kind in [ModelKind::Linreg, ModelKind::Rf, ModelKind::Gbt, ModelKind::Mlp, ModelKind::Gcn, ModelKind::RfGcn] {
            let m = train(kind, &ds, Some(&g), &small_hp(), 1).unwrap();
            for p in m.predict_dataset(&ds).unwrap() {
                assert!(p >= target.floor(), "{kind} {target} {p}");
            }
        }
    }
}

#[test]
fn rf_predictions_within_target_range() {
    let (ds, _) = dataset(Target::Run, 6);
    let y = ds.targets();
    let (lo, hi) = y.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let m = train(ModelKind::Rf, &ds, None, &small_hp(), 2).unwrap();
    for p in m.predict_dataset(&ds).unwrap() {
        assert!(p >= lo && p <= hi);
    }
}

#[test]
fn rf_gcn_zero_rows_are_exactly_zero() {
    let (ds, g) = dataset(Target::Dwell, 7);
    let m = train(ModelKind::RfGcn, &ds, Some(&g), &small_hp(), 4).unwrap();
    let Model::RfGcn(rg) = &m.model else { unreachable!() };
    let x = ds.matrix().unwrap();
    let preds = m.predict_dataset(&ds).unwrap();
    let mut zeros = 0;
    for (i, p) in preds.iter().enumerate() {
        assert!(*p >= 0.0);
        if rg.predicts_zero(x.row(i)) {
            assert_eq!(*p, 0.0);
            zeros += 1;
        }
    }
    assert!(zeros > 0);
    // classifier accuracy on its training data beats the majority-class rate
    let labels: Vec<bool> = ds.targets().iter().map(|&v| v == 0.0).collect();
    let hits = labels.iter().enumerate().filter(|(i, &l)| rg.predicts_zero(x.row(*i)) == l).count();
    let majority = labels.iter().filter(|&&l| l).count().max(labels.iter().filter(|&&l| !l).count());
    assert!(hits >= majority);
}

#[test]
fn rf_gcn_all_zero_targets_rejected() {
    let (mut ds, g) = dataset(Target::Dwell, 8);
    for r in &mut ds.rows {
        r.y = 0.0;
    }
    assert!(matches!(
        train(ModelKind::RfGcn, &ds, Some(&g), &small_hp(), 0),
        Err(Error::Training(_))
    ));
}

#[test]
fn rf_gcn_without_zeros_is_plain_gcn() {
    let (ds, g) = dataset(Target::Run, 9);
    let rg = train(ModelKind::RfGcn, &ds, Some(&g), &small_hp(), 5).unwrap();
    let Model::RfGcn(inner) = &rg.model else { unreachable!() };
    let x = ds.matrix().unwrap();
    assert!((0..x.rows()).all(|i| !inner.predicts_zero(x.row(i))));
    let gcn = crate::models::Gcn::fit(
        &build_snapshots(&ds, &g, &LagIndex::new(&ds.history, ds.scope)).unwrap(),
        &g,
        &small_hp().gcn,
        crate::par::derive_seed(5, 1),
    )
    .unwrap();
    assert_eq!(inner.regressor, gcn);
}

#[test]
fn masked_loss_ignores_unmasked_targets() {
    let (ds, g) = dataset(Target::Dwell, 10);
    let hist = LagIndex::new(&ds.history, ds.scope);
    let snaps = build_snapshots(&ds, &g, &hist).unwrap();
    let mut noisy = snaps.clone();
    for s in &mut noisy {
        for (k, y) in s.y.iter_mut().enumerate() {
            if !s.mask[k] {
                *y = 1e6 + k as f64;
            }
        }
    }
    let hp = small_hp().gcn;
    assert_eq!(Gcn::fit(&snaps, &g, &hp, 1).unwrap(), Gcn::fit(&noisy, &g, &hp, 1).unwrap());
}

#[test]
fn kind_names_round_trip() {
    for k in ModelKind::ALL {
        assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
    }
    assert_eq!("rf-gcn".parse::<ModelKind>().unwrap(), ModelKind::RfGcn);
    assert!("lstm".parse::<ModelKind>().is_err());
}
