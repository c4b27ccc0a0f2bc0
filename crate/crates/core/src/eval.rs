//! Metrics, date-based holdout, the lag-scope experiment and journey error
//! profiles.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{assemble_dataset, Dataset, FeatureEncoder, LagScope};
use crate::graph::GraphSpec;
use crate::journey::{predict_journey, Journey, SegmentPredictor};
use crate::models::{train, Hyperparams, ModelArtifact, ModelKind};
use crate::par;
use crate::preprocess::EventStream;
use crate::types::{Target, Timestamp};

fn check_pair(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::invalid("metrics need at least one value"));
    }
    if y.len() != yhat.len() {
        return Err(Error::invalid(format!(
            "{} labels but {} predictions",
            y.len(),
            yhat.len()
        )));
    }
    Ok(())
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    let s: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((s / y.len() as f64).sqrt())
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    let s: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / y.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: ModelKind,
    pub target: Target,
    pub rmse: f64,
    pub mae: f64,
    pub n: usize,
    pub seed: u64,
}

pub fn evaluate(model: &ModelArtifact, dataset: &Dataset) -> Result<MetricsReport> {
    let y = dataset.targets();
    let yhat = model.predict_dataset(dataset)?;
    Ok(MetricsReport {
        model: model.kind,
        target: model.target,
        rmse: rmse(&y, &yhat)?,
        mae: mae(&y, &yhat)?,
        n: y.len(),
        seed: model.seed,
    })
}

/// Start of the test window: the latest start minus `days`.
pub fn holdout_cutoff(starts: impl Iterator<Item = Timestamp>, days: f64) -> Result<Timestamp> {
    let max = starts
        .max()
        .ok_or_else(|| Error::invalid("cannot split an empty collection"))?;
    if !(days > 0.0) {
        return Err(Error::Config(format!("holdout must be a positive number of days, got {days}")));
    }
    Ok(max - chrono::Duration::microseconds((days * 86_400e6).round() as i64))
}

/// `(train, test)` with test = everything starting at or after the cutoff.
pub fn split_by_date<T: Clone>(items: &[T], start: impl Fn(&T) -> Timestamp, days: f64) -> Result<(Vec<T>, Vec<T>)> {
    let cutoff = holdout_cutoff(items.iter().map(&start), days)?;
    let (test, train): (Vec<T>, Vec<T>) = items.iter().cloned().partition(|it| start(it) >= cutoff);
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid(format!(
            "a {days}-day holdout leaves {} training and {} test items",
            train.len(),
            test.len()
        )));
    }
    Ok((train, test))
}

/// Splits rows by date; both halves keep the full observation history so
/// test-time lags stay causal rather than truncated.
pub fn split_dataset(ds: &Dataset, days: f64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_by_date(&ds.rows, |r| r.timestamp, days)?;
    let with_rows = |rows| Dataset {
        target: ds.target,
        scope: ds.scope,
        encoder: ds.encoder.clone(),
        rows,
        history: ds.history.clone(),
    };
    Ok((with_rows(train), with_rows(test)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagScopeRow {
    pub model: ModelKind,
    pub scope: LagScope,
    pub rmse: f64,
    pub mae: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagScopeTable {
    pub target: Target,
    pub rows: Vec<LagScopeRow>,
    pub note: Option<String>,
}

impl LagScopeTable {
    pub fn get(&self, model: ModelKind, scope: LagScope) -> Option<&LagScopeRow> {
        self.rows.iter().find(|r| r.model == model && r.scope == scope)
    }
}

pub struct ExperimentConfig<'a> {
    pub target: Target,
    pub models: &'a [ModelKind],
    pub holdout_days: f64,
    pub hyperparams: &'a Hyperparams,
    pub seed: u64,
    /// needed only for graph models
    pub graph: Option<&'a GraphSpec>,
}

/// Trains and scores every model under both lag scopes on one date split.
pub fn lag_scope_experiment(stream: &EventStream, cfg: &ExperimentConfig) -> Result<LagScopeTable> {
    let extra: Vec<String> = cfg.graph.map(|g| g.nodes.clone()).unwrap_or_default();
    let encoder = FeatureEncoder::from_stream(stream, cfg.target, &extra);
    let note = (encoder.vehicles.len() < 2).then(|| "single vehicle: both lag scopes coincide".to_string());
    let mut rows = Vec::new();
    for scope in [LagScope::PerVehicle, LagScope::Fleet] {
        let ds = assemble_dataset(stream, cfg.target, scope, &encoder)?;
        let (train_ds, test_ds) = split_dataset(&ds, cfg.holdout_days)?;
        let reports = par::map(cfg.models, |&kind| -> Result<LagScopeRow> {
            let m = train(kind, &train_ds, cfg.graph, cfg.hyperparams, cfg.seed)?;
            let r = evaluate(&m, &test_ds)?;
            Ok(LagScopeRow {
                model: kind,
                scope,
                rmse: r.rmse,
                mae: r.mae,
                n: r.n,
            })
        });
        for r in reports {
            rows.push(r?);
        }
    }
    Ok(LagScopeTable {
        target: cfg.target,
        rows,
        note,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub stop_index: usize,
    pub mean_err_s: f64,
    pub max_pos_s: f64,
    pub max_neg_s: f64,
    pub mean_abs_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorProfile {
    pub rows: Vec<ProfileRow>,
    pub n_journeys: usize,
}

/// Aggregates per-journey signed errors, where `errors[j][k]` is the error
/// at stop index `k + 1`. "max pos" / "max neg" are the largest and smallest
/// signed errors across journeys.
pub fn profile_from_errors(errors: &[Vec<f64>]) -> Result<ErrorProfile> {
    let len = errors
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::invalid("no journeys to profile"))?;
    if errors.iter().any(|e| e.len() != len) {
        return Err(Error::invalid("journeys of different lengths"));
    }
    let n = errors.len() as f64;
    let rows = (0..len)
        .map(|k| {
            let col = errors.iter().map(|e| e[k]);
            ProfileRow {
                stop_index: k + 1,
                mean_err_s: col.clone().sum::<f64>() / n,
                max_pos_s: col.clone().fold(f64::NEG_INFINITY, f64::max),
                max_neg_s: col.clone().fold(f64::INFINITY, f64::min),
                mean_abs_s: col.map(f64::abs).sum::<f64>() / n,
            }
        })
        .collect();
    Ok(ErrorProfile {
        rows,
        n_journeys: errors.len(),
    })
}

/// Per-journey predictions from the first stop to the last.
fn journey_errors(
    journeys: &[Journey],
    dwell: &dyn SegmentPredictor,
    run: &dyn SegmentPredictor,
) -> Result<Vec<(Journey, crate::journey::JourneyPrediction)>> {
    par::map(journeys, |j| {
        let p = predict_journey(dwell, run, &j.vehicle, j.departure, j.weather, &j.stops, 0, j.stops.len() - 1)?;
        Ok((j.clone(), p))
    })
    .into_iter()
    .collect()
}

/// Signed accumulated error `T̂_{0,j} - T_{0,j}` per stop index, aggregated
/// over the journeys.
pub fn accumulated_error_profile(
    journeys: &[Journey],
    dwell: &dyn SegmentPredictor,
    run: &dyn SegmentPredictor,
) -> Result<ErrorProfile> {
    let preds = journey_errors(journeys, dwell, run)?;
    let errors: Vec<Vec<f64>> = preds
        .iter()
        .map(|(j, p)| {
            let actual = j.actual_cumulative();
            p.cumulative[1..].iter().zip(&actual[1..]).map(|(a, b)| a - b).collect()
        })
        .collect();
    profile_from_errors(&errors)
}

/// How per-event errors are folded along a journey.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsMode {
    /// `Σ|e|`
    #[default]
    SumOfAbs,
    /// `|Σe|`
    AbsOfSum,
}

impl AbsMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AbsMode::SumOfAbs => "sum_of_abs",
            AbsMode::AbsOfSum => "abs_of_sum",
        }
    }

    fn fold(self, errors: &[f64]) -> f64 {
        match self {
            AbsMode::SumOfAbs => errors.iter().map(|e| e.abs()).sum(),
            AbsMode::AbsOfSum => errors.iter().sum::<f64>().abs(),
        }
    }
}

impl std::str::FromStr for AbsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "sum_of_abs" => Ok(AbsMode::SumOfAbs),
            "abs_of_sum" => Ok(AbsMode::AbsOfSum),
            _ => Err(Error::invalid(format!("unknown mode {s:?}; expected sum_of_abs or abs_of_sum"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    /// mean over journeys of the folded dwell errors, seconds
    pub dwell_abs: f64,
    /// mean over journeys of the folded running-time errors, seconds
    pub run_abs: f64,
    pub n_journeys: usize,
    #[serde(default)]
    pub mode: AbsMode,
}

/// Folds the per-event errors of each journey with `mode` and averages over
/// journeys.
pub fn decompose_from_errors(dwell_errors: &[Vec<f64>], run_errors: &[Vec<f64>], mode: AbsMode) -> Result<Decomposition> {
    if dwell_errors.is_empty() || dwell_errors.len() != run_errors.len() {
        return Err(Error::invalid("need matching, non-empty dwell and run error lists"));
    }
    let n = dwell_errors.len() as f64;
    Ok(Decomposition {
        dwell_abs: dwell_errors.iter().map(|v| mode.fold(v)).sum::<f64>() / n,
        run_abs: run_errors.iter().map(|v| mode.fold(v)).sum::<f64>() / n,
        n_journeys: dwell_errors.len(),
        mode,
    })
}

pub fn decompose_accumulated_error(
    journeys: &[Journey],
    dwell: &dyn SegmentPredictor,
    run: &dyn SegmentPredictor,
    mode: AbsMode,
) -> Result<Decomposition> {
    let preds = journey_errors(journeys, dwell, run)?;
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<f64>>();
    let dwell_errors: Vec<Vec<f64>> = preds.iter().map(|(j, p)| diff(&p.dwell_preds, &j.dwell_actual)).collect();
    let run_errors: Vec<Vec<f64>> = preds.iter().map(|(j, p)| diff(&p.run_preds, &j.run_actual)).collect();
    decompose_from_errors(&dwell_errors, &run_errors, mode)
}

/// Uniform sample without replacement, kept in the input order.
pub fn sample_journeys(journeys: &[Journey], n: usize, seed: u64) -> Vec<Journey> {
    if n >= journeys.len() {
        return journeys.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, journeys.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| journeys[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    #[test]
    fn metric_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(mae(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 3.5);
        let y = [3.0, -1.0, 8.5];
        let shifted: Vec<f64> = y.iter().map(|v| v - 2.5).collect();
        assert!((rmse(&y, &shifted).unwrap() - 2.5).abs() < 1e-12);
        assert!((mae(&y, &shifted).unwrap() - 2.5).abs() < 1e-12);
        assert!(rmse(&[], &[]).is_err());
        assert!(mae(&[1.0], &[]).is_err());
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae(pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..50)) {
            let (y, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assert!(rmse(&y, &p).unwrap() >= mae(&y, &p).unwrap() * (1.0 - 1e-12));
        }
    }

    fn day(m: u32, d: u32) -> Timestamp {
        Utc.with_ymd_and_hms(2023, m, d, 0, 0, 0).unwrap()
    }

    #[test]
    fn split_cutoff_arithmetic() {
        let mut days = Vec::new();
        let mut t = day(1, 1);
        while t <= day(3, 31) {
            days.push(t);
            t += chrono::Duration::days(1);
        }
        let (train, test) = split_by_date(&days, |t| *t, 30.0).unwrap();
        assert_eq!(test[0], day(3, 1));
        assert_eq!(*train.last().unwrap(), day(2, 28));
        assert!(train.iter().max() < test.iter().min());
    }

    #[test]
    fn split_degenerate_is_error() {
        let one_day = vec![day(5, 1), day(5, 1) + chrono::Duration::hours(5)];
        assert!(split_by_date(&one_day, |t| *t, 30.0).is_err());
    }

    #[test]
    fn profile_hand_example() {
        let p = profile_from_errors(&[vec![10.0, 20.0], vec![-10.0, 0.0]]).unwrap();
        let get = |f: fn(&ProfileRow) -> f64| p.rows.iter().map(f).collect::<Vec<_>>();
        assert_eq!(get(|r| r.mean_err_s), vec![0.0, 10.0]);
        assert_eq!(get(|r| r.max_pos_s), vec![10.0, 20.0]);
        assert_eq!(get(|r| r.max_neg_s), vec![-10.0, 0.0]);
        let single = profile_from_errors(&[vec![-3.0, 7.0]]).unwrap();
        for r in single.rows {
            assert!(r.mean_err_s == r.max_pos_s && r.mean_err_s == r.max_neg_s);
        }
    }

    #[test]
    fn decomposition_hand_example() {
        let d = decompose_from_errors(&[vec![5.0, -5.0]], &[vec![10.0, 10.0]], AbsMode::SumOfAbs).unwrap();
        assert_eq!((d.dwell_abs, d.run_abs), (10.0, 20.0));
        let d = decompose_from_errors(&[vec![5.0, -5.0]], &[vec![10.0, 10.0]], AbsMode::AbsOfSum).unwrap();
        assert_eq!((d.dwell_abs, d.run_abs), (0.0, 20.0));
        assert_eq!("abs-of-sum".parse::<AbsMode>().unwrap(), AbsMode::AbsOfSum);
    }

    proptest! {
        #[test]
        fn profile_ordering(errors in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 6), 1..8)) {
            let p = profile_from_errors(&errors).unwrap();
            for r in p.rows {
                prop_assert!(r.max_neg_s <= r.mean_err_s + 1e-9 && r.mean_err_s <= r.max_pos_s + 1e-9);
            }
        }

        #[test]
        fn decomposition_bounds_total_error(d in prop::collection::vec(-50.0f64..50.0, 1..10), r in prop::collection::vec(-50.0f64..50.0, 2..11)) {
            let dec = decompose_from_errors(&[d.clone()], &[r.clone()], AbsMode::SumOfAbs).unwrap();
            let total: f64 = d.iter().sum::<f64>() + r.iter().sum::<f64>();
            prop_assert!(dec.dwell_abs + dec.run_abs >= total.abs() - 1e-9);
            let signed = decompose_from_errors(&[d], &[r], AbsMode::AbsOfSum).unwrap();
            prop_assert!(signed.dwell_abs <= dec.dwell_abs + 1e-9 && signed.run_abs <= dec.run_abs + 1e-9);
        }
    }
}
