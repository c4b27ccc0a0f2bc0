//! Arrival-time prediction for fixed-route shuttles.
//!
//! The crate covers the full chain: raw GPS/speed traces are segmented into
//! dwell and running events ([`preprocess`]), turned into lagged feature rows
//! ([`features`]) or graph snapshots ([`graph`]), fed to per-segment
//! predictors ([`models`]) and finally aggregated into journey travel times
//! ([`journey`]) and scored ([`eval`]). [`synth`] generates pilot sites with
//! exact ground truth so every stage can be checked end to end.

pub mod error;
pub mod eval;
pub mod features;
pub mod geo;
pub mod graph;
pub mod io;
pub mod journey;
pub mod models;
pub mod par;
pub mod preprocess;
pub mod synth;
pub mod timeenc;
pub mod types;

pub use error::{Error, Result};
pub use types::*;
