//! Segment-level predictors behind one train/predict contract.
//!
//! Every model maps a feature row (and, for graph models, the snapshot built
//! around it) to seconds. [`ModelArtifact`] is the persisted form: kind,
//! hyperparameters, vocabularies, scaling constants and learned parameters.

pub mod adam;
pub mod baseline;
pub mod forest;
pub mod gbt;
pub mod gcn;
pub mod linalg;
pub mod linreg;
pub mod mlp;
pub mod rf_gcn;
pub mod tree;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Dataset, FeatureEncoder, FeatureRow, LagIndex, LagScope};
use crate::graph::{build_snapshots, snapshot_matrix, GraphSpec, SnapshotQuery};
use crate::par;
use crate::types::Target;

pub use baseline::{LagModel, MeanModel};
pub use forest::{ForestParams, RandomForest, Task};
pub use gbt::{Gbt, GbtParams};
pub use gcn::{Gcn, GcnParams};
pub use linalg::{Matrix, Standardizer, TargetScaler};
pub use linreg::LinReg;
pub use mlp::{Mlp, MlpParams};
pub use rf_gcn::RfGcn;

pub const ARTIFACT_FORMAT: &str = "shuttle-eta-model";
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lag,
    Mean,
    Linreg,
    Rf,
    Gbt,
    Mlp,
    Gcn,
    RfGcn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 8] = [
        ModelKind::Lag,
        ModelKind::Mean,
        ModelKind::Linreg,
        ModelKind::Rf,
        ModelKind::Gbt,
        ModelKind::Mlp,
        ModelKind::Gcn,
        ModelKind::RfGcn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Lag => "lag",
            ModelKind::Mean => "mean",
            ModelKind::Linreg => "linreg",
            ModelKind::Rf => "rf",
            ModelKind::Gbt => "gbt",
            ModelKind::Mlp => "mlp",
            ModelKind::Gcn => "gcn",
            ModelKind::RfGcn => "rf_gcn",
        }
    }

    pub fn needs_graph(self) -> bool {
        matches!(self, ModelKind::Gcn | ModelKind::RfGcn)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| Error::invalid(format!("unknown model kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub ridge: f64,
    pub rf: ForestParams,
    pub gbt: GbtParams,
    pub mlp: MlpParams,
    pub gcn: GcnParams,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            ridge: 1e-3,
            rf: ForestParams::default(),
            gbt: GbtParams::default(),
            mlp: MlpParams::default(),
            gcn: GcnParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Lag(LagModel),
    Mean(MeanModel),
    Linreg(LinReg),
    Rf(RandomForest),
    Gbt(Gbt),
    Mlp {
        net: Mlp,
        x_scaler: Standardizer,
        y_scaler: TargetScaler,
    },
    Gcn(Gcn),
    RfGcn(RfGcn),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    pub target: Target,
    pub scope: LagScope,
    pub seed: u64,
    pub hyperparameters: Hyperparams,
    pub encoder: FeatureEncoder,
    pub model: Model,
}

/// Trains `kind` on the dataset. Graph models need the graph whose nodes
/// are the dataset's keys.
pub fn train(
    kind: ModelKind,
    dataset: &Dataset,
    graph: Option<&GraphSpec>,
    hp: &Hyperparams,
    seed: u64,
) -> Result<ModelArtifact> {
    if dataset.is_empty() {
        return Err(Error::invalid(format!("cannot train {kind} on an empty dataset")));
    }
    let enc = &dataset.encoder;
    let x = dataset.matrix()?;
    let y = dataset.targets();
    let graph_and_snapshots = || -> Result<_> {
        let g = graph.ok_or_else(|| Error::Config(format!("{kind} needs the route graph")))?;
        if let Some(missing) = g.nodes.iter().find(|n| enc.keys.get(n).is_none()) {
            return Err(Error::Vocabulary(format!(
                "graph node {missing} is missing from the dataset vocabulary; rebuild the dataset with the routes"
            )));
        }
        let history = LagIndex::new(&dataset.history, dataset.scope);
        Ok((g, build_snapshots(dataset, g, &history)?))
    };
    let model = match kind {
        ModelKind::Lag => Model::Lag(LagModel::new(enc)),
        ModelKind::Mean => {
            let keys = dataset
                .rows
                .iter()
                .map(|r| enc.key_index(&r.key))
                .collect::<Result<Vec<_>>>()?;
            Model::Mean(MeanModel::fit(enc, &keys, &y))
        }
        ModelKind::Linreg => Model::Linreg(LinReg::fit(&x, &y, hp.ridge)?),
        ModelKind::Rf => Model::Rf(RandomForest::fit(&x, &y, &hp.rf, Task::Regression, seed)?),
        ModelKind::Gbt => Model::Gbt(Gbt::fit(&x, &y, &hp.gbt, seed)?),
        ModelKind::Mlp => {
            let x_scaler = Standardizer::fit(&x);
            let y_scaler = TargetScaler::fit(&y);
            let xs = x_scaler.transform(&x);
            let ys: Vec<f64> = y.iter().map(|&v| y_scaler.forward(v)).collect();
            let mut net = Mlp::init(x.cols(), &hp.mlp.hidden, seed);
            net.train(&xs, &ys, &hp.mlp, seed)?;
            Model::Mlp {
                net,
                x_scaler,
                y_scaler,
            }
        }
        ModelKind::Gcn => {
            let (g, snaps) = graph_and_snapshots()?;
            Model::Gcn(Gcn::fit(&snaps, g, &hp.gcn, seed)?)
        }
        ModelKind::RfGcn => {
            let (g, snaps) = graph_and_snapshots()?;
            Model::RfGcn(RfGcn::fit(&x, &y, &snaps, g, &hp.rf, &hp.gcn, seed)?)
        }
    };
    Ok(ModelArtifact {
        format: ARTIFACT_FORMAT.into(),
        version: ARTIFACT_VERSION,
        kind,
        target: dataset.target,
        scope: dataset.scope,
        seed,
        hyperparameters: hp.clone(),
        encoder: enc.clone(),
        model,
    })
}

impl ModelArtifact {
    pub fn graph(&self) -> Option<&GraphSpec> {
        match &self.model {
            Model::Gcn(g) => Some(&g.graph),
            Model::RfGcn(m) => Some(&m.regressor.graph),
            _ => None,
        }
    }

    /// Flat prediction from an encoded feature vector. Graph models need
    /// [`ModelArtifact::predict_query`].
    pub fn predict_features(&self, x: &[f64]) -> Result<f64> {
        let floor = self.target.floor();
        Ok(match &self.model {
            Model::Lag(m) => m.predict(x),
            Model::Mean(m) => m.predict(x),
            Model::Linreg(m) => m.predict(x).max(floor),
            Model::Rf(m) => m.predict(x).max(floor),
            Model::Gbt(m) => m.predict(x).max(floor),
            Model::Mlp {
                net,
                x_scaler,
                y_scaler,
            } => {
                let mut z = x.to_vec();
                x_scaler.apply_in_place(&mut z);
                y_scaler.inverse(net.predict(&z)).max(floor)
            }
            Model::Gcn(_) | Model::RfGcn(_) => {
                return Err(Error::invalid(format!("{} needs graph context to predict", self.kind)))
            }
        })
    }

    /// Prediction for one node at one instant; non-queried nodes of graph
    /// models read their lags from `history`.
    pub fn predict_query(&self, q: &SnapshotQuery, history: &LagIndex) -> Result<f64> {
        let v = self.encoder.vehicle_index(q.vehicle)?;
        let k = self.encoder.key_index(q.key)?;
        let mut x = vec![0.0; self.encoder.dim()];
        self.encoder.encode_into(&mut x, q.time_enc, q.weather, v, k, &q.lags);
        let floor = self.target.floor();
        match &self.model {
            Model::Gcn(g) => {
                let (sx, m) = snapshot_matrix(&self.encoder, &g.graph, history, q)?;
                Ok(g.predict_node(&sx, m)?.max(floor))
            }
            Model::RfGcn(rg) => {
                if rg.predicts_zero(&x) {
                    return Ok(0.0);
                }
                let (sx, m) = snapshot_matrix(&self.encoder, &rg.regressor.graph, history, q)?;
                rg.predict(&x, &sx, m, floor)
            }
            _ => self.predict_features(&x),
        }
    }

    pub fn predict_row(&self, row: &FeatureRow, history: &LagIndex) -> Result<f64> {
        self.predict_query(
            &SnapshotQuery {
                vehicle: &row.vehicle,
                timestamp: row.timestamp,
                time_enc: &row.time_enc,
                weather: &row.weather,
                key: &row.key,
                lags: row.lags,
            },
            history,
        )
    }

    /// Predictions for every row, with the dataset's history as lag context.
    pub fn predict_dataset(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        if dataset.target != self.target {
            return Err(Error::invalid(format!(
                "model predicts {} but the dataset holds {}",
                self.target, dataset.target
            )));
        }
        let history = LagIndex::new(&dataset.history, self.scope);
        par::map(&dataset.rows, |r| self.predict_row(r, &history))
            .into_iter()
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(s)?;
        let format = v.get("format").and_then(|f| f.as_str()).unwrap_or("");
        if format != ARTIFACT_FORMAT {
            return Err(Error::Schema(format!(
                "not a model file (format {format:?}, expected {ARTIFACT_FORMAT:?})"
            )));
        }
        let version = v.get("version").and_then(|f| f.as_u64()).unwrap_or(0);
        if version != ARTIFACT_VERSION as u64 {
            return Err(Error::Schema(format!(
                "model file version {version} is not supported (expected {ARTIFACT_VERSION})"
            )));
        }
        Ok(serde_json::from_value(v)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests;
