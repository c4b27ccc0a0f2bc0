//! Zero-inflated hierarchy: a random-forest classifier decides whether the
//! stop is skipped, a graph regressor handles the nonzero dwells.

use serde::{Deserialize, Serialize};

use super::forest::{ForestParams, RandomForest, Task};
use super::gcn::{Gcn, GcnParams};
use super::linalg::Matrix;
use crate::error::{Error, Result};
use crate::graph::{GraphSpec, Snapshot};
use crate::par::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfGcn {
    /// predicts 1 for "zero target"
    pub classifier: RandomForest,
    pub regressor: Gcn,
}

impl RfGcn {
    /// `x`/`y` are the flat rows, `snapshots[i]` the graph view of row `i`.
    pub fn fit(
        x: &Matrix,
        y: &[f64],
        snapshots: &[Snapshot],
        graph: &GraphSpec,
        rf: &ForestParams,
        gcn: &GcnParams,
        seed: u64,
    ) -> Result<Self> {
        let labels: Vec<f64> = y.iter().map(|&v| if v == 0.0 { 1.0 } else { 0.0 }).collect();
        let nonzero: Vec<Snapshot> = snapshots
            .iter()
            .filter(|s| s.masked_target().is_some_and(|t| t > 0.0))
            .cloned()
            .collect();
        if nonzero.is_empty() {
            return Err(Error::Training(
                "every target is zero; the regression stage has nothing to fit".into(),
            ));
        }
        let classifier = RandomForest::fit(x, &labels, rf, Task::BinaryClassification, derive_seed(seed, 0))?;
        let regressor = Gcn::fit(&nonzero, graph, gcn, derive_seed(seed, 1))?;
        Ok(Self { classifier, regressor })
    }

    pub fn predicts_zero(&self, x: &[f64]) -> bool {
        self.classifier.predict(x) == 1.0
    }

    /// Exactly 0 on the zero class, otherwise the regressor floored at `floor`.
    pub fn combine(zero: bool, regression: f64, floor: f64) -> f64 {
        if zero {
            0.0
        } else {
            regression.max(floor)
        }
    }

    pub fn predict(&self, x: &[f64], snapshot_x: &Matrix, node: usize, floor: f64) -> Result<f64> {
        if self.predicts_zero(x) {
            return Ok(0.0);
        }
        Ok(Self::combine(false, self.regressor.predict_node(snapshot_x, node)?, floor))
    }
}
