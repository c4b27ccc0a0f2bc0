use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::Matrix;
use super::tree::{Criterion, Tree, TreeParams};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    BinaryClassification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or hit `min_leaf`.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// `None` means round(sqrt(d)).
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: Some(12),
            min_leaf: 2,
            max_features: None,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub task: Task,
    pub trees: Vec<Tree>,
}

impl RandomForest {
    pub fn fit(x: &Matrix, y: &[f64], params: &ForestParams, task: Task, seed: u64) -> Result<Self> {
        let (n, d) = (x.rows(), x.cols());
        if n == 0 || y.len() != n {
            return Err(Error::invalid("random forest needs at least one row and one target per row"));
        }
        if params.n_trees == 0 {
            return Err(Error::Config("n_trees must be >= 1".into()));
        }
        if task == Task::BinaryClassification && y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("binary task needs targets in {0, 1}"));
        }
        let max_features = match params.max_features {
            Some(k) if k > d => {
                return Err(Error::Config(format!("max_features {k} exceeds feature count {d}")))
            }
            Some(0) => return Err(Error::Config("max_features must be >= 1".into())),
            Some(k) => k,
            None => ((d as f64).sqrt().round() as usize).clamp(1, d.max(1)),
        };
        let tree_params = TreeParams {
            max_depth: params.max_depth,
            min_leaf: params.min_leaf,
            max_features: Some(max_features),
            criterion: match task {
                Task::Regression => Criterion::Variance { l2: 0.0 },
                Task::BinaryClassification => Criterion::Gini,
            },
        };
        let trees = par::map_range(params.n_trees, |t| {
            let mut rng = ChaCha8Rng::seed_from_u64(par::derive_seed(seed, t as u64));
            let sample: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            Tree::fit(x, y, &sample, &tree_params, &mut rng)
        });
        Ok(Self { task, trees })
    }

    /// Mean of tree outputs (regression) or the voted class, ties to 1.
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.task {
            Task::Regression => self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64,
            Task::BinaryClassification => {
                let votes = self.trees.iter().filter(|t| t.predict(x) >= 0.5).count();
                if 2 * votes >= self.trees.len() {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Fraction of trees voting for class 1.
    pub fn vote_share(&self, x: &[f64]) -> f64 {
        self.trees.iter().filter(|t| t.predict(x) >= 0.5).count() as f64 / self.trees.len() as f64
    }
}
