//! First-order least-squares gradient boosting with shrinkage and leaf L2
//! damping.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::Matrix;
use super::tree::{Criterion, Tree, TreeParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub l2_leaf: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self {
            n_rounds: 300,
            learning_rate: 0.1,
            max_depth: 4,
            min_leaf: 1,
            l2_leaf: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gbt {
    pub base: f64,
    pub trees: Vec<Tree>,
    /// Training MSE before the first round and after each round.
    pub loss_history: Vec<f64>,
}

impl Gbt {
    pub fn fit(x: &Matrix, y: &[f64], params: &GbtParams, seed: u64) -> Result<Self> {
        let n = x.rows();
        if n == 0 || y.len() != n {
            return Err(Error::invalid("boosting needs at least one row and one target per row"));
        }
        if !(params.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                params.learning_rate
            )));
        }
        if params.l2_leaf < 0.0 {
            return Err(Error::Config("l2_leaf must be >= 0".into()));
        }
        let base = y.iter().sum::<f64>() / n as f64;
        let mut pred = vec![base; n];
        let mse = |p: &[f64]| p.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
        let mut loss_history = vec![mse(&pred)];
        let tree_params = TreeParams {
            max_depth: Some(params.max_depth),
            min_leaf: params.min_leaf,
            max_features: None,
            criterion: Criterion::Variance { l2: params.l2_leaf },
        };
        // every feature is tried at every split, so the rng never draws
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let all: Vec<usize> = (0..n).collect();
        let mut trees = Vec::with_capacity(params.n_rounds);
        for _ in 0..params.n_rounds {
            let resid: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
            let mut tree = Tree::fit(x, &resid, &all, &tree_params, &mut rng);
            tree.scale_leaves(params.learning_rate);
            for (i, p) in pred.iter_mut().enumerate() {
                *p += tree.predict(x.row(i));
            }
            loss_history.push(mse(&pred));
            trees.push(tree);
        }
        Ok(Self {
            base,
            trees,
            loss_history,
        })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.base + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_rounds_is_mean() {
        let x = Matrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let p = GbtParams {
            n_rounds: 0,
            ..Default::default()
        };
        let g = Gbt::fit(&x, &[3.0, 6.0, 9.0], &p, 0).unwrap();
        assert_eq!(g.predict(&[100.0]), 6.0);
    }

    #[test]
    fn one_full_round_interpolates() {
        let n = 16;
        let x = Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        let y: Vec<f64> = (0..n).map(|i| ((i * 7) % 5) as f64 * 3.0).collect();
        let p = GbtParams {
            n_rounds: 1,
            learning_rate: 1.0,
            max_depth: n,
            min_leaf: 1,
            l2_leaf: 0.0,
        };
        let g = Gbt::fit(&x, &y, &p, 0).unwrap();
        assert!(g.loss_history[1] < 1e-20);
    }

    #[test]
    fn nonpositive_rate_rejected() {
        let x = Matrix::zeros(2, 1);
        for lr in [0.0, -0.1, f64::NAN] {
            let p = GbtParams {
                learning_rate: lr,
                ..Default::default()
            };
            assert!(Gbt::fit(&x, &[1.0, 2.0], &p, 0).is_err());
        }
    }

    proptest! {
        #[test]
        fn training_loss_non_increasing(
            data in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -50.0f64..50.0), 2..40),
            lr in 0.01f64..1.0,
            l2 in 0.0f64..5.0,
        ) {
            let rows: Vec<Vec<f64>> = data.iter().map(|d| vec![d.0, d.1]).collect();
            let y: Vec<f64> = data.iter().map(|d| d.2).collect();
            let x = Matrix::from_rows(&rows).unwrap();
            let p = GbtParams { n_rounds: 15, learning_rate: lr, max_depth: 3, min_leaf: 1, l2_leaf: l2 };
            let g = Gbt::fit(&x, &y, &p, 0).unwrap();
            for w in g.loss_history.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
            }
        }
    }
}
