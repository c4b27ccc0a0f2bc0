use serde::{Deserialize, Serialize};

use crate::features::FeatureEncoder;

/// Predicts the most recent observation on the key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagModel {
    pub l1_index: usize,
}

impl LagModel {
    pub fn new(encoder: &FeatureEncoder) -> Self {
        Self {
            l1_index: encoder.key_offset() + encoder.keys.len(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        x[self.l1_index]
    }
}

/// Per-key training mean, with the global mean for keys never seen in
/// training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanModel {
    pub key_offset: usize,
    pub means: Vec<Option<f64>>,
    pub global: f64,
}

impl MeanModel {
    pub fn fit(encoder: &FeatureEncoder, keys: &[usize], y: &[f64]) -> Self {
        let mut sums = vec![(0.0, 0usize); encoder.keys.len()];
        for (&k, &v) in keys.iter().zip(y) {
            sums[k].0 += v;
            sums[k].1 += 1;
        }
        let global = if y.is_empty() {
            0.0
        } else {
            y.iter().sum::<f64>() / y.len() as f64
        };
        Self {
            key_offset: encoder.key_offset(),
            means: sums
                .into_iter()
                .map(|(s, n)| (n > 0).then(|| s / n as f64))
                .collect(),
            global,
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let block = &x[self.key_offset..self.key_offset + self.means.len()];
        block
            .iter()
            .position(|&v| v == 1.0)
            .and_then(|k| self.means[k])
            .unwrap_or(self.global)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{Lags, Vocab};

    fn encoder() -> FeatureEncoder {
        FeatureEncoder::new(
            Vocab::sorted(["v".to_string()]),
            Vocab::sorted(["A".to_string(), "B".to_string(), "C".to_string()]),
        )
    }

    fn x(enc: &FeatureEncoder, key: usize, l1: f64, temp: f64) -> Vec<f64> {
        let mut out = vec![0.0; enc.dim()];
        let lags = Lags {
            l1,
            l2: 0.0,
            imputed: [false, true],
        };
        enc.encode_into(&mut out, &[0.0, 1.0, 0.0, 1.0], &[temp, 0.0, 0.0], 0, key, &lags);
        out
    }

    #[test]
    fn lag_returns_l1_only() {
        let enc = encoder();
        let m = LagModel::new(&enc);
        assert_eq!(m.predict(&x(&enc, 0, 25.0, 3.0)), 25.0);
        assert_eq!(m.predict(&x(&enc, 2, 31.4, -8.0)), 31.4);
        assert_eq!(m.predict(&x(&enc, 1, 25.0, 30.0)), 25.0);
    }

    #[test]
    fn mean_per_key_with_global_fallback() {
        let enc = encoder();
        let m = MeanModel::fit(&enc, &[0, 0, 0, 1], &[10.0, 20.0, 30.0, 7.0]);
        assert_eq!(m.predict(&x(&enc, 0, 0.0, 0.0)), 20.0);
        assert_eq!(m.predict(&x(&enc, 1, 0.0, 0.0)), 7.0);
        assert_eq!(m.predict(&x(&enc, 2, 0.0, 0.0)), 67.0 / 4.0);
    }

    #[test]
    fn mean_is_optimal_constant() {
        let enc = encoder();
        let y = [3.0, 9.5, 11.0, 40.0];
        let m = MeanModel::fit(&enc, &[0, 0, 0, 0], &y);
        let c = m.predict(&x(&enc, 0, 0.0, 0.0));
        let mse = |c: f64| y.iter().map(|v| (v - c).powi(2)).sum::<f64>();
        for eps in [1e-3, 1e-1, 1.0] {
            assert!(mse(c) < mse(c + eps) && mse(c) < mse(c - eps));
        }
    }
}
