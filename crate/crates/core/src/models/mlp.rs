//! Fully connected ReLU network with a linear scalar output, trained with
//! minibatch Adam on mean squared error.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::linalg::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub step_size: f64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            epochs: 100,
            batch: 32,
            step_size: 1e-3,
        }
    }
}

/// Parameters are one flat vector: for each layer, its `out x in` weights
/// (row-major) followed by its `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

impl Mlp {
    pub fn n_params(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// He-normal hidden weights, zero output layer.
    pub fn init(input: usize, hidden: &[usize], seed: u64) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(Self::n_params(&sizes));
        let last = sizes.len() - 2;
        for (l, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            if l == last {
                params.extend(std::iter::repeat_n(0.0, fan_in * fan_out + fan_out));
            } else {
                let normal = Normal::new(0.0, (2.0 / fan_in.max(1) as f64).sqrt()).expect("finite std");
                params.extend((0..fan_in * fan_out).map(|_| normal.sample(&mut rng)));
                params.extend(std::iter::repeat_n(0.0, fan_out));
            }
        }
        Self { sizes, params }
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut off = 0;
        self.sizes.windows(2).map(move |w| {
            let o = off;
            off += w[0] * w[1] + w[1];
            (o, w[0], w[1])
        })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut a = x.to_vec();
        let n_layers = self.sizes.len() - 1;
        for (l, (off, fin, fout)) in self.layers().enumerate() {
            let w = &self.params[off..off + fin * fout];
            let b = &self.params[off + fin * fout..off + fin * fout + fout];
            let mut z: Vec<f64> = (0..fout)
                .map(|o| b[o] + w[o * fin..(o + 1) * fin].iter().zip(&a).map(|(p, q)| p * q).sum::<f64>())
                .collect();
            if l + 1 < n_layers {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            a = z;
        }
        a[0]
    }

    /// Mean squared error over `rows` and its gradient.
    pub fn loss_and_grad(&self, x: &Matrix, y: &[f64], rows: &[usize]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let layers: Vec<_> = self.layers().collect();
        let n_layers = layers.len();
        let inv = 1.0 / rows.len() as f64;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        for &i in rows {
            acts.clear();
            acts.push(x.row(i).to_vec());
            for (l, &(off, fin, fout)) in layers.iter().enumerate() {
                let w = &self.params[off..off + fin * fout];
                let b = &self.params[off + fin * fout..off + fin * fout + fout];
                let a = &acts[l];
                let mut z: Vec<f64> = (0..fout)
                    .map(|o| b[o] + w[o * fin..(o + 1) * fin].iter().zip(a).map(|(p, q)| p * q).sum::<f64>())
                    .collect();
                if l + 1 < n_layers {
                    z.iter_mut().for_each(|v| *v = v.max(0.0));
                }
                acts.push(z);
            }
            let err = acts[n_layers][0] - y[i];
            loss += err * err * inv;
            let mut delta = vec![2.0 * err * inv];
            for l in (0..n_layers).rev() {
                let (off, fin, fout) = layers[l];
                let a = &acts[l];
                for o in 0..fout {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let g = &mut grad[off + o * fin..off + (o + 1) * fin];
                    for (g, ai) in g.iter_mut().zip(a) {
                        *g += d * ai;
                    }
                    grad[off + fin * fout + o] += d;
                }
                if l > 0 {
                    let w = &self.params[off..off + fin * fout];
                    let mut prev = vec![0.0; fin];
                    for o in 0..fout {
                        let d = delta[o];
                        if d == 0.0 {
                            continue;
                        }
                        for (p, wv) in prev.iter_mut().zip(&w[o * fin..(o + 1) * fin]) {
                            *p += d * wv;
                        }
                    }
                    // relu'(z) via the stored activation
                    for (p, av) in prev.iter_mut().zip(a) {
                        if *av <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
        (loss, grad)
    }

    pub fn mse(&self, x: &Matrix, y: &[f64]) -> f64 {
        (0..x.rows()).map(|i| (self.predict(x.row(i)) - y[i]).powi(2)).sum::<f64>() / x.rows() as f64
    }

    /// Trains in place; `x` and `y` are expected to be standardized already.
    pub fn train(&mut self, x: &Matrix, y: &[f64], params: &MlpParams, seed: u64) -> Result<()> {
        if x.rows() == 0 {
            return Err(Error::invalid("mlp needs at least one row"));
        }
        if x.cols() != self.sizes[0] {
            return Err(Error::invalid(format!(
                "mlp expects {} features, got {}",
                self.sizes[0],
                x.cols()
            )));
        }
        if params.batch == 0 || !(params.step_size > 0.0) {
            return Err(Error::Config("mlp batch and step_size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_u64);
        let mut opt = Adam::new(self.params.len(), params.step_size);
        let mut order: Vec<usize> = (0..x.rows()).collect();
        for epoch in 0..params.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(params.batch) {
                let (loss, grad) = self.loss_and_grad(x, y, chunk);
                if !loss.is_finite() {
                    return Err(Error::Training(format!("mlp loss became non-finite in epoch {epoch}")));
                }
                opt.step(&mut self.params, &grad);
            }
        }
        Ok(())
    }
}
