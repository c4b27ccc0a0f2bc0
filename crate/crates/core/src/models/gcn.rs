//! Two-layer graph convolution, `H = relu(Â X W0 + b0)`, `ŷ = Â H w1 + b1`,
//! with the loss taken over masked nodes only.
//!
//! Training never needs the full `|V|`-row output: a masked node's prediction
//! only touches its neighbours in `Â`, so each snapshot is reduced to the
//! rows `(Â X)_k` of those neighbours once, up front.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::linalg::{Matrix, Standardizer, TargetScaler};
use crate::error::{Error, Result};
use crate::graph::{GraphSpec, Snapshot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GcnParams {
    pub hidden: usize,
    pub epochs: usize,
    pub step_size: f64,
}

impl Default for GcnParams {
    fn default() -> Self {
        Self {
            hidden: 64,
            epochs: 500,
            step_size: 1e-3,
        }
    }
}

/// Flat parameter layout: `W0` (`d x h`, row-major), `b0` (`h`), `w1` (`h`), `b1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnNet {
    pub d: usize,
    pub h: usize,
    pub params: Vec<f64>,
}

/// One masked node, reduced to the propagated rows it depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnSample {
    /// `(Â[m][k], (Â X)_k)` for every `k` adjacent to the masked node `m`.
    pub terms: Vec<(f64, Vec<f64>)>,
    pub y: f64,
}

impl GcnSample {
    pub fn new(a_hat: &Matrix, x: &Matrix, m: usize, y: f64) -> Self {
        let n = a_hat.rows();
        let terms = (0..n)
            .filter(|&k| a_hat[(m, k)] != 0.0)
            .map(|k| (a_hat[(m, k)], propagate_row(a_hat, x, k)))
            .collect();
        Self { terms, y }
    }
}

/// Row `k` of `Â X`.
fn propagate_row(a_hat: &Matrix, x: &Matrix, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.cols()];
    for (l, &a) in a_hat.row(k).iter().enumerate() {
        if a != 0.0 {
            for (o, v) in out.iter_mut().zip(x.row(l)) {
                *o += a * v;
            }
        }
    }
    out
}

impl GcnNet {
    pub fn n_params(d: usize, h: usize) -> usize {
        d * h + 2 * h + 1
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(d: usize, h: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(Self::n_params(d, h));
        let r0 = (6.0 / (d + h) as f64).sqrt();
        params.extend((0..d * h).map(|_| rng.random_range(-r0..r0)));
        params.extend(std::iter::repeat_n(0.0, h));
        let r1 = (6.0 / (h + 1) as f64).sqrt();
        params.extend((0..h).map(|_| rng.random_range(-r1..r1)));
        params.push(0.0);
        Self { d, h, params }
    }

    fn w0(&self) -> &[f64] {
        &self.params[..self.d * self.h]
    }

    fn b0(&self) -> &[f64] {
        &self.params[self.d * self.h..self.d * self.h + self.h]
    }

    fn w1(&self) -> &[f64] {
        &self.params[self.d * self.h + self.h..self.d * self.h + 2 * self.h]
    }

    fn b1(&self) -> f64 {
        self.params[self.d * self.h + 2 * self.h]
    }

    fn hidden_into(&self, p: &[f64], z: &mut [f64]) {
        z.copy_from_slice(self.b0());
        let w0 = self.w0();
        for (i, &pi) in p.iter().enumerate() {
            if pi != 0.0 {
                for (zj, w) in z.iter_mut().zip(&w0[i * self.h..(i + 1) * self.h]) {
                    *zj += pi * w;
                }
            }
        }
    }

    pub fn predict_sample(&self, s: &GcnSample) -> f64 {
        let mut z = vec![0.0; self.h];
        let mut acc = vec![0.0; self.h];
        for (a, p) in &s.terms {
            self.hidden_into(p, &mut z);
            for (o, zj) in acc.iter_mut().zip(&z) {
                *o += a * zj.max(0.0);
            }
        }
        acc.iter().zip(self.w1()).map(|(a, w)| a * w).sum::<f64>() + self.b1()
    }

    /// Per-node outputs for a whole graph.
    pub fn forward_full(&self, a_hat: &Matrix, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.d {
            return Err(Error::invalid(format!(
                "node features have {} columns, first layer expects {}",
                x.cols(),
                self.d
            )));
        }
        if a_hat.rows() != x.rows() || a_hat.cols() != x.rows() {
            return Err(Error::invalid("adjacency and feature matrix disagree on node count"));
        }
        let ax = a_hat.matmul(x)?;
        let mut z = vec![0.0; self.h];
        let hw: Vec<f64> = (0..ax.rows())
            .map(|k| {
                self.hidden_into(ax.row(k), &mut z);
                z.iter().zip(self.w1()).map(|(zj, w)| zj.max(0.0) * w).sum()
            })
            .collect();
        Ok(a_hat.matvec(&hw).into_iter().map(|v| v + self.b1()).collect())
    }

    /// Mean squared error over the samples and its gradient.
    pub fn loss_and_grad(&self, samples: &[GcnSample]) -> (f64, Vec<f64>) {
        let (d, h) = (self.d, self.h);
        let mut grad = vec![0.0; self.params.len()];
        let inv = 1.0 / samples.len().max(1) as f64;
        let mut loss = 0.0;
        let mut zs: Vec<Vec<f64>> = Vec::new();
        let mut acc = vec![0.0; h];
        for s in samples {
            zs.resize(s.terms.len(), vec![0.0; h]);
            acc.fill(0.0);
            for ((a, p), z) in s.terms.iter().zip(zs.iter_mut()) {
                self.hidden_into(p, z);
                for (o, zj) in acc.iter_mut().zip(z.iter()) {
                    *o += a * zj.max(0.0);
                }
            }
            let pred = acc.iter().zip(self.w1()).map(|(a, w)| a * w).sum::<f64>() + self.b1();
            let err = pred - s.y;
            loss += err * err * inv;
            let delta = 2.0 * err * inv;
            let (gw0, rest) = grad.split_at_mut(d * h);
            let (gb0, rest) = rest.split_at_mut(h);
            let (gw1, gb1) = rest.split_at_mut(h);
            gb1[0] += delta;
            for (g, a) in gw1.iter_mut().zip(&acc) {
                *g += delta * a;
            }
            for ((a, p), z) in s.terms.iter().zip(zs.iter()) {
                let dz: Vec<f64> = z
                    .iter()
                    .zip(self.w1())
                    .map(|(zj, w)| if *zj > 0.0 { delta * a * w } else { 0.0 })
                    .collect();
                for (gb, v) in gb0.iter_mut().zip(&dz) {
                    *gb += v;
                }
                for (i, &pi) in p.iter().enumerate() {
                    if pi != 0.0 {
                        for (g, v) in gw0[i * h..(i + 1) * h].iter_mut().zip(&dz) {
                            *g += pi * v;
                        }
                    }
                }
            }
        }
        (loss, grad)
    }

    pub fn train(&mut self, samples: &[GcnSample], params: &GcnParams) -> Result<Vec<f64>> {
        if !(params.step_size > 0.0) {
            return Err(Error::Config("gcn step_size must be > 0".into()));
        }
        let mut opt = Adam::new(self.params.len(), params.step_size);
        let mut history = Vec::with_capacity(params.epochs);
        for epoch in 0..params.epochs {
            let (loss, grad) = self.loss_and_grad(samples);
            if !loss.is_finite() {
                return Err(Error::Training(format!("gcn loss became non-finite in epoch {epoch}")));
            }
            history.push(loss);
            opt.step(&mut self.params, &grad);
        }
        Ok(history)
    }
}

/// A trained graph regressor with its standardization and graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gcn {
    pub net: GcnNet,
    pub x_scaler: Standardizer,
    pub y_scaler: TargetScaler,
    pub graph: GraphSpec,
}

impl Gcn {
    pub fn fit(snapshots: &[Snapshot], graph: &GraphSpec, params: &GcnParams, seed: u64) -> Result<Self> {
        if snapshots.is_empty() {
            return Err(Error::Training("gcn needs at least one snapshot".into()));
        }
        let d = snapshots[0].x.cols();
        let mut masked_rows = Vec::with_capacity(snapshots.len());
        let mut targets = Vec::with_capacity(snapshots.len());
        for s in snapshots {
            if s.x.rows() != graph.len() || s.x.cols() != d {
                return Err(Error::invalid("snapshot shape does not match graph and feature dimension"));
            }
            let m = s
                .masked_node()
                .ok_or_else(|| Error::invalid("snapshot without a masked node"))?;
            masked_rows.push(s.x.row(m).to_vec());
            targets.push(s.y[m]);
        }
        let x_scaler = Standardizer::fit(&Matrix::from_rows(&masked_rows)?);
        let y_scaler = TargetScaler::fit(&targets);
        let samples: Vec<GcnSample> = snapshots
            .iter()
            .zip(&targets)
            .map(|(s, &y)| {
                let x = x_scaler.transform(&s.x);
                GcnSample::new(&graph.a_hat, &x, s.masked_node().expect("checked"), y_scaler.forward(y))
            })
            .collect();
        let mut net = GcnNet::init(d, params.hidden, seed);
        net.train(&samples, params)?;
        Ok(Self {
            net,
            x_scaler,
            y_scaler,
            graph: graph.clone(),
        })
    }

    /// Prediction in seconds at node `m` of a raw feature matrix.
    pub fn predict_node(&self, x: &Matrix, m: usize) -> Result<f64> {
        if x.cols() != self.net.d || x.rows() != self.graph.len() {
            return Err(Error::invalid("snapshot shape does not match the trained graph model"));
        }
        let xs = self.x_scaler.transform(x);
        let s = GcnSample::new(&self.graph.a_hat, &xs, m, 0.0);
        Ok(self.y_scaler.inverse(self.net.predict_sample(&s)))
    }

    /// Predictions in seconds at every node.
    pub fn predict_all(&self, x: &Matrix) -> Result<Vec<f64>> {
        let xs = self.x_scaler.transform(x);
        Ok(self
            .net
            .forward_full(&self.graph.a_hat, &xs)?
            .into_iter()
            .map(|v| self.y_scaler.inverse(v))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::normalize_adjacency;
    use crate::models::mlp::Mlp;

    fn path3() -> Matrix {
        normalize_adjacency(&Matrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]]).unwrap())
            .unwrap()
    }

    fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn sparse_path_matches_full_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = path3();
        let x = random_matrix(3, 4, &mut rng);
        let net = GcnNet::init(4, 6, 1);
        let full = net.forward_full(&a, &x).unwrap();
        for m in 0..3 {
            let s = GcnSample::new(&a, &x, m, 0.0);
            assert!((net.predict_sample(&s) - full[m]).abs() < 1e-12);
        }
    }

    #[test]
    fn single_node_is_one_hidden_layer_mlp() {
        let (d, h) = (3, 5);
        let net = GcnNet::init(d, h, 8);
        let mut mlp = Mlp::init(d, &[h], 0);
        // mlp layer 0 stores W as out x in
        let mut p = Vec::new();
        for j in 0..h {
            for i in 0..d {
                p.push(net.params[i * h + j]);
            }
        }
        p.extend_from_slice(net.b0());
        p.extend_from_slice(net.w1());
        p.push(net.b1() + 0.25);
        mlp.params = p;
        let mut net = net;
        let last = net.params.len() - 1;
        net.params[last] += 0.25;
        let a = Matrix::identity(1);
        for x in [[0.3, -1.0, 2.0], [1.0, 1.0, -0.5]] {
            let xm = Matrix::from_vec(1, 3, x.to_vec()).unwrap();
            assert!((net.forward_full(&a, &xm).unwrap()[0] - mlp.predict(&x)).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = path3();
        let samples: Vec<GcnSample> = (0..6)
            .map(|i| GcnSample::new(&a, &random_matrix(3, 4, &mut rng), i % 3, rng.random_range(-2.0..2.0)))
            .collect();
        let mut net = GcnNet::init(4, 5, 3);
        net.params.iter_mut().for_each(|p| *p = rng.random_range(-1.0..1.0));
        let (_, g) = net.loss_and_grad(&samples);
        let h = 1e-6;
        for k in 0..net.params.len() {
            let mut plus = net.clone();
            plus.params[k] += h;
            let mut minus = net.clone();
            minus.params[k] -= h;
            let num = (plus.loss_and_grad(&samples).0 - minus.loss_and_grad(&samples).0) / (2.0 * h);
            let rel = (g[k] - num).abs() / g[k].abs().max(num.abs()).max(1e-6);
            assert!(rel < 1e-4, "param {k}: analytic {} numeric {num}", g[k]);
        }
    }

    #[test]
    fn feature_dimension_mismatch_is_an_error() {
        let net = GcnNet::init(4, 3, 0);
        assert!(net.forward_full(&Matrix::identity(2), &Matrix::zeros(2, 5)).is_err());
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let adj = Matrix::from_rows(&[
            vec![0.0, 1.0, 0.0, 1.0],
            vec![1.0, 0.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0],
        ])
        .unwrap();
        let p = [2, 0, 3, 1];
        let a = normalize_adjacency(&adj).unwrap();
        let ap = normalize_adjacency(&adj.permute_symmetric(&p)).unwrap();
        let x = random_matrix(4, 3, &mut rng);
        let net = GcnNet::init(3, 8, 4);
        let y = net.forward_full(&a, &x).unwrap();
        let yp = net.forward_full(&ap, &x.permute_rows(&p)).unwrap();
        for (i, &src) in p.iter().enumerate() {
            assert!((yp[i] - y[src]).abs() < 1e-9);
        }
    }
}
