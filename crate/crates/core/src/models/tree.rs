//! CART regression/classification trees.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Criterion {
    /// Squared-error reduction with leaf damping `l2` (0 gives plain CART).
    Variance { l2: f64 },
    /// Gini impurity on binary {0, 1} labels.
    Gini,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features tried per split; `None` tries all.
    pub max_features: Option<usize>,
    pub criterion: Criterion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

const MIN_GAIN: f64 = 1e-12;

impl Tree {
    /// Fits on the rows listed in `sample` (repeats allowed, for bootstrap).
    pub fn fit<R: Rng>(x: &Matrix, y: &[f64], sample: &[usize], params: &TreeParams, rng: &mut R) -> Tree {
        let mut b = Builder {
            x,
            y,
            params,
            nodes: Vec::new(),
            order: Vec::with_capacity(sample.len()),
        };
        b.build(sample.to_vec(), 0, rng);
        Tree { nodes: b.nodes }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Multiplies every leaf value by `s`.
    pub fn scale_leaves(&mut self, s: f64) {
        for n in &mut self.nodes {
            if let Node::Leaf { value } = n {
                *value *= s;
            }
        }
    }
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    params: &'a TreeParams,
    nodes: Vec<Node>,
    order: Vec<(f64, f64)>,
}

struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn leaf_value(&self, idx: &[usize]) -> f64 {
        match self.params.criterion {
            Criterion::Variance { l2 } => {
                let s: f64 = idx.iter().map(|&i| self.y[i]).sum();
                s / (idx.len() as f64 + l2)
            }
            Criterion::Gini => {
                let ones = idx.iter().filter(|&&i| self.y[i] >= 0.5).count();
                if 2 * ones >= idx.len() {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn score(&self, sum: f64, ones: f64, n: f64) -> f64 {
        match self.params.criterion {
            Criterion::Variance { l2 } => sum * sum / (n + l2),
            Criterion::Gini => (ones * ones + (n - ones) * (n - ones)) / n,
        }
    }

    fn build<R: Rng>(&mut self, idx: Vec<usize>, depth: usize, rng: &mut R) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: self.leaf_value(&idx),
        });
        let n = idx.len();
        let pure = idx.iter().all(|&i| self.y[i] == self.y[idx[0]]);
        if pure
            || n < 2 * self.params.min_leaf.max(1)
            || self.params.max_depth.is_some_and(|d| depth >= d)
        {
            return id;
        }
        let Some(best) = self.best_split(&idx, rng) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.x[(i, best.feature)] <= best.threshold);
        let left = self.build(l, depth + 1, rng);
        let right = self.build(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    fn best_split<R: Rng>(&mut self, idx: &[usize], rng: &mut R) -> Option<Best> {
        let d = self.x.cols();
        let features: Vec<usize> = match self.params.max_features {
            Some(k) if k < d => sample(rng, d, k).into_vec(),
            _ => (0..d).collect(),
        };
        let n = idx.len() as f64;
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let parent = self.score(total, total, n);
        let min_leaf = self.params.min_leaf.max(1);
        let mut best: Option<Best> = None;
        for f in features {
            self.order.clear();
            self.order.extend(idx.iter().map(|&i| (self.x[(i, f)], self.y[i])));
            self.order.sort_by(|a, b| a.0.total_cmp(&b.0));
            if self.order[0].0 == self.order[idx.len() - 1].0 {
                continue;
            }
            let mut sum_l = 0.0;
            for k in 0..idx.len() - 1 {
                sum_l += self.order[k].1;
                let (a, b) = (self.order[k].0, self.order[k + 1].0);
                let nl = k + 1;
                if a == b || nl < min_leaf || idx.len() - nl < min_leaf {
                    continue;
                }
                let (nl, nr) = (nl as f64, n - nl as f64);
                let sum_r = total - sum_l;
                let gain = self.score(sum_l, sum_l, nl) + self.score(sum_r, sum_r, nr) - parent;
                if gain > MIN_GAIN && best.as_ref().is_none_or(|bs| gain > bs.gain) {
                    let mid = a + (b - a) / 2.0;
                    let threshold = if mid < b { mid } else { a };
                    best = Some(Best {
                        gain,
                        feature: f,
                        threshold,
                    });
                }
            }
        }
        best
    }
}
