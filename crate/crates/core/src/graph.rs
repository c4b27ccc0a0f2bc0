//! Stop and segment graphs, symmetric adjacency normalization and per-event
//! node-feature snapshots.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Dataset, FeatureEncoder, LagIndex, Lags};
use crate::models::linalg::Matrix;
use crate::types::{Route, Target, Timestamp, VehicleId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGraph", into = "RawGraph")]
pub struct GraphSpec {
    pub nodes: Vec<String>,
    pub adjacency: Matrix,
    pub a_hat: Matrix,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct RawGraph {
    nodes: Vec<String>,
    adjacency: Matrix,
}

impl TryFrom<RawGraph> for GraphSpec {
    type Error = Error;

    fn try_from(r: RawGraph) -> Result<Self> {
        GraphSpec::new(r.nodes, r.adjacency)
    }
}

impl From<GraphSpec> for RawGraph {
    fn from(g: GraphSpec) -> Self {
        RawGraph {
            nodes: g.nodes,
            adjacency: g.adjacency,
        }
    }
}

impl GraphSpec {
    pub fn new(nodes: Vec<String>, adjacency: Matrix) -> Result<Self> {
        if adjacency.rows() != nodes.len() {
            return Err(Error::invalid("adjacency size does not match node count"));
        }
        let a_hat = normalize_adjacency(&adjacency)?;
        let index = nodes.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect::<HashMap<_, _>>();
        if index.len() != nodes.len() {
            return Err(Error::invalid("duplicate graph node"));
        }
        Ok(Self {
            nodes,
            adjacency,
            a_hat,
            index,
        })
    }

    fn from_edges(nodes: Vec<String>, edges: &[(usize, usize)]) -> Self {
        let n = nodes.len();
        let mut a = Matrix::zeros(n, n);
        for &(i, j) in edges {
            if i != j {
                a[(i, j)] = 1.0;
                a[(j, i)] = 1.0;
            }
        }
        Self::new(nodes, a).expect("builder produces a valid adjacency")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_index(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    /// Nodes `k` with `a_hat[m][k] != 0`, the masked node included.
    pub fn neighborhood(&self, m: usize) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.a_hat[(m, k)] != 0.0).collect()
    }

    pub fn edges(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                if self.adjacency[(i, j)] != 0.0 {
                    out.push((self.nodes[i].clone(), self.nodes[j].clone()));
                }
            }
        }
        out
    }

    /// Same graph with nodes reordered: new node `i` is old node `p[i]`.
    pub fn permuted(&self, p: &[usize]) -> Result<Self> {
        let nodes = p.iter().map(|&i| self.nodes[i].clone()).collect();
        Self::new(nodes, self.adjacency.permute_symmetric(p))
    }
}

fn intern(nodes: &mut Vec<String>, index: &mut HashMap<String, usize>, key: String) -> usize {
    *index.entry(key.clone()).or_insert_with(|| {
        nodes.push(key);
        nodes.len() - 1
    })
}

/// Nodes are stops in order of first appearance; edges join consecutive stops.
pub fn build_stop_graph(routes: &[Route]) -> GraphSpec {
    let (mut nodes, mut index, mut edges) = (Vec::new(), HashMap::new(), Vec::new());
    for r in routes {
        for seq in std::iter::once(&r.stops).chain(&r.stop_order_exceptions) {
            let ids: Vec<usize> = seq.iter().map(|s| intern(&mut nodes, &mut index, s.0.clone())).collect();
            edges.extend(ids.windows(2).map(|w| (w[0], w[1])));
        }
    }
    GraphSpec::from_edges(nodes, &edges)
}

/// Nodes are directed segments; edges join segments that follow each other
/// on a route (including the wrap of a closed loop).
pub fn build_segment_graph(routes: &[Route]) -> GraphSpec {
    let (mut nodes, mut index, mut edges) = (Vec::new(), HashMap::new(), Vec::new());
    for r in routes {
        let mut seqs: Vec<(&Vec<_>, bool)> = vec![(&r.stops, r.is_closed())];
        seqs.extend(r.stop_order_exceptions.iter().map(|s| (s, false)));
        for (seq, closed) in seqs {
            let ids: Vec<usize> = seq
                .windows(2)
                .filter(|w| w[0] != w[1])
                .map(|w| intern(&mut nodes, &mut index, format!("{}->{}", w[0], w[1])))
                .collect();
            edges.extend(ids.windows(2).map(|w| (w[0], w[1])));
            if closed && ids.len() > 1 {
                edges.push((ids[ids.len() - 1], ids[0]));
            }
        }
    }
    GraphSpec::from_edges(nodes, &edges)
}

pub fn build_graph(routes: &[Route], target: Target) -> GraphSpec {
    match target {
        Target::Dwell => build_stop_graph(routes),
        Target::Run => build_segment_graph(routes),
    }
}

/// `D^{-1/2} (A + I) D^{-1/2}` with `D` the degree matrix of `A + I`.
pub fn normalize_adjacency(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::invalid("adjacency must be square"));
    }
    for i in 0..n {
        if a[(i, i)] != 0.0 {
            return Err(Error::invalid(format!("adjacency has a self loop at node {i}")));
        }
        for j in 0..n {
            let v = a[(i, j)];
            if v != 0.0 && v != 1.0 {
                return Err(Error::invalid(format!("adjacency entry ({i},{j}) = {v} is not binary")));
            }
            if v != a[(j, i)] {
                return Err(Error::invalid(format!("adjacency is not symmetric at ({i},{j})")));
            }
        }
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / (1.0 + a.row(i).iter().sum::<f64>()).sqrt())
        .collect();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let aij = if i == j { 1.0 } else { a[(i, j)] };
            out[(i, j)] = aij * inv_sqrt[i] * inv_sqrt[j];
        }
    }
    Ok(out)
}

/// Node-feature matrix for one event: row `k` is the feature vector of node
/// `k` for the event's vehicle at the event's time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub vehicle: VehicleId,
    pub timestamp: Timestamp,
    pub x: Matrix,
    /// Only masked entries carry observed values.
    pub y: Vec<f64>,
    pub mask: Vec<bool>,
}

impl Snapshot {
    /// Index of the (single) masked node.
    pub fn masked_node(&self) -> Option<usize> {
        self.mask.iter().position(|&m| m)
    }

    pub fn masked_target(&self) -> Option<f64> {
        self.masked_node().map(|m| self.y[m])
    }

    pub fn permuted(&self, p: &[usize]) -> Snapshot {
        Snapshot {
            vehicle: self.vehicle.clone(),
            timestamp: self.timestamp,
            x: self.x.permute_rows(p),
            y: p.iter().map(|&i| self.y[i]).collect(),
            mask: p.iter().map(|&i| self.mask[i]).collect(),
        }
    }
}

/// Context shared by every node of one snapshot.
pub struct SnapshotQuery<'a> {
    pub vehicle: &'a VehicleId,
    pub timestamp: Timestamp,
    pub time_enc: &'a [f64; 4],
    pub weather: &'a [f64; 3],
    pub key: &'a str,
    /// Lags of the queried node; other nodes read theirs from the history.
    pub lags: Lags,
}

/// Builds the feature matrix around a single queried node.
pub fn snapshot_matrix(
    encoder: &FeatureEncoder,
    graph: &GraphSpec,
    history: &LagIndex,
    q: &SnapshotQuery,
) -> Result<(Matrix, usize)> {
    let m = graph
        .node_index(q.key)
        .ok_or_else(|| Error::Vocabulary(format!("key {} is not a graph node", q.key)))?;
    let v = encoder.vehicle_index(q.vehicle)?;
    let mut x = Matrix::zeros(graph.len(), encoder.dim());
    for (k, node) in graph.nodes.iter().enumerate() {
        let key_idx = encoder.key_index(node)?;
        let lags = if k == m {
            q.lags
        } else {
            history.lags_at(q.vehicle, node, q.timestamp)
        };
        encoder.encode_into(x.row_mut(k), q.time_enc, q.weather, v, key_idx, &lags);
    }
    Ok((x, m))
}

/// One snapshot per dataset row, masked at the row's key.
pub fn build_snapshots(dataset: &Dataset, graph: &GraphSpec, history: &LagIndex) -> Result<Vec<Snapshot>> {
    dataset
        .rows
        .iter()
        .map(|r| {
            let q = SnapshotQuery {
                vehicle: &r.vehicle,
                timestamp: r.timestamp,
                time_enc: &r.time_enc,
                weather: &r.weather,
                key: &r.key,
                lags: r.lags,
            };
            let (x, m) = snapshot_matrix(&dataset.encoder, graph, history, &q)?;
            let mut y = vec![0.0; graph.len()];
            let mut mask = vec![false; graph.len()];
            y[m] = r.y;
            mask[m] = true;
            Ok(Snapshot {
                vehicle: r.vehicle.clone(),
                timestamp: r.timestamp,
                x,
                y,
                mask,
            })
        })
        .collect()
}
