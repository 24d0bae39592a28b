//! Class-wise similarity graphs over feature vectors.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_store::DatasetManifest;

/// Class sizes up to this use a complete graph when [`Topology::Auto`] is chosen.
pub const AUTO_COMPLETE_MAX: usize = 512;
pub const DEFAULT_KNN: usize = 10;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("class {class} has {count} member(s); at least 2 are needed to build a graph")]
    ClassTooSmall { class: usize, count: usize },
    #[error("need at least 2 feature vectors, got {0}")]
    TooFewVectors(usize),
    #[error("feature vector {record} contains NaN or infinite values")]
    NonFinite { record: String },
    #[error("feature vector {record} has length {got}, expected {expected}")]
    Dimension { record: String, got: usize, expected: usize },
    #[error("all pairwise distances are zero; the Gaussian bandwidth is 0 (use raw or uniform weights)")]
    DegenerateBandwidth,
    #[error("invalid bandwidth {0}; must be finite and positive")]
    InvalidSigma(f64),
    #[error("k-NN needs k >= 1")]
    InvalidK,
    #[error("invalid edge: {0}")]
    InvalidEdge(String),
    #[error("{}: {msg}", path.display())]
    Cache { path: PathBuf, msg: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Dense symmetric matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Off-diagonal entries with `i < j`, row by row.
    pub fn upper(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).flat_map(move |i| ((i + 1)..self.n).map(move |j| self.get(i, j)))
    }
}

pub type DistanceMatrix = SquareMatrix;

/// Squared distance accumulated in f64 over `k = 0..D` in order.
fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = *x as f64 - *y as f64;
        acc += d * d;
    }
    acc.sqrt()
}

/// All pairwise Euclidean distances. Each entry depends only on its own pair,
/// so rows are computed in parallel without affecting the result.
pub fn pairwise_distances(features: &[&[f32]]) -> Result<DistanceMatrix, GraphError> {
    let n = features.len();
    if n < 2 {
        return Err(GraphError::TooFewVectors(n));
    }
    let dim = features[0].len();
    for (i, f) in features.iter().enumerate() {
        if f.len() != dim {
            return Err(GraphError::Dimension { record: format!("#{i}"), got: f.len(), expected: dim });
        }
        if f.iter().any(|x| !x.is_finite()) {
            return Err(GraphError::NonFinite { record: format!("#{i}") });
        }
    }
    let mut data = vec![0.0; n * n];
    data.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, slot) in row.iter_mut().enumerate() {
            if i != j {
                // Evaluate with the lower index first so d(i,j) and d(j,i) are the same bits.
                let (a, b) = if i < j { (i, j) } else { (j, i) };
                *slot = euclidean(features[a], features[b]);
            }
        }
    });
    Ok(SquareMatrix { n, data })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SigmaMode {
    /// Median of the off-diagonal distances.
    Median,
    Fixed(f64),
}

impl fmt::Display for SigmaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SigmaMode::Median => f.write_str("median"),
            SigmaMode::Fixed(s) => write!(f, "{s}"),
        }
    }
}

impl FromStr for SigmaMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "median" => Ok(SigmaMode::Median),
            t => match t.parse::<f64>() {
                Ok(v) if v.is_finite() && v > 0.0 => Ok(SigmaMode::Fixed(v)),
                _ => Err(format!("sigma must be `median` or a positive number, got {t:?}")),
            },
        }
    }
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 { values[mid] } else { 0.5 * (values[mid - 1] + values[mid]) })
}

/// Gaussian-kernel affinities `exp(-d^2 / (2 sigma^2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub sigma: f64,
    pub values: SquareMatrix,
}

pub fn resolve_sigma(d: &DistanceMatrix, mode: SigmaMode) -> Result<f64, GraphError> {
    let sigma = match mode {
        SigmaMode::Fixed(s) => s,
        SigmaMode::Median => {
            let mut off: Vec<f64> = d.upper().collect();
            median(&mut off).ok_or(GraphError::TooFewVectors(d.len()))?
        }
    };
    if sigma == 0.0 {
        return Err(GraphError::DegenerateBandwidth);
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(GraphError::InvalidSigma(sigma));
    }
    Ok(sigma)
}

pub fn gaussian_similarity(distance: f64, sigma: f64) -> f64 {
    (-(distance * distance) / (2.0 * sigma * sigma)).exp()
}

pub fn distances_to_flow(d: &DistanceMatrix, mode: SigmaMode) -> Result<SimilarityMatrix, GraphError> {
    let sigma = resolve_sigma(d, mode)?;
    let n = d.len();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                data[i * n + j] = gaussian_similarity(d.get(i, j), sigma);
            }
        }
    }
    Ok(SimilarityMatrix { sigma, values: SquareMatrix { n, data } })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Topology {
    Complete,
    /// Symmetrized k nearest neighbours.
    Knn(usize),
    /// Complete up to [`AUTO_COMPLETE_MAX`] nodes, k-NN with [`DEFAULT_KNN`] above.
    Auto,
}

impl Topology {
    fn resolve(self, n: usize) -> Topology {
        match self {
            Topology::Auto if n <= AUTO_COMPLETE_MAX => Topology::Complete,
            Topology::Auto => Topology::Knn(DEFAULT_KNN),
            t => t,
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Topology::Complete => f.write_str("complete"),
            Topology::Knn(k) => write!(f, "{k}"),
            Topology::Auto => f.write_str("auto"),
        }
    }
}

impl FromStr for Topology {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "complete" | "none" => Ok(Topology::Complete),
            "auto" => Ok(Topology::Auto),
            t => match t.parse::<usize>() {
                Ok(k) if k >= 1 => Ok(Topology::Knn(k)),
                _ => Err(format!("knn must be a positive integer, `complete` or `auto`, got {t:?}")),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EdgeWeighting {
    Gaussian(SigmaMode),
    /// Use the Euclidean distance itself as the weight.
    RawDistance,
}

impl fmt::Display for EdgeWeighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EdgeWeighting::Gaussian(s) => write!(f, "gaussian(sigma={s})"),
            EdgeWeighting::RawDistance => f.write_str("raw-distance"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphOptions {
    pub topology: Topology,
    pub weighting: EdgeWeighting,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self { topology: Topology::Knn(DEFAULT_KNN), weighting: EdgeWeighting::Gaussian(SigmaMode::Median) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
}

/// Weighted undirected graph over one class. Node `i` is `node_ids[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassGraph {
    class_label: usize,
    node_ids: Vec<String>,
    edges: Vec<Edge>,
    total_weight: f64,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl ClassGraph {
    /// Validates and normalizes edges so that `u < v`.
    pub fn new(class_label: usize, node_ids: Vec<String>, edges: Vec<Edge>) -> Result<Self, GraphError> {
        let n = node_ids.len();
        let mut seen = HashSet::with_capacity(edges.len());
        let mut normalized = Vec::with_capacity(edges.len());
        for e in edges {
            if e.u >= n || e.v >= n {
                return Err(GraphError::InvalidEdge(format!("({}, {}) out of range for {n} nodes", e.u, e.v)));
            }
            if e.u == e.v {
                return Err(GraphError::InvalidEdge(format!("self-loop on node {}", e.u)));
            }
            if !(e.weight.is_finite() && e.weight > 0.0) {
                return Err(GraphError::InvalidEdge(format!("({}, {}) has weight {}", e.u, e.v, e.weight)));
            }
            let (u, v) = if e.u < e.v { (e.u, e.v) } else { (e.v, e.u) };
            if !seen.insert((u, v)) {
                return Err(GraphError::InvalidEdge(format!("duplicate edge ({u}, {v})")));
            }
            normalized.push(Edge { u, v, weight: e.weight });
        }
        let mut ids = HashSet::with_capacity(n);
        if let Some(dup) = node_ids.iter().find(|id| !ids.insert(id.as_str())) {
            return Err(GraphError::InvalidEdge(format!("duplicate node id {dup:?}")));
        }
        let total_weight = normalized.iter().map(|e| e.weight).sum();
        let mut adjacency = vec![Vec::new(); n];
        for e in &normalized {
            adjacency[e.u].push((e.v, e.weight));
            adjacency[e.v].push((e.u, e.weight));
        }
        Ok(Self { class_label, node_ids, edges: normalized, total_weight, adjacency })
    }

    /// Builds a graph with generated ids `"0".."n-1"`; handy for tests and bindings.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        Self::new(
            0,
            (0..n).map(|i| i.to_string()).collect(),
            edges.iter().map(|&(u, v, weight)| Edge { u, v, weight }).collect(),
        )
    }

    pub fn class_label(&self) -> usize {
        self.class_label
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    pub fn neighbors(&self, node: usize) -> &[(usize, f64)] {
        &self.adjacency[node]
    }

    pub fn strength(&self, node: usize) -> f64 {
        self.adjacency[node].iter().map(|&(_, w)| w).sum()
    }

    pub fn strengths(&self) -> Vec<f64> {
        (0..self.node_count()).map(|i| self.strength(i)).collect()
    }

    /// Same topology with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, GraphError> {
        let edges = self.edges.iter().map(|e| Edge { weight: e.weight * factor, ..*e }).collect();
        Self::new(self.class_label, self.node_ids.clone(), edges)
    }

    /// Connected component index per node, numbered by first appearance.
    pub fn components(&self) -> Vec<usize> {
        let n = self.node_count();
        let mut comp = vec![usize::MAX; n];
        let mut next = 0;
        let mut stack = Vec::new();
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            comp[start] = next;
            stack.push(start);
            while let Some(u) = stack.pop() {
                for &(v, _) in &self.adjacency[u] {
                    if comp[v] == usize::MAX {
                        comp[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        comp
    }
}

/// Keeps `(u, v)` when either endpoint is among the other's `k` nearest.
/// Distance ties are broken by lower node index.
pub fn symmetric_knn(d: &DistanceMatrix, k: usize) -> Result<BTreeSet<(usize, usize)>, GraphError> {
    if k == 0 {
        return Err(GraphError::InvalidK);
    }
    let n = d.len();
    let mut pairs = BTreeSet::new();
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for u in 0..n {
        order.clear();
        order.extend((0..n).filter(|&v| v != u));
        let row = d.row(u);
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        for &v in order.iter().take(k) {
            pairs.insert((u.min(v), u.max(v)));
        }
    }
    Ok(pairs)
}

pub fn build_graph_from_features(
    class_label: usize,
    node_ids: Vec<String>,
    features: &[&[f32]],
    options: &GraphOptions,
) -> Result<ClassGraph, GraphError> {
    let n = node_ids.len();
    if n < 2 {
        return Err(GraphError::ClassTooSmall { class: class_label, count: n });
    }
    let d = pairwise_distances(features).map_err(|e| match e {
        GraphError::NonFinite { record } => {
            let idx: usize = record.trim_start_matches('#').parse().unwrap_or(0);
            GraphError::NonFinite { record: format!("{:?}", node_ids[idx]) }
        }
        GraphError::Dimension { record, got, expected } => {
            let idx: usize = record.trim_start_matches('#').parse().unwrap_or(0);
            GraphError::Dimension { record: format!("{:?}", node_ids[idx]), got, expected }
        }
        other => other,
    })?;

    let pairs: Vec<(usize, usize)> = match options.topology.resolve(n) {
        Topology::Knn(k) => symmetric_knn(&d, k)?.into_iter().collect(),
        _ => (0..n).flat_map(|u| ((u + 1)..n).map(move |v| (u, v))).collect(),
    };
    let weight: Box<dyn Fn(f64) -> f64> = match options.weighting {
        EdgeWeighting::RawDistance => Box::new(|dist| dist),
        EdgeWeighting::Gaussian(mode) => {
            let sigma = resolve_sigma(&d, mode)?;
            Box::new(move |dist| gaussian_similarity(dist, sigma))
        }
    };
    let mut dropped = 0usize;
    let edges: Vec<Edge> = pairs
        .into_iter()
        .filter_map(|(u, v)| {
            let w = weight(d.get(u, v));
            // exp underflow for far pairs, or coincident points under raw distances
            if w > 0.0 {
                Some(Edge { u, v, weight: w })
            } else {
                dropped += 1;
                None
            }
        })
        .collect();
    if dropped > 0 {
        log::debug!("class {class_label}: dropped {dropped} zero-weight edge(s)");
    }
    ClassGraph::new(class_label, node_ids, edges)
}

/// Builds the graph of one class; nodes follow manifest order.
pub fn build_class_graph(
    manifest: &DatasetManifest,
    class_label: usize,
    options: &GraphOptions,
) -> Result<ClassGraph, GraphError> {
    let members = manifest.class_members(class_label);
    let records = manifest.records();
    let ids = members.iter().map(|&i| records[i].video_id.clone()).collect();
    let features: Vec<&[f32]> = members.iter().map(|&i| records[i].feature.as_slice()).collect();
    build_graph_from_features(class_label, ids, &features, options)
}

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    class_label: usize,
    node_ids: Vec<String>,
    edge_count: usize,
    total_weight: f64,
}

/// JSON lines: one header object, then one `{"u","v","weight"}` object per edge.
pub fn write_graph_cache(graph: &ClassGraph, path: impl AsRef<Path>) -> Result<(), GraphError> {
    let path = path.as_ref();
    let io = |e: io::Error| GraphError::Io { path: path.to_path_buf(), source: e };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let header = CacheHeader {
        class_label: graph.class_label,
        node_ids: graph.node_ids.clone(),
        edge_count: graph.edges.len(),
        total_weight: graph.total_weight,
    };
    serde_json::to_writer(&mut w, &header).map_err(|e| io(e.into()))?;
    writeln!(w).map_err(io)?;
    for e in &graph.edges {
        serde_json::to_writer(&mut w, e).map_err(|e| io(e.into()))?;
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_graph_cache(path: impl AsRef<Path>) -> Result<ClassGraph, GraphError> {
    let path = path.as_ref();
    let bad = |msg: String| GraphError::Cache { path: path.to_path_buf(), msg };
    let file = File::open(path).map_err(|e| GraphError::Io { path: path.to_path_buf(), source: e })?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| bad("empty graph cache".into()))?
        .map_err(|e| GraphError::Io { path: path.to_path_buf(), source: e })?;
    let header: CacheHeader = serde_json::from_str(&header_line).map_err(|e| bad(format!("header: {e}")))?;
    let mut edges = Vec::with_capacity(header.edge_count);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| GraphError::Io { path: path.to_path_buf(), source: e })?;
        if line.trim().is_empty() {
            continue;
        }
        edges.push(serde_json::from_str::<Edge>(&line).map_err(|e| bad(format!("line {}: {e}", i + 2)))?);
    }
    if edges.len() != header.edge_count {
        return Err(bad(format!("header promises {} edges, found {}", header.edge_count, edges.len())));
    }
    ClassGraph::new(header.class_label, header.node_ids, edges)
}
