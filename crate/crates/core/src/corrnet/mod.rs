//! Correlation and distance matrices and the planar maximally filtered graph.

mod planarity;

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::WindowSlice;
use crate::netmeasures::{self, LengthGraph, MeasureError};

pub use planarity::{is_planar, is_planar_lists, planarity_of_edges, PlanarEmbedding, Planarity};

#[derive(Debug, Error)]
pub enum CorrError {
    #[error("zero-variance stocks: {}", .tickers.join(", "))]
    ZeroVariance { rows: Vec<usize>, tickers: Vec<String> },
    #[error("need at least 2 samples per stock, got {0}")]
    TooFewSamples(usize),
    #[error("PMFG needs at least 3 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("matrix is not square or not symmetric")]
    NotSymmetric,
    #[error("edge list: {0}")]
    EdgeList(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Pearson correlation matrix of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub values: DMatrix<f64>,
    pub window_index: usize,
}

impl CorrelationMatrix {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }
}

/// Correlation distances `sqrt(2 (1 - C))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub values: DMatrix<f64>,
    pub window_index: usize,
}

/// Pearson correlation of every pair of rows in the window, with expectations
/// taken as sample means.
pub fn pearson(slice: &WindowSlice) -> Result<CorrelationMatrix, CorrError> {
    let mut corr = correlation_of_rows(&slice.returns).map_err(|e| match e {
        CorrError::ZeroVariance { rows, .. } => CorrError::ZeroVariance {
            tickers: rows.iter().map(|&r| slice.tickers[r].clone()).collect(),
            rows,
        },
        other => other,
    })?;
    corr.window_index = slice.window_index;
    Ok(corr)
}

/// Pearson correlation between the rows of `x` (one variable per row).
pub fn correlation_of_rows(x: &DMatrix<f64>) -> Result<CorrelationMatrix, CorrError> {
    let (n, t) = x.shape();
    if t < 2 {
        return Err(CorrError::TooFewSamples(t));
    }
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        let mean = row.sum() / t as f64;
        row.add_scalar_mut(-mean);
    }
    let norms: Vec<f64> = centered.row_iter().map(|r| r.norm()).collect();
    let zero: Vec<usize> = (0..n).filter(|&i| !(norms[i] > 0.0)).collect();
    if !zero.is_empty() {
        return Err(CorrError::ZeroVariance {
            tickers: zero.iter().map(|i| i.to_string()).collect(),
            rows: zero,
        });
    }
    let gram = &centered * centered.transpose();
    let values = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            (gram[(i, j)] / (norms[i] * norms[j])).clamp(-1.0, 1.0)
        }
    });
    // gram is symmetric up to rounding; force exact symmetry.
    let values = DMatrix::from_fn(n, n, |i, j| if i <= j { values[(i, j)] } else { values[(j, i)] });
    Ok(CorrelationMatrix { values, window_index: 0 })
}

/// `d_ij = sqrt(2 (1 - C_ij))`, clamped at zero.
pub fn to_distance(c: &CorrelationMatrix) -> DistanceMatrix {
    DistanceMatrix {
        values: c.values.map(correlation_distance),
        window_index: c.window_index,
    }
}

pub fn correlation_distance(c: f64) -> f64 {
    (2.0 * (1.0 - c)).max(0.0).sqrt()
}

/// The unsigned view `(1 + C) / 2`.
pub fn to_unsigned(c: &CorrelationMatrix) -> CorrelationMatrix {
    CorrelationMatrix {
        values: c.values.map(|v| (1.0 + v) / 2.0),
        window_index: c.window_index,
    }
}

/// Inverse of [`to_unsigned`].
pub fn from_unsigned(c: &CorrelationMatrix) -> CorrelationMatrix {
    CorrelationMatrix {
        values: c.values.map(|v| 2.0 * v - 1.0),
        window_index: c.window_index,
    }
}

/// Which edge weights a graph view uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeRanking {
    /// Descending correlation; identical to descending `(1 + C) / 2`.
    #[default]
    Similarity,
    /// Descending `|C|`, so strong anti-correlations compete with positive ones.
    AbsoluteCorrelation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmfgEdge {
    pub i: usize,
    pub j: usize,
    /// Correlation `C_ij`.
    pub signed: f64,
    /// `(1 + C_ij) / 2`.
    pub unsigned: f64,
    pub distance: f64,
}

/// Planar maximally filtered graph of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct PmfgNetwork {
    pub n: usize,
    /// Edges in insertion order, `i < j`.
    pub edges: Vec<PmfgEdge>,
    pub window_index: usize,
}

impl PmfgNetwork {
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for e in &self.edges {
            deg[e.i] += 1;
            deg[e.j] += 1;
        }
        deg
    }

    fn matrix_with(&self, f: impl Fn(&PmfgEdge) -> f64) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for e in &self.edges {
            let w = f(e);
            m[(e.i, e.j)] = w;
            m[(e.j, e.i)] = w;
        }
        m
    }

    /// Weighted adjacency with the signed correlations `C_ij`.
    pub fn signed_adjacency(&self) -> DMatrix<f64> {
        self.matrix_with(|e| e.signed)
    }

    /// Weighted adjacency with the unsigned weights `(1 + C_ij) / 2`.
    pub fn weighted_adjacency(&self) -> DMatrix<f64> {
        self.matrix_with(|e| e.unsigned)
    }

    pub fn binary_adjacency(&self) -> DMatrix<f64> {
        self.matrix_with(|_| 1.0)
    }

    /// Edge lengths `d_ij` as a graph for path computations.
    pub fn distance_graph(&self) -> LengthGraph {
        LengthGraph::from_edges(self.n, self.edges.iter().map(|e| (e.i, e.j, e.distance)))
    }

    /// Unit-length edges.
    pub fn hop_graph(&self) -> LengthGraph {
        LengthGraph::from_edges(self.n, self.edges.iter().map(|e| (e.i, e.j, 1.0)))
    }

    pub fn edge_pairs(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|e| (e.i, e.j)).collect()
    }

    /// Writes `i,j,weight_signed,weight_unsigned,distance` rows.
    pub fn write_edges_csv<W: Write>(&self, writer: W) -> Result<(), CorrError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["i", "j", "weight_signed", "weight_unsigned", "distance"])?;
        for e in &self.edges {
            w.write_record([
                e.i.to_string(),
                e.j.to_string(),
                e.signed.to_string(),
                e.unsigned.to_string(),
                e.distance.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_edges_csv<R: Read>(reader: R, n: usize, window_index: usize) -> Result<PmfgNetwork, CorrError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut edges = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let num = |k: usize| -> Result<f64, CorrError> {
                rec.get(k)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| CorrError::EdgeList(format!("bad field {k} in {rec:?}")))
            };
            let idx = |k: usize| -> Result<usize, CorrError> {
                rec.get(k)
                    .and_then(|s| s.parse::<usize>().ok())
                    .filter(|&v| v < n)
                    .ok_or_else(|| CorrError::EdgeList(format!("bad node in {rec:?}")))
            };
            edges.push(PmfgEdge {
                i: idx(0)?,
                j: idx(1)?,
                signed: num(2)?,
                unsigned: num(3)?,
                distance: num(4)?,
            });
        }
        Ok(PmfgNetwork { n, edges, window_index })
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }
}

/// PMFG ranking edges by descending correlation.
pub fn build_pmfg(c: &CorrelationMatrix) -> Result<PmfgNetwork, CorrError> {
    build_pmfg_with(c, EdgeRanking::Similarity)
}

/// Inserts candidate edges in descending score order (ties by `(i, j)`),
/// keeping each one whose insertion leaves the graph planar, until the graph
/// has `3 (N - 2)` edges.
pub fn build_pmfg_with(c: &CorrelationMatrix, ranking: EdgeRanking) -> Result<PmfgNetwork, CorrError> {
    let n = c.n();
    if n < 3 {
        return Err(CorrError::TooFewNodes(n));
    }
    if c.values.ncols() != n {
        return Err(CorrError::NotSymmetric);
    }
    let score = |i: usize, j: usize| {
        let v = c.values[(i, j)];
        match ranking {
            EdgeRanking::Similarity => v,
            EdgeRanking::AbsoluteCorrelation => v.abs(),
        }
    };
    let mut candidates: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    candidates.sort_by(|&(a, b), &(x, y)| score(x, y).total_cmp(&score(a, b)).then((a, b).cmp(&(x, y))));

    let target = 3 * (n - 2);
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut components = DisjointSet::new(n);
    let mut edges = Vec::with_capacity(target);
    for (i, j) in candidates {
        if edges.len() == target {
            break;
        }
        adj[i].push(j);
        adj[j].push(i);
        // Joining two components can never break planarity.
        let bridge = components.find(i) != components.find(j);
        if bridge || is_planar_lists(&adj) {
            components.union(i, j);
            let signed = c.values[(i, j)];
            edges.push(PmfgEdge {
                i,
                j,
                signed,
                unsigned: (1.0 + signed) / 2.0,
                distance: correlation_distance(signed),
            });
        } else {
            adj[i].pop();
            adj[j].pop();
        }
    }
    Ok(PmfgNetwork {
        n,
        edges,
        window_index: c.window_index,
    })
}

/// Per-window topology summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkSummary {
    /// Mean node strength over the unsigned weights.
    pub avg_weighted_degree: f64,
    /// Largest distance-weighted shortest path.
    pub weighted_diameter: f64,
    pub clustering_coefficient: f64,
}

pub fn network_summary(net: &PmfgNetwork) -> Result<NetworkSummary, CorrError> {
    let w = net.weighted_adjacency();
    let avg_weighted_degree = w.sum() / net.n as f64;
    let spl = netmeasures::all_pairs_shortest_paths(&net.distance_graph())?;
    let weighted_diameter = spl.iter().copied().fold(0.0, f64::max);
    let clustering_coefficient = netmeasures::average_clustering(&net.binary_adjacency());
    Ok(NetworkSummary {
        avg_weighted_degree,
        weighted_diameter,
        clustering_coefficient,
    })
}
