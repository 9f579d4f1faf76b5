//! Topology measures on filtered networks.
//!
//! Path-like measures (SPL, SHORT_COMM_PATH, EBC and their hyperbolic
//! counterparts) take a [`LengthGraph`]; communicability takes dense
//! adjacency matrices.

mod betweenness;
mod comm;
mod paths;

use std::fmt;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use betweenness::edge_betweenness;
pub use comm::{
    comm_weighted_adjacency, communicability, communicability_distance, matrix_exponential_symmetric,
    weighted_communicability, CommunicabilityMatrix, Normalization,
};
pub use paths::{all_pairs_shortest_paths, shortest_communicability_path_lengths, shortest_path_lengths};

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("dimension mismatch: expected {expected}x{expected}, got {rows}x{cols}")]
    DimensionMismatch { expected: usize, rows: usize, cols: usize },
    #[error("node {0} has zero strength")]
    IsolatedNode(usize),
    #[error("graph is disconnected: {count} unreachable pairs, first {first:?}")]
    Disconnected { count: usize, first: (usize, usize) },
    #[error("negative edge length {value} on ({i}, {j})")]
    NegativeLength { i: usize, j: usize, value: f64 },
    #[error("communicability radicand {value:e} at ({i}, {j}) is negative beyond rounding")]
    NegativeRadicand { i: usize, j: usize, value: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("need at least {needed} nodes, got {got}")]
    TooSmall { needed: usize, got: usize },
    #[error("measure csv: {0}")]
    Csv(String),
}

impl MeasureError {
    pub fn is_numeric(&self) -> bool {
        matches!(self, MeasureError::NegativeRadicand { .. } | MeasureError::NonFinite(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MeasureKind {
    #[serde(rename = "SPL")]
    Spl,
    #[serde(rename = "EBC")]
    Ebc,
    #[serde(rename = "COMM")]
    Comm,
    #[serde(rename = "COMM_DIST")]
    CommDist,
    #[serde(rename = "SHORT_COMM_PATH")]
    ShortCommPath,
    #[serde(rename = "HSPL")]
    Hspl,
    #[serde(rename = "HEBC")]
    Hebc,
    #[serde(rename = "HCOMM")]
    Hcomm,
}

impl MeasureKind {
    pub const ALL: [MeasureKind; 8] = [
        MeasureKind::Spl,
        MeasureKind::Ebc,
        MeasureKind::Comm,
        MeasureKind::CommDist,
        MeasureKind::ShortCommPath,
        MeasureKind::Hspl,
        MeasureKind::Hebc,
        MeasureKind::Hcomm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MeasureKind::Spl => "SPL",
            MeasureKind::Ebc => "EBC",
            MeasureKind::Comm => "COMM",
            MeasureKind::CommDist => "COMM_DIST",
            MeasureKind::ShortCommPath => "SHORT_COMM_PATH",
            MeasureKind::Hspl => "HSPL",
            MeasureKind::Hebc => "HEBC",
            MeasureKind::Hcomm => "HCOMM",
        }
    }

    /// Kinds whose diagonal is zero by construction.
    pub fn is_path_like(self) -> bool {
        !matches!(self, MeasureKind::Comm | MeasureKind::Hcomm)
    }
}

impl fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MeasureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MeasureKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown measure {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    #[default]
    Weighted,
    Unweighted,
}

/// One symmetric N×N measure for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureMatrix {
    pub kind: MeasureKind,
    pub values: DMatrix<f64>,
    pub window_index: usize,
    pub weighting: Weighting,
}

impl MeasureMatrix {
    pub fn new(kind: MeasureKind, values: DMatrix<f64>) -> Self {
        Self {
            kind,
            values,
            window_index: 0,
            weighting: Weighting::Weighted,
        }
    }

    pub fn with_window(mut self, window_index: usize) -> Self {
        self.window_index = window_index;
        self
    }

    pub fn with_weighting(mut self, weighting: Weighting) -> Self {
        self.weighting = weighting;
        self
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Dense CSV, one row per line, no header.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), MeasureError> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for row in self.values.row_iter() {
            w.write_record(row.iter().map(|v| v.to_string()))
                .map_err(|e| MeasureError::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| MeasureError::Csv(e.to_string()))
    }

    pub fn read_csv<R: Read>(reader: R, kind: MeasureKind) -> Result<MeasureMatrix, MeasureError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| MeasureError::Csv(e.to_string()))?;
            let row = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| MeasureError::Csv(format!("{s:?}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(MeasureError::Csv("matrix is not square".into()));
        }
        Ok(MeasureMatrix::new(kind, DMatrix::from_fn(n, n, |i, j| rows[i][j])))
    }
}

/// Undirected graph with nonnegative edge lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthGraph {
    adj: Vec<Vec<(usize, f64)>>,
}

impl LengthGraph {
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut adj = vec![Vec::new(); n];
        for (i, j, len) in edges {
            adj[i].push((j, len));
            adj[j].push((i, len));
        }
        for list in &mut adj {
            list.sort_by_key(|&(v, _)| v);
        }
        Self { adj }
    }

    /// Edges wherever `m_ij != 0` above the diagonal; the entry is the length.
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let edges = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
        Self::from_edges(n, edges.filter(|&(i, j)| m[(i, j)] != 0.0).map(|(i, j)| (i, j, m[(i, j)])))
    }

    /// Graph with the same edges as `m` and length `f(m_ij)`.
    pub fn from_matrix_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> Self {
        let mut g = Self::from_matrix(m);
        for list in &mut g.adj {
            for e in list.iter_mut() {
                e.1 = f(e.1);
            }
        }
        g
    }

    pub fn n(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adj[v]
    }

    pub fn n_edges(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    fn validate(&self) -> Result<(), MeasureError> {
        for (i, list) in self.adj.iter().enumerate() {
            for &(j, len) in list {
                if !len.is_finite() {
                    return Err(MeasureError::NonFinite("edge length"));
                }
                if len < 0.0 {
                    return Err(MeasureError::NegativeLength { i, j, value: len });
                }
            }
        }
        Ok(())
    }
}

/// `Σ a_ij a_jm a_mi / Σ k_i (k_i − 1)` on the binary pattern of `a`.
pub fn average_clustering(a: &DMatrix<f64>) -> f64 {
    let binary = a.map(|v| if v != 0.0 { 1.0 } else { 0.0 });
    clustering_ratio(&binary, &binary)
}

/// Numerator uses `w`'s weights; denominator uses binary degrees.
pub fn weighted_average_clustering(w: &DMatrix<f64>) -> f64 {
    let binary = w.map(|v| if v != 0.0 { 1.0 } else { 0.0 });
    let mut w = w.clone();
    w.fill_diagonal(0.0);
    clustering_ratio(&w, &binary)
}

fn clustering_ratio(w: &DMatrix<f64>, binary: &DMatrix<f64>) -> f64 {
    let n = binary.nrows();
    let mut b = binary.clone();
    b.fill_diagonal(0.0);
    let denom: f64 = (0..n)
        .map(|i| {
            let k = b.row(i).sum();
            k * (k - 1.0)
        })
        .sum();
    if denom <= 0.0 {
        return 0.0;
    }
    let w2 = w * w;
    let numer = w2.component_mul(w).sum();
    numer / denom
}

pub(crate) fn check_square(m: &DMatrix<f64>, expected: usize) -> Result<(), MeasureError> {
    if m.nrows() != expected || m.ncols() != expected {
        return Err(MeasureError::DimensionMismatch {
            expected,
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use rand::Rng;

    /// Connected random graph: a random spanning tree plus extra edges.
    pub fn random_connected(n: usize, p: f64, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::rng::derive_rng(seed, 7);
        let mut a = DMatrix::zeros(n, n);
        for v in 1..n {
            let u = rng.random_range(0..v);
            a[(u, v)] = 1.0;
            a[(v, u)] = 1.0;
        }
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < p {
                    a[(i, j)] = 1.0;
                    a[(j, i)] = 1.0;
                }
            }
        }
        a
    }

    pub fn random_lengths(a: &DMatrix<f64>, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::rng::derive_rng(seed, 8);
        let n = a.nrows();
        let mut w = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i + 1..n {
                if a[(i, j)] != 0.0 {
                    let v = 0.05 + rng.random::<f64>();
                    w[(i, j)] = v;
                    w[(j, i)] = v;
                }
            }
        }
        w
    }

    pub fn path(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| if i.abs_diff(j) == 1 { 1.0 } else { 0.0 })
    }

    pub fn complete(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| if i != j { 1.0 } else { 0.0 })
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;

    fn brute_force_clustering(a: &DMatrix<f64>) -> f64 {
        let n = a.nrows();
        let mut closed = 0.0;
        let mut open = 0.0;
        for i in 0..n {
            for j in 0..n {
                for m in 0..n {
                    if i == j || j == m || i == m {
                        continue;
                    }
                    if a[(i, j)] != 0.0 && a[(i, m)] != 0.0 {
                        open += 1.0;
                        if a[(j, m)] != 0.0 {
                            closed += 1.0;
                        }
                    }
                }
            }
        }
        if open == 0.0 {
            0.0
        } else {
            closed / open
        }
    }

    #[test]
    fn clustering_triangle_and_path() {
        assert_eq!(average_clustering(&complete(3)), 1.0);
        assert_eq!(average_clustering(&path(3)), 0.0);
        assert_eq!(average_clustering(&DMatrix::zeros(4, 4)), 0.0);
    }

    #[test]
    fn clustering_matches_triple_enumeration() {
        for seed in 0..50 {
            let n = 3 + (seed as usize % 8);
            let a = random_connected(n, 0.35, seed);
            let got = average_clustering(&a);
            assert!((got - brute_force_clustering(&a)).abs() < 1e-12, "seed {seed}");
        }
    }

    #[test]
    fn weighted_clustering_with_unit_weights_is_binary() {
        let a = random_connected(9, 0.4, 3);
        assert!((weighted_average_clustering(&a) - average_clustering(&a)).abs() < 1e-14);
        let half = &a * 0.5;
        assert!((weighted_average_clustering(&half) - 0.125 * average_clustering(&a)).abs() < 1e-14);
    }

    #[test]
    fn measure_csv_round_trip() {
        let m = MeasureMatrix::new(MeasureKind::Spl, DMatrix::from_row_slice(2, 2, &[0.0, 0.1, 0.1, 0.0]));
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "0,0.1\n0.1,0\n");
        let back = MeasureMatrix::read_csv(buf.as_slice(), MeasureKind::Spl).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in MeasureKind::ALL {
            assert_eq!(k.name().parse::<MeasureKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
    }

    #[test]
    fn length_graph_from_matrix() {
        let g = LengthGraph::from_matrix(&path(4));
        assert_eq!(g.n_edges(), 3);
        assert_eq!(g.neighbors(1), &[(0, 1.0), (2, 1.0)]);
    }
}
