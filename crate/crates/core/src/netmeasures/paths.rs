use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{LengthGraph, MeasureError, MeasureKind, MeasureMatrix, Weighting};

#[derive(Clone, Copy, PartialEq)]
pub(super) struct State {
    pub dist: f64,
    pub node: usize,
}

impl Eq for State {}

impl Ord for State {
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for State {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub(super) fn dijkstra(g: &LengthGraph, source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; g.n()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(State { dist: 0.0, node: source });
    while let Some(State { dist: d, node }) = heap.pop() {
        if d > dist[node] {
            continue;
        }
        for &(v, len) in g.neighbors(node) {
            let nd = d + len;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(State { dist: nd, node: v });
            }
        }
    }
    dist
}

/// Dense all-pairs shortest path lengths; fails if any pair is unreachable.
pub fn all_pairs_shortest_paths(g: &LengthGraph) -> Result<DMatrix<f64>, MeasureError> {
    g.validate()?;
    let n = g.n();
    let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|s| dijkstra(g, s)).collect();
    let mut m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    let unreachable: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| !m[(i, j)].is_finite())
        .collect();
    if let Some(&first) = unreachable.first() {
        return Err(MeasureError::Disconnected {
            count: unreachable.len(),
            first,
        });
    }
    // Dijkstra from each end can differ in the last ulp.
    for i in 0..n {
        for j in i + 1..n {
            let v = m[(i, j)].min(m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

pub fn shortest_path_lengths(g: &LengthGraph) -> Result<MeasureMatrix, MeasureError> {
    Ok(MeasureMatrix::new(MeasureKind::Spl, all_pairs_shortest_paths(g)?))
}

/// All-pairs shortest paths with edge lengths `X_ij` (zero means no edge).
pub fn shortest_communicability_path_lengths(x: &DMatrix<f64>) -> Result<MeasureMatrix, MeasureError> {
    super::check_square(x, x.nrows())?;
    let g = LengthGraph::from_matrix(x);
    Ok(MeasureMatrix::new(MeasureKind::ShortCommPath, all_pairs_shortest_paths(&g)?).with_weighting(Weighting::Weighted))
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;
    use proptest::prelude::*;

    fn floyd_warshall(w: &DMatrix<f64>) -> DMatrix<f64> {
        let n = w.nrows();
        let mut d = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else if w[(i, j)] != 0.0 {
                w[(i, j)]
            } else {
                f64::INFINITY
            }
        });
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let via = d[(i, k)] + d[(k, j)];
                    if via < d[(i, j)] {
                        d[(i, j)] = via;
                    }
                }
            }
        }
        d
    }

    #[test]
    fn k2_and_p3() {
        let g = LengthGraph::from_edges(2, [(0, 1, 0.7)]);
        assert_eq!(shortest_path_lengths(&g).unwrap().values[(0, 1)], 0.7);
        let p3 = shortest_path_lengths(&LengthGraph::from_matrix(&path(3))).unwrap();
        assert_eq!(p3.values[(0, 2)], 2.0);
        assert_eq!(p3.values[(1, 1)], 0.0);
    }

    #[test]
    fn matches_floyd_warshall() {
        for seed in 0..200 {
            let n = 2 + seed as usize % 9;
            let w = random_lengths(&random_connected(n, 0.3, seed), seed);
            let got = shortest_path_lengths(&LengthGraph::from_matrix(&w)).unwrap();
            let want = floyd_warshall(&w);
            assert!((got.values - want).abs().max() <= 1e-12, "seed {seed}");
        }
    }

    #[test]
    fn disconnected_is_reported() {
        let g = LengthGraph::from_edges(4, [(0, 1, 1.0), (2, 3, 1.0)]);
        match all_pairs_shortest_paths(&g) {
            Err(MeasureError::Disconnected { count, first }) => {
                assert_eq!(count, 4);
                assert_eq!(first, (0, 2));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn negative_length_rejected() {
        let g = LengthGraph::from_edges(2, [(0, 1, -1.0)]);
        assert!(matches!(all_pairs_shortest_paths(&g), Err(MeasureError::NegativeLength { .. })));
    }

    proptest! {
        #[test]
        fn relabeling_permutes_spl(seed in 0u64..1000, n in 3usize..9) {
            let w = random_lengths(&random_connected(n, 0.3, seed), seed);
            let perm: Vec<usize> = (0..n).rev().collect();
            let pw = DMatrix::from_fn(n, n, |i, j| w[(perm[i], perm[j])]);
            let a = all_pairs_shortest_paths(&LengthGraph::from_matrix(&w)).unwrap();
            let b = all_pairs_shortest_paths(&LengthGraph::from_matrix(&pw)).unwrap();
            for i in 0..n {
                for j in 0..n {
                    prop_assert!((b[(i, j)] - a[(perm[i], perm[j])]).abs() < 1e-12);
                }
            }
        }
    }
}
