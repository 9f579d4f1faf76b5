use std::collections::BinaryHeap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::paths::State;
use super::{LengthGraph, MeasureError, MeasureKind, MeasureMatrix};

const TIE_TOL: f64 = 1e-12;

fn ties(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_TOL * a.abs().max(b.abs()).max(1.0)
}

/// Single-source dependency accumulation (Brandes) over edges.
fn accumulate(g: &LengthGraph, s: usize) -> Result<Vec<(usize, usize, f64)>, MeasureError> {
    let n = g.n();
    let mut dist = vec![f64::INFINITY; n];
    let mut sigma = vec![0.0f64; n];
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut settled = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut heap = BinaryHeap::new();
    dist[s] = 0.0;
    sigma[s] = 1.0;
    heap.push(State { dist: 0.0, node: s });
    while let Some(State { node: v, .. }) = heap.pop() {
        if settled[v] {
            continue;
        }
        settled[v] = true;
        order.push(v);
        for &(w, len) in g.neighbors(v) {
            if settled[w] {
                continue;
            }
            let nd = dist[v] + len;
            if dist[w].is_finite() && ties(nd, dist[w]) {
                sigma[w] += sigma[v];
                preds[w].push(v);
            } else if nd < dist[w] {
                dist[w] = nd;
                sigma[w] = sigma[v];
                preds[w] = vec![v];
                heap.push(State { dist: nd, node: w });
            }
        }
    }
    if order.len() != n {
        let first = (0..n).find(|&v| !settled[v]).unwrap();
        return Err(MeasureError::Disconnected {
            count: n - order.len(),
            first: (s.min(first), s.max(first)),
        });
    }
    let mut delta = vec![0.0f64; n];
    let mut out = Vec::new();
    for &w in order.iter().rev() {
        for &v in &preds[w] {
            let c = sigma[v] / sigma[w] * (1.0 + delta[w]);
            out.push((v, w, c));
            delta[v] += c;
        }
    }
    Ok(out)
}

/// Edge betweenness over unordered node pairs, stored at the edge positions
/// of an N×N matrix.
pub fn edge_betweenness(g: &LengthGraph) -> Result<MeasureMatrix, MeasureError> {
    g.validate()?;
    let n = g.n();
    let per_source: Vec<Vec<(usize, usize, f64)>> =
        (0..n).into_par_iter().map(|s| accumulate(g, s)).collect::<Result<_, _>>()?;
    let mut m = DMatrix::zeros(n, n);
    for contributions in per_source {
        for (v, w, c) in contributions {
            m[(v, w)] += c;
        }
    }
    // Every unordered pair is visited from both ends.
    let sym = (&m + m.transpose()) * 0.5;
    Ok(MeasureMatrix::new(MeasureKind::Ebc, sym))
}
