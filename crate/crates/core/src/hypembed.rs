//! Coalescent embedding of a PMFG into the Poincaré disc.
//!
//! Isomap geodesics are taken directly on the PMFG with correlation-distance
//! edge lengths, reduced to two dimensions by classical MDS. Angles come from
//! the Euclidean coordinates (circular or equidistant adjustment); radii come
//! from degree ranks and a fitted power-law exponent.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corrnet::PmfgNetwork;
use crate::netmeasures::{
    self, edge_betweenness, shortest_path_lengths, weighted_communicability, LengthGraph, MeasureError, MeasureKind,
    MeasureMatrix,
};

/// Displacement applied to a node that lands exactly on the origin.
pub const ORIGIN_EPSILON: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("invalid distance matrix: {0}")]
    InvalidDistances(String),
    #[error("need at least {needed} nodes, got {got}")]
    TooFewNodes { needed: usize, got: usize },
    #[error("node {0} has degree 0")]
    ZeroDegree(usize),
    #[error("all degrees equal {0}; power-law exponent undefined")]
    AllDegreesEqual(usize),
    #[error("power-law exponent must exceed 1, got {0}")]
    InvalidGamma(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl EmbedError {
    pub fn is_numeric(&self) -> bool {
        match self {
            EmbedError::Measure(e) => e.is_numeric(),
            EmbedError::NonFinite(_) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EuclideanEmbedding {
    /// N × 2 coordinates.
    pub coords: DMatrix<f64>,
    /// Top two eigenvalues of the double-centred matrix, descending.
    pub eigenvalues: [f64; 2],
    /// Second eigenvalue was not positive; nodes lie on a line.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Adjustment {
    #[default]
    Ca,
    Ea,
}

/// All-pairs shortest paths over `d_ij` on the PMFG.
pub fn geodesic_distance_matrix(net: &PmfgNetwork) -> Result<DMatrix<f64>, EmbedError> {
    Ok(netmeasures::all_pairs_shortest_paths(&net.distance_graph())?)
}

/// Classical MDS to two dimensions.
pub fn isomap_2d(geodesics: &DMatrix<f64>) -> Result<EuclideanEmbedding, EmbedError> {
    let n = geodesics.nrows();
    if geodesics.ncols() != n {
        return Err(EmbedError::InvalidDistances("not square".into()));
    }
    if n < 2 {
        return Err(EmbedError::TooFewNodes { needed: 2, got: n });
    }
    let scale = geodesics.abs().max().max(1.0);
    for i in 0..n {
        if geodesics[(i, i)] != 0.0 {
            return Err(EmbedError::InvalidDistances(format!("nonzero diagonal at {i}")));
        }
        for j in 0..n {
            let v = geodesics[(i, j)];
            if !v.is_finite() {
                return Err(EmbedError::NonFinite("geodesic distances"));
            }
            if v < 0.0 {
                return Err(EmbedError::InvalidDistances(format!("negative entry at ({i}, {j})")));
            }
            if (v - geodesics[(j, i)]).abs() > 1e-12 * scale {
                return Err(EmbedError::InvalidDistances("not symmetric".into()));
            }
        }
    }
    let b = double_centre(geodesics);
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&c)));
    let mut coords = DMatrix::zeros(n, 2);
    let mut eigenvalues = [0.0; 2];
    for (k, &idx) in order.iter().take(2).enumerate() {
        let lambda = eig.eigenvalues[idx];
        eigenvalues[k] = lambda;
        let mut v = eig.eigenvectors.column(idx).into_owned();
        let pivot = (0..n).fold(0, |best, i| if v[i].abs() > v[best].abs() { i } else { best });
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        let s = lambda.max(0.0).sqrt();
        for i in 0..n {
            coords[(i, k)] = s * v[i];
        }
    }
    let degenerate = eigenvalues[1] <= 1e-12 * eigenvalues[0].abs().max(1.0);
    Ok(EuclideanEmbedding {
        coords,
        eigenvalues,
        degenerate,
    })
}

/// `B = −½ J D² J`.
fn double_centre(d: &DMatrix<f64>) -> DMatrix<f64> {
    let n = d.nrows();
    let sq = d.map(|v| v * v);
    let row_means: Vec<f64> = sq.row_iter().map(|r| r.sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + grand));
    (&b + b.transpose()) * 0.5
}

#[derive(Debug, Clone, PartialEq)]
pub struct CircularAngles {
    pub theta: Vec<f64>,
    /// Nodes that sat exactly on the origin and were displaced.
    pub perturbed: Vec<usize>,
}

/// `atan2(y, x)` mapped into `[0, 2π)`.
pub fn angular_ca(emb: &EuclideanEmbedding) -> CircularAngles {
    let mut perturbed = Vec::new();
    let theta = (0..emb.coords.nrows())
        .map(|i| {
            let (mut x, y) = (emb.coords[(i, 0)], emb.coords[(i, 1)]);
            if x == 0.0 && y == 0.0 {
                x = ORIGIN_EPSILON;
                perturbed.push(i);
            }
            wrap_angle(y.atan2(x))
        })
        .collect();
    CircularAngles { theta, perturbed }
}

fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Uniform spacing `2π (t_i − 1) / N` by ascending angle rank `t_i`.
pub fn angular_ea(ca: &[f64]) -> Vec<f64> {
    let n = ca.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ca[a].total_cmp(&ca[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; n];
    for (rank, &node) in order.iter().enumerate() {
        out[node] = TAU / n as f64 * rank as f64;
    }
    out
}

/// `γ̂ = 1 + n / Σ ln(k_i / (k_min − ½))` with `k_min` the smallest degree,
/// clamped to at least 2.
pub fn fit_power_law_gamma(degrees: &[usize]) -> Result<f64, EmbedError> {
    if degrees.len() < 10 {
        return Err(EmbedError::TooFewNodes {
            needed: 10,
            got: degrees.len(),
        });
    }
    if let Some(i) = degrees.iter().position(|&k| k == 0) {
        return Err(EmbedError::ZeroDegree(i));
    }
    let kmin = *degrees.iter().min().unwrap();
    if degrees.iter().all(|&k| k == kmin) {
        return Err(EmbedError::AllDegreesEqual(kmin));
    }
    let base = kmin as f64 - 0.5;
    let s: f64 = degrees.iter().map(|&k| (k as f64 / base).ln()).sum();
    let gamma = 1.0 + degrees.len() as f64 / s;
    Ok(gamma.max(2.0))
}

/// `β = 1/(γ − 1)` clamped into `(0, 1]`.
pub fn beta_from_gamma(gamma: f64) -> Result<f64, EmbedError> {
    if !(gamma > 1.0) || !gamma.is_finite() {
        return Err(EmbedError::InvalidGamma(gamma));
    }
    Ok((1.0 / (gamma - 1.0)).min(1.0))
}

/// 1-based ranks by descending degree, ties by node index.
pub fn degree_ranks(degrees: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..degrees.len()).collect();
    order.sort_by(|&a, &b| degrees[b].cmp(&degrees[a]).then(a.cmp(&b)));
    let mut rank = vec![0; degrees.len()];
    for (r, &node) in order.iter().enumerate() {
        rank[node] = r + 1;
    }
    rank
}

/// `r_i = (2/ζ) [β ln i + (1 − β) ln N]` with `i` the degree rank.
pub fn radial_coords(degrees: &[usize], gamma: f64, zeta_curv: f64) -> Result<Vec<f64>, EmbedError> {
    let beta = beta_from_gamma(gamma)?;
    let ln_n = (degrees.len() as f64).ln();
    Ok(degree_ranks(degrees)
        .into_iter()
        .map(|i| 2.0 / zeta_curv * (beta * (i as f64).ln() + (1.0 - beta) * ln_n))
        .collect())
}

/// Angular separation `π − |π − |θ_i − θ_j||`.
pub fn delta_theta(theta_i: f64, theta_j: f64) -> f64 {
    PI - (PI - (theta_i - theta_j).abs()).abs()
}

/// Hyperbolic distance at curvature `−ζ²`.
///
/// Evaluated through `sinh²(ζx/2) = sinh²(ζ(r_i − r_j)/2) + sinh ζr_i sinh ζr_j sin²(Δθ/2)`,
/// which equals the arccosh form without its cancellation at large radii.
pub fn hyperbolic_distance(p: (f64, f64), q: (f64, f64), zeta_curv: f64) -> f64 {
    let (a, b) = (zeta_curv * p.0, zeta_curv * q.0);
    let half = (delta_theta(p.1, q.1) / 2.0).sin();
    let radial = ((a - b) / 2.0).sinh();
    let s = radial * radial + a.sinh() * b.sinh() * half * half;
    2.0 * s.max(0.0).sqrt().asinh() / zeta_curv
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GammaSource {
    /// Fit on each window's degree sequence.
    PerWindow,
    /// Use the given exponent, e.g. one fitted over a whole period.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingOptions {
    pub adjustment: Adjustment,
    pub gamma: GammaSource,
    pub fallback_gamma: f64,
    pub zeta_curv: f64,
}

impl Default for EmbeddingOptions {
    fn default() -> Self {
        Self {
            adjustment: Adjustment::Ca,
            gamma: GammaSource::PerWindow,
            fallback_gamma: 3.0,
            zeta_curv: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarEmbedding {
    pub r: Vec<f64>,
    pub theta: Vec<f64>,
    pub beta: f64,
    pub gamma: f64,
    pub adjustment: Adjustment,
    pub degrees: Vec<usize>,
    pub ranks: Vec<usize>,
    pub eigenvalues: [f64; 2],
    pub degenerate: bool,
    pub perturbed: Vec<usize>,
    /// The fit failed and the configured fallback exponent was used.
    pub gamma_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub gamma: f64,
    pub beta: f64,
    pub adjustment: Adjustment,
    pub eigenvalues: [f64; 2],
    pub degenerate: bool,
    pub perturbed: Vec<usize>,
    pub gamma_fallback: bool,
}

impl PolarEmbedding {
    pub fn n(&self) -> usize {
        self.r.len()
    }

    pub fn meta(&self) -> EmbeddingMeta {
        EmbeddingMeta {
            gamma: self.gamma,
            beta: self.beta,
            adjustment: self.adjustment,
            eigenvalues: self.eigenvalues,
            degenerate: self.degenerate,
            perturbed: self.perturbed.clone(),
            gamma_fallback: self.gamma_fallback,
        }
    }

    /// Writes `node,r,theta,degree,rank`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), EmbedError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["node", "r", "theta", "degree", "rank"])?;
        for i in 0..self.n() {
            w.write_record([
                i.to_string(),
                self.r[i].to_string(),
                self.theta[i].to_string(),
                self.degrees[i].to_string(),
                self.ranks[i].to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn distance(&self, i: usize, j: usize, zeta_curv: f64) -> f64 {
        hyperbolic_distance((self.r[i], self.theta[i]), (self.r[j], self.theta[j]), zeta_curv)
    }
}

pub fn coalescent_embedding(net: &PmfgNetwork, opts: &EmbeddingOptions) -> Result<PolarEmbedding, EmbedError> {
    let emb = isomap_2d(&geodesic_distance_matrix(net)?)?;
    let ca = angular_ca(&emb);
    let theta = match opts.adjustment {
        Adjustment::Ca => ca.theta,
        Adjustment::Ea => angular_ea(&ca.theta),
    };
    let degrees = net.degrees();
    let (gamma, gamma_fallback) = match opts.gamma {
        GammaSource::Fixed(g) => (g, false),
        GammaSource::PerWindow => match fit_power_law_gamma(&degrees) {
            Ok(g) => (g, false),
            Err(EmbedError::AllDegreesEqual(_)) | Err(EmbedError::TooFewNodes { .. }) => (opts.fallback_gamma, true),
            Err(e) => return Err(e),
        },
    };
    let r = radial_coords(&degrees, gamma, opts.zeta_curv)?;
    Ok(PolarEmbedding {
        r,
        theta,
        beta: beta_from_gamma(gamma)?,
        gamma,
        adjustment: opts.adjustment,
        ranks: degree_ranks(&degrees),
        degrees,
        eigenvalues: emb.eigenvalues,
        degenerate: emb.degenerate,
        perturbed: ca.perturbed,
        gamma_fallback,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperbolicEdge {
    pub i: usize,
    pub j: usize,
    /// Hyperbolic distance between the endpoints.
    pub x: f64,
    /// `1 / (1 + x)`.
    pub w: f64,
}

/// PMFG topology with hyperbolic edge weights.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperbolicNetwork {
    pub n: usize,
    pub edges: Vec<HyperbolicEdge>,
    pub window_index: usize,
}

impl HyperbolicNetwork {
    pub fn weight_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for e in &self.edges {
            m[(e.i, e.j)] = e.w;
            m[(e.j, e.i)] = e.w;
        }
        m
    }

    pub fn length_graph(&self) -> LengthGraph {
        LengthGraph::from_edges(self.n, self.edges.iter().map(|e| (e.i, e.j, e.x)))
    }
}

pub fn hyperbolic_reweight(net: &PmfgNetwork, emb: &PolarEmbedding, zeta_curv: f64) -> HyperbolicNetwork {
    let edges = net
        .edges
        .iter()
        .map(|e| {
            let x = emb.distance(e.i, e.j, zeta_curv);
            HyperbolicEdge {
                i: e.i,
                j: e.j,
                x,
                w: 1.0 / (1.0 + x),
            }
        })
        .collect();
    HyperbolicNetwork {
        n: net.n,
        edges,
        window_index: net.window_index,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperbolicMeasures {
    pub hspl: MeasureMatrix,
    pub hebc: MeasureMatrix,
    pub hcomm: MeasureMatrix,
}

/// HSPL and HEBC with edge length `x`; HCOMM as strength-normalized
/// communicability of `w`.
pub fn hyperbolic_measures(hnet: &HyperbolicNetwork) -> Result<HyperbolicMeasures, EmbedError> {
    let g = hnet.length_graph();
    let mut hspl = shortest_path_lengths(&g)?;
    hspl.kind = MeasureKind::Hspl;
    let mut hebc = edge_betweenness(&g)?;
    hebc.kind = MeasureKind::Hebc;
    let hcomm = weighted_communicability(&hnet.weight_matrix())?.into_measure(MeasureKind::Hcomm);
    let w = hnet.window_index;
    Ok(HyperbolicMeasures {
        hspl: hspl.with_window(w),
        hebc: hebc.with_window(w),
        hcomm: hcomm.with_window(w),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrnet::{build_pmfg, correlation_of_rows, PmfgEdge};
    use crate::rng::derive_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn euclid(points: &[(f64, f64)]) -> DMatrix<f64> {
        let n = points.len();
        DMatrix::from_fn(n, n, |i, j| {
            let (dx, dy) = (points[i].0 - points[j].0, points[i].1 - points[j].1);
            (dx * dx + dy * dy).sqrt()
        })
    }

    fn embedded_distances(e: &EuclideanEmbedding) -> DMatrix<f64> {
        let pts: Vec<(f64, f64)> = (0..e.coords.nrows()).map(|i| (e.coords[(i, 0)], e.coords[(i, 1)])).collect();
        euclid(&pts)
    }

    #[test]
    fn mds_equilateral_triangle() {
        let d = DMatrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 1.0 });
        let e = isomap_2d(&d).unwrap();
        assert!((embedded_distances(&e) - d).abs().max() < 1e-9);
        assert!(!e.degenerate);
    }

    #[test]
    fn mds_collinear_points_are_degenerate_but_exact() {
        let pts: Vec<(f64, f64)> = [0.0, 1.0, 2.5, 4.0].iter().map(|&x| (x, 0.0)).collect();
        let d = euclid(&pts);
        let e = isomap_2d(&d).unwrap();
        assert!(e.degenerate);
        assert!((embedded_distances(&e) - d).abs().max() < 1e-9);
    }

    #[test]
    fn mds_reproduces_random_planar_sets() {
        for seed in 0..100 {
            let mut rng = derive_rng(seed, 1);
            let n = 3 + seed as usize % 13;
            let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random::<f64>() * 10.0, rng.random::<f64>() * 10.0)).collect();
            let d = euclid(&pts);
            let e = isomap_2d(&d).unwrap();
            assert!((embedded_distances(&e) - &d).abs().max() < 1e-8, "seed {seed}");
        }
    }

    #[test]
    fn double_centred_rows_sum_to_zero() {
        let d = euclid(&[(0.0, 0.0), (1.0, 3.0), (2.0, -1.0), (5.0, 5.0)]);
        let b = double_centre(&d);
        for r in b.row_iter() {
            assert!(r.sum().abs() < 1e-9);
        }
    }

    #[test]
    fn mds_sign_convention() {
        let d = euclid(&[(0.0, 0.0), (1.0, 3.0), (2.0, -1.0), (5.0, 5.0), (-2.0, 1.0)]);
        let e = isomap_2d(&d).unwrap();
        for k in 0..2 {
            let col = e.coords.column(k);
            let pivot = (0..5).fold(0, |b, i| if col[i].abs() > col[b].abs() { i } else { b });
            assert!(col[pivot] > 0.0);
        }
    }

    #[test]
    fn mds_rejects_bad_input() {
        let mut d = euclid(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]);
        d[(0, 1)] = -1.0;
        assert!(isomap_2d(&d).is_err());
        assert!(matches!(isomap_2d(&DMatrix::zeros(1, 1)), Err(EmbedError::TooFewNodes { .. })));
    }

    #[test]
    fn ca_angles() {
        let e = EuclideanEmbedding {
            coords: DMatrix::from_row_slice(5, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 1.0, 1.0, 0.0, -1.0]),
            eigenvalues: [1.0, 1.0],
            degenerate: false,
        };
        let ca = angular_ca(&e);
        let want = [0.0, PI / 2.0, PI, PI / 4.0, 1.5 * PI];
        for (a, b) in ca.theta.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(ca.perturbed.is_empty());
    }

    #[test]
    fn ca_origin_is_perturbed() {
        let e = EuclideanEmbedding {
            coords: DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]),
            eigenvalues: [1.0, 0.0],
            degenerate: true,
        };
        let ca = angular_ca(&e);
        assert_eq!(ca.perturbed, vec![0]);
        assert_eq!(ca.theta[0], 0.0);
    }

    #[test]
    fn ea_spacing_follows_rank() {
        let ea = angular_ea(&[3.0, 0.2, 5.9, 1.0]);
        assert_eq!(ea, vec![PI, 0.0, 1.5 * PI, PI / 2.0]);
        let tied = angular_ea(&[1.0, 1.0]);
        assert_eq!(tied, vec![0.0, PI]);
    }

    /// Approximate discrete power-law sampler consistent with the estimator.
    fn sample_degrees(gamma: f64, kmin: usize, n: usize, seed: u64) -> Vec<usize> {
        let mut rng = derive_rng(seed, 2);
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                ((kmin as f64 - 0.5) * (1.0 - u).powf(-1.0 / (gamma - 1.0)) + 0.5).floor() as usize
            })
            .collect()
    }

    #[test]
    fn gamma_recovers_monte_carlo_exponent() {
        for seed in 0..3 {
            let g = fit_power_law_gamma(&sample_degrees(3.0, 6, 10_000, seed)).unwrap();
            assert!((g - 3.0).abs() < 0.1, "gamma {g}");
        }
    }

    #[test]
    fn gamma_clamps_and_errors() {
        let g = fit_power_law_gamma(&sample_degrees(1.6, 6, 5000, 1)).unwrap();
        assert_eq!(g, 2.0);
        assert_eq!(beta_from_gamma(g).unwrap(), 1.0);
        assert!(matches!(fit_power_law_gamma(&[3; 12]), Err(EmbedError::AllDegreesEqual(3))));
        assert!(matches!(fit_power_law_gamma(&[3, 4]), Err(EmbedError::TooFewNodes { .. })));
        assert!(beta_from_gamma(1.0).is_err());
    }

    #[test]
    fn radial_endpoints() {
        let degrees = [9, 3, 5, 3, 7, 4, 3, 6, 3, 8, 3, 4];
        let n = degrees.len() as f64;
        for gamma in [2.0, 2.5, 3.0, 4.0] {
            let beta = 1.0 / (gamma - 1.0);
            let r = radial_coords(&degrees, gamma, 1.0).unwrap();
            let ranks = degree_ranks(&degrees);
            let first = ranks.iter().position(|&k| k == 1).unwrap();
            let last = ranks.iter().position(|&k| k == degrees.len()).unwrap();
            assert!((r[first] - 2.0 * (1.0 - beta) * n.ln()).abs() < 1e-12);
            assert!((r[last] - 2.0 * n.ln()).abs() < 1e-12);
        }
        let r = radial_coords(&degrees, 2.0, 1.0).unwrap();
        assert_eq!(r[0], 0.0);
    }

    #[test]
    fn ranks_break_ties_by_index() {
        assert_eq!(degree_ranks(&[3, 5, 3, 5]), vec![3, 1, 4, 2]);
    }

    #[test]
    fn delta_theta_wraps() {
        assert!((delta_theta(0.1, 6.2) - (TAU - 6.1)).abs() < 1e-12);
        assert!((delta_theta(0.1, 6.2) - 0.183185).abs() < 1e-6);
        assert_eq!(delta_theta(1.0, 1.0), 0.0);
    }

    #[test]
    fn delta_theta_matches_definition_on_grid() {
        for a in 0..64 {
            for b in 0..64 {
                let (ta, tb) = (a as f64 * TAU / 64.0, b as f64 * TAU / 64.0);
                let raw = (ta - tb).abs();
                let want = raw.min(TAU - raw);
                assert!((delta_theta(ta, tb) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn distance_identities() {
        let mut rng = derive_rng(5, 3);
        for _ in 0..1000 {
            let (a, b) = (rng.random::<f64>() * 12.0, rng.random::<f64>() * 12.0);
            let th = rng.random::<f64>() * TAU;
            assert!((hyperbolic_distance((a, th), (b, th), 1.0) - (a - b).abs()).abs() < 1e-10);
        }
        assert_eq!(hyperbolic_distance((0.0, 1.0), (0.0, 2.0), 1.0), 0.0);
    }

    #[test]
    fn distance_matches_arccosh_form_at_moderate_radii() {
        let mut rng = derive_rng(6, 3);
        for _ in 0..500 {
            let p = (rng.random::<f64>() * 3.0, rng.random::<f64>() * TAU);
            let q = (rng.random::<f64>() * 3.0, rng.random::<f64>() * TAU);
            let arg = p.0.cosh() * q.0.cosh() - p.0.sinh() * q.0.sinh() * delta_theta(p.1, q.1).cos();
            let x = arg.max(1.0).acosh();
            if x > 1e-3 {
                assert!((hyperbolic_distance(p, q, 1.0) - x).abs() < 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(
            r in proptest::collection::vec(0.0f64..8.0, 3),
            t in proptest::collection::vec(0.0f64..TAU, 3),
        ) {
            let p: Vec<(f64, f64)> = r.iter().copied().zip(t.iter().copied()).collect();
            let d = |i: usize, j: usize| hyperbolic_distance(p[i], p[j], 1.0);
            prop_assert!((d(0, 1) - d(1, 0)).abs() < 1e-12);
            prop_assert!(d(0, 0).abs() < 1e-12);
            prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-9);
        }

        #[test]
        fn ea_preserves_ca_order(angles in proptest::collection::vec(0.0f64..TAU, 2..20)) {
            let ea = angular_ea(&angles);
            for i in 0..angles.len() {
                for j in 0..angles.len() {
                    if angles[i] < angles[j] {
                        prop_assert!(ea[i] < ea[j]);
                    }
                }
            }
        }
    }

    fn unit_net(n: usize, pairs: &[(usize, usize)]) -> PmfgNetwork {
        PmfgNetwork {
            n,
            edges: pairs
                .iter()
                .map(|&(i, j)| PmfgEdge {
                    i,
                    j,
                    signed: 0.5,
                    unsigned: 0.75,
                    distance: 1.0,
                })
                .collect(),
            window_index: 0,
        }
    }

    #[test]
    fn geodesics_on_uniform_k4() {
        let net = unit_net(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        let g = geodesic_distance_matrix(&net).unwrap();
        assert!((0..4).all(|i| (0..4).all(|j| g[(i, j)] == if i == j { 0.0 } else { 1.0 })));
    }

    #[test]
    fn reweight_and_measures() {
        let net = unit_net(3, &[(0, 1), (1, 2)]);
        let emb = PolarEmbedding {
            r: vec![0.5, 1.0, 2.0],
            theta: vec![0.0, 1.0, 2.0],
            beta: 1.0,
            gamma: 2.0,
            adjustment: Adjustment::Ca,
            degrees: vec![1, 2, 1],
            ranks: vec![2, 1, 3],
            eigenvalues: [1.0, 1.0],
            degenerate: false,
            perturbed: vec![],
            gamma_fallback: false,
        };
        let h = hyperbolic_reweight(&net, &emb, 1.0);
        for e in &h.edges {
            assert!(e.w > 0.0 && e.w <= 1.0);
            assert!((e.w - 1.0 / (1.0 + e.x)).abs() < 1e-15);
        }
        let m = hyperbolic_measures(&h).unwrap();
        assert!((m.hspl.values[(0, 1)] - h.edges[0].x).abs() < 1e-15);
        assert_eq!(m.hebc.values[(0, 1)], 2.0);
        assert_eq!(m.hebc.values[(1, 2)], 2.0);
        assert_eq!(m.hcomm.kind, MeasureKind::Hcomm);
    }

    #[test]
    fn coincident_nodes_give_binary_normalized_comm() {
        let net = unit_net(4, &[(0, 1), (1, 2), (2, 3), (0, 2)]);
        let emb = PolarEmbedding {
            r: vec![1.0; 4],
            theta: vec![0.5; 4],
            beta: 0.5,
            gamma: 3.0,
            adjustment: Adjustment::Ca,
            degrees: net.degrees(),
            ranks: degree_ranks(&net.degrees()),
            eigenvalues: [1.0, 1.0],
            degenerate: false,
            perturbed: vec![],
            gamma_fallback: false,
        };
        let h = hyperbolic_reweight(&net, &emb, 1.0);
        assert!(h.edges.iter().all(|e| e.w == 1.0));
        let m = hyperbolic_measures(&h).unwrap();
        let want = weighted_communicability(&net.binary_adjacency()).unwrap().g;
        assert!((m.hcomm.values - want).abs().max() < 1e-14);
        assert!(m.hspl.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_embedding_is_deterministic() {
        let mut rng = derive_rng(11, 4);
        let x = DMatrix::from_fn(15, 60, |_, _| rng.random::<f64>() - 0.5);
        let net = build_pmfg(&correlation_of_rows(&x).unwrap()).unwrap();
        let a = coalescent_embedding(&net, &EmbeddingOptions::default()).unwrap();
        let b = coalescent_embedding(&net, &EmbeddingOptions::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.gamma >= 2.0 && a.beta > 0.0 && a.beta <= 1.0);
        assert!(a.theta.iter().all(|&t| (0.0..TAU).contains(&t)));
        let mut by_rank: Vec<(usize, f64)> = a.ranks.iter().copied().zip(a.r.iter().copied()).collect();
        by_rank.sort_by_key(|p| p.0);
        assert!(by_rank.windows(2).all(|w| w[0].1 <= w[1].1));
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("node,r,theta,degree,rank\n0,"));
        let ea = coalescent_embedding(
            &net,
            &EmbeddingOptions {
                adjustment: Adjustment::Ea,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(ea.r, a.r);
    }
}
