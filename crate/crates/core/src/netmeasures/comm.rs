use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{check_square, MeasureError, MeasureKind, MeasureMatrix};

const SYMMETRY_TOL: f64 = 1e-12;
const RADICAND_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    None,
    Strength,
}

/// `g = e^A`, or `exp(S^-1/2 W S^-1/2)` for the strength-normalized form.
#[derive(Debug, Clone, PartialEq)]
pub struct CommunicabilityMatrix {
    pub g: DMatrix<f64>,
    pub normalization: Normalization,
}

impl CommunicabilityMatrix {
    pub fn into_measure(self, kind: MeasureKind) -> MeasureMatrix {
        MeasureMatrix::new(kind, self.g)
    }
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).abs().max()
}

/// `Q e^Λ Qᵀ` from the symmetric eigendecomposition.
pub fn matrix_exponential_symmetric(m: &DMatrix<f64>) -> Result<DMatrix<f64>, MeasureError> {
    check_square(m, m.nrows())?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(MeasureError::NonFinite("matrix exponential input"));
    }
    let asym = asymmetry(m);
    if asym > SYMMETRY_TOL * m.abs().max().max(1.0) {
        return Err(MeasureError::NotSymmetric(asym));
    }
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    let eig = SymmetricEigen::new(m.clone());
    let q = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(q.nrows(), q.ncols(), |i, k| q[(i, k)] * eig.eigenvalues[k].exp());
    let e = scaled * q.transpose();
    let e = (&e + e.transpose()) * 0.5;
    if e.iter().any(|v| !v.is_finite()) {
        return Err(MeasureError::NonFinite("matrix exponential"));
    }
    Ok(e)
}

pub fn communicability(a: &DMatrix<f64>) -> Result<CommunicabilityMatrix, MeasureError> {
    Ok(CommunicabilityMatrix {
        g: matrix_exponential_symmetric(a)?,
        normalization: Normalization::None,
    })
}

pub fn weighted_communicability(w: &DMatrix<f64>) -> Result<CommunicabilityMatrix, MeasureError> {
    check_square(w, w.nrows())?;
    let n = w.nrows();
    let strength: Vec<f64> = w.row_iter().map(|r| r.sum()).collect();
    if let Some(i) = strength.iter().position(|&s| !(s > 0.0)) {
        return Err(MeasureError::IsolatedNode(i));
    }
    let inv_sqrt: Vec<f64> = strength.iter().map(|s| 1.0 / s.sqrt()).collect();
    let normalized = DMatrix::from_fn(n, n, |i, j| inv_sqrt[i] * w[(i, j)] * inv_sqrt[j]);
    Ok(CommunicabilityMatrix {
        g: matrix_exponential_symmetric(&normalized)?,
        normalization: Normalization::Strength,
    })
}

/// `ζ_ij = sqrt(g_ii + g_jj − 2 g_ij)`.
///
/// Radicands in `[-1e-12 · max(1, g_ii + g_jj), 0)` are treated as rounding
/// and clamped to zero; anything more negative is an error.
pub fn communicability_distance(c: &CommunicabilityMatrix) -> Result<MeasureMatrix, MeasureError> {
    let g = &c.g;
    let n = g.nrows();
    let mut z = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let scale = (g[(i, i)] + g[(j, j)]).abs().max(1.0);
            let r = g[(i, i)] + g[(j, j)] - 2.0 * g[(i, j)];
            let r = if r < 0.0 {
                if r >= -RADICAND_TOL * scale {
                    0.0
                } else {
                    return Err(MeasureError::NegativeRadicand { i, j, value: r });
                }
            } else {
                r
            };
            let v = r.sqrt();
            z[(i, j)] = v;
            z[(j, i)] = v;
        }
    }
    Ok(MeasureMatrix::new(MeasureKind::CommDist, z))
}

/// `X = ζ ∘ A` on the binary pattern of `a`.
pub fn comm_weighted_adjacency(zeta: &MeasureMatrix, a: &DMatrix<f64>) -> Result<DMatrix<f64>, MeasureError> {
    check_square(a, zeta.n())?;
    Ok(DMatrix::from_fn(zeta.n(), zeta.n(), |i, j| {
        if i != j && a[(i, j)] != 0.0 {
            zeta.values[(i, j)]
        } else {
            0.0
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::super::{shortest_communicability_path_lengths, LengthGraph};
    use super::*;
    use proptest::prelude::*;

    /// 60-term Taylor series on `M / 2^s`, squared back `s` times.
    pub(crate) fn taylor_expm(m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = m.nrows();
        let norm = m.abs().row_sum().max();
        let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
        let scaled = m / 2f64.powi(s);
        let mut term = DMatrix::identity(n, n);
        let mut sum = DMatrix::identity(n, n);
        for k in 1..=60 {
            term = &term * &scaled / k as f64;
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs() / y.abs().max(1.0)).fold(0.0, f64::max)
    }

    #[test]
    fn zero_and_diagonal() {
        let e = matrix_exponential_symmetric(&DMatrix::zeros(3, 3)).unwrap();
        assert!((e - DMatrix::<f64>::identity(3, 3)).abs().max() < 1e-15);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, -2.0]));
        let e = matrix_exponential_symmetric(&d).unwrap();
        assert!((e[(0, 0)] - 0.5f64.exp()).abs() < 1e-14);
        assert!((e[(1, 1)] - (-2.0f64).exp()).abs() < 1e-14);
        assert!(e[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn k2_is_cosh_sinh() {
        let g = communicability(&complete(2)).unwrap().g;
        assert!((g[(0, 0)] - 1.0f64.cosh()).abs() < 1e-12);
        assert!((g[(0, 1)] - 1.0f64.sinh()).abs() < 1e-12);
        assert!((g[(0, 0)] - 1.543081).abs() < 1e-6);
        assert!((g[(0, 1)] - 1.175201).abs() < 1e-6);
    }

    #[test]
    fn empty_graph_is_identity() {
        let g = communicability(&DMatrix::zeros(5, 5)).unwrap().g;
        assert!((g - DMatrix::<f64>::identity(5, 5)).abs().max() < 1e-15);
    }

    #[test]
    fn p3_matches_truncated_series() {
        let a = path(3);
        let mut term = DMatrix::<f64>::identity(3, 3);
        let mut series = term.clone();
        for k in 1..=40 {
            term = &term * &a / k as f64;
            series += &term;
        }
        let g = communicability(&a).unwrap().g;
        assert!((g[(0, 2)] - series[(0, 2)]).abs() < 1e-10);
    }

    #[test]
    fn matches_taylor_oracle_on_random_graphs() {
        for seed in 0..200 {
            let n = 1 + seed as usize % 8;
            let a = random_connected(n, 0.5, seed);
            let got = matrix_exponential_symmetric(&a).unwrap();
            assert!(rel_err(&got, &taylor_expm(&a)) <= 1e-10, "seed {seed}");
        }
    }

    #[test]
    fn rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(matrix_exponential_symmetric(&m), Err(MeasureError::NotSymmetric(_))));
    }

    #[test]
    fn weighted_k2_cancels() {
        let w = complete(2) * 0.37;
        let g = weighted_communicability(&w).unwrap().g;
        let u = communicability(&complete(2)).unwrap().g;
        assert!((g - u).abs().max() < 1e-14);
    }

    #[test]
    fn weighted_regular_graph_is_exp_a_over_k() {
        // Cycle C6 has degree 2.
        let n = 6;
        let a = DMatrix::from_fn(n, n, |i, j| if (i + 1) % n == j || (j + 1) % n == i { 1.0 } else { 0.0 });
        let g = weighted_communicability(&(&a * 0.3)).unwrap().g;
        assert!(rel_err(&g, &taylor_expm(&(&a / 2.0))) < 1e-12);
    }

    #[test]
    fn isolated_node_rejected() {
        let mut w = complete(3);
        w[(0, 2)] = 0.0;
        w[(2, 0)] = 0.0;
        w[(1, 2)] = 0.0;
        w[(2, 1)] = 0.0;
        assert!(matches!(weighted_communicability(&w), Err(MeasureError::IsolatedNode(2))));
    }

    #[test]
    fn k2_zeta() {
        let z = communicability_distance(&communicability(&complete(2)).unwrap()).unwrap();
        assert!((z.values[(0, 1)] - (2.0 / std::f64::consts::E).sqrt()).abs() < 1e-12);
        assert!((z.values[(0, 1)] - 0.857763).abs() < 1e-6);
        assert_eq!(z.values[(0, 0)], 0.0);
    }

    #[test]
    fn negative_radicand_beyond_tolerance_errors() {
        let bad = CommunicabilityMatrix {
            g: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
            normalization: Normalization::None,
        };
        assert!(matches!(communicability_distance(&bad), Err(MeasureError::NegativeRadicand { .. })));
        let rounding = CommunicabilityMatrix {
            g: DMatrix::from_row_slice(2, 2, &[1.0, 1.0 + 1e-13, 1.0 + 1e-13, 1.0]),
            normalization: Normalization::None,
        };
        assert_eq!(communicability_distance(&rounding).unwrap().values[(0, 1)], 0.0);
    }

    #[test]
    fn comm_weighted_adjacency_masks() {
        let a = path(3);
        let zeta = communicability_distance(&communicability(&a).unwrap()).unwrap();
        let x = comm_weighted_adjacency(&zeta, &a).unwrap();
        assert_eq!(x.iter().filter(|v| **v != 0.0).count(), 4);
        assert_eq!(x[(0, 2)], 0.0);
        let k = complete(4);
        let zk = communicability_distance(&communicability(&k).unwrap()).unwrap();
        assert_eq!(comm_weighted_adjacency(&zk, &k).unwrap(), zk.values);
        assert!(comm_weighted_adjacency(&zk, &a).is_err());
    }

    #[test]
    fn short_comm_path_k2_and_p3() {
        let k2 = complete(2);
        let z = communicability_distance(&communicability(&k2).unwrap()).unwrap();
        let s = shortest_communicability_path_lengths(&comm_weighted_adjacency(&z, &k2).unwrap()).unwrap();
        assert!((s.values[(0, 1)] - z.values[(0, 1)]).abs() < 1e-15);
        let p3 = path(3);
        let z = communicability_distance(&communicability(&p3).unwrap()).unwrap();
        let s = shortest_communicability_path_lengths(&comm_weighted_adjacency(&z, &p3).unwrap()).unwrap();
        assert!((s.values[(0, 2)] - z.values[(0, 1)] - z.values[(1, 2)]).abs() < 1e-14);
    }

    #[test]
    fn zeta_metric_and_path_dominance() {
        for seed in 0..200 {
            let n = 2 + seed as usize % 11;
            let a = random_connected(n, 0.3, seed);
            let z = communicability_distance(&communicability(&a).unwrap()).unwrap().values;
            for i in 0..n {
                assert_eq!(z[(i, i)], 0.0);
                for j in 0..n {
                    assert_eq!(z[(i, j)], z[(j, i)]);
                    for k in 0..n {
                        assert!(z[(i, k)] <= z[(i, j)] + z[(j, k)] + 1e-12);
                    }
                }
            }
            let x = comm_weighted_adjacency(&MeasureMatrix::new(MeasureKind::CommDist, z.clone()), &a).unwrap();
            let sp = super::super::all_pairs_shortest_paths(&LengthGraph::from_matrix(&x)).unwrap();
            for i in 0..n {
                for j in 0..n {
                    assert!(sp[(i, j)] >= z[(i, j)] - 1e-12);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn weighted_comm_is_positive_definite(seed in 0u64..500, n in 2usize..9) {
            let w = random_lengths(&random_connected(n, 0.4, seed), seed);
            let g = weighted_communicability(&w).unwrap().g;
            prop_assert!(asymmetry(&g) == 0.0);
            let eig = SymmetricEigen::new(g);
            prop_assert!(eig.eigenvalues.min() > 0.0);
        }

        #[test]
        fn relabeling_permutes_communicability(seed in 0u64..500, n in 3usize..9) {
            let a = random_connected(n, 0.4, seed);
            let perm: Vec<usize> = (0..n).map(|i| (i * 5 + 1) % n).collect();
            prop_assume!({ let mut p = perm.clone(); p.sort(); p == (0..n).collect::<Vec<_>>() });
            let pa = DMatrix::from_fn(n, n, |i, j| a[(perm[i], perm[j])]);
            let g = communicability(&a).unwrap().g;
            let pg = communicability(&pa).unwrap().g;
            for i in 0..n {
                for j in 0..n {
                    prop_assert!((pg[(i, j)] - g[(perm[i], perm[j])]).abs() < 1e-10);
                }
            }
        }
    }
}
