use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ClassifierError;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmOptions {
    pub c: f64,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    /// Iteration cap; 0 means `max(100_000, 100 n)`.
    pub max_iter: usize,
}

impl Default for SvmOptions {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-3,
            max_iter: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvmModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub iterations: usize,
}

impl LinearSvmModel {
    pub fn decision(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let w = DVector::from_column_slice(&self.weights);
        (x * w).iter().map(|s| s + self.bias).collect()
    }
}

/// Soft-margin linear SVM solved in the dual by SMO with second-order
/// working-set selection. Labels are 1 (positive) and anything else (negative).
pub fn train_linear_svm(x: &DMatrix<f64>, labels: &[u8], opts: &SvmOptions) -> Result<LinearSvmModel, ClassifierError> {
    let n = x.nrows();
    if n == 0 {
        return Err(ClassifierError::Empty);
    }
    if labels.len() != n {
        return Err(ClassifierError::DimensionMismatch);
    }
    if !(opts.c > 0.0) || !(opts.tol > 0.0) {
        return Err(ClassifierError::InvalidOption(format!("c = {}, tol = {}", opts.c, opts.tol)));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ClassifierError::NonFinite("training features"));
    }
    let y: Vec<f64> = labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
    if y.iter().all(|&v| v > 0.0) || y.iter().all(|&v| v < 0.0) {
        return Err(ClassifierError::SingleClass);
    }
    let c = opts.c;
    let max_iter = if opts.max_iter == 0 { (100 * n).max(100_000) } else { opts.max_iter };
    let k = x * x.transpose();
    let mut alpha = vec![0.0f64; n];
    let mut grad = vec![-1.0f64; n];
    let is_upper = |a: f64| a >= c;
    let is_lower = |a: f64| a <= 0.0;

    let mut iter = 0;
    loop {
        // Maximal violating i from I_up.
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            let in_up = if y[t] > 0.0 { !is_upper(alpha[t]) } else { !is_lower(alpha[t]) };
            if in_up && -y[t] * grad[t] > gmax {
                gmax = -y[t] * grad[t];
                i_sel = Some(t);
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut obj_min = f64::INFINITY;
        if let Some(i) = i_sel {
            for t in 0..n {
                let in_low = if y[t] > 0.0 { !is_lower(alpha[t]) } else { !is_upper(alpha[t]) };
                if !in_low {
                    continue;
                }
                let yg = y[t] * grad[t];
                gmax2 = gmax2.max(yg);
                let b = gmax + yg;
                if b > 0.0 {
                    let mut a = k[(i, i)] + k[(t, t)] - 2.0 * k[(i, t)];
                    if a <= 0.0 {
                        a = TAU;
                    }
                    let obj = -(b * b) / a;
                    if obj < obj_min {
                        obj_min = obj;
                        j_sel = Some(t);
                    }
                }
            }
        }
        let (i, j) = match (i_sel, j_sel) {
            (Some(i), Some(j)) if gmax + gmax2 >= opts.tol => (i, j),
            _ => break,
        };
        if iter >= max_iter {
            return Err(ClassifierError::NotConverged(max_iter));
        }
        iter += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let mut quad = k[(i, i)] + k[(j, j)] - 2.0 * k[(i, j)];
        if quad <= 0.0 {
            quad = TAU;
        }
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * k[(t, i)] * di + y[j] * k[(t, j)] * dj);
        }
    }

    // Bias from free support vectors, else the midpoint of the feasible range.
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut sum_free = 0.0;
    let mut n_free = 0;
    for t in 0..n {
        let yg = y[t] * grad[t];
        if is_upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if is_lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { (ub + lb) / 2.0 };
    let coef = DVector::from_iterator(n, (0..n).map(|t| alpha[t] * y[t]));
    let weights: Vec<f64> = (x.transpose() * coef).iter().copied().collect();
    if weights.iter().any(|w| !w.is_finite()) || !rho.is_finite() {
        return Err(ClassifierError::NonFinite("svm parameters"));
    }
    Ok(LinearSvmModel {
        weights,
        bias: -rho,
        c,
        iterations: iter,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfeResult {
    /// Surviving feature columns, ascending.
    pub selected: Vec<usize>,
    /// Model refit on the surviving columns, weights aligned with `selected`.
    pub model: LinearSvmModel,
}

/// Recursive feature elimination by smallest `|w_f|`; among equal weights
/// the higher feature index goes first.
pub fn svm_rfe(
    x: &DMatrix<f64>,
    labels: &[u8],
    keep: usize,
    drop_fraction: f64,
    opts: &SvmOptions,
) -> Result<RfeResult, ClassifierError> {
    let f = x.ncols();
    if keep == 0 || keep > f {
        return Err(ClassifierError::InvalidOption(format!("keep = {keep} with {f} features")));
    }
    if !(drop_fraction > 0.0 && drop_fraction <= 1.0) {
        return Err(ClassifierError::InvalidOption(format!("drop_fraction = {drop_fraction}")));
    }
    let mut remaining: Vec<usize> = (0..f).collect();
    loop {
        let sub = x.select_columns(remaining.iter());
        let model = train_linear_svm(&sub, labels, opts)?;
        if remaining.len() <= keep {
            return Ok(RfeResult {
                selected: remaining,
                model,
            });
        }
        let n_drop = ((drop_fraction * remaining.len() as f64).ceil() as usize)
            .max(1)
            .min(remaining.len() - keep);
        let mut order: Vec<usize> = (0..remaining.len()).collect();
        order.sort_by(|&a, &b| {
            model.weights[a]
                .abs()
                .total_cmp(&model.weights[b].abs())
                .then(remaining[b].cmp(&remaining[a]))
        });
        let mut dropped: Vec<usize> = order[..n_drop].to_vec();
        dropped.sort_unstable();
        remaining = remaining
            .iter()
            .enumerate()
            .filter(|(pos, _)| dropped.binary_search(pos).is_err())
            .map(|(_, &feat)| feat)
            .collect();
    }
}
