//! Stable-versus-volatile classification of measure matrices.

mod cv;
mod svm;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::Regime;
use crate::netmeasures::{MeasureKind, MeasureMatrix};

pub use cv::{
    cross_validate, stratified_folds, write_selected_features_csv, CvOptions, CvReport, FoldAudit, FoldReport,
    SelectedFeature,
};
pub use svm::{svm_rfe, train_linear_svm, LinearSvmModel, RfeResult, SvmOptions};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("feature matrices have inconsistent dimensions")]
    DimensionMismatch,
    #[error("only one class present")]
    SingleClass,
    #[error("empty input")]
    Empty,
    #[error("class {class} has {count} samples, fewer than {splits} splits")]
    ClassTooSmall { class: u8, count: usize, splits: usize },
    #[error("SVM did not converge within {0} iterations")]
    NotConverged(usize),
    #[error("no features survive the mask")]
    EmptyMask,
    #[error("invalid option: {0}")]
    InvalidOption(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl ClassifierError {
    pub fn is_numeric(&self) -> bool {
        matches!(self, ClassifierError::NotConverged(_) | ClassifierError::NonFinite(_))
    }
}

/// Windows × features with binary labels (stable 0, volatile 1).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub x: DMatrix<f64>,
    pub y: Vec<u8>,
    /// Feature index to node pair.
    pub pairs: Vec<(usize, usize)>,
    pub kind: MeasureKind,
    pub n_nodes: usize,
}

/// Strict upper-triangle pairs in row-major order.
pub fn upper_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

impl FeatureDataset {
    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let pos = self.y.iter().filter(|&&v| v == 1).count();
        [self.y.len() - pos, pos]
    }

    /// Symmetric matrix for one sample; the diagonal is zero.
    pub fn unvectorize(&self, row: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_nodes, self.n_nodes);
        for (f, &(i, j)) in self.pairs.iter().enumerate() {
            m[(i, j)] = self.x[(row, f)];
            m[(j, i)] = self.x[(row, f)];
        }
        m
    }
}

/// One row per window; features are the strict upper triangle.
pub fn vectorize(measures: &[MeasureMatrix], labels: &[Regime]) -> Result<FeatureDataset, ClassifierError> {
    let first = measures.first().ok_or(ClassifierError::Empty)?;
    let n = first.n();
    if labels.len() != measures.len() || measures.iter().any(|m| m.values.shape() != (n, n)) {
        return Err(ClassifierError::DimensionMismatch);
    }
    let pairs = upper_pairs(n);
    let x = DMatrix::from_fn(measures.len(), pairs.len(), |r, f| measures[r].values[pairs[f]]);
    Ok(FeatureDataset {
        x,
        y: labels.iter().map(|r| r.label()).collect(),
        pairs,
        kind: first.kind,
        n_nodes: n,
    })
}

/// Edge frequencies over stable training networks and the thresholded mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskMatrix {
    pub frequencies: DMatrix<f64>,
    pub mask: DMatrix<f64>,
    pub threshold: f64,
    pub n_sources: usize,
}

impl MaskMatrix {
    /// Features whose pair is masked in, ascending.
    pub fn selected(&self, pairs: &[(usize, usize)]) -> Vec<usize> {
        pairs
            .iter()
            .enumerate()
            .filter(|(_, p)| self.mask[**p] == 1.0)
            .map(|(f, _)| f)
            .collect()
    }
}

pub fn build_mask(adjacency: &[DMatrix<f64>], threshold: f64) -> Result<MaskMatrix, ClassifierError> {
    let first = adjacency.first().ok_or(ClassifierError::Empty)?;
    let shape = first.shape();
    if adjacency.iter().any(|a| a.shape() != shape) {
        return Err(ClassifierError::DimensionMismatch);
    }
    let mut freq = DMatrix::zeros(shape.0, shape.1);
    for a in adjacency {
        freq += a.map(|v| if v != 0.0 { 1.0 } else { 0.0 });
    }
    freq /= adjacency.len() as f64;
    let mask = freq.map(|e| if e > threshold { 1.0 } else { 0.0 });
    Ok(MaskMatrix {
        frequencies: freq,
        mask,
        threshold,
        n_sources: adjacency.len(),
    })
}

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Scaler {
    pub fn fit(train: &DMatrix<f64>) -> Result<Scaler, ClassifierError> {
        let n = train.nrows();
        if n == 0 {
            return Err(ClassifierError::Empty);
        }
        let mean: Vec<f64> = train.column_iter().map(|c| c.sum() / n as f64).collect();
        let sd = train
            .column_iter()
            .zip(&mean)
            .map(|(c, m)| (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt())
            .collect();
        Ok(Scaler { mean, sd })
    }

    /// Zero-variance features map to 0.
    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| {
            if self.sd[c] > 0.0 {
                (x[(r, c)] - self.mean[c]) / self.sd[c]
            } else {
                0.0
            }
        })
    }
}

/// Scales both matrices with statistics of `train` alone.
pub fn standardize(
    train: &DMatrix<f64>,
    apply_to: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>), ClassifierError> {
    if train.ncols() != apply_to.ncols() {
        return Err(ClassifierError::DimensionMismatch);
    }
    let s = Scaler::fit(train)?;
    Ok((s.transform(train), s.transform(apply_to)))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub auc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl Metrics {
    pub fn as_array(&self) -> [f64; 4] {
        [self.accuracy, self.auc, self.sensitivity, self.specificity]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Metrics {
            accuracy: a[0],
            auc: a[1],
            sensitivity: a[2],
            specificity: a[3],
        }
    }
}

/// `P(score_pos > score_neg) + ½ P(tie)` over all positive/negative pairs.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, ClassifierError> {
    if scores.len() != labels.len() {
        return Err(ClassifierError::DimensionMismatch);
    }
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l != 1).map(|(s, _)| *s).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(ClassifierError::SingleClass);
    }
    let mut wins = 0.0;
    for p in &pos {
        for q in &neg {
            wins += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(wins / (pos.len() * neg.len()) as f64)
}

/// Confusion counts at threshold 0 (score > 0 predicts volatile).
pub fn evaluate(scores: &[f64], labels: &[u8]) -> Result<Metrics, ClassifierError> {
    let auc = auc(scores, labels)?;
    let mut tp = 0.0;
    let mut tn = 0.0;
    let mut fp = 0.0;
    let mut fneg = 0.0;
    for (&s, &l) in scores.iter().zip(labels) {
        match (s > 0.0, l == 1) {
            (true, true) => tp += 1.0,
            (false, false) => tn += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fneg += 1.0,
        }
    }
    Ok(Metrics {
        accuracy: (tp + tn) / scores.len() as f64,
        auc,
        sensitivity: tp / (tp + fneg),
        specificity: tn / (tn + fp),
    })
}
