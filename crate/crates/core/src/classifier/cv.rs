use std::collections::BTreeSet;
use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::svm::{svm_rfe, SvmOptions};
use super::{build_mask, evaluate, ClassifierError, FeatureDataset, Metrics, Scaler};
use crate::netmeasures::MeasureKind;
use crate::rng::{derive_rng, derive_seed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub splits: usize,
    pub repeats: usize,
    pub keep: usize,
    pub drop_fraction: f64,
    pub mask_threshold: f64,
    pub svm: SvmOptions,
    pub seed: u64,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            splits: 5,
            repeats: 10,
            keep: 1,
            drop_fraction: 0.1,
            mask_threshold: 0.25,
            svm: SvmOptions::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectedFeature {
    pub feature: usize,
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Which sample rows each training-side stage read, checked against the test fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAudit {
    pub test_rows: usize,
    pub mask_rows: usize,
    pub scaler_rows: usize,
    pub rfe_rows: usize,
    pub mask_test_overlap: usize,
    pub scaler_test_overlap: usize,
    pub rfe_test_overlap: usize,
    /// Content hash of every row consumed by the three stages.
    pub consumed_checksum: u64,
    /// Content hash of the test rows.
    pub test_checksum: u64,
    /// Consumed rows whose content hash equals some test row's.
    pub checksum_collisions: usize,
}

impl FoldAudit {
    pub fn leakage_free(&self) -> bool {
        self.mask_test_overlap == 0
            && self.scaler_test_overlap == 0
            && self.rfe_test_overlap == 0
            && self.checksum_collisions == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub repeat: usize,
    pub fold: usize,
    pub metrics: Metrics,
    pub n_masked: usize,
    pub selected: Vec<SelectedFeature>,
    pub audit: FoldAudit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub kind: MeasureKind,
    pub folds: Vec<FoldReport>,
    pub mean: Metrics,
    /// Sample standard deviation over folds divided by `sqrt(folds)`.
    pub std_error: Metrics,
    pub options: CvOptions,
}

impl CvReport {
    pub fn leakage_free(&self) -> bool {
        self.folds.iter().all(|f| f.audit.leakage_free())
    }

    /// One line per fold plus `mean` and `std_error` rows.
    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<(), ClassifierError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["row", "repeat", "fold", "accuracy", "auc", "sensitivity", "specificity"])?;
        let line = |w: &mut csv::Writer<W>, row: &str, rep: String, fold: String, m: &Metrics| {
            let mut rec = vec![row.to_string(), rep, fold];
            rec.extend(m.as_array().iter().map(|v| v.to_string()));
            w.write_record(&rec)
        };
        for f in &self.folds {
            line(&mut w, "fold", f.repeat.to_string(), f.fold.to_string(), &f.metrics)?;
        }
        line(&mut w, "mean", String::new(), String::new(), &self.mean)?;
        line(&mut w, "std_error", String::new(), String::new(), &self.std_error)?;
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Writes `fold,repeat,feature,i,j,weight`.
pub fn write_selected_features_csv<W: Write>(report: &CvReport, writer: W) -> Result<(), ClassifierError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["fold", "repeat", "feature", "i", "j", "weight"])?;
    for f in &report.folds {
        for s in &f.selected {
            w.write_record([
                f.fold.to_string(),
                f.repeat.to_string(),
                s.feature.to_string(),
                s.i.to_string(),
                s.j.to_string(),
                s.weight.to_string(),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Fold id per sample; each class is shuffled and dealt round-robin.
pub fn stratified_folds(labels: &[u8], splits: usize, seed: u64) -> Result<Vec<usize>, ClassifierError> {
    if splits < 2 {
        return Err(ClassifierError::InvalidOption(format!("splits = {splits}")));
    }
    let mut fold = vec![0; labels.len()];
    let mut rng = derive_rng(seed, 0xF01D);
    let mut offset = 0;
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&r| labels[r] == class).collect();
        if idx.len() < splits {
            return Err(ClassifierError::ClassTooSmall {
                class,
                count: idx.len(),
                splits,
            });
        }
        idx.shuffle(&mut rng);
        for (k, &r) in idx.iter().enumerate() {
            fold[r] = (k + offset) % splits;
        }
        offset += idx.len();
    }
    Ok(fold)
}

fn row_hash(x: &DMatrix<f64>, r: usize) -> u64 {
    // FNV-1a over the raw bits of the row.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in x.row(r).iter() {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Records the rows a stage reads and hands it exactly those rows.
struct RowLedger<'a> {
    consumed: Vec<(&'static str, Vec<usize>)>,
    hashes: Vec<u64>,
    source: &'a DMatrix<f64>,
    adjacency: &'a DMatrix<f64>,
}

impl<'a> RowLedger<'a> {
    fn take(&mut self, stage: &'static str, from_adjacency: bool, rows: &[usize]) -> DMatrix<f64> {
        let m = if from_adjacency { self.adjacency } else { self.source };
        self.consumed.push((stage, rows.to_vec()));
        for &r in rows {
            self.hashes.push(row_hash(m, r) ^ from_adjacency as u64);
        }
        m.select_rows(rows.iter())
    }

    fn rows(&self, stage: &str) -> &[usize] {
        self.consumed.iter().find(|(s, _)| *s == stage).map(|(_, r)| r.as_slice()).unwrap_or(&[])
    }
}

fn run_fold(
    data: &FeatureDataset,
    adjacency: &FeatureDataset,
    train: &[usize],
    test: &[usize],
    opts: &CvOptions,
) -> Result<(Metrics, usize, Vec<SelectedFeature>, FoldAudit), ClassifierError> {
    let mut ledger = RowLedger {
        consumed: Vec::new(),
        hashes: Vec::new(),
        source: &data.x,
        adjacency: &adjacency.x,
    };
    let stable_train: Vec<usize> = train.iter().copied().filter(|&r| data.y[r] == 0).collect();
    let adj_rows = ledger.take("mask", true, &stable_train);
    let networks: Vec<DMatrix<f64>> = (0..adj_rows.nrows())
        .map(|r| {
            let mut m = DMatrix::zeros(adjacency.n_nodes, adjacency.n_nodes);
            for (f, &(i, j)) in adjacency.pairs.iter().enumerate() {
                m[(i, j)] = adj_rows[(r, f)];
                m[(j, i)] = adj_rows[(r, f)];
            }
            m
        })
        .collect();
    let mask = build_mask(&networks, opts.mask_threshold)?;
    let columns = mask.selected(&data.pairs);
    if columns.is_empty() {
        return Err(ClassifierError::EmptyMask);
    }

    let train_x = ledger.take("scaler", false, train).select_columns(columns.iter());
    let scaler = Scaler::fit(&train_x)?;
    let train_scaled = scaler.transform(&train_x);
    // RFE sees the scaled training block only.
    ledger.consumed.push(("rfe", train.to_vec()));
    let train_y: Vec<u8> = train.iter().map(|&r| data.y[r]).collect();
    let keep = opts.keep.min(columns.len());
    let rfe = svm_rfe(&train_scaled, &train_y, keep, opts.drop_fraction, &opts.svm)?;

    let test_x = data.x.select_rows(test.iter()).select_columns(columns.iter());
    let test_scaled = scaler.transform(&test_x).select_columns(rfe.selected.iter());
    let scores = rfe.model.decision(&test_scaled);
    let test_y: Vec<u8> = test.iter().map(|&r| data.y[r]).collect();
    let metrics = evaluate(&scores, &test_y)?;

    let selected = rfe
        .selected
        .iter()
        .zip(&rfe.model.weights)
        .map(|(&pos, &weight)| {
            let feature = columns[pos];
            let (i, j) = data.pairs[feature];
            SelectedFeature { feature, i, j, weight }
        })
        .collect();

    let test_set: BTreeSet<usize> = test.iter().copied().collect();
    let overlap = |rows: &[usize]| rows.iter().filter(|r| test_set.contains(r)).count();
    let test_hashes: BTreeSet<u64> = test
        .iter()
        .flat_map(|&r| [row_hash(&data.x, r), row_hash(&adjacency.x, r) ^ 1])
        .collect();
    let consumed_checksum = ledger.hashes.iter().fold(0u64, |acc, h| acc.rotate_left(7) ^ h);
    let test_checksum = test_hashes.iter().fold(0u64, |acc, h| acc.rotate_left(7) ^ h);
    // Identical content in train and test (e.g. duplicated windows) is not leakage by
    // index, so only count hashes of rows that are not themselves training rows.
    let train_hashes: BTreeSet<u64> = train
        .iter()
        .flat_map(|&r| [row_hash(&data.x, r), row_hash(&adjacency.x, r) ^ 1])
        .collect();
    let checksum_collisions = ledger
        .hashes
        .iter()
        .filter(|h| test_hashes.contains(h) && !train_hashes.contains(h))
        .count();
    let audit = FoldAudit {
        test_rows: test.len(),
        mask_rows: ledger.rows("mask").len(),
        scaler_rows: ledger.rows("scaler").len(),
        rfe_rows: ledger.rows("rfe").len(),
        mask_test_overlap: overlap(ledger.rows("mask")),
        scaler_test_overlap: overlap(ledger.rows("scaler")),
        rfe_test_overlap: overlap(ledger.rows("rfe")),
        consumed_checksum,
        test_checksum,
        checksum_collisions,
    };
    Ok((metrics, columns.len(), selected, audit))
}

/// Repeated stratified k-fold. Per fold: mask from stable training networks,
/// z-score on training rows, SVM-RFE on training rows, score the held-out fold.
///
/// `adjacency` holds the vectorized binary PMFG of the same windows.
pub fn cross_validate(
    data: &FeatureDataset,
    adjacency: &FeatureDataset,
    opts: &CvOptions,
) -> Result<CvReport, ClassifierError> {
    if data.n_samples() == 0 {
        return Err(ClassifierError::Empty);
    }
    if adjacency.x.shape() != data.x.shape() || adjacency.y != data.y || adjacency.pairs != data.pairs {
        return Err(ClassifierError::DimensionMismatch);
    }
    if opts.repeats == 0 || opts.keep == 0 {
        return Err(ClassifierError::InvalidOption("repeats and keep must be positive".into()));
    }
    let assignments: Vec<Vec<usize>> = (0..opts.repeats)
        .map(|rep| stratified_folds(&data.y, opts.splits, derive_seed(opts.seed, rep as u64)))
        .collect::<Result<_, _>>()?;
    let tasks: Vec<(usize, usize)> = (0..opts.repeats).flat_map(|r| (0..opts.splits).map(move |f| (r, f))).collect();
    let folds: Vec<FoldReport> = tasks
        .par_iter()
        .map(|&(repeat, fold)| {
            let a = &assignments[repeat];
            let train: Vec<usize> = (0..a.len()).filter(|&r| a[r] != fold).collect();
            let test: Vec<usize> = (0..a.len()).filter(|&r| a[r] == fold).collect();
            let (metrics, n_masked, selected, audit) = run_fold(data, adjacency, &train, &test, opts)?;
            Ok(FoldReport {
                repeat,
                fold,
                metrics,
                n_masked,
                selected,
                audit,
            })
        })
        .collect::<Result<_, ClassifierError>>()?;
    let k = folds.len() as f64;
    let mut mean = [0.0; 4];
    for f in &folds {
        for (m, v) in mean.iter_mut().zip(f.metrics.as_array()) {
            *m += v / k;
        }
    }
    let mut se = [0.0; 4];
    if folds.len() > 1 {
        for f in &folds {
            for ((s, v), m) in se.iter_mut().zip(f.metrics.as_array()).zip(mean) {
                *s += (v - m) * (v - m) / (k - 1.0);
            }
        }
        for s in &mut se {
            *s = s.sqrt() / k.sqrt();
        }
    }
    Ok(CvReport {
        kind: data.kind,
        folds,
        mean: Metrics::from_array(mean),
        std_error: Metrics::from_array(se),
        options: *opts,
    })
}
