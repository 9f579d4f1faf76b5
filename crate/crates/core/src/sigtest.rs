//! Permutation tests on per-pair measure differences and the Wilcoxon rank-sum test.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::netmeasures::{MeasureKind, MeasureMatrix};
use crate::rng::derive_rng;

#[derive(Debug, Error)]
pub enum SigTestError {
    #[error("group {0} is empty")]
    EmptyGroup(&'static str),
    #[error("window matrices have inconsistent dimensions")]
    DimensionMismatch,
    #[error("need at least 4 pooled windows, got {0}")]
    TooFewWindows(usize),
    #[error("n_resamples must be at least 1")]
    NoResamples,
    #[error("pair ({0}, {1}) is out of range")]
    BadPair(usize, usize),
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("schedule is for {expected:?} windows, got {got:?}")]
    ScheduleMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// One random relabeling of the pooled windows per resample.
///
/// Row `r` is a permutation of `0..n_a + n_b` over the pooled sequence `a ++ b`;
/// its first `n_a` entries form the resampled first group.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationSchedule {
    n_a: usize,
    n_b: usize,
    rows: Vec<Vec<u32>>,
}

impl PermutationSchedule {
    pub fn new(n_a: usize, n_b: usize, n_resamples: usize, seed: u64) -> Result<Self, SigTestError> {
        if n_resamples == 0 {
            return Err(SigTestError::NoResamples);
        }
        if n_a == 0 {
            return Err(SigTestError::EmptyGroup("stable"));
        }
        if n_b == 0 {
            return Err(SigTestError::EmptyGroup("volatile"));
        }
        if n_a + n_b < 4 {
            return Err(SigTestError::TooFewWindows(n_a + n_b));
        }
        let mut rng = derive_rng(seed, 0x5157);
        let base: Vec<u32> = (0..(n_a + n_b) as u32).collect();
        let rows = (0..n_resamples)
            .map(|_| {
                let mut p = base.clone();
                p.shuffle(&mut rng);
                p
            })
            .collect();
        Ok(Self { n_a, n_b, rows })
    }

    pub fn sizes(&self) -> (usize, usize) {
        (self.n_a, self.n_b)
    }

    pub fn n_resamples(&self) -> usize {
        self.rows.len()
    }

    /// The same partitions expressed for the exchanged pooling `b ++ a`.
    pub fn swapped(&self) -> Self {
        let (n_a, n_b) = (self.n_a as u32, self.n_b as u32);
        let remap = |k: u32| if k < n_a { k + n_b } else { k - n_a };
        let rows = self
            .rows
            .iter()
            .map(|p| {
                let (first, second) = p.split_at(self.n_a);
                second.iter().chain(first).map(|&k| remap(k)).collect()
            })
            .collect();
        Self {
            n_a: self.n_b,
            n_b: self.n_a,
            rows,
        }
    }

    /// Resampled mean differences for pooled values `a ++ b`.
    pub fn null_differences(&self, pooled: &[f64]) -> Vec<f64> {
        let (na, nb) = (self.n_a as f64, self.n_b as f64);
        self.rows
            .iter()
            .map(|p| {
                let (first, second) = p.split_at(self.n_a);
                let sa: f64 = first.iter().map(|&k| pooled[k as usize]).sum();
                let sb: f64 = second.iter().map(|&k| pooled[k as usize]).sum();
                sa / na - sb / nb
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Stable mean exceeds volatile mean.
    DecreaseInVolatile,
    IncreaseInVolatile,
    NoChange,
}

impl Direction {
    pub fn of(delta: f64) -> Self {
        if delta > 0.0 {
            Direction::DecreaseInVolatile
        } else if delta < 0.0 {
            Direction::IncreaseInVolatile
        } else {
            Direction::NoChange
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Direction::DecreaseInVolatile => "decrease_in_volatile",
            Direction::IncreaseInVolatile => "increase_in_volatile",
            Direction::NoChange => "no_change",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairDifferenceResult {
    pub i: usize,
    pub j: usize,
    /// Mean stable minus mean volatile.
    pub delta: f64,
    pub p_value: f64,
    /// Benjamini–Hochberg adjusted p when enabled.
    pub p_adjusted: Option<f64>,
    pub significant: bool,
    pub direction: Direction,
}

fn check_groups(stable: &[MeasureMatrix], volatile: &[MeasureMatrix]) -> Result<usize, SigTestError> {
    let first = stable.first().ok_or(SigTestError::EmptyGroup("stable"))?;
    if volatile.is_empty() {
        return Err(SigTestError::EmptyGroup("volatile"));
    }
    let n = first.n();
    if stable.iter().chain(volatile).any(|m| m.values.nrows() != n || m.values.ncols() != n) {
        return Err(SigTestError::DimensionMismatch);
    }
    Ok(n)
}

fn pooled_entry(stable: &[MeasureMatrix], volatile: &[MeasureMatrix], (i, j): (usize, usize)) -> Vec<f64> {
    stable.iter().chain(volatile).map(|m| m.values[(i, j)]).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn pair_mean_difference(
    stable: &[MeasureMatrix],
    volatile: &[MeasureMatrix],
    pair: (usize, usize),
) -> Result<f64, SigTestError> {
    let n = check_groups(stable, volatile)?;
    if pair.0 >= n || pair.1 >= n {
        return Err(SigTestError::BadPair(pair.0, pair.1));
    }
    let pooled = pooled_entry(stable, volatile, pair);
    let (a, b) = pooled.split_at(stable.len());
    Ok(mean(a) - mean(b))
}

/// Two-sided p with `+1` smoothing; resampled gaps within rounding of the
/// observed gap count as extreme.
pub fn permutation_p_value(a: &[f64], b: &[f64], schedule: &PermutationSchedule) -> Result<(f64, f64), SigTestError> {
    if schedule.sizes() != (a.len(), b.len()) {
        return Err(SigTestError::ScheduleMismatch {
            expected: schedule.sizes(),
            got: (a.len(), b.len()),
        });
    }
    let delta = mean(a) - mean(b);
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let threshold = delta.abs() - 1e-12 * delta.abs().max(1.0);
    let extreme = schedule
        .null_differences(&pooled)
        .into_iter()
        .filter(|d| d.abs() >= threshold)
        .count();
    Ok((delta, (1 + extreme) as f64 / (schedule.n_resamples() + 1) as f64))
}

fn check_alpha(alpha: f64) -> Result<(), SigTestError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(SigTestError::InvalidAlpha(alpha))
    }
}

pub fn permutation_test(
    stable: &[MeasureMatrix],
    volatile: &[MeasureMatrix],
    pair: (usize, usize),
    n_resamples: usize,
    seed: u64,
    alpha: f64,
) -> Result<PairDifferenceResult, SigTestError> {
    check_alpha(alpha)?;
    let n = check_groups(stable, volatile)?;
    if pair.0 >= n || pair.1 >= n {
        return Err(SigTestError::BadPair(pair.0, pair.1));
    }
    let schedule = PermutationSchedule::new(stable.len(), volatile.len(), n_resamples, seed)?;
    let pooled = pooled_entry(stable, volatile, pair);
    let (a, b) = pooled.split_at(stable.len());
    let (delta, p) = permutation_p_value(a, b, &schedule)?;
    Ok(PairDifferenceResult {
        i: pair.0,
        j: pair.1,
        delta,
        p_value: p,
        p_adjusted: None,
        significant: p < alpha,
        direction: Direction::of(delta),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    pub alpha: f64,
    pub n_resamples: usize,
    pub seed: u64,
    pub benjamini_hochberg: bool,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            alpha: 0.001,
            n_resamples: 1000,
            seed: 0,
            benjamini_hochberg: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alternative {
    /// First sample tends to be smaller.
    Less,
    Greater,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceSummary {
    pub kind: MeasureKind,
    pub total_pairs: usize,
    pub significant_pairs: usize,
    pub significant_fraction: f64,
    pub decrease_in_volatile: usize,
    pub increase_in_volatile: usize,
    pub mean_stable: f64,
    pub mean_volatile: f64,
    pub median_stable: f64,
    pub median_volatile: f64,
    /// One-sided rank-sum test of per-pair stable means against volatile means.
    pub wilcoxon_alternative: Alternative,
    pub wilcoxon_p: f64,
    pub alpha: f64,
    pub n_resamples: usize,
    pub benjamini_hochberg: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub summary: SignificanceSummary,
    pub pairs: Vec<PairDifferenceResult>,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Benjamini–Hochberg step-up adjusted p-values, in input order.
pub fn benjamini_hochberg(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &idx) in order.iter().enumerate().rev() {
        running = running.min(p[idx] * m as f64 / (rank + 1) as f64);
        out[idx] = running;
    }
    out
}

/// Tests all `N (N − 1) / 2` pairs against one shared schedule.
pub fn run_significance_scan(
    stable: &[MeasureMatrix],
    volatile: &[MeasureMatrix],
    opts: &ScanOptions,
) -> Result<ScanResult, SigTestError> {
    check_alpha(opts.alpha)?;
    let n = check_groups(stable, volatile)?;
    let schedule = PermutationSchedule::new(stable.len(), volatile.len(), opts.n_resamples, opts.seed)?;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let tested: Vec<(PairDifferenceResult, f64, f64)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let pooled = pooled_entry(stable, volatile, (i, j));
            let (a, b) = pooled.split_at(stable.len());
            let (delta, p) = permutation_p_value(a, b, &schedule)?;
            let r = PairDifferenceResult {
                i,
                j,
                delta,
                p_value: p,
                p_adjusted: None,
                significant: p < opts.alpha,
                direction: Direction::of(delta),
            };
            Ok((r, mean(a), mean(b)))
        })
        .collect::<Result<_, SigTestError>>()?;
    let mut results: Vec<PairDifferenceResult> = tested.iter().map(|t| t.0).collect();
    if opts.benjamini_hochberg {
        let adj = benjamini_hochberg(&results.iter().map(|r| r.p_value).collect::<Vec<_>>());
        for (r, q) in results.iter_mut().zip(adj) {
            r.p_adjusted = Some(q);
            r.significant = q < opts.alpha;
        }
    }
    let stable_means: Vec<f64> = tested.iter().map(|t| t.1).collect();
    let volatile_means: Vec<f64> = tested.iter().map(|t| t.2).collect();
    let significant: Vec<&PairDifferenceResult> = results.iter().filter(|r| r.significant).collect();
    let dec = significant.iter().filter(|r| r.direction == Direction::DecreaseInVolatile).count();
    let inc = significant.iter().filter(|r| r.direction == Direction::IncreaseInVolatile).count();
    let alternative = if dec >= inc { Alternative::Greater } else { Alternative::Less };
    let wilcoxon_p = if stable_means.is_empty() {
        1.0
    } else {
        wilcoxon_rank_sum_one_sided(&stable_means, &volatile_means, alternative)?
    };
    let total = results.len();
    let summary = SignificanceSummary {
        kind: stable[0].kind,
        total_pairs: total,
        significant_pairs: significant.len(),
        significant_fraction: if total == 0 { 0.0 } else { significant.len() as f64 / total as f64 },
        decrease_in_volatile: dec,
        increase_in_volatile: inc,
        mean_stable: if total == 0 { f64::NAN } else { mean(&stable_means) },
        mean_volatile: if total == 0 { f64::NAN } else { mean(&volatile_means) },
        median_stable: median(&stable_means),
        median_volatile: median(&volatile_means),
        wilcoxon_alternative: alternative,
        wilcoxon_p,
        alpha: opts.alpha,
        n_resamples: opts.n_resamples,
        benjamini_hochberg: opts.benjamini_hochberg,
    };
    Ok(ScanResult { summary, pairs: results })
}

/// Writes `i,j,delta,p_value,significant,direction`, plus `p_adjusted` when present.
pub fn write_results_csv<W: Write>(results: &[PairDifferenceResult], writer: W) -> Result<(), SigTestError> {
    let adjusted = results.iter().any(|r| r.p_adjusted.is_some());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["i", "j", "delta", "p_value", "significant", "direction"];
    if adjusted {
        header.push("p_adjusted");
    }
    w.write_record(&header)?;
    for r in results {
        let mut rec = vec![
            r.i.to_string(),
            r.j.to_string(),
            r.delta.to_string(),
            r.p_value.to_string(),
            r.significant.to_string(),
            r.direction.label().to_string(),
        ];
        if adjusted {
            rec.push(r.p_adjusted.map(|q| q.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Largest smaller-group size handled by exact enumeration.
pub const EXACT_LIMIT: usize = 8;

/// Doubled midranks of the pooled sample `a ++ b` (integers).
fn doubled_midranks(a: &[f64], b: &[f64]) -> Vec<u64> {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| pooled[x].total_cmp(&pooled[y]));
    let mut ranks = vec![0u64; n];
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end + 1 < n && pooled[order[end + 1]] == pooled[order[start]] {
            end += 1;
        }
        for &k in &order[start..=end] {
            ranks[k] = (start + end + 2) as u64;
        }
        start = end + 1;
    }
    ranks
}

fn check_samples(a: &[f64], b: &[f64]) -> Result<(), SigTestError> {
    if a.is_empty() {
        return Err(SigTestError::EmptyGroup("a"));
    }
    if b.is_empty() {
        return Err(SigTestError::EmptyGroup("b"));
    }
    Ok(())
}

/// Exact one-sided p by enumerating all placements of the smaller sample.
pub fn wilcoxon_rank_sum_exact(a: &[f64], b: &[f64], alternative: Alternative) -> Result<f64, SigTestError> {
    check_samples(a, b)?;
    let ranks = doubled_midranks(a, b);
    let (na, nb) = (a.len(), b.len());
    let total: u64 = ranks.iter().sum();
    let wa: u64 = ranks[..na].iter().sum();
    // Distribute the sum of the smaller group; W_a = total − W_b otherwise.
    let (m, w_small, small_is_a) = if na <= nb {
        (na, wa, true)
    } else {
        (nb, total - wa, false)
    };
    let max_sum = total as usize;
    let mut dp = vec![vec![0.0f64; max_sum + 1]; m + 1];
    dp[0][0] = 1.0;
    for &r in &ranks {
        let r = r as usize;
        for k in (1..=m).rev() {
            let (lo, hi) = dp.split_at_mut(k);
            let prev = &lo[k - 1];
            let cur = &mut hi[0];
            for s in (r..=max_sum).rev() {
                if prev[s - r] != 0.0 {
                    cur[s] += prev[s - r];
                }
            }
        }
    }
    let dist = &dp[m];
    let all: f64 = dist.iter().sum();
    // Whether we want P(W_small <= w) or P(W_small >= w).
    let want_lower = matches!((alternative, small_is_a), (Alternative::Less, true) | (Alternative::Greater, false));
    let w = w_small as usize;
    let tail: f64 = if want_lower { dist[..=w].iter().sum() } else { dist[w..].iter().sum() };
    Ok((tail / all).min(1.0))
}

/// Normal approximation with tie-corrected variance and continuity correction.
pub fn wilcoxon_rank_sum_normal(a: &[f64], b: &[f64], alternative: Alternative) -> Result<f64, SigTestError> {
    check_samples(a, b)?;
    let ranks = doubled_midranks(a, b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = na + nb;
    let w: f64 = ranks[..a.len()].iter().sum::<u64>() as f64 / 2.0;
    let mut sorted = ranks.clone();
    sorted.sort_unstable();
    let ties: f64 = sorted
        .chunk_by(|x, y| x == y)
        .map(|g| {
            let t = g.len() as f64;
            t * t * t - t
        })
        .sum();
    let var = na * nb / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)).max(1.0));
    if !(var > 0.0) {
        return Ok(1.0);
    }
    let sd = var.sqrt();
    let expected = na * (n + 1.0) / 2.0;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    Ok(match alternative {
        Alternative::Less => std_normal.cdf((w - expected + 0.5) / sd),
        Alternative::Greater => std_normal.sf((w - expected - 0.5) / sd),
    })
}

/// Exact when the smaller sample has at most [`EXACT_LIMIT`] values.
pub fn wilcoxon_rank_sum_one_sided(a: &[f64], b: &[f64], alternative: Alternative) -> Result<f64, SigTestError> {
    if a.len().min(b.len()) <= EXACT_LIMIT {
        wilcoxon_rank_sum_exact(a, b, alternative)
    } else {
        wilcoxon_rank_sum_normal(a, b, alternative)
    }
}
