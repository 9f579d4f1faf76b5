//! Per-window stages wired together, without IO.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{self, FeatureDataset};
use crate::corrnet::{self, EdgeRanking, NetworkSummary, PmfgNetwork};
use crate::error::Result;
use crate::hypembed::{self, EmbeddingOptions, GammaSource, PolarEmbedding};
use crate::market_data::{
    self, compute_log_returns, generate_synthetic, surrogate_shuffle, Period, Regime, ReturnPanel, SyntheticSpec,
    TradingCalendar, WindowSlice,
};
use crate::netmeasures::{
    comm_weighted_adjacency, communicability, communicability_distance, edge_betweenness,
    shortest_communicability_path_lengths, shortest_path_lengths, weighted_communicability, MeasureKind,
    MeasureMatrix, Weighting,
};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowOptions {
    pub window_length: usize,
    pub step: usize,
    pub ranking: EdgeRanking,
}

impl Default for WindowOptions {
    fn default() -> Self {
        Self {
            window_length: 60,
            step: 1,
            ranking: EdgeRanking::Similarity,
        }
    }
}

/// Seed for the surrogate shuffle of one window.
pub fn surrogate_seed(master: u64, regime: Regime, window_index: usize) -> u64 {
    derive_seed(derive_seed(master, regime.label() as u64 + 1), window_index as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowNetwork {
    pub period: Period,
    pub net: PmfgNetwork,
    pub summary: NetworkSummary,
}

/// Tickers present in both panels, then those with zero variance in any window
/// of either panel removed. Returns the aligned panels and the removed tickers.
pub fn align_periods(
    stable: &ReturnPanel,
    volatile: &ReturnPanel,
    opts: &WindowOptions,
) -> Result<(ReturnPanel, ReturnPanel, Vec<String>)> {
    let in_volatile: BTreeSet<&String> = volatile.tickers.iter().collect();
    let mut dropped: Vec<String> = stable
        .tickers
        .iter()
        .chain(&volatile.tickers)
        .filter(|t| !(in_volatile.contains(t) && stable.tickers.contains(t)))
        .cloned()
        .collect();
    let common: Vec<String> = stable.tickers.iter().filter(|t| in_volatile.contains(t)).cloned().collect();
    let degenerate = |panel: &ReturnPanel| -> Result<BTreeSet<String>> {
        let mut out = BTreeSet::new();
        for w in market_data::slice_windows(panel, opts.window_length, opts.step, &Period::new("", Regime::Stable))? {
            for i in 0..w.returns.nrows() {
                let row = w.returns.row(i);
                if row.max() == row.min() {
                    out.insert(w.tickers[i].clone());
                }
            }
        }
        Ok(out)
    };
    let bad: BTreeSet<String> = degenerate(stable)?.union(&degenerate(volatile)?).cloned().collect();
    let keep: Vec<String> = common.into_iter().filter(|t| !bad.contains(t)).collect();
    dropped.extend(bad);
    dropped.sort();
    dropped.dedup();
    let rows = |panel: &ReturnPanel| -> Vec<usize> {
        keep.iter().map(|t| panel.tickers.iter().position(|u| u == t).expect("common ticker")).collect()
    };
    Ok((stable.select_rows(&rows(stable)), volatile.select_rows(&rows(volatile)), dropped))
}

fn network_of(slice: &WindowSlice, ranking: EdgeRanking) -> Result<WindowNetwork> {
    let corr = corrnet::pearson(slice)?;
    let net = corrnet::build_pmfg_with(&corr, ranking)?;
    let summary = corrnet::network_summary(&net)?;
    Ok(WindowNetwork {
        period: slice.period.clone(),
        net,
        summary,
    })
}

/// One PMFG per rolling window; `surrogate` shuffles each window first.
pub fn build_networks(
    panel: &ReturnPanel,
    period: &Period,
    opts: &WindowOptions,
    surrogate: Option<u64>,
) -> Result<Vec<WindowNetwork>> {
    let slices = market_data::slice_windows(panel, opts.window_length, opts.step, period)?;
    slices
        .par_iter()
        .map(|s| match surrogate {
            Some(seed) => network_of(&surrogate_shuffle(s, surrogate_seed(seed, period.regime, s.window_index)), opts.ranking),
            None => network_of(s, opts.ranking),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureOptions {
    pub kinds: BTreeSet<MeasureKind>,
    pub weighting: Weighting,
    pub embedding: EmbeddingOptions,
}

impl Default for MeasureOptions {
    fn default() -> Self {
        Self {
            kinds: [MeasureKind::Spl, MeasureKind::Ebc, MeasureKind::Comm].into_iter().collect(),
            weighting: Weighting::Weighted,
            embedding: EmbeddingOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowMeasures {
    pub window_index: usize,
    pub measures: BTreeMap<MeasureKind, MeasureMatrix>,
    pub embedding: Option<PolarEmbedding>,
}

fn needs_embedding(kinds: &BTreeSet<MeasureKind>) -> bool {
    kinds
        .iter()
        .any(|k| matches!(k, MeasureKind::Hspl | MeasureKind::Hebc | MeasureKind::Hcomm))
}

/// Computes the configured measures for one network.
///
/// Weighted: SPL and EBC over correlation distances, COMM strength-normalized
/// over `(1 + C)/2`. Unweighted: hop counts and `e^A`.
pub fn window_measures(net: &PmfgNetwork, opts: &MeasureOptions) -> Result<WindowMeasures> {
    let w = net.window_index;
    let mut out = BTreeMap::new();
    let paths = match opts.weighting {
        Weighting::Weighted => net.distance_graph(),
        Weighting::Unweighted => net.hop_graph(),
    };
    let tag = |m: MeasureMatrix| m.with_window(w).with_weighting(opts.weighting);
    if opts.kinds.contains(&MeasureKind::Spl) {
        out.insert(MeasureKind::Spl, tag(shortest_path_lengths(&paths)?));
    }
    if opts.kinds.contains(&MeasureKind::Ebc) {
        out.insert(MeasureKind::Ebc, tag(edge_betweenness(&paths)?));
    }
    let comm_family = [MeasureKind::Comm, MeasureKind::CommDist, MeasureKind::ShortCommPath];
    if comm_family.iter().any(|k| opts.kinds.contains(k)) {
        let a = net.binary_adjacency();
        let g = match opts.weighting {
            Weighting::Weighted => weighted_communicability(&net.weighted_adjacency())?,
            Weighting::Unweighted => communicability(&a)?,
        };
        let zeta = communicability_distance(&g)?;
        if opts.kinds.contains(&MeasureKind::ShortCommPath) {
            let x = comm_weighted_adjacency(&zeta, &a)?;
            out.insert(MeasureKind::ShortCommPath, tag(shortest_communicability_path_lengths(&x)?));
        }
        if opts.kinds.contains(&MeasureKind::CommDist) {
            out.insert(MeasureKind::CommDist, tag(zeta));
        }
        if opts.kinds.contains(&MeasureKind::Comm) {
            out.insert(MeasureKind::Comm, tag(g.into_measure(MeasureKind::Comm)));
        }
    }
    let mut embedding = None;
    if needs_embedding(&opts.kinds) {
        let emb = hypembed::coalescent_embedding(net, &opts.embedding)?;
        let h = hypembed::hyperbolic_reweight(net, &emb, opts.embedding.zeta_curv);
        let hm = hypembed::hyperbolic_measures(&h)?;
        for m in [hm.hspl, hm.hebc, hm.hcomm] {
            if opts.kinds.contains(&m.kind) {
                out.insert(m.kind, m.with_weighting(Weighting::Weighted));
            }
        }
        embedding = Some(emb);
    }
    Ok(WindowMeasures {
        window_index: w,
        measures: out,
        embedding,
    })
}

pub fn compute_measures(nets: &[WindowNetwork], opts: &MeasureOptions) -> Result<Vec<WindowMeasures>> {
    nets.par_iter().map(|n| window_measures(&n.net, opts)).collect()
}

/// Exponent fitted on all degree sequences of a period at once.
pub fn pooled_gamma(nets: &[WindowNetwork], fallback: f64) -> f64 {
    let degrees: Vec<usize> = nets.iter().flat_map(|n| n.net.degrees()).collect();
    hypembed::fit_power_law_gamma(&degrees).unwrap_or(fallback)
}

/// Embedding options pinned to the period-level exponent.
pub fn with_pooled_gamma(opts: &EmbeddingOptions, nets: &[WindowNetwork]) -> EmbeddingOptions {
    EmbeddingOptions {
        gamma: GammaSource::Fixed(pooled_gamma(nets, opts.fallback_gamma)),
        ..*opts
    }
}

/// Features of one measure and the matching binary adjacency rows, stable
/// windows first.
pub fn classification_data(
    stable: (&[WindowNetwork], &[WindowMeasures]),
    volatile: (&[WindowNetwork], &[WindowMeasures]),
    kind: MeasureKind,
) -> Result<(FeatureDataset, FeatureDataset)> {
    let mut mats = Vec::new();
    let mut adj = Vec::new();
    let mut labels = Vec::new();
    for (nets, ms) in [stable, volatile] {
        for (n, m) in nets.iter().zip(ms) {
            let mm = m
                .measures
                .get(&kind)
                .ok_or_else(|| classifier::ClassifierError::InvalidOption(format!("measure {kind} was not computed")))?;
            mats.push(mm.clone());
            adj.push(MeasureMatrix::new(kind, n.net.binary_adjacency()));
            labels.push(n.period.regime);
        }
    }
    Ok((classifier::vectorize(&mats, &labels)?, classifier::vectorize(&adj, &labels)?))
}

/// Two synthetic periods of the one-factor model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPair {
    pub n_stocks: usize,
    pub n_days: usize,
    pub stable_coupling: f64,
    pub volatile_coupling: f64,
    pub volatile_scale: f64,
    pub seed: u64,
}

impl SyntheticPair {
    pub fn spec(&self, regime: Regime) -> SyntheticSpec {
        let (coupling, task) = match regime {
            Regime::Stable => (self.stable_coupling, 1),
            Regime::Volatile => (self.volatile_coupling, 2),
        };
        let mut s = SyntheticSpec::new(self.n_stocks, self.n_days, regime, coupling, derive_seed(self.seed, task));
        s.volatile_scale = self.volatile_scale;
        s
    }

    pub fn panel(&self, regime: Regime) -> Result<ReturnPanel> {
        let prices = generate_synthetic(&self.spec(regime))?;
        Ok(compute_log_returns(&prices, &TradingCalendar::default())?)
    }
}

/// Everything the classifier needs for one experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub stable: (Vec<WindowNetwork>, Vec<WindowMeasures>),
    pub volatile: (Vec<WindowNetwork>, Vec<WindowMeasures>),
    pub dropped: Vec<String>,
}

impl Experiment {
    pub fn dataset(&self, kind: MeasureKind) -> Result<(FeatureDataset, FeatureDataset)> {
        classification_data(
            (&self.stable.0, &self.stable.1),
            (&self.volatile.0, &self.volatile.1),
            kind,
        )
    }
}

/// Aligns the panels, builds all networks and measures.
pub fn run_experiment(
    stable: &ReturnPanel,
    volatile: &ReturnPanel,
    periods: (&Period, &Period),
    windows: &WindowOptions,
    measures: &MeasureOptions,
    surrogate: Option<u64>,
) -> Result<Experiment> {
    let (s, v, dropped) = align_periods(stable, volatile, windows)?;
    let sn = build_networks(&s, periods.0, windows, surrogate)?;
    let vn = build_networks(&v, periods.1, windows, surrogate)?;
    let sm = compute_measures(&sn, measures)?;
    let vm = compute_measures(&vn, measures)?;
    Ok(Experiment {
        stable: (sn, sm),
        volatile: (vn, vm),
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::PanelMeta;
    use nalgebra::DMatrix;

    fn pair() -> SyntheticPair {
        SyntheticPair {
            n_stocks: 12,
            n_days: 90,
            stable_coupling: 0.2,
            volatile_coupling: 0.8,
            volatile_scale: 2.0,
            seed: 5,
        }
    }

    #[test]
    fn networks_per_window_are_valid() {
        let p = pair();
        let panel = p.panel(Regime::Stable).unwrap();
        let opts = WindowOptions::default();
        let nets = build_networks(&panel, &Period::new("s", Regime::Stable), &opts, None).unwrap();
        assert_eq!(nets.len(), market_data::window_count(panel.n_columns(), 60, 1));
        for n in &nets {
            assert_eq!(n.net.n_edges(), 30);
            assert!(corrnet::planarity_of_edges(12, &n.net.edge_pairs()).planar);
        }
    }

    #[test]
    fn all_measures_for_one_window() {
        let panel = pair().panel(Regime::Volatile).unwrap();
        let nets = build_networks(&panel, &Period::new("v", Regime::Volatile), &WindowOptions::default(), None).unwrap();
        let opts = MeasureOptions {
            kinds: MeasureKind::ALL.into_iter().collect(),
            ..Default::default()
        };
        let m = window_measures(&nets[0].net, &opts).unwrap();
        assert_eq!(m.measures.len(), 8);
        assert!(m.embedding.is_some());
        for (k, mm) in &m.measures {
            assert_eq!(mm.kind, *k);
            assert_eq!(mm.values, mm.values.transpose());
            if k.is_path_like() {
                assert!(mm.values.diagonal().iter().all(|&v| v == 0.0));
            }
        }
        let only = MeasureOptions {
            kinds: [MeasureKind::Comm].into_iter().collect(),
            ..Default::default()
        };
        let c = window_measures(&nets[0].net, &only).unwrap();
        assert_eq!(c.measures.len(), 1);
        assert!(c.embedding.is_none());
    }

    #[test]
    fn surrogate_windows_are_reproducible() {
        let panel = pair().panel(Regime::Stable).unwrap();
        let period = Period::new("s", Regime::Stable);
        let a = build_networks(&panel, &period, &WindowOptions::default(), Some(3)).unwrap();
        let b = build_networks(&panel, &period, &WindowOptions::default(), Some(3)).unwrap();
        let c = build_networks(&panel, &period, &WindowOptions::default(), None).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].net, c[0].net);
    }

    #[test]
    fn align_drops_missing_and_constant_stocks() {
        let dates: Vec<chrono::NaiveDate> = (0..4).map(|d| chrono::NaiveDate::from_ymd_opt(2005, 1, 3 + d).unwrap()).collect();
        let mk = |tickers: &[&str], rows: Vec<f64>| ReturnPanel {
            tickers: tickers.iter().map(|s| s.to_string()).collect(),
            return_dates: dates.clone(),
            returns: DMatrix::from_row_slice(tickers.len(), 4, &rows),
            meta: PanelMeta::default(),
        };
        let s = mk(&["A", "B", "C"], vec![0.1, 0.2, 0.3, 0.1, 0.0, 0.0, 0.0, 0.0, 0.3, 0.1, 0.2, 0.4]);
        let v = mk(&["A", "B", "D"], vec![0.2, 0.1, 0.0, 0.1, 0.3, 0.1, 0.2, 0.0, 0.3, 0.1, 0.2, 0.4]);
        let opts = WindowOptions {
            window_length: 3,
            ..Default::default()
        };
        let (a, b, dropped) = align_periods(&s, &v, &opts).unwrap();
        assert_eq!(a.tickers, vec!["A"]);
        assert_eq!(b.tickers, vec!["A"]);
        assert_eq!(dropped, vec!["B", "C", "D"]);
    }

    #[test]
    fn dataset_layout() {
        let p = pair();
        let e = run_experiment(
            &p.panel(Regime::Stable).unwrap(),
            &p.panel(Regime::Volatile).unwrap(),
            (&Period::new("s", Regime::Stable), &Period::new("v", Regime::Volatile)),
            &WindowOptions::default(),
            &MeasureOptions::default(),
            None,
        )
        .unwrap();
        let (x, a) = e.dataset(MeasureKind::Spl).unwrap();
        assert_eq!(x.n_features(), 66);
        assert_eq!(x.y.iter().filter(|&&l| l == 0).count(), e.stable.0.len());
        assert!(a.x.iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(a.x.row_iter().all(|r| r.sum() == 30.0));
        assert!(e.dataset(MeasureKind::Hspl).is_err());
    }
}
