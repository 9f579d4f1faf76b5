//! One function per subcommand. Each stage reads its inputs from the output
//! directory, writes artifacts through [`Outputs`], and is recorded in the
//! manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use commnet_core::classifier::{self, cross_validate, write_selected_features_csv, CvReport, FeatureDataset, Metrics};
use commnet_core::corrnet::{NetworkSummary, PmfgNetwork};
use commnet_core::hypembed::{self, fit_power_law_gamma};
use commnet_core::market_data::{
    compute_log_returns, generate_synthetic, load_prices, slice_windows, surrogate_shuffle, PanelMeta, Period, Regime,
    ReturnPanel,
};
use commnet_core::netmeasures::{MeasureKind, MeasureMatrix};
use commnet_core::pipeline::{align_periods, build_networks, surrogate_seed, window_measures, MeasureOptions, WindowNetwork};
use commnet_core::rng::derive_seed;
use commnet_core::sigtest::{run_significance_scan, write_results_csv, SignificanceSummary};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{is_hyperbolic, seeds, GammaChoice, PipelineConfig};
use crate::error::CliError;
use crate::manifest::{run_stage, sha256_hex, Outputs, RunManifest, SeedDerivation, StageRun, StageSpec};
use crate::svg::{self, Bar, Histogram};

pub const REGIMES: [Regime; 2] = [Regime::Stable, Regime::Volatile];
const METRICS: [&str; 4] = ["accuracy", "auc", "sensitivity", "specificity"];

pub struct Context {
    pub cfg: PipelineConfig,
    /// Directory relative CSV paths resolve against.
    pub base_dir: PathBuf,
    pub out: PathBuf,
    pub manifest: RunManifest,
    pub quiet: bool,
}

impl Context {
    pub fn new(cfg: PipelineConfig, base_dir: PathBuf, out: PathBuf) -> Result<Self, CliError> {
        std::fs::create_dir_all(&out)?;
        let config_sha = sha256_hex(&serde_json::to_vec(&cfg.echo())?);
        let derivations = seed_derivations(&cfg);
        let manifest = match RunManifest::load(&out)? {
            Some(mut m) => {
                m.seed = cfg.seed;
                m.config_sha256 = config_sha;
                m.seed_derivations = derivations;
                m
            }
            None => RunManifest::new(cfg.seed, config_sha, derivations),
        };
        Ok(Self {
            cfg,
            base_dir,
            out,
            manifest,
            quiet: false,
        })
    }

    fn sidecar(&self, stage: &str, body: Value) -> Value {
        let mut v = json!({ "stage": stage });
        if let (Value::Object(dst), Value::Object(src)) = (&mut v, body) {
            dst.extend(src);
        }
        v["config"] = self.cfg.echo();
        v
    }

    fn period(&self, regime: Regime) -> Period {
        Period::new(self.cfg.period(regime).name.clone(), regime)
    }

    fn run(
        &mut self,
        spec: StageSpec<'_>,
        body: impl FnOnce(&Self, &mut Outputs) -> Result<(), CliError>,
    ) -> Result<StageRun, CliError> {
        let name = spec.name.to_string();
        let mut manifest = std::mem::replace(&mut self.manifest, RunManifest::new(0, String::new(), vec![]));
        let res = run_stage(&self.out, &mut manifest, spec, |o| body(self, o));
        self.manifest = manifest;
        let run = res?;
        if !self.quiet {
            let what = if run.cached { "cached" } else { "done" };
            eprintln!("{name}: {what} in {:.0} ms", run.wall_ms);
        }
        Ok(run)
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, rel: &str, hint: &str) -> Result<T, CliError> {
        let p = self.out.join(rel);
        let f = File::open(&p).map_err(|_| CliError::Dependency(format!("{rel} not found; run `commnet {hint}` first")))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }
}

fn seed_derivations(cfg: &PipelineConfig) -> Vec<SeedDerivation> {
    let d = |task: &str, idx: u64| SeedDerivation {
        task: task.into(),
        rule: format!("derive_seed(master, {idx})"),
        value: derive_seed(cfg.seed, idx),
    };
    vec![
        d("synthetic_stable", seeds::SYNTHETIC_STABLE),
        d("synthetic_volatile", seeds::SYNTHETIC_VOLATILE),
        d("sigtest_permutations", seeds::SIGTEST),
        d("cv_folds", seeds::CLASSIFY),
        d("surrogate_shuffle", seeds::SURROGATE),
    ]
}

fn window_file(w: usize, ext: &str) -> String {
    format!("window_{w:04}.{ext}")
}

fn measure_dir(regime: Regime, kind: MeasureKind) -> String {
    format!("measures/{regime}/{}", kind.name())
}

fn producer(kind: MeasureKind) -> &'static str {
    if is_hyperbolic(kind) {
        "embed"
    } else {
        "measures"
    }
}

fn deps_for(kinds: impl IntoIterator<Item = MeasureKind>, base: &[&str]) -> Vec<String> {
    let mut d: Vec<String> = base.iter().map(|s| s.to_string()).collect();
    for k in kinds {
        let p = producer(k).to_string();
        if !d.contains(&p) {
            d.push(p);
        }
    }
    d
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PanelSidecar {
    period: Period,
    n_stocks: usize,
    n_columns: usize,
    windows: usize,
    tickers: Vec<String>,
    meta: PanelMeta,
}

fn load_raw_panel(ctx: &Context, regime: Regime) -> Result<ReturnPanel, CliError> {
    let prices = if let Some(spec) = ctx.cfg.synthetic_spec(regime) {
        generate_synthetic(&spec)?
    } else {
        let (path, schema) = ctx.cfg.csv_source(regime, &ctx.base_dir).expect("csv or synthetic source");
        load_prices(&path, &schema).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
    };
    Ok(compute_log_returns(&prices, &ctx.cfg.calendar)?)
}

pub fn ingest(ctx: &mut Context) -> Result<StageRun, CliError> {
    let external = REGIMES
        .iter()
        .filter_map(|&r| ctx.cfg.csv_source(r, &ctx.base_dir).map(|(p, _)| p))
        .collect();
    let spec = StageSpec {
        name: "ingest",
        depends_on: vec![],
        external_inputs: external,
        owned_dirs: vec!["panels".into()],
    };
    ctx.run(spec, |ctx, out| {
        let raw_s = load_raw_panel(ctx, Regime::Stable)?;
        let raw_v = load_raw_panel(ctx, Regime::Volatile)?;
        let wo = ctx.cfg.window_options();
        let (s, v, dropped) = align_periods(&raw_s, &raw_v, &wo)?;
        let mut report = csv::Writer::from_writer(Vec::new());
        report.write_record(["ticker", "period", "reason"])?;
        for (regime, raw) in [(Regime::Stable, &raw_s), (Regime::Volatile, &raw_v)] {
            for t in &raw.meta.dropped_tickers {
                report.write_record([t.as_str(), &regime.to_string(), "incomplete_history"])?;
            }
        }
        for t in &dropped {
            let in_both = raw_s.tickers.contains(t) && raw_v.tickers.contains(t);
            let reason = if in_both { "zero_variance_window" } else { "not_in_both_periods" };
            report.write_record([t.as_str(), "both", reason])?;
        }
        out.write("panels/drop_report.csv", &report.into_inner().map_err(|e| CliError::Io(e.to_string()))?)?;
        for (regime, panel) in [(Regime::Stable, &s), (Regime::Volatile, &v)] {
            if panel.n_stocks() < 3 {
                return Err(CliError::Data(format!(
                    "{regime} panel keeps {} stocks after alignment; at least 3 are needed",
                    panel.n_stocks()
                )));
            }
            out.write_with(&format!("panels/{regime}.csv"), |b| panel.write_csv(b))?;
            let side = PanelSidecar {
                period: ctx.period(regime),
                n_stocks: panel.n_stocks(),
                n_columns: panel.n_columns(),
                windows: commnet_core::market_data::window_count(panel.n_columns(), wo.window_length, wo.step),
                tickers: panel.tickers.clone(),
                meta: panel.meta.clone(),
            };
            out.write_json(&format!("panels/{regime}.json"), &ctx.sidecar("ingest", serde_json::to_value(side)?))?;
        }
        Ok(())
    })
}

pub fn load_panel(ctx: &Context, regime: Regime) -> Result<ReturnPanel, CliError> {
    let side: PanelSidecar = ctx.read_json(&format!("panels/{regime}.json"), "ingest")?;
    let p = ctx.out.join(format!("panels/{regime}.csv"));
    let f = File::open(&p).map_err(|_| CliError::Dependency(format!("{} not found; run `commnet ingest` first", p.display())))?;
    Ok(ReturnPanel::read_csv(BufReader::new(f), side.meta)?)
}

// -------------------------------------------------------------- networks

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworksSidecar {
    pub period: Period,
    pub n_nodes: usize,
    pub tickers: Vec<String>,
    pub windows: Vec<usize>,
    pub edges_per_window: usize,
}

fn write_summary(rows: &[(usize, NetworkSummary)]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["window", "avg_weighted_degree", "weighted_diameter", "clustering_coefficient"])?;
    for (i, s) in rows {
        w.write_record([
            i.to_string(),
            s.avg_weighted_degree.to_string(),
            s.weighted_diameter.to_string(),
            s.clustering_coefficient.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

pub fn networks(ctx: &mut Context) -> Result<StageRun, CliError> {
    let spec = StageSpec {
        name: "networks",
        depends_on: vec!["ingest".into()],
        external_inputs: vec![],
        owned_dirs: vec!["networks".into()],
    };
    ctx.run(spec, |ctx, out| {
        for regime in REGIMES {
            let panel = load_panel(ctx, regime)?;
            let nets = build_networks(&panel, &ctx.period(regime), &ctx.cfg.window_options(), None)?;
            let dir = format!("networks/{regime}");
            for n in &nets {
                out.write_with(&format!("{dir}/{}", window_file(n.net.window_index, "csv")), |b| n.net.write_edges_csv(b))?;
            }
            let rows: Vec<(usize, NetworkSummary)> = nets.iter().map(|n| (n.net.window_index, n.summary)).collect();
            out.write(&format!("{dir}/summary.csv"), &write_summary(&rows)?)?;
            let side = NetworksSidecar {
                period: ctx.period(regime),
                n_nodes: panel.n_stocks(),
                tickers: panel.tickers.clone(),
                windows: nets.iter().map(|n| n.net.window_index).collect(),
                edges_per_window: nets.first().map_or(0, |n| n.net.n_edges()),
            };
            out.write_json(&format!("{dir}/networks.json"), &ctx.sidecar("networks", serde_json::to_value(side)?))?;
        }
        Ok(())
    })
}

pub fn load_networks(ctx: &Context, regime: Regime) -> Result<(NetworksSidecar, Vec<PmfgNetwork>), CliError> {
    let side: NetworksSidecar = ctx.read_json(&format!("networks/{regime}/networks.json"), "networks")?;
    let nets = side
        .windows
        .par_iter()
        .map(|&w| {
            let p = ctx.out.join(format!("networks/{regime}/{}", window_file(w, "csv")));
            let f = File::open(&p)
                .map_err(|_| CliError::Dependency(format!("{} not found; run `commnet networks` first", p.display())))?;
            Ok(PmfgNetwork::read_edges_csv(BufReader::new(f), side.n_nodes, w)?)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok((side, nets))
}

// -------------------------------------------------------- measures / embed

fn write_matrix(ctx: &Context, out: &mut Outputs, stage: &str, period: &Period, m: &MeasureMatrix) -> Result<(), CliError> {
    let dir = measure_dir(period.regime, m.kind);
    out.write_with(&format!("{dir}/{}", window_file(m.window_index, "csv")), |b| m.write_csv(b))?;
    let side = json!({
        "kind": m.kind,
        "window_index": m.window_index,
        "weighting": m.weighting,
        "period": period,
    });
    out.write_json(&format!("{dir}/{}", window_file(m.window_index, "json")), &ctx.sidecar(stage, side))
}

pub fn measures(ctx: &mut Context) -> Result<StageRun, CliError> {
    let kinds: std::collections::BTreeSet<MeasureKind> =
        ctx.cfg.measures.kinds.iter().copied().filter(|&k| !is_hyperbolic(k)).collect();
    let owned = REGIMES
        .iter()
        .flat_map(|&r| MeasureKind::ALL.into_iter().filter(|&k| !is_hyperbolic(k)).map(move |k| measure_dir(r, k)))
        .collect();
    let spec = StageSpec {
        name: "measures",
        depends_on: vec!["networks".into()],
        external_inputs: vec![],
        owned_dirs: owned,
    };
    ctx.run(spec, |ctx, out| {
        let opts = MeasureOptions {
            kinds: kinds.clone(),
            weighting: ctx.cfg.measures.weighting,
            embedding: ctx.cfg.embedding_options(None),
        };
        let mut windows = BTreeMap::new();
        for regime in REGIMES {
            let (_, nets) = load_networks(ctx, regime)?;
            let period = ctx.period(regime);
            let results = nets.par_iter().map(|n| window_measures(n, &opts)).collect::<Result<Vec<_>, _>>()?;
            for wm in &results {
                for m in wm.measures.values() {
                    write_matrix(ctx, out, "measures", &period, m)?;
                }
            }
            windows.insert(regime.to_string(), nets.len());
        }
        let body = json!({ "kinds": kinds, "weighting": ctx.cfg.measures.weighting, "windows": windows });
        out.write_json("measures/index.json", &ctx.sidecar("measures", body))
    })
}

pub fn embed(ctx: &mut Context) -> Result<StageRun, CliError> {
    let kinds: Vec<MeasureKind> = ctx.cfg.measures.kinds.iter().copied().filter(|&k| is_hyperbolic(k)).collect();
    let mut owned: Vec<String> = vec!["embeddings".into()];
    owned.extend(
        REGIMES
            .iter()
            .flat_map(|&r| MeasureKind::ALL.into_iter().filter(|&k| is_hyperbolic(k)).map(move |k| measure_dir(r, k))),
    );
    let spec = StageSpec {
        name: "embed",
        depends_on: vec!["networks".into()],
        external_inputs: vec![],
        owned_dirs: owned,
    };
    ctx.run(spec, |ctx, out| {
        let mut gammas = BTreeMap::new();
        for regime in REGIMES {
            let (_, nets) = load_networks(ctx, regime)?;
            let period = ctx.period(regime);
            let pooled = match ctx.cfg.embedding.gamma {
                GammaChoice::Pooled => {
                    let degrees: Vec<usize> = nets.iter().flat_map(|n| n.degrees()).collect();
                    Some(fit_power_law_gamma(&degrees).unwrap_or(ctx.cfg.embedding.fallback_gamma))
                }
                _ => None,
            };
            gammas.insert(regime.to_string(), pooled);
            let opts = ctx.cfg.embedding_options(pooled);
            let results = nets
                .par_iter()
                .map(|n| {
                    let emb = hypembed::coalescent_embedding(n, &opts)?;
                    let h = hypembed::hyperbolic_reweight(n, &emb, opts.zeta_curv);
                    let hm = hypembed::hyperbolic_measures(&h)?;
                    Ok((emb, hm))
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            let mut summary = csv::Writer::from_writer(Vec::new());
            summary.write_record(["window", "gamma", "beta", "degenerate", "gamma_fallback", "perturbed"])?;
            for (n, (emb, hm)) in nets.iter().zip(&results) {
                let w = n.window_index;
                let dir = format!("embeddings/{regime}");
                out.write_with(&format!("{dir}/{}", window_file(w, "csv")), |b| emb.write_csv(b))?;
                let side = json!({ "window_index": w, "period": period, "embedding": emb.meta() });
                out.write_json(&format!("{dir}/{}", window_file(w, "json")), &ctx.sidecar("embed", side))?;
                summary.write_record([
                    w.to_string(),
                    emb.gamma.to_string(),
                    emb.beta.to_string(),
                    emb.degenerate.to_string(),
                    emb.gamma_fallback.to_string(),
                    emb.perturbed.len().to_string(),
                ])?;
                for m in [&hm.hspl, &hm.hebc, &hm.hcomm] {
                    if kinds.contains(&m.kind) {
                        write_matrix(ctx, out, "embed", &period, &m.clone().with_window(w))?;
                    }
                }
            }
            out.write(
                &format!("embeddings/{regime}/summary.csv"),
                &summary.into_inner().map_err(|e| CliError::Io(e.to_string()))?,
            )?;
        }
        let body = json!({ "kinds": kinds, "pooled_gamma": gammas });
        out.write_json("embeddings/index.json", &ctx.sidecar("embed", body))
    })
}

pub fn load_measures(ctx: &Context, regime: Regime, kind: MeasureKind, windows: &[usize]) -> Result<Vec<MeasureMatrix>, CliError> {
    windows
        .par_iter()
        .map(|&w| {
            let p = ctx.out.join(format!("{}/{}", measure_dir(regime, kind), window_file(w, "csv")));
            let f = File::open(&p).map_err(|_| {
                CliError::Dependency(format!(
                    "{kind} matrices for the {regime} period not found; run `commnet {}` first",
                    producer(kind)
                ))
            })?;
            let m = MeasureMatrix::read_csv(BufReader::new(f), kind)?;
            Ok(m.with_window(w).with_weighting(ctx.cfg.measures.weighting))
        })
        .collect()
}

// --------------------------------------------------------------- sigtest

fn scale_group(kind: MeasureKind) -> &'static str {
    match kind {
        MeasureKind::Spl | MeasureKind::ShortCommPath | MeasureKind::Hspl | MeasureKind::CommDist => "length",
        other => other.name(),
    }
}

fn mean_matrix(ms: &[MeasureMatrix]) -> DMatrix<f64> {
    let n = ms[0].n();
    let mut acc = DMatrix::zeros(n, n);
    for m in ms {
        acc += &m.values;
    }
    acc / ms.len() as f64
}

pub fn sigtest(ctx: &mut Context) -> Result<StageRun, CliError> {
    let kinds: Vec<MeasureKind> = ctx.cfg.sigtest.kinds.iter().copied().collect();
    let spec = StageSpec {
        name: "sigtest",
        depends_on: deps_for(kinds.clone(), &["networks"]),
        external_inputs: vec![],
        owned_dirs: vec!["sigtest".into()],
    };
    ctx.run(spec, |ctx, out| {
        let (s_side, _) = load_networks_meta(ctx, Regime::Stable)?;
        let (v_side, _) = load_networks_meta(ctx, Regime::Volatile)?;
        let opts = ctx.cfg.scan_options();
        let mut diffs = BTreeMap::new();
        let mut summaries = BTreeMap::new();
        for &kind in &kinds {
            let s = load_measures(ctx, Regime::Stable, kind, &s_side.windows)?;
            let v = load_measures(ctx, Regime::Volatile, kind, &v_side.windows)?;
            let scan = run_significance_scan(&s, &v, &opts)?;
            let dir = format!("sigtest/{}", kind.name());
            out.write_with(&format!("{dir}/pairs.csv"), |b| write_results_csv(&scan.pairs, b))?;
            let (ms, mv) = (mean_matrix(&s), mean_matrix(&v));
            let diff = &ms - &mv;
            out.write_with(&format!("{dir}/difference.csv"), |b| MeasureMatrix::new(kind, diff.clone()).write_csv(b))?;
            let sig: Vec<(usize, usize)> = scan.pairs.iter().filter(|p| p.significant).map(|p| (p.i, p.j)).collect();
            let sv: Vec<f64> = sig.iter().map(|&(i, j)| ms[(i, j)]).collect();
            let vv: Vec<f64> = sig.iter().map(|&(i, j)| mv[(i, j)]).collect();
            let hist = Histogram::new(&[&sv, &vv], ctx.cfg.sigtest.histogram_bins);
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["bin", "lo", "hi", "stable", "volatile"])?;
            for b in 0..hist.bins() {
                let (lo, hi) = hist.edges(b);
                w.write_record([
                    b.to_string(),
                    lo.to_string(),
                    hi.to_string(),
                    hist.counts[0][b].to_string(),
                    hist.counts[1][b].to_string(),
                ])?;
            }
            out.write(&format!("{dir}/significant_histogram.csv"), &w.into_inner().map_err(|e| CliError::Io(e.to_string()))?)?;
            let title = format!("{kind}: per-pair averages over significant pairs");
            out.write(&format!("{dir}/significant_histogram.svg"), hist.svg(&title, &["stable", "volatile"]).as_bytes())?;
            out.write_json(&format!("{dir}/summary.json"), &ctx.sidecar("sigtest", json!({ "summary": scan.summary })))?;
            summaries.insert(kind, scan.summary);
            diffs.insert(kind, diff);
        }
        let mut scales: BTreeMap<&str, f64> = BTreeMap::new();
        for (k, d) in &diffs {
            let m = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let e = scales.entry(scale_group(*k)).or_insert(0.0);
            *e = e.max(m);
        }
        let mut kind_scales = BTreeMap::new();
        for (k, d) in &diffs {
            let scale = scales[scale_group(*k)];
            kind_scales.insert(k.name(), scale);
            let title = format!("{k}: stable mean - volatile mean");
            out.write(&format!("sigtest/{}/heatmap.svg", k.name()), svg::heatmap(&title, d, scale).as_bytes())?;
        }
        let body = json!({ "kinds": kinds, "heatmap_scale": kind_scales, "summaries": summaries.values().collect::<Vec<_>>() });
        out.write_json("sigtest/index.json", &ctx.sidecar("sigtest", body))
    })
}

fn load_networks_meta(ctx: &Context, regime: Regime) -> Result<(NetworksSidecar, ()), CliError> {
    Ok((ctx.read_json(&format!("networks/{regime}/networks.json"), "networks")?, ()))
}

// -------------------------------------------------------------- classify

fn datasets(
    mats: [Vec<MeasureMatrix>; 2],
    nets: [&[PmfgNetwork]; 2],
    kind: MeasureKind,
) -> Result<(FeatureDataset, FeatureDataset), CliError> {
    let mut labels = Vec::new();
    let mut adj = Vec::new();
    let mut all = Vec::new();
    for (regime, (ms, ns)) in REGIMES.into_iter().zip(mats.into_iter().zip(nets)) {
        for (m, n) in ms.into_iter().zip(ns) {
            labels.push(regime);
            adj.push(MeasureMatrix::new(kind, n.binary_adjacency()));
            all.push(m);
        }
    }
    Ok((classifier::vectorize(&all, &labels)?, classifier::vectorize(&adj, &labels)?))
}

fn metrics_csv(reports: &[CvReport]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["measure", "metric", "mean", "std_error"])?;
    for r in reports {
        for (k, name) in METRICS.iter().enumerate() {
            w.write_record([r.kind.name(), name, &r.mean.as_array()[k].to_string(), &r.std_error.as_array()[k].to_string()])?;
        }
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

fn metrics_svg(title: &str, reports: &[CvReport]) -> String {
    let groups: Vec<String> = reports.iter().map(|r| r.kind.name().to_string()).collect();
    let series: Vec<String> = METRICS.iter().map(|s| s.to_string()).collect();
    let bars: Vec<Bar> = reports
        .iter()
        .flat_map(|r| {
            METRICS.iter().enumerate().map(move |(k, m)| Bar {
                group: r.kind.name().to_string(),
                series: m.to_string(),
                mean: r.mean.as_array()[k],
                err: r.std_error.as_array()[k],
            })
        })
        .collect();
    svg::grouped_bars(title, &groups, &series, &bars)
}

fn write_cv(ctx: &Context, out: &mut Outputs, stage: &str, report: &CvReport) -> Result<(), CliError> {
    let dir = format!("{stage}/{}", report.kind.name());
    out.write_json(&format!("{dir}/cv_report.json"), &ctx.sidecar(stage, json!({ "report": report })))?;
    out.write_with(&format!("{dir}/cv_summary.csv"), |b| report.write_summary_csv(b))?;
    out.write_with(&format!("{dir}/selected_features.csv"), |b| write_selected_features_csv(report, b))
}

pub fn classify(ctx: &mut Context) -> Result<StageRun, CliError> {
    let kinds: Vec<MeasureKind> = ctx.cfg.classify.kinds.iter().copied().collect();
    let spec = StageSpec {
        name: "classify",
        depends_on: deps_for(kinds.clone(), &["networks"]),
        external_inputs: vec![],
        owned_dirs: vec!["classify".into()],
    };
    ctx.run(spec, |ctx, out| {
        let (s_side, s_nets) = load_networks(ctx, Regime::Stable)?;
        let (v_side, v_nets) = load_networks(ctx, Regime::Volatile)?;
        let opts = ctx.cfg.cv_options();
        let mut reports = Vec::new();
        for &kind in &kinds {
            let mats = [
                load_measures(ctx, Regime::Stable, kind, &s_side.windows)?,
                load_measures(ctx, Regime::Volatile, kind, &v_side.windows)?,
            ];
            let (data, adj) = datasets(mats, [&s_nets, &v_nets], kind)?;
            let report = cross_validate(&data, &adj, &opts)?;
            write_cv(ctx, out, "classify", &report)?;
            reports.push(report);
        }
        out.write("classify/metrics.csv", &metrics_csv(&reports)?)?;
        out.write("classify/metrics.svg", metrics_svg("Classification by topology measure", &reports).as_bytes())?;
        let leakage: BTreeMap<&str, bool> = reports.iter().map(|r| (r.kind.name(), r.leakage_free())).collect();
        let means: BTreeMap<&str, Metrics> = reports.iter().map(|r| (r.kind.name(), r.mean)).collect();
        out.write_json(
            "classify/index.json",
            &ctx.sidecar("classify", json!({ "kinds": kinds, "leakage_free": leakage, "mean": means })),
        )
    })
}

// ------------------------------------------------------------- surrogate

fn row_multisets_match(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    a.shape() == b.shape()
        && (0..a.nrows()).all(|i| {
            let sorted = |m: &DMatrix<f64>| {
                let mut v: Vec<u64> = m.row(i).iter().map(|x| x.to_bits()).collect();
                v.sort_unstable();
                v
            };
            sorted(a) == sorted(b)
        })
}

pub fn surrogate(ctx: &mut Context) -> Result<StageRun, CliError> {
    let kinds: Vec<MeasureKind> = ctx.cfg.classify.kinds.iter().copied().collect();
    let spec = StageSpec {
        name: "surrogate",
        depends_on: vec!["ingest".into(), "classify".into()],
        external_inputs: vec![],
        owned_dirs: vec!["surrogate".into()],
    };
    ctx.run(spec, |ctx, out| {
        let master = ctx.cfg.surrogate_master();
        let wo = ctx.cfg.window_options();
        let mut nets: Vec<Vec<WindowNetwork>> = Vec::new();
        let mut measures = Vec::new();
        let mut checked = (0usize, 0usize, true);
        for regime in REGIMES {
            let panel = load_panel(ctx, regime)?;
            let period = ctx.period(regime);
            for s in slice_windows(&panel, wo.window_length, wo.step, &period)? {
                let sh = surrogate_shuffle(&s, surrogate_seed(master, regime, s.window_index));
                checked.0 += 1;
                checked.1 += s.returns.nrows();
                checked.2 &= row_multisets_match(&s.returns, &sh.returns);
            }
            let ns = build_networks(&panel, &period, &wo, Some(master))?;
            let pooled = match ctx.cfg.embedding.gamma {
                GammaChoice::Pooled => {
                    let degrees: Vec<usize> = ns.iter().flat_map(|n| n.net.degrees()).collect();
                    Some(fit_power_law_gamma(&degrees).unwrap_or(ctx.cfg.embedding.fallback_gamma))
                }
                _ => None,
            };
            let opts = MeasureOptions {
                kinds: kinds.iter().copied().collect(),
                weighting: ctx.cfg.measures.weighting,
                embedding: ctx.cfg.embedding_options(pooled),
            };
            measures.push(commnet_core::pipeline::compute_measures(&ns, &opts)?);
            nets.push(ns);
        }
        if !checked.2 {
            return Err(CliError::Numeric("surrogate shuffle altered a return multiset".into()));
        }
        out.write_json(
            "surrogate/preservation.json",
            &ctx.sidecar(
                "surrogate",
                json!({ "windows_checked": checked.0, "rows_checked": checked.1, "multisets_preserved": checked.2 }),
            ),
        )?;
        let opts = ctx.cfg.cv_options();
        let plain: [Vec<PmfgNetwork>; 2] = [
            nets[0].iter().map(|n| n.net.clone()).collect(),
            nets[1].iter().map(|n| n.net.clone()).collect(),
        ];
        let mut reports = Vec::new();
        for &kind in &kinds {
            let pick = |k: usize| -> Vec<MeasureMatrix> { measures[k].iter().map(|wm| wm.measures[&kind].clone()).collect() };
            let (data, adj) = datasets([pick(0), pick(1)], [&plain[0], &plain[1]], kind)?;
            let report = cross_validate(&data, &adj, &opts)?;
            write_cv(ctx, out, "surrogate", &report)?;
            reports.push(report);
        }
        out.write("surrogate/metrics.csv", &metrics_csv(&reports)?)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["measure", "metric", "original_mean", "original_std_error", "surrogate_mean", "surrogate_std_error"])?;
        let mut bars = Vec::new();
        for r in &reports {
            let orig: Value = ctx.read_json(&format!("classify/{}/cv_report.json", r.kind.name()), "classify")?;
            let orig: CvReport = serde_json::from_value(orig["report"].clone())?;
            for (k, m) in METRICS.iter().enumerate() {
                let (om, os) = (orig.mean.as_array()[k], orig.std_error.as_array()[k]);
                let (sm, ss) = (r.mean.as_array()[k], r.std_error.as_array()[k]);
                w.write_record([r.kind.name(), m, &om.to_string(), &os.to_string(), &sm.to_string(), &ss.to_string()])?;
                if k < 2 {
                    bars.push(Bar { group: r.kind.name().into(), series: format!("original {m}"), mean: om, err: os });
                    bars.push(Bar { group: r.kind.name().into(), series: format!("surrogate {m}"), mean: sm, err: ss });
                }
            }
        }
        out.write("surrogate/contrast.csv", &w.into_inner().map_err(|e| CliError::Io(e.to_string()))?)?;
        let groups: Vec<String> = reports.iter().map(|r| r.kind.name().to_string()).collect();
        let series: Vec<String> = ["original accuracy", "surrogate accuracy", "original auc", "surrogate auc"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        out.write(
            "surrogate/contrast.svg",
            svg::grouped_bars("Original versus shuffled-returns surrogate", &groups, &series, &bars).as_bytes(),
        )
    })
}

// ---------------------------------------------------------------- report

fn read_summary(path: &Path) -> Result<Vec<NetworkSummary>, CliError> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|_| CliError::Dependency(format!("{} not found; run `commnet networks` first", path.display())))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |k: usize| -> Result<f64, CliError> {
            rec.get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CliError::Data(format!("{}: bad summary row", path.display())))
        };
        out.push(NetworkSummary {
            avg_weighted_degree: f(1)?,
            weighted_diameter: f(2)?,
            clustering_coefficient: f(3)?,
        });
    }
    Ok(out)
}

pub fn report(ctx: &mut Context) -> Result<StageRun, CliError> {
    let mut deps = vec!["networks".to_string()];
    for s in ["sigtest", "classify", "surrogate"] {
        if ctx.manifest.stage(s).is_some() {
            deps.push(s.into());
        }
    }
    let problems: Vec<String> = ctx
        .manifest
        .verify(&ctx.out)
        .into_iter()
        .filter(|p| !p.starts_with("report/") && !p.starts_with("stage report"))
        .collect();
    if !problems.is_empty() {
        return Err(CliError::Data(format!("manifest does not validate: {}", problems.join("; "))));
    }
    let spec = StageSpec {
        name: "report",
        depends_on: deps.clone(),
        external_inputs: vec![],
        owned_dirs: vec!["report".into()],
    };
    ctx.run(spec, |ctx, out| {
        let stable = read_summary(&ctx.out.join("networks/stable/summary.csv"))?;
        let volatile = read_summary(&ctx.out.join("networks/volatile/summary.csv"))?;
        type Stat = (&'static str, fn(&NetworkSummary) -> f64);
        let stats: [Stat; 3] = [
            ("avg_weighted_degree", |s| s.avg_weighted_degree),
            ("weighted_diameter", |s| s.weighted_diameter),
            ("clustering_coefficient", |s| s.clustering_coefficient),
        ];
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["stat", "bin", "lo", "hi", "stable", "volatile"])?;
        let mut md = String::from("# Run report\n\n");
        md.push_str(&format!(
            "Periods: stable `{}`, volatile `{}`. Master seed {}.\n\n## Network summaries\n\n| statistic | stable mean | volatile mean |\n|---|---|---|\n",
            ctx.cfg.stable.name, ctx.cfg.volatile.name, ctx.cfg.seed
        ));
        let mut stat_means = BTreeMap::new();
        for (name, f) in stats {
            let a: Vec<f64> = stable.iter().map(f).collect();
            let b: Vec<f64> = volatile.iter().map(f).collect();
            let hist = Histogram::new(&[&a, &b], 15);
            for k in 0..hist.bins() {
                let (lo, hi) = hist.edges(k);
                w.write_record([name, &k.to_string(), &lo.to_string(), &hi.to_string(), &hist.counts[0][k].to_string(), &hist.counts[1][k].to_string()])?;
            }
            out.write(&format!("report/network_{name}.svg"), hist.svg(name, &["stable", "volatile"]).as_bytes())?;
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
            md.push_str(&format!("| {name} | {:.6} | {:.6} |\n", mean(&a), mean(&b)));
            stat_means.insert(name, (mean(&a), mean(&b)));
        }
        out.write("report/network_histograms.csv", &w.into_inner().map_err(|e| CliError::Io(e.to_string()))?)?;
        let mut body = json!({ "network_means": stat_means, "stages": deps });
        if deps.iter().any(|d| d == "sigtest") {
            let idx: Value = ctx.read_json("sigtest/index.json", "sigtest")?;
            let sums: Vec<SignificanceSummary> = serde_json::from_value(idx["summaries"].clone())?;
            md.push_str("\n## Significance\n\n| measure | significant | fraction | decrease | increase | Wilcoxon p |\n|---|---|---|---|---|---|\n");
            for s in &sums {
                md.push_str(&format!(
                    "| {} | {}/{} | {:.4} | {} | {} | {:.3e} |\n",
                    s.kind, s.significant_pairs, s.total_pairs, s.significant_fraction, s.decrease_in_volatile, s.increase_in_volatile, s.wilcoxon_p
                ));
            }
            body["sigtest"] = serde_json::to_value(&sums)?;
        }
        for stage in ["classify", "surrogate"] {
            if !deps.iter().any(|d| d == stage) {
                continue;
            }
            let mut rows = BTreeMap::new();
            md.push_str(&format!("\n## {stage}\n\n| measure | accuracy | auc | sensitivity | specificity |\n|---|---|---|---|---|\n"));
            for k in &ctx.cfg.classify.kinds {
                let v: Value = ctx.read_json(&format!("{stage}/{}/cv_report.json", k.name()), stage)?;
                let r: CvReport = serde_json::from_value(v["report"].clone())?;
                let cell = |i: usize| format!("{:.3} ± {:.3}", r.mean.as_array()[i], r.std_error.as_array()[i]);
                md.push_str(&format!("| {k} | {} | {} | {} | {} |\n", cell(0), cell(1), cell(2), cell(3)));
                rows.insert(k.name(), json!({ "mean": r.mean, "std_error": r.std_error, "leakage_free": r.leakage_free() }));
            }
            body[stage] = serde_json::to_value(rows)?;
        }
        out.write("report/report.md", md.as_bytes())?;
        out.write_json("report/report.json", &ctx.sidecar("report", body))
    })
}

// --------------------------------------------------------------- run-all

pub fn run_all(ctx: &mut Context) -> Result<Vec<(&'static str, StageRun)>, CliError> {
    let mut runs = vec![("ingest", ingest(ctx)?), ("networks", networks(ctx)?), ("measures", measures(ctx)?)];
    if ctx.cfg.needs_embedding() {
        runs.push(("embed", embed(ctx)?));
    }
    if !ctx.cfg.sigtest.kinds.is_empty() {
        runs.push(("sigtest", sigtest(ctx)?));
    }
    if !ctx.cfg.classify.kinds.is_empty() {
        runs.push(("classify", classify(ctx)?));
        if ctx.cfg.classify.surrogate {
            runs.push(("surrogate", surrogate(ctx)?));
        }
    }
    runs.push(("report", report(ctx)?));
    Ok(runs)
}
