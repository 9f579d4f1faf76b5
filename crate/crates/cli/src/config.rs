//! TOML pipeline configuration and its JSON echo.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use commnet_core::classifier::{CvOptions, SvmOptions};
use commnet_core::corrnet::EdgeRanking;
use commnet_core::hypembed::{Adjustment, EmbeddingOptions, GammaSource};
use commnet_core::market_data::{CsvSchema, Regime, SyntheticSpec, TradingCalendar};
use commnet_core::netmeasures::{MeasureKind, Weighting};
use commnet_core::pipeline::WindowOptions;
use commnet_core::rng::derive_seed;
use commnet_core::sigtest::ScanOptions;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Task indices under the master seed.
pub mod seeds {
    pub const SYNTHETIC_STABLE: u64 = 1;
    pub const SYNTHETIC_VOLATILE: u64 = 2;
    pub const SIGTEST: u64 = 3;
    pub const CLASSIFY: u64 = 4;
    pub const SURROGATE: u64 = 5;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    /// Default output directory. Not echoed, so artifacts do not depend on
    /// where they are written.
    #[serde(default, skip_serializing)]
    pub out_dir: Option<PathBuf>,
    pub stable: PeriodConfig,
    pub volatile: PeriodConfig,
    #[serde(default)]
    pub calendar: TradingCalendar,
    #[serde(default)]
    pub windows: WindowsConfig,
    #[serde(default)]
    pub measures: MeasuresConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub sigtest: SigtestConfig,
    #[serde(default)]
    pub classify: ClassifyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodConfig {
    pub name: String,
    pub source: SourceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    /// Long-format price file; relative paths resolve against the config file.
    Csv {
        path: PathBuf,
        #[serde(default = "default_date_col")]
        date_column: String,
        #[serde(default = "default_ticker_col")]
        ticker_column: String,
        #[serde(default = "default_close_col")]
        close_column: String,
        #[serde(default)]
        start: Option<NaiveDate>,
        #[serde(default)]
        end: Option<NaiveDate>,
    },
    Synthetic {
        n_stocks: usize,
        n_days: usize,
        coupling: f64,
        #[serde(default = "default_daily_vol")]
        daily_vol: f64,
        #[serde(default = "default_volatile_scale")]
        volatile_scale: f64,
        #[serde(default)]
        start: Option<NaiveDate>,
    },
}

fn default_date_col() -> String {
    "date".into()
}
fn default_ticker_col() -> String {
    "ticker".into()
}
fn default_close_col() -> String {
    "close".into()
}
fn default_daily_vol() -> f64 {
    0.01
}
fn default_volatile_scale() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowsConfig {
    pub length: usize,
    pub step: usize,
    pub ranking: EdgeRanking,
}

impl Default for WindowsConfig {
    fn default() -> Self {
        let w = WindowOptions::default();
        Self {
            length: w.window_length,
            step: w.step,
            ranking: w.ranking,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasuresConfig {
    pub kinds: BTreeSet<MeasureKind>,
    pub weighting: Weighting,
}

impl Default for MeasuresConfig {
    fn default() -> Self {
        Self {
            kinds: [
                MeasureKind::Spl,
                MeasureKind::Ebc,
                MeasureKind::Comm,
                MeasureKind::ShortCommPath,
                MeasureKind::Hspl,
                MeasureKind::Hebc,
                MeasureKind::Hcomm,
            ]
            .into(),
            weighting: Weighting::Weighted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaChoice {
    PerWindow,
    /// One exponent per period, fitted on all its windows' degrees.
    Pooled,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub adjustment: Adjustment,
    pub gamma: GammaChoice,
    pub fallback_gamma: f64,
    pub curvature: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        let e = EmbeddingOptions::default();
        Self {
            adjustment: e.adjustment,
            gamma: GammaChoice::PerWindow,
            fallback_gamma: e.fallback_gamma,
            curvature: e.zeta_curv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SigtestConfig {
    pub kinds: BTreeSet<MeasureKind>,
    pub alpha: f64,
    pub resamples: usize,
    pub benjamini_hochberg: bool,
    pub histogram_bins: usize,
}

impl Default for SigtestConfig {
    fn default() -> Self {
        let s = ScanOptions::default();
        Self {
            kinds: [MeasureKind::Spl, MeasureKind::ShortCommPath].into(),
            alpha: s.alpha,
            resamples: s.n_resamples,
            benjamini_hochberg: s.benjamini_hochberg,
            histogram_bins: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    pub kinds: BTreeSet<MeasureKind>,
    pub splits: usize,
    pub repeats: usize,
    pub keep: usize,
    pub c: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub drop_fraction: f64,
    pub mask_threshold: f64,
    /// Also run the shuffled-returns control when running everything.
    pub surrogate: bool,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        let cv = CvOptions::default();
        Self {
            kinds: [MeasureKind::Comm, MeasureKind::Spl, MeasureKind::Ebc].into(),
            splits: cv.splits,
            repeats: cv.repeats,
            keep: cv.keep,
            c: cv.svm.c,
            tol: cv.svm.tol,
            max_iter: cv.svm.max_iter,
            drop_fraction: cv.drop_fraction,
            mask_threshold: cv.mask_threshold,
            surrogate: false,
        }
    }
}

pub fn is_hyperbolic(kind: MeasureKind) -> bool {
    matches!(kind, MeasureKind::Hspl | MeasureKind::Hebc | MeasureKind::Hcomm)
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The configuration as written into every sidecar.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn from_echo(v: &serde_json::Value) -> Result<Self, CliError> {
        serde_json::from_value(v.clone()).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        for (slot, p) in [("stable", &self.stable), ("volatile", &self.volatile)] {
            if p.name.trim().is_empty() {
                return bad(format!("{slot}.name must not be empty"));
            }
            if let SourceConfig::Synthetic {
                n_stocks,
                n_days,
                coupling,
                daily_vol,
                volatile_scale,
                ..
            } = &p.source
            {
                if *n_stocks < 3 || *n_days < 3 {
                    return bad(format!("{slot}: synthetic source needs n_stocks >= 3 and n_days >= 3"));
                }
                if !(0.0..1.0).contains(coupling) {
                    return bad(format!("{slot}: coupling must lie in [0, 1)"));
                }
                if !(*daily_vol > 0.0 && *volatile_scale > 0.0) {
                    return bad(format!("{slot}: daily_vol and volatile_scale must be positive"));
                }
            }
        }
        if self.windows.length < 2 || self.windows.step < 1 {
            return bad("windows.length must be >= 2 and windows.step >= 1".into());
        }
        if self.measures.kinds.is_empty() {
            return bad("measures.kinds must not be empty".into());
        }
        for (section, kinds) in [("sigtest", &self.sigtest.kinds), ("classify", &self.classify.kinds)] {
            if let Some(k) = kinds.iter().find(|k| !self.measures.kinds.contains(k)) {
                return bad(format!("{section}.kinds contains {k}, which is not in measures.kinds"));
            }
        }
        if !(self.sigtest.alpha > 0.0 && self.sigtest.alpha < 1.0) {
            return bad("sigtest.alpha must lie in (0, 1)".into());
        }
        if self.sigtest.resamples == 0 || self.sigtest.histogram_bins == 0 {
            return bad("sigtest.resamples and sigtest.histogram_bins must be positive".into());
        }
        let c = &self.classify;
        if c.splits < 2 || c.repeats == 0 || c.keep == 0 {
            return bad("classify needs splits >= 2, repeats >= 1, keep >= 1".into());
        }
        if !(c.c > 0.0 && c.tol > 0.0) {
            return bad("classify.c and classify.tol must be positive".into());
        }
        if !(c.drop_fraction > 0.0 && c.drop_fraction <= 1.0) {
            return bad("classify.drop_fraction must lie in (0, 1]".into());
        }
        if !(0.0..1.0).contains(&c.mask_threshold) {
            return bad("classify.mask_threshold must lie in [0, 1)".into());
        }
        let e = &self.embedding;
        if !(e.curvature > 0.0 && e.fallback_gamma > 1.0) {
            return bad("embedding.curvature must be positive and fallback_gamma > 1".into());
        }
        if let GammaChoice::Fixed(g) = e.gamma {
            if !(g > 1.0 && g.is_finite()) {
                return bad("embedding.gamma fixed value must exceed 1".into());
            }
        }
        Ok(())
    }

    pub fn period(&self, regime: Regime) -> &PeriodConfig {
        match regime {
            Regime::Stable => &self.stable,
            Regime::Volatile => &self.volatile,
        }
    }

    pub fn window_options(&self) -> WindowOptions {
        WindowOptions {
            window_length: self.windows.length,
            step: self.windows.step,
            ranking: self.windows.ranking,
        }
    }

    /// Embedding options; `pooled` is the period exponent when configured.
    pub fn embedding_options(&self, pooled: Option<f64>) -> EmbeddingOptions {
        let gamma = match (self.embedding.gamma, pooled) {
            (GammaChoice::Fixed(g), _) => GammaSource::Fixed(g),
            (GammaChoice::Pooled, Some(g)) => GammaSource::Fixed(g),
            _ => GammaSource::PerWindow,
        };
        EmbeddingOptions {
            adjustment: self.embedding.adjustment,
            gamma,
            fallback_gamma: self.embedding.fallback_gamma,
            zeta_curv: self.embedding.curvature,
        }
    }

    pub fn scan_options(&self) -> ScanOptions {
        ScanOptions {
            alpha: self.sigtest.alpha,
            n_resamples: self.sigtest.resamples,
            seed: derive_seed(self.seed, seeds::SIGTEST),
            benjamini_hochberg: self.sigtest.benjamini_hochberg,
        }
    }

    pub fn cv_options(&self) -> CvOptions {
        let c = &self.classify;
        CvOptions {
            splits: c.splits,
            repeats: c.repeats,
            keep: c.keep,
            drop_fraction: c.drop_fraction,
            mask_threshold: c.mask_threshold,
            svm: SvmOptions {
                c: c.c,
                tol: c.tol,
                max_iter: c.max_iter,
            },
            seed: derive_seed(self.seed, seeds::CLASSIFY),
        }
    }

    pub fn surrogate_master(&self) -> u64 {
        derive_seed(self.seed, seeds::SURROGATE)
    }

    pub fn synthetic_spec(&self, regime: Regime) -> Option<SyntheticSpec> {
        let SourceConfig::Synthetic {
            n_stocks,
            n_days,
            coupling,
            daily_vol,
            volatile_scale,
            start,
        } = &self.period(regime).source
        else {
            return None;
        };
        let task = match regime {
            Regime::Stable => seeds::SYNTHETIC_STABLE,
            Regime::Volatile => seeds::SYNTHETIC_VOLATILE,
        };
        let mut spec = SyntheticSpec::new(*n_stocks, *n_days, regime, *coupling, derive_seed(self.seed, task));
        spec.daily_vol = *daily_vol;
        spec.volatile_scale = *volatile_scale;
        if let Some(s) = start {
            spec.start = *s;
        }
        Some(spec)
    }

    /// CSV path and column schema, with the path resolved against `base`.
    pub fn csv_source(&self, regime: Regime, base: &Path) -> Option<(PathBuf, CsvSchema)> {
        let SourceConfig::Csv {
            path,
            date_column,
            ticker_column,
            close_column,
            start,
            end,
        } = &self.period(regime).source
        else {
            return None;
        };
        let schema = CsvSchema {
            date: date_column.clone(),
            ticker: ticker_column.clone(),
            close: close_column.clone(),
            start: *start,
            end: *end,
        };
        Some((base.join(path), schema))
    }

    pub fn needs_embedding(&self) -> bool {
        self.measures.kinds.iter().any(|&k| is_hyperbolic(k))
    }
}
