//! Price tables, gap-filtered log returns, rolling windows, synthetic and
//! surrogate data.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::derive_rng;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    Parse { row: u64, message: String },
    #[error("duplicate row for ticker {ticker} on {date}")]
    DuplicateRow { ticker: String, date: NaiveDate },
    #[error("no ticker has a complete price history ({dropped} dropped)")]
    NoSurvivingTickers { dropped: usize },
    #[error("need at least 2 dates, got {0}")]
    TooFewDates(usize),
    #[error("non-positive price for {ticker} on {date}")]
    NonPositivePrice { ticker: String, date: NaiveDate },
    #[error("invalid price table: {0}")]
    InvalidTable(String),
    #[error("window length must be at least 2, got {0}")]
    WindowTooShort(usize),
    #[error("step must be at least 1")]
    ZeroStep,
    #[error("panel has {columns} return columns, fewer than the window length {window}")]
    NotEnoughColumns { columns: usize, window: usize },
    #[error("invalid synthetic spec: {0}")]
    InvalidSynthetic(String),
}

/// Market condition of a period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Stable,
    Volatile,
}

impl Regime {
    /// Class label used by the classifier: stable = 0, volatile = 1.
    pub fn label(self) -> u8 {
        match self {
            Regime::Stable => 0,
            Regime::Volatile => 1,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::Stable => f.write_str("stable"),
            Regime::Volatile => f.write_str("volatile"),
        }
    }
}

/// A named period (for example a calendar year) and its regime label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    pub name: String,
    pub regime: Regime,
}

impl Period {
    pub fn new(name: impl Into<String>, regime: Regime) -> Self {
        Self {
            name: name.into(),
            regime,
        }
    }
}

/// Column names of the input CSV and an optional inclusive date range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub date: String,
    pub ticker: String,
    pub close: String,
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            date: "date".into(),
            ticker: "ticker".into(),
            close: "close".into(),
            start: None,
            end: None,
        }
    }
}

/// Rectangular stocks × days table of closing prices.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceTable {
    tickers: Vec<String>,
    dates: Vec<NaiveDate>,
    close: DMatrix<f64>,
    dropped: Vec<String>,
}

impl PriceTable {
    pub fn new(tickers: Vec<String>, dates: Vec<NaiveDate>, close: DMatrix<f64>) -> Result<Self, DataError> {
        if close.nrows() != tickers.len() || close.ncols() != dates.len() {
            return Err(DataError::InvalidTable(format!(
                "matrix is {}x{} but there are {} tickers and {} dates",
                close.nrows(),
                close.ncols(),
                tickers.len(),
                dates.len()
            )));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DataError::InvalidTable("dates are not strictly increasing".into()));
        }
        let unique: BTreeSet<&String> = tickers.iter().collect();
        if unique.len() != tickers.len() {
            return Err(DataError::InvalidTable("duplicate ticker".into()));
        }
        Ok(Self {
            tickers,
            dates,
            close,
            dropped: Vec::new(),
        })
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    /// Prices, one row per ticker.
    pub fn close(&self) -> &DMatrix<f64> {
        &self.close
    }

    /// Tickers removed at load time because of incomplete price data.
    pub fn dropped(&self) -> &[String] {
        &self.dropped
    }

    /// Keeps only `tickers`, in the given order.
    pub fn select(&self, tickers: &[String]) -> Result<PriceTable, DataError> {
        let rows: Vec<usize> = tickers
            .iter()
            .map(|t| {
                self.tickers
                    .iter()
                    .position(|x| x == t)
                    .ok_or_else(|| DataError::InvalidTable(format!("unknown ticker {t}")))
            })
            .collect::<Result<_, _>>()?;
        let close = self.close.select_rows(rows.iter());
        let mut table = PriceTable::new(tickers.to_vec(), self.dates.clone(), close)?;
        table.dropped = self
            .tickers
            .iter()
            .filter(|t| !tickers.contains(t))
            .cloned()
            .chain(self.dropped.iter().cloned())
            .collect();
        Ok(table)
    }
}

fn is_missing(field: &str) -> bool {
    matches!(
        field.trim().to_ascii_lowercase().as_str(),
        "" | "na" | "nan" | "null" | "none" | "-"
    )
}

/// Reads `date,ticker,close` rows from a file; see [`parse_prices`].
pub fn load_prices(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<PriceTable, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_prices(file, schema)
}

/// Parses a long-format price CSV into a rectangular table.
///
/// Tickers missing a usable price on any date of the (optionally restricted)
/// range are dropped and listed in [`PriceTable::dropped`]. Surviving tickers
/// are sorted by name.
pub fn parse_prices<R: Read>(reader: R, schema: &CsvSchema) -> Result<PriceTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let (dc, tc, cc) = (col(&schema.date)?, col(&schema.ticker)?, col(&schema.close)?);

    let mut series: BTreeMap<String, BTreeMap<NaiveDate, Option<f64>>> = BTreeMap::new();
    let mut all_dates = BTreeSet::new();
    for (k, record) in rdr.records().enumerate() {
        let row = k as u64 + 2;
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let date = NaiveDate::parse_from_str(field(dc), "%Y-%m-%d").map_err(|e| DataError::Parse {
            row,
            message: format!("bad date `{}`: {e}", field(dc)),
        })?;
        if schema.start.is_some_and(|s| date < s) || schema.end.is_some_and(|e| date > e) {
            continue;
        }
        let ticker = field(tc).to_string();
        if ticker.is_empty() {
            return Err(DataError::Parse {
                row,
                message: "empty ticker".into(),
            });
        }
        let raw = field(cc);
        let close = if is_missing(raw) {
            None
        } else {
            let v: f64 = raw.parse().map_err(|_| DataError::Parse {
                row,
                message: format!("bad close `{raw}`"),
            })?;
            (v.is_finite() && v > 0.0).then_some(v)
        };
        let entry = series.entry(ticker.clone()).or_default();
        if entry.insert(date, close).is_some() {
            return Err(DataError::DuplicateRow { ticker, date });
        }
        all_dates.insert(date);
    }

    let dates: Vec<NaiveDate> = all_dates.into_iter().collect();
    let mut tickers = Vec::new();
    let mut dropped = Vec::new();
    let mut values = Vec::new();
    for (ticker, prices) in &series {
        let row: Option<Vec<f64>> = dates.iter().map(|d| prices.get(d).copied().flatten()).collect();
        match row {
            Some(row) => {
                tickers.push(ticker.clone());
                values.push(row);
            }
            None => dropped.push(ticker.clone()),
        }
    }
    if tickers.is_empty() {
        return Err(DataError::NoSurvivingTickers { dropped: dropped.len() });
    }
    let close = DMatrix::from_fn(tickers.len(), dates.len(), |i, j| values[i][j]);
    let mut table = PriceTable::new(tickers, dates, close)?;
    table.dropped = dropped;
    Ok(table)
}

/// How two consecutive price dates are judged successive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapRule {
    /// Successive only if exactly one calendar day apart, so a Friday to
    /// Monday return is dropped.
    #[default]
    CalendarDay,
    /// Successive if no business day (weekday that is not a listed holiday)
    /// lies strictly between the two dates.
    BusinessDay,
}

/// Gap filter for return computation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TradingCalendar {
    pub rule: GapRule,
    #[serde(default)]
    pub holidays: BTreeSet<NaiveDate>,
}

impl TradingCalendar {
    pub fn new(rule: GapRule) -> Self {
        Self {
            rule,
            holidays: BTreeSet::new(),
        }
    }

    pub fn with_holidays(mut self, holidays: impl IntoIterator<Item = NaiveDate>) -> Self {
        self.holidays.extend(holidays);
        self
    }

    pub fn is_business_day(&self, d: NaiveDate) -> bool {
        !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) && !self.holidays.contains(&d)
    }

    pub fn successive(&self, from: NaiveDate, to: NaiveDate) -> bool {
        if to <= from {
            return false;
        }
        match self.rule {
            GapRule::CalendarDay => (to - from).num_days() == 1,
            GapRule::BusinessDay => {
                let mut d = from + Days::new(1);
                while d < to {
                    if self.is_business_day(d) {
                        return false;
                    }
                    d = d + Days::new(1);
                }
                true
            }
        }
    }
}

/// Bookkeeping carried with a return panel.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PanelMeta {
    pub price_dates: usize,
    pub gap_dropped: usize,
    pub dropped_tickers: Vec<String>,
}

/// Stocks × return-days matrix of log returns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    pub tickers: Vec<String>,
    /// Date of the closing price that ends each return.
    pub return_dates: Vec<NaiveDate>,
    pub returns: DMatrix<f64>,
    pub meta: PanelMeta,
}

impl ReturnPanel {
    pub fn n_stocks(&self) -> usize {
        self.returns.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.returns.ncols()
    }

    /// Keeps only the given rows (in order).
    pub fn select_rows(&self, rows: &[usize]) -> ReturnPanel {
        ReturnPanel {
            tickers: rows.iter().map(|&r| self.tickers[r].clone()).collect(),
            return_dates: self.return_dates.clone(),
            returns: self.returns.select_rows(rows.iter()),
            meta: self.meta.clone(),
        }
    }

    /// Serializes as CSV: header `ticker,<date>,...`, one row per stock.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["ticker".to_string()];
        header.extend(self.return_dates.iter().map(|d| d.to_string()));
        w.write_record(&header)?;
        for (i, t) in self.tickers.iter().enumerate() {
            let mut rec = vec![t.clone()];
            rec.extend(self.returns.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|source| DataError::Io {
            path: "<panel>".into(),
            source,
        })?;
        Ok(())
    }

    /// Reads the format written by [`ReturnPanel::write_csv`].
    pub fn read_csv<R: Read>(reader: R, meta: PanelMeta) -> Result<ReturnPanel, DataError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let return_dates = headers
            .iter()
            .skip(1)
            .map(|h| {
                NaiveDate::parse_from_str(h, "%Y-%m-%d").map_err(|e| DataError::Parse {
                    row: 1,
                    message: format!("bad date `{h}`: {e}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut tickers = Vec::new();
        let mut values = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = k as u64 + 2;
            tickers.push(rec.get(0).unwrap_or("").to_string());
            let vals = rec
                .iter()
                .skip(1)
                .map(|v| {
                    v.parse::<f64>().map_err(|_| DataError::Parse {
                        row,
                        message: format!("bad return `{v}`"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            if vals.len() != return_dates.len() {
                return Err(DataError::Parse {
                    row,
                    message: "ragged row".into(),
                });
            }
            values.extend(vals);
        }
        let returns = DMatrix::from_row_slice(tickers.len(), return_dates.len(), &values);
        Ok(ReturnPanel {
            tickers,
            return_dates,
            returns,
            meta,
        })
    }
}

/// Daily log returns `ln p(t+1) - ln p(t)`, keeping only successive-day pairs.
pub fn compute_log_returns(prices: &PriceTable, calendar: &TradingCalendar) -> Result<ReturnPanel, DataError> {
    let dates = prices.dates();
    if dates.len() < 2 {
        return Err(DataError::TooFewDates(dates.len()));
    }
    let close = prices.close();
    for (i, t) in prices.tickers().iter().enumerate() {
        if let Some(j) = (0..dates.len()).find(|&j| !(close[(i, j)] > 0.0 && close[(i, j)].is_finite())) {
            return Err(DataError::NonPositivePrice {
                ticker: t.clone(),
                date: dates[j],
            });
        }
    }
    let kept: Vec<usize> = (0..dates.len() - 1)
        .filter(|&t| calendar.successive(dates[t], dates[t + 1]))
        .collect();
    let returns = DMatrix::from_fn(close.nrows(), kept.len(), |i, k| {
        let t = kept[k];
        close[(i, t + 1)].ln() - close[(i, t)].ln()
    });
    Ok(ReturnPanel {
        tickers: prices.tickers().to_vec(),
        return_dates: kept.iter().map(|&t| dates[t + 1]).collect(),
        returns,
        meta: PanelMeta {
            price_dates: dates.len(),
            gap_dropped: dates.len() - 1 - kept.len(),
            dropped_tickers: prices.dropped().to_vec(),
        },
    })
}

/// One rolling window of returns.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSlice {
    pub window_index: usize,
    /// First panel column covered by the window.
    pub start: usize,
    pub tickers: Arc<[String]>,
    /// Stocks × window_length.
    pub returns: DMatrix<f64>,
    pub period: Period,
}

impl WindowSlice {
    pub fn label(&self) -> Regime {
        self.period.regime
    }

    pub fn len(&self) -> usize {
        self.returns.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.ncols() == 0
    }
}

/// Number of windows of `window_length` with the given `step` over `columns`.
pub fn window_count(columns: usize, window_length: usize, step: usize) -> usize {
    if columns < window_length || step == 0 {
        0
    } else {
        (columns - window_length) / step + 1
    }
}

/// Rolling windows over the panel columns.
pub fn slice_windows(
    panel: &ReturnPanel,
    window_length: usize,
    step: usize,
    period: &Period,
) -> Result<Vec<WindowSlice>, DataError> {
    if window_length < 2 {
        return Err(DataError::WindowTooShort(window_length));
    }
    if step == 0 {
        return Err(DataError::ZeroStep);
    }
    let columns = panel.n_columns();
    if columns < window_length {
        return Err(DataError::NotEnoughColumns {
            columns,
            window: window_length,
        });
    }
    let tickers: Arc<[String]> = panel.tickers.clone().into();
    Ok((0..window_count(columns, window_length, step))
        .map(|k| {
            let start = k * step;
            WindowSlice {
                window_index: k,
                start,
                tickers: Arc::clone(&tickers),
                returns: panel.returns.columns(start, window_length).into_owned(),
                period: period.clone(),
            }
        })
        .collect())
}

/// Independently permutes each stock's returns within the window.
///
/// Row `i` is shuffled with stream `(seed, i)`, so rows are independent and
/// the result is a pure function of `(slice, seed)`.
pub fn surrogate_shuffle(slice: &WindowSlice, seed: u64) -> WindowSlice {
    let mut returns = slice.returns.clone();
    for i in 0..returns.nrows() {
        let mut row: Vec<f64> = returns.row(i).iter().copied().collect();
        row.shuffle(&mut derive_rng(seed, i as u64));
        for (j, v) in row.into_iter().enumerate() {
            returns[(i, j)] = v;
        }
    }
    WindowSlice {
        returns,
        ..slice.clone()
    }
}

/// One-factor Gaussian price generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_stocks: usize,
    pub n_days: usize,
    pub regime: Regime,
    /// Loading on the common factor, in [0, 1); pairwise correlation is its square.
    pub coupling: f64,
    pub seed: u64,
    /// Standard deviation of a stable-regime daily return.
    #[serde(default = "default_daily_vol")]
    pub daily_vol: f64,
    /// Multiplier on return volatility in the volatile regime.
    #[serde(default = "default_volatile_scale")]
    pub volatile_scale: f64,
    #[serde(default = "default_start")]
    pub start: NaiveDate,
}

fn default_daily_vol() -> f64 {
    0.01
}

fn default_volatile_scale() -> f64 {
    2.0
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2005, 1, 3).expect("valid date")
}

impl SyntheticSpec {
    pub fn new(n_stocks: usize, n_days: usize, regime: Regime, coupling: f64, seed: u64) -> Self {
        Self {
            n_stocks,
            n_days,
            regime,
            coupling,
            seed,
            daily_vol: default_daily_vol(),
            volatile_scale: default_volatile_scale(),
            start: default_start(),
        }
    }
}

fn weekdays_from(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

/// Prices from `r_i(t) = s (c m(t) + sqrt(1 - c^2) e_i(t))` on consecutive
/// weekdays, where `s` is the regime's daily volatility.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<PriceTable, DataError> {
    if spec.n_stocks < 3 {
        return Err(DataError::InvalidSynthetic(format!("n_stocks = {} < 3", spec.n_stocks)));
    }
    if spec.n_days < 2 {
        return Err(DataError::InvalidSynthetic(format!("n_days = {} < 2", spec.n_days)));
    }
    if !(0.0..1.0).contains(&spec.coupling) {
        return Err(DataError::InvalidSynthetic(format!("coupling {} outside [0, 1)", spec.coupling)));
    }
    if !(spec.daily_vol > 0.0 && spec.volatile_scale > 0.0) {
        return Err(DataError::InvalidSynthetic("volatilities must be positive".into()));
    }
    let scale = match spec.regime {
        Regime::Stable => spec.daily_vol,
        Regime::Volatile => spec.daily_vol * spec.volatile_scale,
    };
    let idio = (1.0 - spec.coupling * spec.coupling).sqrt();
    let mut rng = derive_rng(spec.seed, 0);
    let mut close = DMatrix::zeros(spec.n_stocks, spec.n_days);
    close.column_mut(0).fill(100.0);
    for t in 1..spec.n_days {
        let m: f64 = StandardNormal.sample(&mut rng);
        for i in 0..spec.n_stocks {
            let e: f64 = StandardNormal.sample(&mut rng);
            let r = scale * (spec.coupling * m + idio * e);
            close[(i, t)] = close[(i, t - 1)] * r.exp();
        }
    }
    let tickers = (0..spec.n_stocks).map(|i| format!("S{i:03}")).collect();
    PriceTable::new(tickers, weekdays_from(spec.start, spec.n_days), close)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn missing_price_drops_ticker() {
        let csv = "date,ticker,close\n\
            2024-01-01,A,1\n2024-01-02,A,2\n2024-01-03,A,3\n2024-01-04,A,4\n2024-01-05,A,5\n\
            2024-01-01,B,1\n2024-01-02,B,2\n2024-01-03,B,3\n2024-01-04,B,4\n2024-01-05,B,5\n\
            2024-01-01,C,1\n2024-01-02,C,2\n2024-01-04,C,4\n2024-01-05,C,5\n";
        let t = parse_prices(csv.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(t.tickers(), ["A", "B"]);
        assert_eq!(t.dropped(), ["C"]);
        assert_eq!(t.dates().len(), 5);
    }

    #[test]
    fn empty_and_nonpositive_prices_count_as_missing() {
        let csv = "date,ticker,close\n2024-01-01,A,1\n2024-01-02,A,\n2024-01-01,B,0\n2024-01-02,B,2\n\
                   2024-01-01,C,3\n2024-01-02,C,4\n";
        let t = parse_prices(csv.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(t.tickers(), ["C"]);
        assert_eq!(t.dropped(), ["A", "B"]);
    }

    #[test]
    fn duplicate_rows_and_bad_dates_are_errors() {
        let dup = "date,ticker,close\n2024-01-01,A,1\n2024-01-01,A,2\n";
        assert!(matches!(
            parse_prices(dup.as_bytes(), &CsvSchema::default()),
            Err(DataError::DuplicateRow { .. })
        ));
        let bad = "date,ticker,close\n2024-01-01,A,1\n01/02/2024,A,2\n";
        match parse_prices(bad.as_bytes(), &CsvSchema::default()) {
            Err(DataError::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        let all_gone = "date,ticker,close\n2024-01-01,A,1\n2024-01-02,B,2\n";
        assert!(matches!(
            parse_prices(all_gone.as_bytes(), &CsvSchema::default()),
            Err(DataError::NoSurvivingTickers { dropped: 2 })
        ));
    }

    #[test]
    fn date_range_filter_applies_before_rectangularity() {
        let csv = "date,ticker,close\n2024-01-01,A,1\n2024-01-02,A,2\n2024-01-02,B,2\n2024-01-03,A,3\n2024-01-03,B,3\n";
        let schema = CsvSchema {
            start: Some(d("2024-01-02")),
            ..CsvSchema::default()
        };
        let t = parse_prices(csv.as_bytes(), &schema).unwrap();
        assert_eq!(t.tickers(), ["A", "B"]);
        assert_eq!(t.dates().len(), 2);
    }

    #[test]
    fn log_return_of_ten_percent_move() {
        let t = PriceTable::new(
            vec!["A".into()],
            vec![d("2024-01-02"), d("2024-01-03")],
            DMatrix::from_row_slice(1, 2, &[100.0, 110.0]),
        )
        .unwrap();
        let p = compute_log_returns(&t, &TradingCalendar::default()).unwrap();
        assert!((p.returns[(0, 0)] - 0.095310).abs() < 1e-6);
        assert_eq!(p.return_dates, vec![d("2024-01-03")]);
    }

    #[test]
    fn constant_prices_give_zero_returns() {
        let dates: Vec<_> = (1..=6).map(|k| d(&format!("2024-01-0{k}"))).collect();
        let t = PriceTable::new(vec!["A".into()], dates, DMatrix::from_element(1, 6, 42.0)).unwrap();
        let p = compute_log_returns(&t, &TradingCalendar::default()).unwrap();
        assert!(p.returns.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn calendar_rules_on_a_weekend_and_holiday() {
        let fri = d("2024-01-05");
        let mon = d("2024-01-08");
        let tue = d("2024-01-09");
        let cal = TradingCalendar::default();
        assert!(!cal.successive(fri, mon));
        assert!(cal.successive(mon, tue));
        let biz = TradingCalendar::new(GapRule::BusinessDay);
        assert!(biz.successive(fri, mon));
        assert!(!biz.successive(fri, tue));
        let with_holiday = TradingCalendar::new(GapRule::BusinessDay).with_holidays([mon]);
        assert!(with_holiday.successive(fri, tue));
    }

    #[test]
    fn gap_returns_are_dropped_for_all_stocks() {
        let dates = vec![d("2024-01-04"), d("2024-01-05"), d("2024-01-08"), d("2024-01-09")];
        let close = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 4.0, 8.0, 1.0, 1.0, 1.0, 1.0]);
        let t = PriceTable::new(vec!["A".into(), "B".into()], dates, close).unwrap();
        let p = compute_log_returns(&t, &TradingCalendar::default()).unwrap();
        assert_eq!(p.n_columns(), 2);
        assert_eq!(p.meta.gap_dropped, 1);
        assert_eq!(p.return_dates, vec![d("2024-01-05"), d("2024-01-09")]);
    }

    #[test]
    fn too_few_dates_and_nonpositive_price_errors() {
        let one = PriceTable::new(vec!["A".into()], vec![d("2024-01-01")], DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert!(matches!(
            compute_log_returns(&one, &TradingCalendar::default()),
            Err(DataError::TooFewDates(1))
        ));
        let neg = PriceTable::new(
            vec!["A".into()],
            vec![d("2024-01-01"), d("2024-01-02")],
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
        )
        .unwrap();
        assert!(matches!(
            compute_log_returns(&neg, &TradingCalendar::default()),
            Err(DataError::NonPositivePrice { .. })
        ));
    }

    fn panel(cols: usize) -> ReturnPanel {
        ReturnPanel {
            tickers: vec!["A".into(), "B".into()],
            return_dates: (0..cols).map(|k| d("2024-01-01") + Days::new(k as u64)).collect(),
            returns: DMatrix::from_fn(2, cols, |i, j| (i * 1000 + j) as f64),
            meta: PanelMeta::default(),
        }
    }

    #[test]
    fn window_counts() {
        let p = Period::new("x", Regime::Stable);
        assert_eq!(slice_windows(&panel(191), 60, 1, &p).unwrap().len(), 132);
        assert_eq!(slice_windows(&panel(183), 60, 1, &p).unwrap().len(), 124);
        assert_eq!(slice_windows(&panel(60), 60, 1, &p).unwrap().len(), 1);
        assert!(matches!(slice_windows(&panel(10), 1, 1, &p), Err(DataError::WindowTooShort(1))));
        assert!(matches!(
            slice_windows(&panel(10), 20, 1, &p),
            Err(DataError::NotEnoughColumns { .. })
        ));
    }

    #[test]
    fn windows_overlap_by_length_minus_step() {
        let p = Period::new("x", Regime::Volatile);
        let w = slice_windows(&panel(30), 10, 3, &p).unwrap();
        assert_eq!(w.len(), 7);
        assert_eq!(w[1].returns.columns(0, 7), w[0].returns.columns(3, 7));
        assert!(w.iter().all(|s| s.label() == Regime::Volatile && s.len() == 10));
    }

    #[test]
    fn panel_csv_round_trip() {
        let p = panel(5);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let back = ReturnPanel::read_csv(buf.as_slice(), PanelMeta::default()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn synthetic_generation_is_deterministic_and_validated() {
        let spec = SyntheticSpec::new(5, 30, Regime::Stable, 0.5, 11);
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
        let bad = SyntheticSpec::new(5, 30, Regime::Stable, 1.0, 11);
        assert!(generate_synthetic(&bad).is_err());
        let small = SyntheticSpec::new(2, 30, Regime::Stable, 0.5, 11);
        assert!(generate_synthetic(&small).is_err());
    }
}
