//! Price paths, market weights, the GBM simulator and wide-format CSV I/O.
//!
//! Randomness comes from `ChaCha8Rng` seeded with the 64-bit seed through
//! `SeedableRng::seed_from_u64`. Standard normals use the Box–Muller
//! transform, consuming two uniforms per pair and emitting the cosine branch
//! first. Draw order: per asset the drift then the volatility, then for every
//! step after the first, one normal per asset in column order.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Smallest market weight kept after normalisation.
pub const WEIGHT_FLOOR: f64 = 1e-12;

/// Row label of a price observation.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum DateIndex {
    Day(u32),
    /// ISO-8601 `YYYY-MM-DD`; lexicographic order equals chronological order.
    Date(String),
}

impl std::fmt::Display for DateIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DateIndex::Day(d) => write!(f, "{d}"),
            DateIndex::Date(s) => f.write_str(s),
        }
    }
}

/// Strictly positive capitalisations, rows = time, columns = assets.
#[derive(Clone, Debug, PartialEq)]
pub struct PricePath {
    dates: Vec<DateIndex>,
    prices: Vec<Vec<f64>>,
    tickers: Vec<String>,
}

impl PricePath {
    pub fn new(dates: Vec<DateIndex>, prices: Vec<Vec<f64>>, tickers: Vec<String>) -> Result<Self> {
        if prices.len() < 2 {
            return Err(Error::Data(format!(
                "need at least 2 price rows, got {}",
                prices.len()
            )));
        }
        if tickers.len() < 2 {
            return Err(Error::Data(format!(
                "need at least 2 assets, got {}",
                tickers.len()
            )));
        }
        if dates.len() != prices.len() {
            return Err(Error::Data(format!(
                "{} dates for {} price rows",
                dates.len(),
                prices.len()
            )));
        }
        if let Some(t) = dates.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::Data(format!(
                "dates not strictly increasing at row {} ({} then {})",
                t + 1,
                dates[t],
                dates[t + 1]
            )));
        }
        for (r, row) in prices.iter().enumerate() {
            if row.len() != tickers.len() {
                return Err(Error::Data(format!(
                    "row {r} has {} values for {} tickers",
                    row.len(),
                    tickers.len()
                )));
            }
            check_positive_row(r, row, &tickers)?;
        }
        Ok(Self {
            dates,
            prices,
            tickers,
        })
    }

    pub fn dates(&self) -> &[DateIndex] {
        &self.dates
    }

    pub fn prices(&self) -> &[Vec<f64>] {
        &self.prices
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn n_rows(&self) -> usize {
        self.prices.len()
    }

    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    /// Keep only the last `rows` observations (all of them if fewer exist).
    pub fn tail(&self, rows: usize) -> Result<Self> {
        let start = self.n_rows().saturating_sub(rows);
        Self::new(
            self.dates[start..].to_vec(),
            self.prices[start..].to_vec(),
            self.tickers.clone(),
        )
    }

    /// Write the wide-format CSV (`date,<ticker>...`).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["date".to_string()];
        header.extend(self.tickers.iter().cloned());
        w.write_record(&header)?;
        for (date, row) in self.dates.iter().zip(&self.prices) {
            let mut rec = vec![date.to_string()];
            rec.extend(row.iter().map(|p| p.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn check_positive_row(r: usize, row: &[f64], tickers: &[String]) -> Result<()> {
    for (c, &p) in row.iter().enumerate() {
        if !(p.is_finite() && p > 0.0) {
            return Err(Error::Data(format!(
                "non-positive price {p} at row {r}, column {c} ({})",
                tickers[c]
            )));
        }
    }
    Ok(())
}

/// Rows of strictly positive market weights summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct MarketWeightPath {
    rows: Vec<Vec<f64>>,
}

impl MarketWeightPath {
    /// Validate rows that are already on the simplex (tolerance `1e-9`).
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if n < 2 {
            return Err(Error::Data("market weights need at least 2 assets".into()));
        }
        for (t, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Data(format!(
                    "weight row {t} has {} entries, expected {n}",
                    row.len()
                )));
            }
            if let Some(c) = row.iter().position(|&x| !(x.is_finite() && x > 0.0)) {
                return Err(Error::Data(format!(
                    "weight {} at row {t}, column {c} is not strictly positive",
                    row[c]
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Data(format!("weight row {t} sums to {s}")));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.rows[t]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.rows[0].len()
    }

    /// Rows `start..end` (exclusive end) as an owned path.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.rows.len() {
            return Err(Error::Config(format!(
                "slice {start}..{end} outside path of {} rows",
                self.rows.len()
            )));
        }
        Ok(Self {
            rows: self.rows[start..end].to_vec(),
        })
    }
}

/// Divide each price row by its total, flooring at [`WEIGHT_FLOOR`].
pub fn normalize_to_weights(path: &PricePath) -> Result<MarketWeightPath> {
    let mut rows = Vec::with_capacity(path.n_rows());
    for (r, prices) in path.prices().iter().enumerate() {
        check_positive_row(r, prices, path.tickers())?;
        rows.push(normalize_row(prices));
    }
    Ok(MarketWeightPath { rows })
}

fn normalize_row(prices: &[f64]) -> Vec<f64> {
    let total: f64 = prices.iter().sum();
    let mut w: Vec<f64> = prices.iter().map(|p| p / total).collect();
    if w.iter().any(|&x| x < WEIGHT_FLOOR) {
        for x in &mut w {
            *x = x.max(WEIGHT_FLOOR);
        }
        let s: f64 = w.iter().sum();
        for x in &mut w {
            *x /= s;
        }
    }
    w
}

#[derive(Clone, Debug, PartialEq)]
pub struct GbmConfig {
    pub n_assets: usize,
    pub n_days: usize,
    /// Year fraction per step.
    pub dt: f64,
    /// Annualised drift bounds, sampled uniformly per asset.
    pub drift_range: (f64, f64),
    /// Annualised volatility bounds, sampled uniformly per asset.
    pub vol_range: (f64, f64),
    pub seed: u64,
    pub initial_price: f64,
}

impl Default for GbmConfig {
    fn default() -> Self {
        Self {
            n_assets: 5,
            n_days: 1000,
            dt: 1.0 / 252.0,
            drift_range: (-0.05, 0.15),
            vol_range: (0.10, 0.40),
            seed: 42,
            initial_price: 1.0,
        }
    }
}

impl GbmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_assets < 2 {
            return bad(format!("n_assets must be >= 2, got {}", self.n_assets));
        }
        if self.n_days < 2 {
            return bad(format!("n_days must be >= 2, got {}", self.n_days));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        let (dl, dh) = self.drift_range;
        if !(dl.is_finite() && dh.is_finite() && dl <= dh) {
            return bad(format!("drift range ({dl}, {dh}) is not ordered"));
        }
        let (vl, vh) = self.vol_range;
        if !(vl.is_finite() && vh.is_finite() && vl > 0.0 && vl <= vh) {
            return bad(format!(
                "vol range ({vl}, {vh}) must be ordered with a positive lower bound"
            ));
        }
        if !(self.initial_price.is_finite() && self.initial_price > 0.0) {
            return bad(format!(
                "initial price must be > 0, got {}",
                self.initial_price
            ));
        }
        Ok(())
    }
}

/// Box–Muller standard normal sampler over any uniform source.
pub struct BoxMuller<R> {
    rng: R,
    spare: Option<f64>,
}

impl<R: Rng> BoxMuller<R> {
    pub fn new(rng: R) -> Self {
        Self { rng, spare: None }
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the log finite
        let u1 = 1.0 - self.rng.gen::<f64>();
        let u2 = self.rng.gen::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// Independent geometric Brownian motions with per-asset random drift and volatility.
pub fn gbm_simulate(cfg: &GbmConfig) -> Result<PricePath> {
    cfg.validate()?;
    let mut sampler = BoxMuller::new(ChaCha8Rng::seed_from_u64(cfg.seed));
    let params: Vec<(f64, f64)> = (0..cfg.n_assets)
        .map(|_| {
            let m = lerp(cfg.drift_range, sampler.uniform());
            let s = lerp(cfg.vol_range, sampler.uniform());
            (m, s)
        })
        .collect();

    let sqrt_dt = cfg.dt.sqrt();
    let mut log_p = vec![cfg.initial_price.ln(); cfg.n_assets];
    let mut prices = Vec::with_capacity(cfg.n_days);
    prices.push(log_p.iter().map(|l| l.exp()).collect::<Vec<_>>());
    for _ in 1..cfg.n_days {
        for (lp, &(m, s)) in log_p.iter_mut().zip(&params) {
            let z = sampler.next_normal();
            *lp += (m - 0.5 * s * s) * cfg.dt + s * sqrt_dt * z;
        }
        prices.push(log_p.iter().map(|l| l.exp()).collect());
    }
    let dates = (0..cfg.n_days as u32).map(DateIndex::Day).collect();
    let tickers = (1..=cfg.n_assets).map(|i| format!("A{i}")).collect();
    PricePath::new(dates, prices, tickers)
}

fn lerp((lo, hi): (f64, f64), u: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        lo + (hi - lo) * u
    }
}

/// Read a wide-format CSV from any reader.
///
/// Empty cells are forward-filled from the previous row; leading rows that
/// still contain gaps are dropped. When `tickers` is given, columns are
/// restricted to those labels in that order.
pub fn read_prices_csv<R: Read>(input: R, tickers: Option<&[String]>) -> Result<PricePath> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = reader.headers()?.clone();
    if header.len() < 2 || !header[0].eq_ignore_ascii_case("date") {
        return Err(Error::Data(
            "csv header must be `date,<ticker1>,<ticker2>,...`".into(),
        ));
    }
    let available: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let selected: Vec<(usize, String)> = match tickers {
        Some(wanted) => wanted
            .iter()
            .map(|t| {
                available
                    .iter()
                    .position(|a| a == t)
                    .map(|i| (i, t.clone()))
                    .ok_or_else(|| Error::Data(format!("unknown ticker `{t}`")))
            })
            .collect::<Result<_>>()?,
        None => available.iter().cloned().enumerate().collect(),
    };

    let mut dates = Vec::new();
    let mut prices = Vec::new();
    let mut last: Vec<Option<f64>> = vec![None; selected.len()];
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // header is line 1
        let line = i + 2;
        let date = parse_date(record.get(0).unwrap_or("")).ok_or_else(|| {
            Error::Data(format!(
                "line {line}: `{}` is neither a YYYY-MM-DD date nor a day index",
                record.get(0).unwrap_or("")
            ))
        })?;
        for (slot, (col, ticker)) in last.iter_mut().zip(&selected) {
            let cell = record.get(col + 1).unwrap_or("");
            if cell.is_empty() {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                Error::Data(format!(
                    "line {line}, column `{ticker}`: cannot parse `{cell}`"
                ))
            })?;
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Data(format!(
                    "line {line}, column `{ticker}`: non-positive price {v}"
                )));
            }
            *slot = Some(v);
        }
        if last.iter().all(Option::is_some) {
            dates.push(date);
            prices.push(last.iter().map(|v| v.unwrap_or_default()).collect());
        }
    }
    if prices.len() < 2 {
        return Err(Error::Data(format!(
            "only {} usable rows after forward-fill",
            prices.len()
        )));
    }
    PricePath::new(
        dates,
        prices,
        selected.into_iter().map(|(_, t)| t).collect(),
    )
}

pub fn load_prices_csv(path: impl AsRef<Path>, tickers: Option<&[String]>) -> Result<PricePath> {
    let file = File::open(path.as_ref())?;
    read_prices_csv(file, tickers)
}

/// ISO dates for real data; bare integers are the synthetic day index.
fn parse_date(s: &str) -> Option<DateIndex> {
    if !s.is_empty() && s.bytes().all(|c| c.is_ascii_digit()) {
        return s.parse().ok().map(DateIndex::Day);
    }
    is_iso_date(s).then(|| DateIndex::Date(s.to_string()))
}

fn is_iso_date(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() == 10
        && b[4] == b'-'
        && b[7] == b'-'
        && b.iter()
            .enumerate()
            .all(|(i, c)| i == 4 || i == 7 || c.is_ascii_digit())
}

/// Download a wide-format CSV over HTTP, validate it, and store it at `out`.
pub fn fetch_csv(url: &str, out: impl AsRef<Path>) -> Result<PricePath> {
    let body = ureq::get(url)
        .call()
        .map_err(|e| Error::Data(format!("fetching {url}: {e}")))?
        .into_body()
        .read_to_string()
        .map_err(|e| Error::Data(format!("reading body from {url}: {e}")))?;
    let path = read_prices_csv(body.as_bytes(), None)?;
    std::fs::write(out, body)?;
    Ok(path)
}

/// Count data lines of a CSV file (excluding the header).
pub fn count_csv_rows(path: impl AsRef<Path>) -> Result<usize> {
    let file = BufReader::new(File::open(path)?);
    Ok(file
        .lines()
        .skip(1)
        .filter(|l| matches!(l, Ok(s) if !s.is_empty()))
        .count())
}
