//! Cleaned option-chain ingestion and report emission.
//!
//! Chain CSV (schema version 1), one call quote per row:
//!
//! ```text
//! date,asset,expiry,strike,call_mid,spot,rate
//! 2020-01-02,SPY,2020-01-31,320,5.12,324.87,0.0155
//! ```
//!
//! Dates are ISO-8601, `rate` is a continuously compounded annual rate.
//! Upstream exports map as: trade date -> `date`, underlying symbol ->
//! `asset`, expiration -> `expiry`, strike -> `strike`, (bid + ask) / 2 of
//! the European-equivalent call -> `call_mid`, underlying close -> `spot`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

pub const CHAIN_SCHEMA_VERSION: u32 = 1;
pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const CHAIN_COLUMNS: [&str; 7] = ["date", "asset", "expiry", "strike", "call_mid", "spot", "rate"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRow {
    pub date: NaiveDate,
    pub asset: String,
    pub expiry: NaiveDate,
    pub strike: f64,
    pub call_mid: f64,
    pub spot: f64,
    pub rate: f64,
}

impl ChainRow {
    pub fn days_to_expiry(&self) -> i64 {
        (self.expiry - self.date).num_days()
    }

    /// ACT/365 year fraction.
    pub fn tau_years(&self) -> f64 {
        self.days_to_expiry() as f64 / 365.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    FieldCount,
    BadDate,
    BadNumber,
    EmptyAsset,
    NonpositiveStrike,
    NonpositiveMid,
    NonpositiveSpot,
    NonfiniteRate,
    ExpiryNotAfterDate,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::FieldCount => "field_count",
            RejectReason::BadDate => "bad_date",
            RejectReason::BadNumber => "bad_number",
            RejectReason::EmptyAsset => "empty_asset",
            RejectReason::NonpositiveStrike => "nonpositive_strike",
            RejectReason::NonpositiveMid => "nonpositive_mid",
            RejectReason::NonpositiveSpot => "nonpositive_spot",
            RejectReason::NonfiniteRate => "nonfinite_rate",
            RejectReason::ExpiryNotAfterDate => "expiry_not_after_date",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    /// 1-based data line (the header is line 1).
    pub line: u64,
    pub reason: RejectReason,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadedChain {
    pub rows: Vec<ChainRow>,
    pub rejections: Vec<Rejection>,
}

impl LoadedChain {
    pub fn rows_in(&self) -> usize {
        self.rows.len() + self.rejections.len()
    }

    pub fn reject_counts(&self) -> BTreeMap<RejectReason, usize> {
        let mut m = BTreeMap::new();
        for r in &self.rejections {
            *m.entry(r.reason).or_insert(0) += 1;
        }
        m
    }
}

pub fn load_chain(path: impl AsRef<Path>, schema_version: u32) -> Result<LoadedChain> {
    ensure!(
        schema_version == CHAIN_SCHEMA_VERSION,
        Validation,
        "unsupported chain schema version {schema_version} (expected {CHAIN_SCHEMA_VERSION})"
    );
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.as_ref().display())))?;
    read_chain(file)
}

/// Parses a chain CSV. Missing columns are fatal; malformed rows are
/// rejected with a reason and parsing continues.
pub fn read_chain(reader: impl Read) -> Result<LoadedChain> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut index = [0usize; 7];
    let missing: Vec<&str> = CHAIN_COLUMNS
        .iter()
        .enumerate()
        .filter_map(|(k, name)| match headers.iter().position(|h| h == *name) {
            Some(i) => {
                index[k] = i;
                None
            }
            None => Some(*name),
        })
        .collect();
    ensure!(missing.is_empty(), Data, "chain file is missing columns: {}", missing.join(", "));

    let mut out = LoadedChain::default();
    for (k, record) in rdr.records().enumerate() {
        let record = record?;
        let line = k as u64 + 2;
        match parse_row(&record, &index, headers.len()) {
            Ok(row) => out.rows.push(row),
            Err((reason, detail)) => {
                log::warn!("chain line {line} rejected: {reason} ({detail})");
                out.rejections.push(Rejection { line, reason, detail });
            }
        }
    }
    Ok(out)
}

fn parse_row(rec: &csv::StringRecord, index: &[usize; 7], width: usize) -> Result<ChainRow, (RejectReason, String)> {
    if rec.len() != width {
        return Err((RejectReason::FieldCount, format!("{} fields, expected {width}", rec.len())));
    }
    let date_field = |i: usize| {
        let s = &rec[index[i]];
        NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| (RejectReason::BadDate, format!("{}={s:?}", CHAIN_COLUMNS[i])))
    };
    let num_field = |i: usize| {
        let s = &rec[index[i]];
        s.parse::<f64>().map_err(|_| (RejectReason::BadNumber, format!("{}={s:?}", CHAIN_COLUMNS[i])))
    };
    let date = date_field(0)?;
    let asset = rec[index[1]].to_string();
    let expiry = date_field(2)?;
    let strike = num_field(3)?;
    let call_mid = num_field(4)?;
    let spot = num_field(5)?;
    let rate = num_field(6)?;
    let positive = |v: f64| v.is_finite() && v > 0.0;
    if asset.is_empty() {
        return Err((RejectReason::EmptyAsset, String::new()));
    }
    if !positive(strike) {
        return Err((RejectReason::NonpositiveStrike, format!("strike={strike}")));
    }
    if !positive(call_mid) {
        return Err((RejectReason::NonpositiveMid, format!("call_mid={call_mid}")));
    }
    if !positive(spot) {
        return Err((RejectReason::NonpositiveSpot, format!("spot={spot}")));
    }
    if !rate.is_finite() {
        return Err((RejectReason::NonfiniteRate, format!("rate={rate}")));
    }
    if expiry <= date {
        return Err((RejectReason::ExpiryNotAfterDate, format!("{date} -> {expiry}")));
    }
    Ok(ChainRow { date, asset, expiry, strike, call_mid, spot, rate })
}

pub fn write_chain(writer: impl Write, rows: &[ChainRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(CHAIN_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_chain(path: impl AsRef<Path>, rows: &[ChainRow]) -> Result<()> {
    write_chain(std::fs::File::create(path)?, rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[serde(rename = "ivrmse_1e3")]
    Ivrmse1e3,
    HedgingRmse,
    AvgTradingCost,
    ShortfallProb,
    Price,
    Stderr,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Ivrmse1e3 => "ivrmse_1e3",
            Metric::HedgingRmse => "hedging_rmse",
            Metric::AvgTradingCost => "avg_trading_cost",
            Metric::ShortfallProb => "shortfall_prob",
            Metric::Price => "price",
            Metric::Stderr => "stderr",
        }
    }
}

/// One aggregated cell of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment_id: String,
    pub asset: String,
    pub period: String,
    pub bucket: String,
    pub moneyness_group: String,
    pub model: String,
    pub metric: Metric,
    pub value: f64,
    pub n_days: usize,
}

impl ReportRow {
    fn sort_key(&self) -> (&str, &str, &str, &str, &str, &str, Metric) {
        (
            &self.experiment_id,
            &self.asset,
            &self.period,
            &self.bucket,
            &self.moneyness_group,
            &self.model,
            self.metric,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

pub const REPORT_COLUMNS: [&str; 9] =
    ["experiment_id", "asset", "period", "bucket", "moneyness_group", "model", "metric", "value", "n_days"];

/// Two-decimal rendering that never prints `-0.00`.
fn table_number(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".to_string()
    } else {
        s
    }
}

fn canonical(rows: &[ReportRow]) -> Vec<&ReportRow> {
    let mut sorted: Vec<&ReportRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        a.sort_key()
            .cmp(&b.sort_key())
            .then(a.value.total_cmp(&b.value))
            .then(a.n_days.cmp(&b.n_days))
    });
    sorted
}

#[derive(Serialize)]
struct JsonReport<'a> {
    schema_version: u32,
    rows: Vec<&'a ReportRow>,
}

/// Renders rows in canonical order: CSV with two-decimal values (table
/// mode) or versioned JSON at full precision.
pub fn render_report(rows: &[ReportRow], format: ReportFormat) -> Result<String> {
    let sorted = canonical(rows);
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(REPORT_COLUMNS)?;
            for r in sorted {
                w.write_record([
                    r.experiment_id.as_str(),
                    &r.asset,
                    &r.period,
                    &r.bucket,
                    &r.moneyness_group,
                    &r.model,
                    r.metric.as_str(),
                    &table_number(r.value),
                    &r.n_days.to_string(),
                ])?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        ReportFormat::Json => {
            let doc = JsonReport { schema_version: REPORT_SCHEMA_VERSION, rows: sorted };
            Ok(serde_json::to_string_pretty(&doc)? + "\n")
        }
    }
}

pub fn emit_report(rows: &[ReportRow], format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, render_report(rows, format)?)?;
    Ok(())
}

/// One point of a parameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub parameter: f64,
    pub price: f64,
    pub stderr: f64,
    pub model: String,
}

pub const PLOT_COLUMNS: [&str; 4] = ["parameter", "price", "stderr", "model"];

/// Plot series CSV sorted by model then parameter, full precision.
pub fn render_plot_series(points: &[SweepPoint]) -> Result<String> {
    let mut sorted: Vec<&SweepPoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.model.cmp(&b.model).then(a.parameter.total_cmp(&b.parameter)));
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(PLOT_COLUMNS)?;
    for p in sorted {
        w.serialize(p)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn emit_plot_series(points: &[SweepPoint], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, render_plot_series(points)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "date,asset,expiry,strike,call_mid,spot,rate
2020-01-02,SPY,2020-01-31,320,5.12,324.87,0.0155
2020-01-02,SPY,2020-02-28,325,4.5,324.87,0.0155
2020-01-03,XOP,2020-01-17,20.5,0.75,21.1,0.015
";

    #[test]
    fn loads_well_formed_file() {
        let c = read_chain(GOOD.as_bytes()).unwrap();
        assert_eq!(c.rows.len(), 3);
        assert!(c.rejections.is_empty());
        assert_eq!(c.rows[0].days_to_expiry(), 29);
        assert_eq!(c.rows[2].strike, 20.5);
    }

    #[test]
    fn rejects_bad_rows_without_dropping_data() {
        let text = "date,asset,expiry,strike,call_mid,spot,rate
2020-01-02,SPY,2020-01-31,320,-1,324.87,0.0155
2020-01-02,SPY,2020-01-31,abc,1,324.87,0.0155
2020-01-02,SPY,2019-12-31,320,1,324.87,0.0155
2020-13-02,SPY,2020-01-31,320,1,324.87,0.0155
2020-01-02,SPY,2020-01-31,320,1,324.87
2020-01-02,SPY,2020-01-31,320,1,324.87,0.0155
";
        let c = read_chain(text.as_bytes()).unwrap();
        assert_eq!(c.rows.len(), 1);
        assert_eq!(c.rows_in(), 6);
        let reasons: Vec<&str> = c.rejections.iter().map(|r| r.reason.as_str()).collect();
        assert_eq!(reasons, ["nonpositive_mid", "bad_number", "expiry_not_after_date", "bad_date", "field_count"]);
        assert_eq!(c.rejections[0].line, 2);
    }

    #[test]
    fn missing_column_is_fatal() {
        let err = read_chain("date,asset,expiry,strike,spot,rate\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("call_mid"));
    }

    #[test]
    fn unsupported_schema_version() {
        assert!(load_chain("/nonexistent", 2).is_err());
        assert!(matches!(load_chain("/nonexistent", 1), Err(Error::Data(_))));
    }

    #[test]
    fn chain_round_trip() {
        let c = read_chain(GOOD.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_chain(&mut buf, &c.rows).unwrap();
        let back = read_chain(buf.as_slice()).unwrap();
        assert_eq!(back.rows, c.rows);
        assert!(back.rejections.is_empty());
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }

    fn row(model: &str, metric: Metric, value: f64) -> ReportRow {
        ReportRow {
            experiment_id: "exp".into(),
            asset: "SPY".into(),
            period: "2020Q1".into(),
            bucket: "28d".into(),
            moneyness_group: "atm".into(),
            model: model.into(),
            metric,
            value,
            n_days: 3,
        }
    }

    #[test]
    fn empty_report_is_header_only() {
        assert_eq!(render_report(&[], ReportFormat::Csv).unwrap(), REPORT_COLUMNS.join(",") + "\n");
        assert_eq!(render_plot_series(&[]).unwrap(), "parameter,price,stderr,model\n");
    }

    #[test]
    fn report_is_order_independent() {
        let rows = vec![
            row("rlop", Metric::HedgingRmse, 1.234),
            row("bs", Metric::ShortfallProb, 1.0),
            row("bs", Metric::HedgingRmse, -0.001),
            row("jd", Metric::Ivrmse1e3, 17.62),
        ];
        let mut shuffled = rows.clone();
        shuffled.reverse();
        shuffled.swap(0, 2);
        for fmt in [ReportFormat::Csv, ReportFormat::Json] {
            assert_eq!(render_report(&rows, fmt).unwrap(), render_report(&shuffled, fmt).unwrap());
        }
        let csv = render_report(&rows, ReportFormat::Csv).unwrap();
        assert!(csv.contains(",bs,hedging_rmse,0.00,3"));
        assert!(csv.contains(",bs,shortfall_prob,1.00,3"));
        let json = render_report(&rows, ReportFormat::Json).unwrap();
        assert!(json.contains("\"value\": 1.234"));
        assert!(json.contains("\"schema_version\": 1"));
    }

    #[test]
    fn plot_series_rows() {
        let pts: Vec<SweepPoint> = [0.3, 0.1, 0.2]
            .iter()
            .map(|&s| SweepPoint { parameter: s, price: s / 10.0, stderr: 1e-4, model: "qlbs".into() })
            .collect();
        let text = render_plot_series(&pts).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0.1,"));
    }
}
