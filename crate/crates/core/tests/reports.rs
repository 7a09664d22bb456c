//! Byte-level report layout and chain file round trips.

use chrono::NaiveDate;
use hedgelab::data_io::{load_chain, render_report, save_chain, ChainRow, Metric, ReportFormat, ReportRow, CHAIN_SCHEMA_VERSION};

fn row(model: &str, metric: Metric, value: f64) -> ReportRow {
    ReportRow {
        experiment_id: "golden".into(),
        asset: "SPY".into(),
        period: "2021Q3".into(),
        bucket: "28".into(),
        moneyness_group: "atm".into(),
        model: model.into(),
        metric,
        value,
        n_days: 17,
    }
}

fn rows() -> Vec<ReportRow> {
    vec![
        row("sv", Metric::HedgingRmse, 1.2345),
        row("bs", Metric::ShortfallProb, 0.5),
        row("bs", Metric::HedgingRmse, 1.005),
        row("bs", Metric::AvgTradingCost, -0.0001),
    ]
}

const GOLDEN_CSV: &str = "\
experiment_id,asset,period,bucket,moneyness_group,model,metric,value,n_days
golden,SPY,2021Q3,28,atm,bs,hedging_rmse,1.00,17
golden,SPY,2021Q3,28,atm,bs,avg_trading_cost,0.00,17
golden,SPY,2021Q3,28,atm,bs,shortfall_prob,0.50,17
golden,SPY,2021Q3,28,atm,sv,hedging_rmse,1.23,17
";

#[test]
fn csv_report_matches_golden_bytes() {
    assert_eq!(render_report(&rows(), ReportFormat::Csv).unwrap(), GOLDEN_CSV);
    let mut shuffled = rows();
    shuffled.reverse();
    assert_eq!(render_report(&shuffled, ReportFormat::Csv).unwrap(), GOLDEN_CSV);
}

#[test]
fn json_report_keeps_full_precision() {
    let text = render_report(&rows(), ReportFormat::Json).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(doc["schema_version"], 1);
    let values: Vec<f64> = doc["rows"].as_array().unwrap().iter().map(|r| r["value"].as_f64().unwrap()).collect();
    assert_eq!(values, vec![1.005, -0.0001, 0.5, 1.2345]);
    assert_eq!(doc["rows"][0]["metric"], "hedging_rmse");
}

#[test]
fn chain_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chain.csv");
    let d = |m, day| NaiveDate::from_ymd_opt(2021, m, day).unwrap();
    let rows = vec![
        ChainRow { date: d(7, 1), asset: "SPY".into(), expiry: d(7, 30), strike: 430.0, call_mid: 8.125, spot: 433.72, rate: 0.0005 },
        ChainRow { date: d(7, 2), asset: "SPY".into(), expiry: d(8, 20), strike: 0.1 + 0.2, call_mid: 1e-3, spot: 1.0 / 3.0, rate: 0.0 },
    ];
    save_chain(&path, &rows).unwrap();
    let loaded = load_chain(&path, CHAIN_SCHEMA_VERSION).unwrap();
    assert!(loaded.rejections.is_empty());
    assert_eq!(loaded.rows, rows);
    assert!(load_chain(&path, CHAIN_SCHEMA_VERSION + 1).is_err());
}
