use super::*;
use proptest::prelude::*;

fn day() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 2).unwrap()
}

fn row(days: i64, strike: f64, mid: f64) -> ChainRow {
    ChainRow {
        date: day(),
        asset: "SYN".into(),
        expiry: day() + chrono::Duration::days(days),
        strike,
        call_mid: mid,
        spot: 100.0,
        rate: 0.02,
    }
}

fn bs_row(days: i64, strike: f64, sigma: f64) -> ChainRow {
    let opt = EuroCall::new(100.0, strike, days as f64 / 365.0, 0.02);
    row(days, strike, bs_price(&opt, sigma).unwrap())
}

fn bs_chain(sigma: f64) -> Vec<ChainRow> {
    let mut rows = Vec::new();
    for days in [24, 28, 35] {
        for k in [90.0, 95.0, 100.0, 105.0, 110.0] {
            rows.push(bs_row(days, k, sigma));
        }
    }
    rows
}

fn slice_28(rows: &[ChainRow]) -> OptionSlice {
    bucket_slice(rows, 28, &BucketSpec::default()).unwrap()
}

#[test]
fn bucket_edges() {
    let spec = BucketSpec::default();
    assert_eq!(spec.bucket_of(25), Some(28));
    assert_eq!(spec.bucket_of(2), None);
    assert_eq!(spec.bucket_of(21), Some(28));
    assert_eq!(spec.bucket_of(20), Some(14));
    assert_eq!(spec.bucket_of(3), Some(14));
    assert_eq!(spec.bucket_of(42), Some(56));
    assert_eq!(spec.bucket_of(70), Some(56));
    assert_eq!(spec.bucket_of(71), None);
    let bad = BucketSpec { boundaries: vec![42, 21], ..BucketSpec::default() };
    assert!(bad.validate().is_err());
}

proptest! {
    #[test]
    fn every_retained_quote_has_one_bucket(days in 3i64..=70) {
        let spec = BucketSpec::default();
        let center = spec.bucket_of(days).unwrap();
        let k = spec.centers.iter().position(|c| *c == center).unwrap();
        let lo = if k == 0 { spec.min_days } else { spec.boundaries[k - 1] } as i64;
        let hi = if k == spec.boundaries.len() { spec.max_days as i64 + 1 } else { spec.boundaries[k] as i64 };
        prop_assert!(days >= lo && days < hi);
    }

    #[test]
    fn pchip_preserves_monotonicity(
        steps in proptest::collection::vec(0.0f64..1.0, 3..8),
        xs_gap in proptest::collection::vec(0.05f64..1.0, 8),
        t in 0.0f64..1.0,
        u in 0.0f64..1.0,
    ) {
        let n = steps.len();
        let mut xs = vec![0.0];
        let mut ys = vec![0.0];
        for i in 1..n {
            xs.push(xs[i - 1] + xs_gap[i]);
            ys.push(ys[i - 1] + steps[i]);
        }
        let span = xs[n - 1];
        let (a, b) = if t <= u { (t, u) } else { (u, t) };
        let (ya, yb) = (pchip(&xs, &ys, a * span), pchip(&xs, &ys, b * span));
        prop_assert!(ya <= yb + 1e-12);
        prop_assert!(ya >= -1e-12 && yb <= ys[n - 1] + 1e-12);
    }
}

#[test]
fn pchip_nodes_and_lines() {
    let xs = [0.1, 0.2, 0.35, 0.5];
    let ys = [1.0, 3.0, 2.0, 5.0];
    for (x, y) in xs.iter().zip(ys) {
        assert!((pchip(&xs, &ys, *x) - y).abs() < 1e-14);
    }
    let lin: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
    assert!((pchip(&xs, &lin, 0.27) - 1.54).abs() < 1e-12);
    assert_eq!(pchip(&xs, &ys, 10.0), 5.0);
}

#[test]
fn slice_fields_and_drops() {
    let mut rows = bs_chain(0.2);
    rows.push(row(2, 100.0, 1.0));
    rows.push(row(30, 100.0, 150.0));
    let s = slice_28(&rows);
    assert_eq!(s.quotes.len(), 15);
    assert_eq!(s.n_arbitrage_dropped, 1);
    for q in &s.quotes {
        assert!((q.forward - 100.0 * (0.02 * q.tau).exp()).abs() < 1e-12);
        assert!((q.moneyness - q.strike / q.forward).abs() < 1e-15);
        assert!((q.market_iv - 0.2).abs() < 1e-9);
    }
    assert!(matches!(bucket_slice(&rows, 14, &BucketSpec::default()), Err(Error::EmptySlice(_))));
    assert!(matches!(bucket_slice(&[], 28, &BucketSpec::default()), Err(Error::EmptySlice(_))));
    let mut mixed = bs_chain(0.2);
    mixed[3].spot = 101.0;
    assert!(matches!(bucket_slice(&mixed, 28, &BucketSpec::default()), Err(Error::Data(_))));
}

#[test]
fn bs_fit_recovers_generating_vol() {
    let s = slice_28(&bs_chain(0.2));
    let fit = fit_parametric(&s, ModelTag::Bs, &CalibrationConfig::default()).unwrap();
    let FittedParams::Bs { sigma } = fit.params else { panic!() };
    assert!((sigma - 0.2).abs() < 1e-4, "{sigma}");
    assert!(fit.objective < 1e-12, "{}", fit.objective);
    assert!(fit.converged);
    assert!(fit.ivrmse_1e3.unwrap() < 1e-3);
}

#[test]
fn richer_models_nest_bs() {
    let mut rows = bs_chain(0.2);
    // Add a skew so BS cannot fit exactly.
    for r in &mut rows {
        let opt = EuroCall::new(100.0, r.strike, r.tau_years(), 0.02);
        r.call_mid = bs_price(&opt, 0.2 + 0.3 * (1.0 - r.strike / 100.0)).unwrap();
    }
    let s = slice_28(&rows);
    let cfg = CalibrationConfig { n_starts: 2, sv_max_iter: 200, ..CalibrationConfig::default() };
    let bs = fit_parametric(&s, ModelTag::Bs, &cfg).unwrap();
    let jd = fit_parametric(&s, ModelTag::Jd, &cfg).unwrap();
    let sv = fit_parametric(&s, ModelTag::Sv, &cfg).unwrap();
    assert!(bs.objective > 1e-6);
    assert!(jd.objective <= bs.objective + 1e-10, "jd {} bs {}", jd.objective, bs.objective);
    assert!(sv.objective <= bs.objective + 1e-8, "sv {} bs {}", sv.objective, bs.objective);
}

#[test]
fn single_quote_fit_is_implied_vol() {
    let rows = vec![row(28, 103.0, 2.1)];
    let s = slice_28(&rows);
    let fit = fit_parametric(&s, ModelTag::Bs, &CalibrationConfig::default()).unwrap();
    let FittedParams::Bs { sigma } = fit.params else { panic!() };
    assert!((sigma - s.quotes[0].market_iv).abs() < 1e-7);
}

#[test]
fn fits_are_deterministic() {
    let s = slice_28(&bs_chain(0.25));
    let cfg = CalibrationConfig { fit_seed: 9, ..CalibrationConfig::default() };
    let a = fit_parametric(&s, ModelTag::Jd, &cfg).unwrap();
    let b = fit_parametric(&s, ModelTag::Jd, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn ivrmse_cases() {
    let s = slice_28(&bs_chain(0.2));
    let exact = model_prices(&s, &FittedParams::Bs { sigma: 0.2 });
    let r = ivrmse(&s, &exact).unwrap();
    assert!(r.value < 1e-6 && r.n_used == 15 && r.n_dropped == 0);
    let shifted = model_prices(&s, &FittedParams::Bs { sigma: 0.21 });
    assert!((ivrmse(&s, &shifted).unwrap().value - 10.0).abs() < 1e-6);
    let mut partial = exact.clone();
    partial[0] = f64::NAN;
    partial[1] = 1e6;
    let r = ivrmse(&s, &partial).unwrap();
    assert_eq!((r.n_used, r.n_dropped), (13, 2));
    assert!(matches!(ivrmse(&s, &vec![f64::NAN; 15]), Err(Error::Undefined(_))));
    assert!(ivrmse(&s, &exact[..3]).is_err());
}

fn bs_table(model: ModelTag) -> PriceTable {
    let sigmas: Vec<f64> = (1..=10).map(|i| 0.05 * i as f64).collect();
    let moneyness: Vec<f64> = (0..=12).map(|i| 0.85 + 0.025 * i as f64).collect();
    let taus = vec![14.0 / 365.0, 28.0 / 365.0, 56.0 / 365.0];
    let grid = sigmas.clone();
    let t = taus.clone();
    PriceTable::build(model, 0.02, sigmas, moneyness, vec![14, 28, 56], taus, move |s, m, b| {
        let opt = EuroCall::new(1.0, m * (0.02 * t[b]).exp(), t[b], 0.02);
        bs_price(&opt, grid[s])
    })
    .unwrap()
}

#[test]
fn rl_fit_round_trip() {
    let table = bs_table(ModelTag::Rlop);
    let s = slice_28(&bs_chain(0.2));
    let fit = fit_rl_sigma(&s, &table).unwrap();
    let FittedParams::Rl { sigma } = fit.params else { panic!() };
    assert_eq!(fit.model, ModelTag::Rlop);
    assert!((sigma - 0.2).abs() < 0.05, "{sigma}");
    assert!(!fit.boundary_hit);

    let high = slice_28(&bs_chain(0.9));
    let fit = fit_rl_sigma(&high, &table).unwrap();
    assert!(fit.boundary_hit);
}

#[test]
fn rl_fit_duplicate_and_empty() {
    let table = bs_table(ModelTag::Qlbs);
    let one = slice_28(&[row(28, 100.0, 2.5)]);
    let two = slice_28(&[row(28, 100.0, 2.5), row(28, 100.0, 2.5)]);
    let (a, b) = (fit_rl_sigma(&one, &table).unwrap(), fit_rl_sigma(&two, &table).unwrap());
    let (FittedParams::Rl { sigma: sa }, FittedParams::Rl { sigma: sb }) = (a.params, b.params) else { panic!() };
    assert!((sa - sb).abs() < 1e-8);
    let mut empty = one.clone();
    empty.quotes.clear();
    assert!(matches!(fit_rl_sigma(&empty, &table), Err(Error::EmptySlice(_))));
    assert!(matches!(fit_parametric(&empty, ModelTag::Bs, &CalibrationConfig::default()), Err(Error::EmptySlice(_))));
}

#[test]
fn table_interpolation() {
    let table = bs_table(ModelTag::Rlop);
    assert!(table.normalized_price(0.2, 0.5, 28).is_none());
    assert!(table.normalized_price(0.2, 1.0, 21).is_none());
    let opt = EuroCall::new(1.0, 1.0 * (0.02f64 * 28.0 / 365.0).exp(), 28.0 / 365.0, 0.02);
    let exact = bs_price(&opt, 0.2).unwrap();
    assert!((table.normalized_price(0.2, 1.0, 28).unwrap() - exact).abs() < 1e-14);
    let between = table.normalized_price(0.225, 1.0, 28).unwrap();
    assert!((between - bs_price(&opt, 0.225).unwrap()).abs() < 1e-5);
}

#[test]
fn equal_day_weights() {
    assert_eq!(equal_day_mean([Some(1.0), None, Some(3.0)]), Some((2.0, 2)));
    assert_eq!(equal_day_mean([None]), None);
}

#[test]
fn deltas() {
    let opt = EuroCall::new(100.0, 100.0, 0.25, 0.01);
    let bs = FittedParams::Bs { sigma: 0.2 }.delta(&opt).unwrap();
    let jd = FittedParams::Jd(JdParams { sigma: 0.2, jump_intensity: 0.0, jump_mean: 0.0, jump_vol: 0.0 }).delta(&opt).unwrap();
    assert!((bs - jd).abs() < 1e-7);
    assert!(FittedParams::Rl { sigma: 0.2 }.price(&opt).is_err());
}
