//! Synthetic option chains: a GBM underlying quoted with Black-Scholes prices.

use chrono::{Datelike, Duration, NaiveDate, Weekday};

use hedgelab::data_io::ChainRow;
use hedgelab::pricing::{bs_price, EuroCall};
use hedgelab::rng::{self, domain, standard_normal};

use crate::config::SynthSection;

/// Quotes below this fraction of spot are not listed.
const MIN_QUOTE: f64 = 5e-5;
/// Longest listed maturity in calendar days.
const MAX_LISTED_DAYS: i64 = 80;

fn is_weekday(d: NaiveDate) -> bool {
    !matches!(d.weekday(), Weekday::Sat | Weekday::Sun)
}

/// The first `n` weekdays on or after `start`.
pub fn trading_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    start.iter_days().filter(|d| is_weekday(*d)).take(n).collect()
}

/// Daily closes on `days` from exact log-normal steps over calendar time.
pub fn realized_spots(s: &SynthSection, days: &[NaiveDate], seed: u64) -> Vec<f64> {
    let mut g = rng::stream(seed, domain::PATHS, 0);
    let mut spots = vec![s.s0];
    for w in days.windows(2) {
        let dt = (w[1] - w[0]).num_days() as f64 / 365.0;
        let z = standard_normal(&mut g);
        let last = *spots.last().unwrap();
        spots.push(last * ((s.mu - 0.5 * s.sigma * s.sigma) * dt + s.sigma * dt.sqrt() * z).exp());
    }
    spots
}

/// Chain over `n_days` trading days: every listed expiry (Fridays spaced
/// `expiry_every_days` apart, up to 80 days out) crossed with the strike
/// grid, priced by Black-Scholes at the generating volatility.
pub fn generate_chain(s: &SynthSection, seed: u64) -> Vec<ChainRow> {
    let days = trading_days(s.start, s.n_days);
    let spots = realized_spots(s, &days, seed);
    let first_friday = s.start.iter_days().find(|d| d.weekday() == Weekday::Fri).unwrap();
    let last = *days.last().unwrap() + Duration::days(MAX_LISTED_DAYS);
    let expiries: Vec<NaiveDate> = (0..)
        .map(|k| first_friday + Duration::days(k * s.expiry_every_days))
        .take_while(|d| *d <= last)
        .filter(|d| is_weekday(*d))
        .collect();
    let mut rows = Vec::new();
    for (&date, &spot) in days.iter().zip(&spots) {
        for &expiry in &expiries {
            let dte = (expiry - date).num_days();
            if dte < 1 || dte > MAX_LISTED_DAYS {
                continue;
            }
            for &k in &s.strikes {
                let strike = k * s.s0;
                let opt = EuroCall::new(spot, strike, dte as f64 / 365.0, s.rate);
                let Ok(mid) = bs_price(&opt, s.sigma) else { continue };
                if mid < MIN_QUOTE * spot {
                    continue;
                }
                rows.push(ChainRow { date, asset: s.asset.clone(), expiry, strike, call_mid: mid, spot, rate: s.rate });
            }
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_shape() {
        let s = SynthSection { n_days: 5, ..SynthSection::default() };
        let rows = generate_chain(&s, 1);
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|r| r.expiry > r.date && r.expiry.weekday() == Weekday::Fri));
        let dates: std::collections::BTreeSet<_> = rows.iter().map(|r| r.date).collect();
        assert_eq!(dates.len(), 5);
        assert!(dates.iter().all(|d| is_weekday(*d)));
        assert_eq!(generate_chain(&s, 1), rows);
    }
}
