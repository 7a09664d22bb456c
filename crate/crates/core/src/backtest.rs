//! Delta-hedging of a short call over a realized path, with the three desk
//! metrics and equal-day aggregation.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::accounting::{rlop_forward_portfolio, CostSpec, HedgeLedger};
use crate::calibration::{BucketSpec, FittedParams, ModelTag, OptionSlice, SliceQuote};
use crate::data_io::{ChainRow, Metric, ReportRow};
use crate::error::{ensure, Error, Result};
use crate::market::MarketParams;
use crate::policy::{EnvKind, GaussianPolicy, Observation, Policy};
use crate::pricing::EuroCall;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoneynessGroup {
    Atm,
    NearOtm,
}

impl MoneynessGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            MoneynessGroup::Atm => "atm",
            MoneynessGroup::NearOtm => "near_otm",
        }
    }

    /// Target `K / F`.
    pub fn target(self) -> f64 {
        match self {
            MoneynessGroup::Atm => 1.0,
            MoneynessGroup::NearOtm => 1.03,
        }
    }
}

/// Quote whose `K/F` is closest to the group target (lower strike on ties).
pub fn select_strike(slice: &OptionSlice, group: MoneynessGroup) -> Option<&SliceQuote> {
    slice.quotes.iter().min_by(|a, b| {
        let da = (a.moneyness - group.target()).abs();
        let db = (b.moneyness - group.target()).abs();
        da.total_cmp(&db).then(a.strike.total_cmp(&b.strike))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PremiumSource {
    /// Market mid on the entry day.
    Mid,
    /// The hedging model's own price.
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestConfig {
    pub cost: CostSpec<f64>,
    pub premium: PremiumSource,
    /// Also hedge with parametric deltas refit on each rebalancing day.
    pub refit_daily: bool,
    /// Drift used to normalize the RL state; `None` means the rate.
    pub state_drift: Option<f64>,
    pub groups: Vec<MoneynessGroup>,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            cost: CostSpec::frictionless(),
            premium: PremiumSource::Mid,
            refit_daily: false,
            state_drift: None,
            groups: vec![MoneynessGroup::Atm, MoneynessGroup::NearOtm],
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        self.cost.validate()?;
        ensure!(!self.groups.is_empty(), Validation, "at least one moneyness group is required");
        if let Some(mu) = self.state_drift {
            ensure!(mu.is_finite(), Validation, "state_drift must be finite");
        }
        Ok(())
    }
}

/// One short-call hedge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HedgePlan {
    pub model: ModelTag,
    pub strike: f64,
    pub entry: NaiveDate,
    pub expiry: NaiveDate,
    pub premium: f64,
    pub rate: f64,
    pub cost: CostSpec<f64>,
}

impl HedgePlan {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.strike > 0.0, Validation, "strike must be > 0");
        ensure!(self.premium > 0.0 && self.premium.is_finite(), Validation, "premium must be > 0, got {}", self.premium);
        ensure!(self.expiry > self.entry, Validation, "expiry must follow entry");
        ensure!(self.rate.is_finite(), Validation, "rate must be finite");
        self.cost.validate()
    }

    pub fn tau_years(&self) -> f64 {
        (self.expiry - self.entry).num_days() as f64 / 365.0
    }
}

/// What a delta source sees at one rebalancing time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HedgeStep {
    pub t_index: usize,
    pub date: Option<NaiveDate>,
    /// Years since entry.
    pub elapsed: f64,
    pub spot: f64,
    /// Years to expiry.
    pub tau_remaining: f64,
}

pub trait DeltaSource: Sync {
    fn delta(&self, step: &HedgeStep) -> Result<f64>;
}

/// Parametric hedge ratio at fixed fitted parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParametricDelta {
    pub params: FittedParams,
    pub strike: f64,
    pub rate: f64,
}

impl DeltaSource for ParametricDelta {
    fn delta(&self, step: &HedgeStep) -> Result<f64> {
        self.params.delta(&EuroCall::new(step.spot, self.strike, step.tau_remaining, self.rate))
    }
}

/// Parametric hedge ratio refit each day: uses the fit for the date and the
/// bucket of the remaining maturity, falling back to the entry fit.
#[derive(Debug, Clone)]
pub struct RefitDelta {
    pub entry: ParametricDelta,
    pub fits: BTreeMap<(NaiveDate, u32), FittedParams>,
    pub buckets: BucketSpec,
}

impl DeltaSource for RefitDelta {
    fn delta(&self, step: &HedgeStep) -> Result<f64> {
        let days = (step.tau_remaining * 365.0).round() as i64;
        let fit = step
            .date
            .zip(self.buckets.bucket_of(days))
            .and_then(|key| self.fits.get(&key))
            .copied()
            .unwrap_or(self.entry.params);
        ParametricDelta { params: fit, ..self.entry }.delta(step)
    }
}

/// Mean action of a trained policy, fed the backtest clock.
#[derive(Debug, Clone, Copy)]
pub struct PolicyDelta<'a> {
    pub policy: &'a GaussianPolicy,
    pub kind: EnvKind,
    /// Environment the policy was trained in; `dt` and `n_steps` set the
    /// RLOP time feature and `sigma` the state normalization.
    pub env: MarketParams<f64>,
    /// Drift in the state normalization.
    pub drift: f64,
    pub strike: f64,
    /// Hedge horizon in years.
    pub horizon: f64,
}

impl DeltaSource for PolicyDelta<'_> {
    fn delta(&self, step: &HedgeStep) -> Result<f64> {
        ensure!(step.spot > 0.0, Domain, "price must be positive");
        let time_frac = match self.kind {
            // The QLBS environment ends at the option's expiry.
            EnvKind::Qlbs => step.elapsed / self.horizon,
            // RLOP time runs over its training horizon.
            EnvKind::Rlop => step.elapsed / self.env.maturity(),
        };
        let sigma = self.env.sigma;
        let obs = Observation {
            t_index: step.t_index,
            time_frac: time_frac.clamp(0.0, 1.0),
            state: step.spot.ln() - (self.drift - 0.5 * sigma * sigma) * step.elapsed,
            spot: step.spot,
            strike: self.strike,
            time_to_expiry: step.tau_remaining,
        };
        let (mu, _) = self.policy.distribution(&obs);
        ensure!(mu.is_finite(), Numeric, "policy mean is not finite");
        Ok(mu)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeOutcome {
    /// `V_T - (S_T - K)^+`.
    pub pi_t: f64,
    pub total_cost: f64,
    pub turnover: f64,
    pub ledger: HedgeLedger<f64>,
}

/// Self-financing hedge from wealth `premium` over `prices` sampled every
/// `dt` years, rebalanced to `delta` at each step before expiry.
pub fn hedge_uniform(
    premium: f64,
    strike: f64,
    rate: f64,
    prices: &[f64],
    dt: f64,
    cost: &CostSpec<f64>,
    dates: Option<&[NaiveDate]>,
    delta: &(impl DeltaSource + ?Sized),
) -> Result<HedgeOutcome> {
    ensure!(prices.len() >= 2, Validation, "a hedge needs at least two prices");
    let n = prices.len() - 1;
    let actions = (0..n)
        .map(|t| {
            let step = HedgeStep {
                t_index: t,
                date: dates.map(|d| d[t]),
                elapsed: t as f64 * dt,
                spot: prices[t],
                tau_remaining: (n - t) as f64 * dt,
            };
            let u = delta.delta(&step)?;
            ensure!(u.is_finite(), Numeric, "non-finite hedge ratio at step {t}");
            Ok(u)
        })
        .collect::<Result<Vec<f64>>>()?;
    let params = MarketParams { mu: rate, sigma: 0.0, r: rate, dt, n_steps: n, s0: prices[0] };
    let ledger = rlop_forward_portfolio(premium, prices, &actions, &params, cost)?;
    let residual = ledger.max_relative_residual();
    ensure!(residual <= 1e-9, Numeric, "hedge ledger is not self-financing (residual {residual:e})");
    let payoff = (prices[n] - strike).max(0.0);
    Ok(HedgeOutcome {
        pi_t: ledger.terminal_value() - payoff,
        total_cost: ledger.cum_cost,
        turnover: ledger.turnover(),
        ledger,
    })
}

/// Realized `(date, spot)` path from entry through expiry inclusive.
pub fn realized_path(series: &BTreeMap<NaiveDate, f64>, entry: NaiveDate, expiry: NaiveDate) -> Result<Vec<(NaiveDate, f64)>> {
    for d in [entry, expiry] {
        ensure!(series.contains_key(&d), Data, "no underlying price on {d}");
    }
    Ok(series.range(entry..=expiry).map(|(d, s)| (*d, *s)).collect())
}

/// Closing spot per asset and date, taken from the chain.
pub fn spot_series(rows: &[ChainRow]) -> BTreeMap<String, BTreeMap<NaiveDate, f64>> {
    let mut out: BTreeMap<String, BTreeMap<NaiveDate, f64>> = BTreeMap::new();
    for r in rows {
        out.entry(r.asset.clone()).or_default().insert(r.date, r.spot);
    }
    out
}

/// Hedges a plan over a dated path. Rebalancing happens on every path date;
/// interest accrues at a uniform step `tau / n` so that cash grows by
/// exactly `e^{r tau}` over the hedge.
pub fn run_hedge(plan: &HedgePlan, path: &[(NaiveDate, f64)], delta: &(impl DeltaSource + ?Sized)) -> Result<HedgeOutcome> {
    plan.validate()?;
    ensure!(
        path.first().map(|p| p.0) == Some(plan.entry) && path.last().map(|p| p.0) == Some(plan.expiry),
        Data,
        "path must run from {} to {}",
        plan.entry,
        plan.expiry
    );
    ensure!(path.windows(2).all(|w| w[0].0 < w[1].0), Data, "path dates must increase");
    let prices: Vec<f64> = path.iter().map(|p| p.1).collect();
    let dates: Vec<NaiveDate> = path.iter().map(|p| p.0).collect();
    let dt = plan.tau_years() / (path.len() - 1) as f64;
    hedge_uniform(plan.premium, plan.strike, plan.rate, &prices, dt, &plan.cost, Some(&dates), delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HedgeMetrics {
    pub hedging_rmse: f64,
    pub avg_trading_cost: f64,
    pub shortfall_prob: f64,
    pub n_hedges: usize,
}

pub fn metrics(pi_t: &[f64], costs: &[f64]) -> Result<HedgeMetrics> {
    if pi_t.is_empty() {
        return Err(Error::Undefined("no hedges to summarize".into()));
    }
    ensure!(pi_t.len() == costs.len(), Validation, "{} outcomes but {} costs", pi_t.len(), costs.len());
    let n = pi_t.len() as f64;
    Ok(HedgeMetrics {
        hedging_rmse: (pi_t.iter().map(|p| p * p).sum::<f64>() / n).sqrt(),
        avg_trading_cost: costs.iter().sum::<f64>() / n,
        shortfall_prob: pi_t.iter().filter(|p| **p < 0.0).count() as f64 / n,
        n_hedges: pi_t.len(),
    })
}

/// Unweighted mean of each metric across days.
pub fn equal_day_aggregate(days: &[HedgeMetrics]) -> Result<HedgeMetrics> {
    if days.is_empty() {
        return Err(Error::Undefined("no days to aggregate".into()));
    }
    let n = days.len() as f64;
    let mean = |f: fn(&HedgeMetrics) -> f64| days.iter().map(f).sum::<f64>() / n;
    Ok(HedgeMetrics {
        hedging_rmse: mean(|m| m.hedging_rmse),
        avg_trading_cost: mean(|m| m.avg_trading_cost),
        shortfall_prob: mean(|m| m.shortfall_prob),
        n_hedges: days.iter().map(|m| m.n_hedges).sum(),
    })
}

/// Report cell coordinates.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub asset: String,
    pub period: String,
    pub bucket: String,
    pub moneyness_group: String,
    pub model: String,
}

/// The three metric rows of one aggregated cell.
pub fn metric_rows(experiment_id: &str, key: &CellKey, m: &HedgeMetrics, n_days: usize) -> Vec<ReportRow> {
    [
        (Metric::HedgingRmse, m.hedging_rmse),
        (Metric::AvgTradingCost, m.avg_trading_cost),
        (Metric::ShortfallProb, m.shortfall_prob),
    ]
    .into_iter()
    .map(|(metric, value)| ReportRow {
        experiment_id: experiment_id.to_string(),
        asset: key.asset.clone(),
        period: key.period.clone(),
        bucket: key.bucket.clone(),
        moneyness_group: key.moneyness_group.clone(),
        model: key.model.clone(),
        metric,
        value,
        n_days,
    })
    .collect()
}

/// Calendar quarter label such as `2020Q1`.
pub fn quarter(date: NaiveDate) -> String {
    use chrono::Datelike;
    format!("{}Q{}", date.year(), (date.month() - 1) / 3 + 1)
}
