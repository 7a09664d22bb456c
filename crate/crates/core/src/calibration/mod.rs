//! Daily cross-section calibration and the implied-volatility RMSE.
//!
//! Quotes are grouped by maturity bucket, parametric models are fit by
//! least squares in price space, and the RL models are fit by their
//! volatility alone against a precomputed [`PriceTable`].

pub mod nelder_mead;
mod table;

pub use table::{pchip, rl_normalized_price, PriceTable};

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::ChainRow;
use crate::error::{ensure, Error, Result};
use crate::pricing::{bs_delta, bs_price, implied_vol, jd_price, numeric_delta, sv_price, sv_price_strip, EuroCall, JdParams, SvParams};
use crate::rng::{self, domain};
use nelder_mead::NmOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTag {
    Bs,
    Jd,
    Sv,
    Qlbs,
    Rlop,
}

impl ModelTag {
    pub const ALL: [ModelTag; 5] = [ModelTag::Bs, ModelTag::Jd, ModelTag::Sv, ModelTag::Qlbs, ModelTag::Rlop];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelTag::Bs => "bs",
            ModelTag::Jd => "jd",
            ModelTag::Sv => "sv",
            ModelTag::Qlbs => "qlbs",
            ModelTag::Rlop => "rlop",
        }
    }

    pub fn is_parametric(self) -> bool {
        matches!(self, ModelTag::Bs | ModelTag::Jd | ModelTag::Sv)
    }
}

/// Maturity buckets in calendar days. Bucket `k` covers
/// `[boundaries[k-1], boundaries[k])`, the outer edges being the day filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BucketSpec {
    pub centers: Vec<u32>,
    pub boundaries: Vec<u32>,
    pub min_days: u32,
    /// Inclusive.
    pub max_days: u32,
}

impl Default for BucketSpec {
    fn default() -> Self {
        Self { centers: vec![14, 28, 56], boundaries: vec![21, 42], min_days: 3, max_days: 70 }
    }
}

impl BucketSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.centers.is_empty(), Validation, "at least one bucket center is required");
        ensure!(
            self.boundaries.len() + 1 == self.centers.len(),
            Validation,
            "{} centers need {} boundaries",
            self.centers.len(),
            self.centers.len() - 1
        );
        let mut edges = vec![self.min_days];
        edges.extend(&self.boundaries);
        edges.push(self.max_days + 1);
        ensure!(edges.windows(2).all(|w| w[0] < w[1]), Validation, "bucket edges must increase");
        ensure!(
            self.centers.iter().zip(edges.windows(2)).all(|(c, w)| *c >= w[0] && *c < w[1]),
            Validation,
            "each center must lie inside its bucket"
        );
        Ok(())
    }

    /// Bucket center for a quote `days` from expiry, if it passes the filter.
    pub fn bucket_of(&self, days: i64) -> Option<u32> {
        if days < self.min_days as i64 || days > self.max_days as i64 {
            return None;
        }
        let k = self.boundaries.iter().filter(|&&b| days >= b as i64).count();
        Some(self.centers[k])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceQuote {
    pub strike: f64,
    pub tau: f64,
    pub days: i64,
    pub mid: f64,
    pub forward: f64,
    /// `K / F`.
    pub moneyness: f64,
    pub market_iv: f64,
}

/// One day's quotes for one asset in one maturity bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionSlice {
    pub date: NaiveDate,
    pub asset: String,
    pub spot: f64,
    pub rate: f64,
    pub bucket_days: u32,
    pub quotes: Vec<SliceQuote>,
    /// Quotes outside the no-arbitrage band (no market IV).
    pub n_arbitrage_dropped: usize,
}

impl OptionSlice {
    pub fn option(&self, q: &SliceQuote) -> EuroCall<f64> {
        EuroCall::new(self.spot, q.strike, q.tau, self.rate)
    }

    pub fn is_empty(&self) -> bool {
        self.quotes.is_empty()
    }
}

/// Groups rows by `(date, asset)`.
pub fn group_days(rows: &[ChainRow]) -> BTreeMap<(NaiveDate, String), Vec<ChainRow>> {
    let mut days: BTreeMap<(NaiveDate, String), Vec<ChainRow>> = BTreeMap::new();
    for row in rows {
        days.entry((row.date, row.asset.clone())).or_default().push(row.clone());
    }
    days
}

/// Builds the slice for bucket `center` from one day's chain for one asset.
pub fn bucket_slice(day: &[ChainRow], center: u32, spec: &BucketSpec) -> Result<OptionSlice> {
    spec.validate()?;
    ensure!(spec.centers.contains(&center), Validation, "{center} is not a bucket center");
    let first = day.first().ok_or_else(|| Error::EmptySlice("no quotes for the day".into()))?;
    for row in day {
        ensure!(
            row.date == first.date && row.asset == first.asset,
            Data,
            "chain mixes days or assets ({} {} vs {} {})",
            row.date,
            row.asset,
            first.date,
            first.asset
        );
        ensure!(
            row.spot == first.spot && row.rate == first.rate,
            Data,
            "inconsistent spot or rate within {} {}",
            first.asset,
            first.date
        );
    }
    let (spot, rate) = (first.spot, first.rate);
    let mut quotes = Vec::new();
    let mut n_arbitrage_dropped = 0;
    for row in day.iter().filter(|r| spec.bucket_of(r.days_to_expiry()) == Some(center)) {
        let tau = row.tau_years();
        let opt = EuroCall::new(spot, row.strike, tau, rate);
        match implied_vol(&opt, row.call_mid) {
            Ok(iv) => {
                let forward = opt.forward();
                quotes.push(SliceQuote {
                    strike: row.strike,
                    tau,
                    days: row.days_to_expiry(),
                    mid: row.call_mid,
                    forward,
                    moneyness: row.strike / forward,
                    market_iv: iv,
                });
            }
            Err(_) => n_arbitrage_dropped += 1,
        }
    }
    if quotes.is_empty() {
        return Err(Error::EmptySlice(format!("{} {} has no valid quotes in the {center}d bucket", first.asset, first.date)));
    }
    Ok(OptionSlice { date: first.date, asset: first.asset.clone(), spot, rate, bucket_days: center, quotes, n_arbitrage_dropped })
}

/// Box constraints for the parametric fits, as `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitBounds {
    pub sigma: [f64; 2],
    pub jump_intensity: [f64; 2],
    pub jump_mean: [f64; 2],
    pub jump_vol: [f64; 2],
    pub v0: [f64; 2],
    pub kappa: [f64; 2],
    pub theta: [f64; 2],
    pub xi: [f64; 2],
    pub rho: [f64; 2],
}

impl Default for FitBounds {
    fn default() -> Self {
        Self {
            sigma: [0.01, 3.0],
            jump_intensity: [0.0, 5.0],
            jump_mean: [-1.0, 1.0],
            jump_vol: [0.0, 2.0],
            v0: [1e-4, 2.0],
            kappa: [1e-3, 20.0],
            theta: [1e-4, 2.0],
            xi: [0.0, 5.0],
            rho: [-0.999, 0.999],
        }
    }
}

impl FitBounds {
    fn boxes(&self, model: ModelTag) -> Vec<[f64; 2]> {
        match model {
            ModelTag::Bs | ModelTag::Qlbs | ModelTag::Rlop => vec![self.sigma],
            ModelTag::Jd => vec![self.sigma, self.jump_intensity, self.jump_mean, self.jump_vol],
            ModelTag::Sv => vec![self.v0, self.kappa, self.theta, self.xi, self.rho],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for model in [ModelTag::Bs, ModelTag::Jd, ModelTag::Sv] {
            for [lo, hi] in self.boxes(model) {
                ensure!(lo.is_finite() && hi.is_finite() && lo <= hi, Validation, "bad fit bound [{lo}, {hi}]");
            }
        }
        ensure!(self.sigma[0] > 0.0, Validation, "sigma lower bound must be > 0");
        ensure!(self.v0[0] > 0.0 && self.kappa[0] > 0.0 && self.theta[0] > 0.0, Validation, "v0, kappa and theta bounds must be > 0");
        ensure!(self.jump_intensity[0] >= 0.0 && self.jump_vol[0] >= 0.0 && self.xi[0] >= 0.0, Validation, "nonnegative parameters need nonnegative bounds");
        ensure!(self.rho[0] >= -1.0 && self.rho[1] <= 1.0, Validation, "rho bounds must lie in [-1, 1]");
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub buckets: BucketSpec,
    pub bounds: FitBounds,
    pub n_starts: usize,
    pub max_iter: usize,
    /// Simplex size relative to the box, per coordinate.
    pub xtol: f64,
    /// Relative spread of objective values.
    pub ftol: f64,
    /// Iteration cap for the Heston fit, whose pricer is the slowest.
    pub sv_max_iter: usize,
    pub fit_seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            buckets: BucketSpec::default(),
            bounds: FitBounds::default(),
            n_starts: 5,
            max_iter: 2000,
            xtol: 1e-9,
            ftol: 1e-10,
            sv_max_iter: 600,
            fit_seed: 0,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        self.buckets.validate()?;
        self.bounds.validate()?;
        ensure!(self.n_starts >= 1, Validation, "n_starts must be >= 1");
        ensure!(self.max_iter >= 1 && self.sv_max_iter >= 1, Validation, "iteration caps must be >= 1");
        ensure!(self.xtol > 0.0 && self.ftol > 0.0, Validation, "tolerances must be > 0");
        Ok(())
    }
}

/// Fitted model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FittedParams {
    Bs { sigma: f64 },
    Jd(JdParams<f64>),
    Sv(SvParams<f64>),
    Rl { sigma: f64 },
}

impl FittedParams {
    fn from_vec(model: ModelTag, x: &[f64]) -> Self {
        match model {
            ModelTag::Bs => FittedParams::Bs { sigma: x[0] },
            ModelTag::Jd => FittedParams::Jd(JdParams { sigma: x[0], jump_intensity: x[1], jump_mean: x[2], jump_vol: x[3] }),
            ModelTag::Sv => FittedParams::Sv(SvParams { v0: x[0], kappa: x[1], theta: x[2], xi: x[3], rho: x[4] }),
            ModelTag::Qlbs | ModelTag::Rlop => FittedParams::Rl { sigma: x[0] },
        }
    }

    /// Call price under a parametric model. RL parameters need a table.
    pub fn price(&self, opt: &EuroCall<f64>) -> Result<f64> {
        match self {
            FittedParams::Bs { sigma } => bs_price(opt, *sigma),
            FittedParams::Jd(p) => jd_price(opt, p),
            FittedParams::Sv(p) => sv_price(opt, p),
            FittedParams::Rl { .. } => Err(Error::Validation("RL prices come from a price table".into())),
        }
    }

    /// Hedge ratio: analytic for BS, central differences for JD and SV, and
    /// the BS delta at the fitted volatility for the RL models.
    pub fn delta(&self, opt: &EuroCall<f64>) -> Result<f64> {
        match self {
            FittedParams::Bs { sigma } | FittedParams::Rl { sigma } => {
                opt.validate()?;
                Ok(bs_delta(opt, *sigma))
            }
            _ => numeric_delta(|o| self.price(o), opt, 1e-4),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: ModelTag,
    pub params: FittedParams,
    /// Sum of squared price errors.
    pub objective: f64,
    pub converged: bool,
    /// A fitted parameter sits on its bound.
    pub boundary_hit: bool,
    pub ivrmse_1e3: Option<f64>,
    pub n_quotes: usize,
    pub n_starts_failed: usize,
}

fn sum_squared_errors(slice: &OptionSlice, params: &FittedParams) -> f64 {
    let mut total = 0.0;
    for (q, p) in slice.quotes.iter().zip(model_prices(slice, params)) {
        if !p.is_finite() {
            return f64::INFINITY;
        }
        total += (p - q.mid).powi(2);
    }
    total
}

fn on_boundary(x: &[f64], boxes: &[[f64; 2]]) -> bool {
    x.iter().zip(boxes).any(|(v, [lo, hi])| {
        let tol = 1e-6 * (hi - lo).max(1e-12);
        *v - lo <= tol || hi - *v <= tol
    })
}

fn mean_market_iv(slice: &OptionSlice) -> f64 {
    slice.quotes.iter().map(|q| q.market_iv).sum::<f64>() / slice.quotes.len() as f64
}

/// Least-squares fit of BS, JD or SV to a slice by bounded multi-start
/// Nelder-Mead. The first start nests the BS solution where the model
/// allows it; the rest are uniform draws from the box.
pub fn fit_parametric(slice: &OptionSlice, model: ModelTag, cfg: &CalibrationConfig) -> Result<FitResult> {
    cfg.validate()?;
    ensure!(model.is_parametric(), Validation, "{} is not a parametric model", model.as_str());
    if slice.is_empty() {
        return Err(Error::EmptySlice(format!("{} {} {}d", slice.asset, slice.date, slice.bucket_days)));
    }
    let boxes = cfg.bounds.boxes(model);
    let lo: Vec<f64> = boxes.iter().map(|b| b[0]).collect();
    let hi: Vec<f64> = boxes.iter().map(|b| b[1]).collect();
    // Objective in units of spot^2 so the tolerances are scale free.
    let scale = slice.spot * slice.spot;
    let objective = |x: &[f64]| sum_squared_errors(slice, &FittedParams::from_vec(model, x)) / scale;
    let opts = NmOptions {
        max_iter: if model == ModelTag::Sv { cfg.sv_max_iter } else { cfg.max_iter },
        xtol: cfg.xtol,
        ftol: cfg.ftol,
    };

    let first = match model {
        ModelTag::Bs => vec![mean_market_iv(slice)],
        _ => {
            let bs = fit_parametric(slice, ModelTag::Bs, cfg)?;
            let FittedParams::Bs { sigma } = bs.params else { unreachable!() };
            if model == ModelTag::Jd {
                vec![sigma, 0.0, 0.0, 0.0]
            } else {
                // xi = 0 collapses Heston to BS with variance sigma^2.
                vec![sigma * sigma, 1.0, sigma * sigma, 0.0, 0.0]
            }
        }
    };
    let model_index = ModelTag::ALL.iter().position(|m| *m == model).unwrap() as u64;
    let starts: Vec<Vec<f64>> = std::iter::once(first)
        .chain((1..cfg.n_starts).map(|k| {
            let mut g = rng::stream(cfg.fit_seed, domain::FIT, model_index * 1024 + k as u64);
            boxes.iter().map(|[l, h]| if l == h { *l } else { g.gen_range(*l..*h) }).collect()
        }))
        .collect();

    let mut best: Option<nelder_mead::NmResult> = None;
    let mut n_failed = 0;
    let mut any_converged = false;
    for x0 in &starts {
        let r = nelder_mead::minimize(objective, x0, &lo, &hi, &opts);
        if !r.f.is_finite() || !r.converged {
            n_failed += 1;
        }
        any_converged |= r.f.is_finite() && r.converged;
        if r.f.is_finite() && best.as_ref().is_none_or(|b| r.f < b.f) {
            best = Some(r);
        }
    }
    let best = best.ok_or_else(|| Error::Numeric(format!("every {} start produced non-finite prices", model.as_str())))?;
    let params = FittedParams::from_vec(model, &best.x);
    let prices = model_prices(slice, &params);
    Ok(FitResult {
        model,
        params,
        objective: best.f * scale,
        converged: any_converged,
        boundary_hit: on_boundary(&best.x, &boxes),
        ivrmse_1e3: ivrmse(slice, &prices).ok().map(|r| r.value),
        n_quotes: slice.quotes.len(),
        n_starts_failed: n_failed,
    })
}

/// Model price for every quote; `NaN` where the model cannot price it.
/// Heston quotes sharing a maturity are priced as one strip.
pub fn model_prices(slice: &OptionSlice, params: &FittedParams) -> Vec<f64> {
    let FittedParams::Sv(p) = params else {
        return slice.quotes.iter().map(|q| params.price(&slice.option(q)).unwrap_or(f64::NAN)).collect();
    };
    let mut by_tau: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, q) in slice.quotes.iter().enumerate() {
        by_tau.entry(q.tau.to_bits()).or_default().push(i);
    }
    let mut out = vec![f64::NAN; slice.quotes.len()];
    for (bits, idx) in by_tau {
        let strikes: Vec<f64> = idx.iter().map(|&i| slice.quotes[i].strike).collect();
        if let Ok(prices) = sv_price_strip(slice.spot, &strikes, f64::from_bits(bits), slice.rate, p) {
            for (i, v) in idx.into_iter().zip(prices) {
                out[i] = v;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IvrmseResult {
    /// `1000 * RMS(model IV - market IV)`.
    pub value: f64,
    pub n_used: usize,
    /// Model prices outside the no-arbitrage band or not finite.
    pub n_dropped: usize,
}

pub fn ivrmse(slice: &OptionSlice, model_prices: &[f64]) -> Result<IvrmseResult> {
    ensure!(
        model_prices.len() == slice.quotes.len(),
        Validation,
        "{} prices for {} quotes",
        model_prices.len(),
        slice.quotes.len()
    );
    let mut sum = 0.0;
    let mut n_used = 0;
    for (q, &p) in slice.quotes.iter().zip(model_prices) {
        if let Ok(iv) = implied_vol(&slice.option(q), p) {
            sum += (iv - q.market_iv).powi(2);
            n_used += 1;
        }
    }
    let n_dropped = slice.quotes.len() - n_used;
    if n_used == 0 {
        return Err(Error::Undefined("no model price has an implied volatility".into()));
    }
    Ok(IvrmseResult { value: 1000.0 * (sum / n_used as f64).sqrt(), n_used, n_dropped })
}

/// Fits the RL volatility by golden-section search over the table, after a
/// coarse scan of the grid nodes to bracket the minimum.
pub fn fit_rl_sigma(slice: &OptionSlice, table: &PriceTable) -> Result<FitResult> {
    if slice.is_empty() {
        return Err(Error::EmptySlice(format!("{} {} {}d", slice.asset, slice.date, slice.bucket_days)));
    }
    let usable: Vec<&SliceQuote> = slice.quotes.iter().filter(|q| table.covers(q.moneyness, slice.bucket_days)).collect();
    if usable.is_empty() {
        return Err(Error::EmptySlice(format!(
            "no quote of {} {} {}d lies inside the price table",
            slice.asset, slice.date, slice.bucket_days
        )));
    }
    let objective = |sigma: f64| -> f64 {
        usable
            .iter()
            .map(|q| match table.quote_price(sigma, q, slice) {
                Some(p) => (p - q.mid).powi(2),
                None => f64::INFINITY,
            })
            .sum()
    };
    let grid = &table.sigmas;
    let values: Vec<f64> = grid.iter().map(|&s| objective(s)).collect();
    let k = (0..grid.len()).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    let (mut a, mut b) = (grid[k.saturating_sub(1)], grid[(k + 1).min(grid.len() - 1)]);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (objective(c), objective(d));
    while b - a > 1e-10 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d);
        }
    }
    let mut sigma = 0.5 * (a + b);
    let mut f = objective(sigma);
    if values[k] < f {
        sigma = grid[k];
        f = values[k];
    }
    ensure!(f.is_finite(), Numeric, "RL price table gives no finite objective");
    let (lo, hi) = (grid[0], grid[grid.len() - 1]);
    let prices: Vec<f64> = slice.quotes.iter().map(|q| table.quote_price(sigma, q, slice).unwrap_or(f64::NAN)).collect();
    Ok(FitResult {
        model: table.model,
        params: FittedParams::Rl { sigma },
        objective: f,
        converged: true,
        boundary_hit: on_boundary(&[sigma], &[[lo, hi]]),
        ivrmse_1e3: ivrmse(slice, &prices).ok().map(|r| r.value),
        n_quotes: usable.len(),
        n_starts_failed: 0,
    })
}

/// Unweighted mean over days, skipping missing values; `None` if none.
pub fn equal_day_mean(values: impl IntoIterator<Item = Option<f64>>) -> Option<(f64, usize)> {
    let xs: Vec<f64> = values.into_iter().flatten().collect();
    if xs.is_empty() {
        None
    } else {
        Some((xs.iter().sum::<f64>() / xs.len() as f64, xs.len()))
    }
}

#[cfg(test)]
mod tests;
