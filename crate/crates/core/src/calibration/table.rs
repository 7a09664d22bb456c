use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ModelTag, OptionSlice, SliceQuote};
use crate::error::{ensure, Result};
use crate::policy::{EnvConfig, TrainedModel};
use crate::pricing::{bs_price, implied_vol, EuroCall};
use crate::qlbs::qlbs_price;
use crate::rlop::refine_wealth;

/// Monotone piecewise-cubic Hermite interpolation (Fritsch-Carlson slopes).
/// `x` is clamped to the node range.
pub fn pchip(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    debug_assert!(n == ys.len() && n >= 1);
    if n == 1 {
        return ys[0];
    }
    let x = x.clamp(xs[0], xs[n - 1]);
    let k = xs.partition_point(|&v| v <= x).clamp(1, n - 1) - 1;
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let d: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
    let slope = |i: usize| -> f64 {
        if n == 2 {
            return d[0];
        }
        if i == 0 || i == n - 1 {
            // One-sided three-point estimate, limited to preserve shape.
            let (h0, h1, d0, d1) = if i == 0 { (h[0], h[1], d[0], d[1]) } else { (h[n - 2], h[n - 3], d[n - 2], d[n - 3]) };
            let m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
            if m.signum() != d0.signum() {
                0.0
            } else if d0.signum() != d1.signum() && m.abs() > 3.0 * d0.abs() {
                3.0 * d0
            } else {
                m
            }
        } else if d[i - 1] * d[i] <= 0.0 {
            0.0
        } else {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            (w1 + w2) / (w1 / d[i - 1] + w2 / d[i])
        }
    };
    let (m0, m1) = (slope(k), slope(k + 1));
    let t = (x - xs[k]) / h[k];
    let t2 = t * t;
    let t3 = t2 * t;
    (2.0 * t3 - 3.0 * t2 + 1.0) * ys[k]
        + (t3 - 2.0 * t2 + t) * h[k] * m0
        + (-2.0 * t3 + 3.0 * t2) * ys[k + 1]
        + (t3 - t2) * h[k] * m1
}

/// Model call prices divided by spot on a `(sigma, K/F, bucket)` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    pub model: ModelTag,
    /// Rate the table was priced at.
    pub rate: f64,
    pub sigmas: Vec<f64>,
    pub moneyness: Vec<f64>,
    /// Bucket centers in days.
    pub buckets: Vec<u32>,
    /// Model horizon in years for each bucket.
    pub taus: Vec<f64>,
    /// Indexed `[sigma][bucket][moneyness]`; `NaN` marks a failed cell.
    pub prices: Vec<f64>,
}

fn strictly_increasing(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite()) && xs.windows(2).all(|w| w[0] < w[1])
}

impl PriceTable {
    /// Fills every cell with `cell(sigma_index, moneyness, bucket_index)`.
    pub fn build(
        model: ModelTag,
        rate: f64,
        sigmas: Vec<f64>,
        moneyness: Vec<f64>,
        buckets: Vec<u32>,
        taus: Vec<f64>,
        cell: impl Fn(usize, f64, usize) -> Result<f64> + Sync,
    ) -> Result<Self> {
        let (ns, nb, nm) = (sigmas.len(), buckets.len(), moneyness.len());
        let prices = (0..ns * nb * nm)
            .into_par_iter()
            .map(|idx| cell(idx / (nb * nm), moneyness[idx % nm], (idx / nm) % nb))
            .collect::<Result<Vec<f64>>>()?;
        let table = Self { model, rate, sigmas, moneyness, buckets, taus, prices };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.model.is_parametric(), Validation, "price tables hold RL models");
        ensure!(self.sigmas.len() >= 2 && strictly_increasing(&self.sigmas), Validation, "sigma grid must have >= 2 increasing nodes");
        ensure!(self.moneyness.len() >= 2 && strictly_increasing(&self.moneyness), Validation, "moneyness grid must have >= 2 increasing nodes");
        ensure!(!self.buckets.is_empty() && self.buckets.len() == self.taus.len(), Validation, "one horizon per bucket is required");
        ensure!(self.taus.iter().all(|t| *t > 0.0), Validation, "bucket horizons must be > 0");
        ensure!(
            self.prices.len() == self.sigmas.len() * self.buckets.len() * self.moneyness.len(),
            Validation,
            "price array has the wrong length"
        );
        Ok(())
    }

    fn bucket_index(&self, bucket: u32) -> Option<usize> {
        self.buckets.iter().position(|b| *b == bucket)
    }

    pub fn covers(&self, moneyness: f64, bucket: u32) -> bool {
        self.bucket_index(bucket).is_some()
            && moneyness >= self.moneyness[0]
            && moneyness <= self.moneyness[self.moneyness.len() - 1]
    }

    /// `C / S` at the bucket horizon, linear in moneyness and monotone cubic
    /// in sigma (clamped to the grid).
    pub fn normalized_price(&self, sigma: f64, moneyness: f64, bucket: u32) -> Option<f64> {
        if !self.covers(moneyness, bucket) {
            return None;
        }
        let b = self.bucket_index(bucket)?;
        let (nb, nm) = (self.buckets.len(), self.moneyness.len());
        let j = self.moneyness.partition_point(|&v| v <= moneyness).clamp(1, nm - 1) - 1;
        let w = (moneyness - self.moneyness[j]) / (self.moneyness[j + 1] - self.moneyness[j]);
        let column: Vec<f64> = (0..self.sigmas.len())
            .map(|s| {
                let row = &self.prices[(s * nb + b) * nm..(s * nb + b + 1) * nm];
                (1.0 - w) * row[j] + w * row[j + 1]
            })
            .collect();
        let v = pchip(&self.sigmas, &column, sigma);
        v.is_finite().then_some(v)
    }

    /// Price of a slice quote. The table value is carried to the quote's own
    /// maturity and rate through its Black-Scholes implied volatility.
    pub fn quote_price(&self, sigma: f64, q: &SliceQuote, slice: &OptionSlice) -> Option<f64> {
        let c = self.normalized_price(sigma, q.moneyness, slice.bucket_days)?;
        let tau_b = self.taus[self.bucket_index(slice.bucket_days)?];
        let at_bucket = EuroCall::new(1.0, q.moneyness * (self.rate * tau_b).exp(), tau_b, self.rate);
        match implied_vol(&at_bucket, c) {
            Ok(iv) => bs_price(&slice.option(q), iv).ok(),
            Err(_) => Some(c * slice.spot),
        }
    }
}

/// Price over spot of a call with `K/F = moneyness` expiring after
/// `n_steps` of the trained model's environment, under its learned policy.
pub fn rl_normalized_price(model: &TrainedModel, moneyness: f64, n_steps: usize, n_paths: usize, seed: u64) -> Result<f64> {
    ensure!(moneyness > 0.0 && moneyness.is_finite(), Validation, "moneyness must be > 0");
    ensure!(n_steps >= 1, Validation, "n_steps must be >= 1");
    match &model.env {
        EnvConfig::Qlbs(base) => {
            let mut cfg = base.clone();
            cfg.params.n_steps = n_steps;
            cfg.strike = moneyness * cfg.params.s0 * (cfg.params.r * cfg.params.maturity()).exp();
            cfg.batch_size = n_paths;
            Ok(qlbs_price(&model.policy, &cfg, 1, seed)?.price / cfg.params.s0)
        }
        EnvConfig::Rlop(base) => {
            ensure!(
                n_steps <= base.params.n_steps,
                Validation,
                "expiry after {n_steps} steps is beyond the trained horizon of {}",
                base.params.n_steps
            );
            let mut cfg = base.clone();
            cfg.strike = moneyness * cfg.params.s0 * (cfg.params.r * cfg.params.time_at(n_steps)).exp();
            let w = refine_wealth(&model.policy, &cfg, n_paths, seed)?;
            Ok(w.pi0[n_steps - 1] / cfg.params.s0)
        }
    }
}
