//! Simulated market: geometric Brownian motion paths and the normalized
//! log-price state observed by the hedging agents.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::rng::{self, domain};
use crate::scalar::Real;

/// Parameters of the simulated lognormal world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketParams<F> {
    /// Drift per year.
    pub mu: F,
    /// Volatility per year.
    pub sigma: F,
    /// Risk-free rate per year.
    pub r: F,
    /// Step size in years.
    pub dt: F,
    /// Number of steps to the horizon.
    pub n_steps: usize,
    /// Initial price.
    pub s0: F,
}

impl<F: Real> MarketParams<F> {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.sigma >= F::zero(), Validation, "sigma must be >= 0, got {}", self.sigma);
        ensure!(self.s0 > F::zero(), Validation, "s0 must be > 0, got {}", self.s0);
        ensure!(self.dt > F::zero(), Validation, "dt must be > 0, got {}", self.dt);
        ensure!(self.n_steps >= 1, Validation, "n_steps must be >= 1");
        ensure!(
            self.mu.is_finite() && self.r.is_finite(),
            Validation,
            "mu and r must be finite"
        );
        Ok(())
    }

    /// Horizon `n_steps * dt` in years.
    pub fn maturity(&self) -> F {
        F::from_usize(self.n_steps).unwrap() * self.dt
    }

    /// One-step discount factor `exp(-r dt)`.
    pub fn gamma(&self) -> F {
        (-self.r * self.dt).exp()
    }

    /// One-step accrual factor `exp(r dt)`.
    pub fn growth(&self) -> F {
        (self.r * self.dt).exp()
    }

    /// Time in years at step `t_index`.
    pub fn time_at(&self, t_index: usize) -> F {
        F::from_usize(t_index).unwrap() * self.dt
    }
}

/// A seeded batch of price paths, stored row-major `[n_paths x (n_steps + 1)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch<F> {
    prices: Vec<F>,
    n_paths: usize,
    pub seed: u64,
    pub params: MarketParams<F>,
}

impl<F: Real> PathBatch<F> {
    /// Wraps externally built paths. Every row must start at `params.s0` and
    /// stay strictly positive.
    pub fn from_rows(rows: Vec<Vec<F>>, params: MarketParams<F>, seed: u64) -> Result<Self> {
        params.validate()?;
        let width = params.n_steps + 1;
        ensure!(!rows.is_empty(), Validation, "path batch needs at least one path");
        let n_paths = rows.len();
        let mut prices = Vec::with_capacity(n_paths * width);
        for (p, row) in rows.into_iter().enumerate() {
            ensure!(row.len() == width, Validation, "path {p} has {} points, want {width}", row.len());
            ensure!(row.iter().all(|&s| s > F::zero()), Validation, "path {p} has a non-positive price");
            prices.extend(row);
        }
        Ok(Self { prices, n_paths, seed, params })
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn width(&self) -> usize {
        self.params.n_steps + 1
    }

    pub fn path(&self, p: usize) -> &[F] {
        let w = self.width();
        &self.prices[p * w..(p + 1) * w]
    }

    pub fn paths(&self) -> impl ExactSizeIterator<Item = &[F]> + '_ {
        self.prices.chunks_exact(self.width())
    }

    pub fn terminal(&self, p: usize) -> F {
        self.path(p)[self.params.n_steps]
    }

    /// Keeps every `stride`-th time point, giving the same paths observed on
    /// a coarser grid with `dt * stride`.
    pub fn subsample(&self, stride: usize) -> Result<Self> {
        ensure!(stride >= 1, Validation, "stride must be >= 1");
        ensure!(
            self.params.n_steps % stride == 0,
            Validation,
            "stride {stride} does not divide n_steps {}",
            self.params.n_steps
        );
        let mut params = self.params;
        params.n_steps /= stride;
        params.dt = params.dt * F::from_usize(stride).unwrap();
        let prices = self
            .paths()
            .flat_map(|row| row.iter().step_by(stride).copied())
            .collect();
        Ok(Self { prices, n_paths: self.n_paths, seed: self.seed, params })
    }
}

/// Simulates `n_paths` GBM paths with the exact log-Euler scheme
/// `S_{t+1} = S_t exp((mu - sigma^2/2) dt + sigma sqrt(dt) Z)`.
///
/// Path `p` draws from its own stream, so the batch is identical for any
/// worker count.
pub fn simulate_paths<F: Real>(params: &MarketParams<F>, n_paths: usize, seed: u64) -> Result<PathBatch<F>> {
    params.validate()?;
    ensure!(n_paths >= 1, Validation, "n_paths must be positive");
    let width = params.n_steps + 1;
    let half = F::lit(0.5);
    let drift = (params.mu - half * params.sigma * params.sigma) * params.dt;
    let vol = params.sigma * params.dt.sqrt();
    let mut prices = vec![F::zero(); n_paths * width];
    prices.par_chunks_mut(width).enumerate().for_each(|(p, row)| {
        let mut rng = rng::stream(seed, domain::PATHS, p as u64);
        let mut s = params.s0;
        row[0] = s;
        for slot in row.iter_mut().skip(1) {
            let z = F::lit(rng::standard_normal(&mut rng));
            s = s * (drift + vol * z).exp();
            *slot = s;
        }
    });
    assert!(
        prices.iter().all(|&s| s > F::zero() && s.is_finite()),
        "GBM produced a non-positive or non-finite price"
    );
    Ok(PathBatch { prices, n_paths, seed, params: *params })
}

/// Normalized state `X_t = -(mu - sigma^2/2) t + ln S_t`.
pub fn normalize_state<F: Real>(t_index: usize, s_t: F, params: &MarketParams<F>) -> Result<F> {
    ensure!(s_t > F::zero(), Domain, "price must be positive, got {s_t}");
    ensure!(
        t_index <= params.n_steps,
        Domain,
        "t_index {t_index} beyond horizon {}",
        params.n_steps
    );
    let t = params.time_at(t_index);
    Ok(-(params.mu - F::lit(0.5) * params.sigma * params.sigma) * t + s_t.ln())
}
