//! Adaptive-QLBS environment: actions are sampled forward along simulated
//! paths, portfolios are valued backward from the payoff, and the value
//! estimate combines a time-decayed portfolio term with a discounted
//! cross-sectional dispersion penalty:
//!
//! ```text
//! v[p][t] = -(1 - t/T) Pi_t[p] - lambda * sum_{tau >= t} gamma^{tau - t} risk_tau
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accounting::{qlbs_backward_portfolio, CostSpec, HedgeLedger};
use crate::error::{ensure, Result};
use crate::market::{normalize_state, simulate_paths, MarketParams, PathBatch};
use crate::policy::{Observation, Policy};
use crate::rng::{self, domain, standard_normal};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QlbsConfig {
    pub params: MarketParams<f64>,
    pub cost: CostSpec<f64>,
    /// Risk aversion on the dispersion term.
    pub lambda: f64,
    /// Call strike.
    pub strike: f64,
    /// Paths per rollout.
    pub batch_size: usize,
}

impl QlbsConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.cost.validate()?;
        ensure!(self.lambda.is_finite() && self.lambda >= 0.0, Validation, "lambda must be >= 0, got {}", self.lambda);
        ensure!(self.strike.is_finite() && self.strike > 0.0, Validation, "strike must be > 0");
        ensure!(self.batch_size >= 2, Validation, "batch_size must be >= 2, got {}", self.batch_size);
        Ok(())
    }

    pub fn payoff(&self, s: f64) -> f64 {
        (s - self.strike).max(0.0)
    }

    /// `d_T(t) = 1 - t/T`.
    pub fn diminishing_factor(&self, t: usize) -> f64 {
        1.0 - t as f64 / self.params.n_steps as f64
    }

    pub(crate) fn observation(&self, t: usize, spot: f64) -> Observation {
        let p = &self.params;
        Observation {
            t_index: t,
            time_frac: t as f64 / p.n_steps as f64,
            state: normalize_state(t, spot, p).expect("simulated prices are positive"),
            spot,
            strike: self.strike,
            time_to_expiry: (p.n_steps - t) as f64 * p.dt,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QlbsRollout {
    pub batch: PathBatch<f64>,
    /// `[path][t]`, `t < T`.
    pub actions: Vec<Vec<f64>>,
    pub ledgers: Vec<HedgeLedger<f64>>,
    /// Cross-sectional standard deviation of `Pi_t`, `t = 0..=T`.
    pub risk: Vec<f64>,
    /// `[path][t]`, `t = 0..=T`.
    pub v_hat: Vec<Vec<f64>>,
    /// `[path][t]`, `t < T`.
    pub rewards: Vec<Vec<f64>>,
    pub config: QlbsConfig,
}

/// Sample standard deviation (n - 1), exactly zero for a constant sample.
pub(crate) fn cross_sectional_std(xs: impl ExactSizeIterator<Item = f64> + Clone) -> f64 {
    let n = xs.len();
    let mut it = xs.clone();
    let first = match it.next() {
        Some(v) => v,
        None => return 0.0,
    };
    if n < 2 || it.all(|v| v == first) {
        return 0.0;
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    let ss: f64 = xs.map(|v| (v - mean).powi(2)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Samples one action per step along `path`. The policy's randomness comes
/// from a stream keyed by `(seed, index)`, one normal per step.
pub(crate) fn sample_actions(
    policy: &(impl Policy + ?Sized),
    seed: u64,
    index: u64,
    steps: usize,
    mut observe: impl FnMut(usize) -> Observation,
) -> Vec<f64> {
    let mut rng = rng::stream(seed, domain::ACTIONS, index);
    (0..steps)
        .map(|t| {
            let z = standard_normal(&mut rng);
            let (mu, sigma) = policy.distribution(&observe(t));
            mu + sigma * z
        })
        .collect()
}

pub fn qlbs_rollout(policy: &(impl Policy + ?Sized), cfg: &QlbsConfig, seed: u64) -> Result<QlbsRollout> {
    cfg.validate()?;
    let batch = simulate_paths(&cfg.params, cfg.batch_size, seed)?;
    qlbs_rollout_on(policy, cfg, batch, seed)
}

/// Rollout on a given batch of paths; action noise is keyed by `seed`.
pub fn qlbs_rollout_on(
    policy: &(impl Policy + ?Sized),
    cfg: &QlbsConfig,
    batch: PathBatch<f64>,
    seed: u64,
) -> Result<QlbsRollout> {
    cfg.validate()?;
    ensure!(batch.params == cfg.params, Validation, "batch was simulated under different market parameters");
    ensure!(batch.n_paths() >= 2, Validation, "need at least 2 paths");
    let n = cfg.params.n_steps;
    let per_path: Vec<(Vec<f64>, HedgeLedger<f64>)> = (0..batch.n_paths())
        .into_par_iter()
        .map(|p| {
            let path = batch.path(p);
            let actions = sample_actions(policy, seed, p as u64, n, |t| cfg.observation(t, path[t]));
            let ledger = qlbs_backward_portfolio(path, &actions, |s| cfg.payoff(s), &cfg.params, &cfg.cost)?;
            Ok((actions, ledger))
        })
        .collect::<Result<_>>()?;
    let (actions, ledgers): (Vec<_>, Vec<_>) = per_path.into_iter().unzip();

    let risk: Vec<f64> = (0..=n).map(|t| cross_sectional_std(ledgers.iter().map(|l| l.values[t]))).collect();
    let gamma = cfg.params.gamma();
    let mut risk_to_go = vec![0.0; n + 1];
    risk_to_go[n] = risk[n];
    for t in (0..n).rev() {
        risk_to_go[t] = risk[t] + gamma * risk_to_go[t + 1];
    }
    let v_hat: Vec<Vec<f64>> = ledgers
        .iter()
        .map(|l| (0..=n).map(|t| -cfg.diminishing_factor(t) * l.values[t] - cfg.lambda * risk_to_go[t]).collect())
        .collect();
    let rewards = v_hat.iter().map(|v| v.windows(2).map(|w| w[0] - w[1]).collect()).collect();
    Ok(QlbsRollout { batch, actions, ledgers, risk, v_hat, rewards, config: *cfg })
}

impl QlbsRollout {
    pub fn n_paths(&self) -> usize {
        self.ledgers.len()
    }

    pub fn mean_v0(&self) -> f64 {
        self.v_hat.iter().map(|v| v[0]).sum::<f64>() / self.n_paths() as f64
    }

    pub fn observation(&self, p: usize, t: usize) -> Observation {
        self.config.observation(t, self.batch.path(p)[t])
    }

    /// Per-path share of the dispersion at each step, whose batch mean is
    /// `risk_t` and whose sum over paths has the same first-order
    /// sensitivity to each `Pi_t[p]` as `n * risk_t`:
    /// `c = risk/2 + n/(n-1) (Pi - mean)^2 / (2 risk)`.
    pub fn risk_credit(&self) -> Vec<Vec<f64>> {
        let n_paths = self.n_paths();
        let bessel = n_paths as f64 / (n_paths - 1) as f64;
        let steps = self.risk.len();
        let means: Vec<f64> = (0..steps)
            .map(|t| self.ledgers.iter().map(|l| l.values[t]).sum::<f64>() / n_paths as f64)
            .collect();
        self.ledgers
            .iter()
            .map(|l| {
                (0..steps)
                    .map(|t| {
                        let risk = self.risk[t];
                        if risk == 0.0 {
                            0.0
                        } else {
                            0.5 * risk + 0.5 * bessel * (l.values[t] - means[t]).powi(2) / risk
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Telescoped rewards used for training, with the shared dispersion
    /// replaced by [`risk_credit`](Self::risk_credit) so each path is
    /// credited with its own contribution. Expressed in units of `s0`.
    pub fn training_rewards(&self) -> Vec<Vec<f64>> {
        let cfg = &self.config;
        let n = cfg.params.n_steps;
        let gamma = cfg.params.gamma();
        let scale = 1.0 / cfg.params.s0;
        self.risk_credit()
            .iter()
            .zip(&self.ledgers)
            .map(|(credit, l)| {
                let mut to_go = vec![0.0; n + 1];
                to_go[n] = credit[n];
                for t in (0..n).rev() {
                    to_go[t] = credit[t] + gamma * to_go[t + 1];
                }
                let v: Vec<f64> =
                    (0..=n).map(|t| -cfg.diminishing_factor(t) * l.values[t] - cfg.lambda * to_go[t]).collect();
                v.windows(2).map(|w| (w[0] - w[1]) * scale).collect()
            })
            .collect()
    }
}

/// Monte Carlo price with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceEstimate {
    pub price: f64,
    pub stderr: f64,
    pub n_batches: usize,
}

/// `-mean v_hat_0` over `n_batches` independent rollouts. The standard
/// error is taken across batch means, or across paths for a single batch.
pub fn qlbs_price(policy: &(impl Policy + ?Sized), cfg: &QlbsConfig, n_batches: usize, seed: u64) -> Result<PriceEstimate> {
    ensure!(n_batches >= 1, Validation, "n_batches must be >= 1");
    let rollouts: Vec<QlbsRollout> =
        (0..n_batches).map(|b| qlbs_rollout(policy, cfg, rng::mix(seed, b as u64))).collect::<Result<_>>()?;
    let means: Vec<f64> = rollouts.iter().map(|r| -r.mean_v0()).collect();
    let price = means.iter().sum::<f64>() / n_batches as f64;
    let stderr = if n_batches >= 2 {
        cross_sectional_std(means.iter().copied()) / (n_batches as f64).sqrt()
    } else {
        let r = &rollouts[0];
        cross_sectional_std(r.v_hat.iter().map(|v| v[0])) / (r.n_paths() as f64).sqrt()
    };
    Ok(PriceEstimate { price, stderr, n_batches })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{BsDeltaPolicy, ConstantPolicy, GaussianPolicy, Head, NetParams, NetSpec};
    use crate::pricing::{bs_price, EuroCall};

    fn cfg(sigma: f64, lambda: f64, batch: usize) -> QlbsConfig {
        QlbsConfig {
            params: MarketParams { mu: 0.04, sigma, r: 0.04, dt: 1.0 / 252.0, n_steps: 28, s0: 1.0 },
            cost: CostSpec::frictionless(),
            lambda,
            strike: 1.0,
            batch_size: batch,
        }
    }

    fn random_policy() -> GaussianPolicy {
        GaussianPolicy::new(NetParams::init(NetSpec::new(8, 1, Head::Policy), 2, false).unwrap(), 0.05).unwrap()
    }

    #[test]
    fn rewards_telescope() {
        let c = QlbsConfig { lambda: 0.01, cost: CostSpec::linear(0.005), ..cfg(0.2, 0.01, 64) };
        let r = qlbs_rollout(&random_policy(), &c, 3).unwrap();
        for (v, rw) in r.v_hat.iter().zip(&r.rewards) {
            let total: f64 = rw.iter().sum();
            assert!((total - (v[0] - v[28])).abs() < 1e-9);
        }
        assert!(r.risk.iter().all(|&x| x >= 0.0));
        // Terminal value is the payoff, so v_T is the terminal risk alone.
        for v in &r.v_hat {
            assert!((v[28] + 0.01 * r.risk[28]).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_lambda_value_is_negative_portfolio() {
        let r = qlbs_rollout(&random_policy(), &cfg(0.2, 0.0, 32), 5).unwrap();
        for (v, l) in r.v_hat.iter().zip(&r.ledgers) {
            assert_eq!(v[0], -l.values[0]);
        }
    }

    #[test]
    fn value_decreases_in_lambda() {
        let pol = random_policy();
        let v: Vec<f64> =
            [0.0, 0.001, 0.01, 0.1].iter().map(|&l| qlbs_rollout(&pol, &cfg(0.2, l, 64), 9).unwrap().mean_v0()).collect();
        assert!(v.windows(2).all(|w| w[1] < w[0]), "{v:?}");
    }

    #[test]
    fn deterministic_world_has_no_dispersion() {
        let c = cfg(0.0, 0.1, 16);
        let r = qlbs_rollout(&ConstantPolicy(0.4), &c, 1).unwrap();
        assert!(r.risk.iter().all(|&x| x == 0.0));
        for (v, l) in r.v_hat.iter().zip(&r.ledgers) {
            for t in 0..=28 {
                assert_eq!(v[t], -c.diminishing_factor(t) * l.values[t]);
            }
        }
    }

    #[test]
    fn risk_is_permutation_invariant() {
        let c = cfg(0.2, 0.01, 32);
        let r = qlbs_rollout(&random_policy(), &c, 4).unwrap();
        let mut rev = r.ledgers.clone();
        rev.reverse();
        for t in 0..=28 {
            let a = cross_sectional_std(r.ledgers.iter().map(|l| l.values[t]));
            let b = cross_sectional_std(rev.iter().map(|l| l.values[t]));
            assert!((a - b).abs() <= 1e-15 * a.max(1e-300));
        }
    }

    #[test]
    fn risk_credit_averages_to_risk() {
        let r = qlbs_rollout(&random_policy(), &cfg(0.2, 0.01, 50), 8).unwrap();
        let credit = r.risk_credit();
        for t in 0..=28 {
            let mean = credit.iter().map(|c| c[t]).sum::<f64>() / 50.0;
            assert!((mean - r.risk[t]).abs() < 1e-12 * r.risk[t].max(1.0));
        }
    }

    #[test]
    fn small_batch_rejected() {
        assert!(qlbs_rollout(&random_policy(), &cfg(0.2, 0.0, 1), 1).is_err());
        assert!(qlbs_rollout(&random_policy(), &QlbsConfig { lambda: -1.0, ..cfg(0.2, 0.0, 8) }, 1).is_err());
    }

    #[test]
    fn unhedged_zero_rate_price_is_mean_payoff() {
        let mut c = cfg(0.2, 0.0, 4000);
        c.params.r = 0.0;
        c.params.mu = 0.0;
        let est = qlbs_price(&ConstantPolicy(0.0), &c, 1, 12).unwrap();
        let batch = simulate_paths(&c.params, 4000, rng::mix(12, 0)).unwrap();
        let mean_payoff = (0..4000).map(|p| c.payoff(batch.terminal(p))).sum::<f64>() / 4000.0;
        assert!((est.price - mean_payoff).abs() < 1e-14);
    }

    #[test]
    fn delta_hedged_price_near_black_scholes() {
        let c = cfg(0.2, 0.0, 2000);
        let est = qlbs_price(&BsDeltaPolicy { sigma: 0.2, r: 0.04 }, &c, 2, 21).unwrap();
        let bs = bs_price(&EuroCall::new(1.0, 1.0, 28.0 / 252.0, 0.04), 0.2).unwrap();
        assert!((est.price - bs).abs() < 0.02 * bs, "{} vs {bs}", est.price);
        assert!(est.stderr > 0.0 && est.stderr < 0.01 * bs);
    }
}
