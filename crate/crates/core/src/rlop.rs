//! RLOP environment: along each path, one self-financing portfolio per
//! expiry `i = 1..=T`, started from a learned initial wealth and rewarded
//! at its own expiry by how closely it replicates the payoff.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accounting::{rlop_forward_portfolio, CostSpec, HedgeLedger};
use crate::error::{ensure, Result};
use crate::market::{normalize_state, simulate_paths, MarketParams, PathBatch};
use crate::policy::{Observation, Policy};
use crate::qlbs::sample_actions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    Absolute,
    Squared,
}

/// Replication penalty `H(x, y)`: `-|x - y|` or `-(x - y)^2`.
pub fn penalty(x: f64, y: f64, kind: PenaltyKind) -> f64 {
    match kind {
        PenaltyKind::Absolute => -(x - y).abs(),
        PenaltyKind::Squared => -(x - y).powi(2),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlopConfig {
    pub params: MarketParams<f64>,
    pub cost: CostSpec<f64>,
    pub strike: f64,
    pub penalty_kind: PenaltyKind,
    pub batch_size: usize,
}

impl RlopConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.cost.validate()?;
        ensure!(self.strike.is_finite() && self.strike > 0.0, Validation, "strike must be > 0");
        ensure!(self.batch_size >= 1, Validation, "batch_size must be >= 1");
        Ok(())
    }

    pub fn payoff(&self, s: f64) -> f64 {
        (s - self.strike).max(0.0)
    }

    pub fn n_expiries(&self) -> usize {
        self.params.n_steps
    }

    /// Market parameters truncated at expiry `i`.
    pub fn expiry_params(&self, i: usize) -> MarketParams<f64> {
        MarketParams { n_steps: i, ..self.params }
    }

    pub(crate) fn observation(&self, t: usize, spot: f64, expiry: usize) -> Observation {
        let p = &self.params;
        Observation {
            t_index: t,
            time_frac: t as f64 / p.n_steps as f64,
            state: normalize_state(t, spot, p).expect("simulated prices are positive"),
            spot,
            strike: self.strike,
            time_to_expiry: (expiry - t) as f64 * p.dt,
        }
    }

    fn action_stream(&self, p: usize, expiry: usize) -> u64 {
        (p * (self.params.n_steps + 1) + expiry) as u64
    }

    /// Samples actions for `t < expiry` and runs the forward ledger.
    fn run_expiry(
        &self,
        policy: &(impl Policy + ?Sized),
        pi0: f64,
        path: &[f64],
        p: usize,
        expiry: usize,
        seed: u64,
    ) -> Result<(Vec<f64>, HedgeLedger<f64>)> {
        let actions =
            sample_actions(policy, seed, self.action_stream(p, expiry), expiry, |t| self.observation(t, path[t], expiry));
        let ledger = rlop_forward_portfolio(pi0, &path[..=expiry], &actions, &self.expiry_params(expiry), &self.cost)?;
        Ok((actions, ledger))
    }
}

/// Initial capital per expiry; `pi0[i - 1]` funds the portfolio expiring at
/// step `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialWealth {
    pub pi0: Vec<f64>,
    /// False until the wealth has been fitted by training or refinement.
    pub trained: bool,
}

impl InitialWealth {
    /// Untrained start at the intrinsic value `h(s0)` for every expiry.
    pub fn intrinsic(cfg: &RlopConfig) -> Self {
        Self { pi0: vec![cfg.payoff(cfg.params.s0); cfg.n_expiries()], trained: false }
    }

    pub fn validate(&self, cfg: &RlopConfig) -> Result<()> {
        ensure!(
            self.pi0.len() == cfg.n_expiries(),
            Validation,
            "expected {} initial wealths, got {}",
            cfg.n_expiries(),
            self.pi0.len()
        );
        ensure!(self.pi0.iter().all(|v| v.is_finite()), Validation, "initial wealth must be finite");
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RlopRollout {
    pub batch: PathBatch<f64>,
    /// `[path][i - 1][t]` with `t < i`: no entry exists at or after expiry.
    pub actions: Vec<Vec<Vec<f64>>>,
    pub ledgers: Vec<Vec<HedgeLedger<f64>>>,
    /// `R_i` per `[path][i - 1]`.
    pub rewards: Vec<Vec<f64>>,
    pub config: RlopConfig,
}

pub fn rlop_rollout(
    policy: &(impl Policy + ?Sized),
    w: &InitialWealth,
    cfg: &RlopConfig,
    seed: u64,
) -> Result<RlopRollout> {
    cfg.validate()?;
    let batch = simulate_paths(&cfg.params, cfg.batch_size, seed)?;
    rlop_rollout_on(policy, w, cfg, batch, seed)
}

pub fn rlop_rollout_on(
    policy: &(impl Policy + ?Sized),
    w: &InitialWealth,
    cfg: &RlopConfig,
    batch: PathBatch<f64>,
    seed: u64,
) -> Result<RlopRollout> {
    cfg.validate()?;
    w.validate(cfg)?;
    ensure!(batch.params == cfg.params, Validation, "batch was simulated under different market parameters");
    let per_path: Vec<(Vec<Vec<f64>>, Vec<HedgeLedger<f64>>, Vec<f64>)> = (0..batch.n_paths())
        .into_par_iter()
        .map(|p| {
            let path = batch.path(p);
            let mut acts = Vec::with_capacity(cfg.n_expiries());
            let mut ledgers = Vec::with_capacity(cfg.n_expiries());
            let mut rewards = Vec::with_capacity(cfg.n_expiries());
            for i in 1..=cfg.n_expiries() {
                let (a, l) = cfg.run_expiry(policy, w.pi0[i - 1], path, p, i, seed)?;
                rewards.push(penalty(cfg.payoff(path[i]), l.terminal_value(), cfg.penalty_kind));
                acts.push(a);
                ledgers.push(l);
            }
            Ok((acts, ledgers, rewards))
        })
        .collect::<Result<_>>()?;
    let mut actions = Vec::with_capacity(per_path.len());
    let mut ledgers = Vec::with_capacity(per_path.len());
    let mut rewards = Vec::with_capacity(per_path.len());
    for (a, l, r) in per_path {
        actions.push(a);
        ledgers.push(l);
        rewards.push(r);
    }
    Ok(RlopRollout { batch, actions, ledgers, rewards, config: *cfg })
}

impl RlopRollout {
    pub fn n_paths(&self) -> usize {
        self.ledgers.len()
    }

    /// Mean penalty magnitude over all (path, expiry) pairs, in currency
    /// (squared currency for the squared penalty).
    pub fn mean_penalty(&self) -> f64 {
        let n = (self.n_paths() * self.config.n_expiries()) as f64;
        -self.rewards.iter().flatten().sum::<f64>() / n
    }

    /// Mean penalty magnitude at one expiry.
    pub fn mean_penalty_at(&self, expiry: usize) -> f64 {
        -self.rewards.iter().map(|r| r[expiry - 1]).sum::<f64>() / self.n_paths() as f64
    }

    /// Signed replication error `h(S_i) - Pi_i` in units of `s0`.
    fn scaled_errors(&self, p: usize) -> impl Iterator<Item = f64> + '_ {
        let path = self.batch.path(p);
        let s0 = self.config.params.s0;
        self.ledgers[p]
            .iter()
            .enumerate()
            .map(move |(k, l)| (self.config.payoff(path[k + 1]) - l.terminal_value()) / s0)
    }

    /// Expiry rewards in units of `s0` (`s0^2` for the squared penalty).
    pub fn training_rewards(&self) -> Vec<Vec<f64>> {
        (0..self.n_paths())
            .map(|p| self.scaled_errors(p).map(|e| penalty(e, 0.0, self.config.penalty_kind)).collect())
            .collect()
    }

    /// Gradient of the mean scaled penalty with respect to the initial
    /// wealth expressed in units of `s0`. The terminal value is affine in
    /// `pi0` with slope `e^{r t_i}`.
    pub fn wealth_gradient(&self) -> Vec<f64> {
        let n_exp = self.config.n_expiries();
        let growth = self.config.params.growth();
        let slopes: Vec<f64> = (1..=n_exp).map(|i| growth.powi(i as i32)).collect();
        let mut grad = vec![0.0; n_exp];
        for p in 0..self.n_paths() {
            for (k, e) in self.scaled_errors(p).enumerate() {
                let d_loss_d_err = match self.config.penalty_kind {
                    PenaltyKind::Squared => 2.0 * e,
                    PenaltyKind::Absolute => sign(e),
                };
                grad[k] -= d_loss_d_err * slopes[k];
            }
        }
        let n = self.n_paths() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        grad
    }
}

/// Shortfall `h(S_i) - V_i` of a zero-wealth portfolio, discounted to
/// time 0, for every path (outer) and expiry `i = 1..=T` (inner).
pub fn discounted_shortfalls(policy: &(impl Policy + ?Sized), cfg: &RlopConfig, n_paths: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let batch = simulate_paths(&cfg.params, n_paths, seed)?;
    let growth = cfg.params.growth();
    (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let path = batch.path(p);
            (1..=cfg.n_expiries())
                .map(|i| {
                    let (_, l) = cfg.run_expiry(policy, 0.0, path, p, i, seed)?;
                    Ok((cfg.payoff(path[i]) - l.terminal_value()) / growth.powi(i as i32))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect()
}

/// Exact minimizer of the mean penalty over `pi0` for a fixed policy:
/// the mean (squared) or median (absolute) of the discounted shortfall of
/// a zero-wealth portfolio.
pub fn refine_wealth(policy: &(impl Policy + ?Sized), cfg: &RlopConfig, n_paths: usize, seed: u64) -> Result<InitialWealth> {
    let shortfalls = discounted_shortfalls(policy, cfg, n_paths, seed)?;
    let pi0 = (0..cfg.n_expiries())
        .map(|k| {
            let mut xs: Vec<f64> = shortfalls.iter().map(|s| s[k]).collect();
            match cfg.penalty_kind {
                PenaltyKind::Squared => xs.iter().sum::<f64>() / xs.len() as f64,
                PenaltyKind::Absolute => median(&mut xs),
            }
        })
        .collect();
    Ok(InitialWealth { pi0, trained: true })
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceStatus {
    Ok,
    UntrainedWealth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlopPrice {
    pub price: f64,
    pub expiry: usize,
    /// Final mean training penalty, when known.
    pub final_penalty: Option<f64>,
    pub status: PriceStatus,
}

/// Learned initial capital for expiry `expiry` (1-based).
pub fn rlop_price(w: &InitialWealth, cfg: &RlopConfig, expiry: usize, final_penalty: Option<f64>) -> Result<RlopPrice> {
    w.validate(cfg)?;
    ensure!(
        (1..=cfg.n_expiries()).contains(&expiry),
        Validation,
        "expiry index {expiry} outside 1..={}",
        cfg.n_expiries()
    );
    let status = if w.trained { PriceStatus::Ok } else { PriceStatus::UntrainedWealth };
    if status == PriceStatus::UntrainedWealth {
        log::warn!("pricing from untrained initial wealth");
    }
    Ok(RlopPrice { price: w.pi0[expiry - 1], expiry, final_penalty, status })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{BsDeltaPolicy, ConstantPolicy, GaussianPolicy, Head, NetParams, NetSpec};
    use crate::pricing::{bs_price, EuroCall};

    fn cfg(sigma: f64, r: f64, n_steps: usize, kind: PenaltyKind) -> RlopConfig {
        RlopConfig {
            params: MarketParams { mu: r, sigma, r, dt: 1.0 / 252.0, n_steps, s0: 1.0 },
            cost: CostSpec::frictionless(),
            strike: 1.0,
            penalty_kind: kind,
            batch_size: 16,
        }
    }

    #[test]
    fn penalty_values() {
        for c in [-2.0, 0.0, 3.5] {
            assert_eq!(penalty(c, c, PenaltyKind::Absolute), 0.0);
            assert_eq!(penalty(c, c, PenaltyKind::Squared), 0.0);
        }
        assert_eq!(penalty(3.0, 5.0, PenaltyKind::Absolute), -2.0);
        assert_eq!(penalty(3.0, 5.0, PenaltyKind::Squared), -4.0);
    }

    #[test]
    fn cash_replicates_in_flat_world() {
        let mut c = cfg(0.0, 0.0, 10, PenaltyKind::Absolute);
        c.strike = 0.9;
        let w = InitialWealth { pi0: vec![c.payoff(1.0); 10], trained: true };
        let r = rlop_rollout(&ConstantPolicy(0.0), &w, &c, 1).unwrap();
        assert!(r.rewards.iter().flatten().all(|&x| x == 0.0));
        let shifted = InitialWealth { pi0: w.pi0.iter().map(|v| v + 0.25).collect(), trained: true };
        let r = rlop_rollout(&ConstantPolicy(0.0), &shifted, &c, 1).unwrap();
        assert!(r.rewards.iter().flatten().all(|&x| (x + 0.25).abs() < 1e-15));
    }

    #[test]
    fn actions_stop_at_expiry() {
        let c = cfg(0.2, 0.04, 12, PenaltyKind::Squared);
        let pol = GaussianPolicy::new(NetParams::init(NetSpec::new(4, 1, Head::Policy), 1, false).unwrap(), 0.1).unwrap();
        let r = rlop_rollout(&pol, &InitialWealth::intrinsic(&c), &c, 2).unwrap();
        for p in 0..r.n_paths() {
            for i in 1..=12 {
                assert_eq!(r.actions[p][i - 1].len(), i);
                assert_eq!(r.ledgers[p][i - 1].n_steps(), i);
                assert_eq!(r.ledgers[p][i - 1].prices, &r.batch.path(p)[..=i]);
            }
        }
        assert!(r.rewards.iter().flatten().all(|&x| x <= 0.0));
    }

    #[test]
    fn shorter_expiries_ignore_later_prices() {
        let c = cfg(0.2, 0.04, 8, PenaltyKind::Squared);
        let pol = GaussianPolicy::new(NetParams::init(NetSpec::new(4, 1, Head::Policy), 1, false).unwrap(), 0.1).unwrap();
        let w = InitialWealth::intrinsic(&c);
        let batch = simulate_paths(&c.params, 4, 3).unwrap();
        let mut rows: Vec<Vec<f64>> = batch.paths().map(|p| p.to_vec()).collect();
        for row in &mut rows {
            row[8] *= 1.5;
        }
        let bumped = PathBatch::from_rows(rows, c.params, 3).unwrap();
        let a = rlop_rollout_on(&pol, &w, &c, batch, 3).unwrap();
        let b = rlop_rollout_on(&pol, &w, &c, bumped, 3).unwrap();
        for p in 0..4 {
            assert_eq!(a.actions[p][..7], b.actions[p][..7]);
            assert_eq!(a.rewards[p][..7], b.rewards[p][..7]);
        }
    }

    #[test]
    fn wealth_gradient_matches_finite_differences() {
        for kind in [PenaltyKind::Squared, PenaltyKind::Absolute] {
            let c = RlopConfig { batch_size: 64, ..cfg(0.2, 0.04, 6, kind) };
            let pol = BsDeltaPolicy { sigma: 0.15, r: 0.04 };
            let w = InitialWealth { pi0: vec![0.01; 6], trained: false };
            let loss = |w: &InitialWealth| {
                let r = rlop_rollout(&pol, w, &c, 5).unwrap();
                -r.training_rewards().iter().flatten().sum::<f64>() / 64.0
            };
            let g = rlop_rollout(&pol, &w, &c, 5).unwrap().wealth_gradient();
            let h = 1e-7;
            for k in 0..6 {
                let mut up = w.clone();
                let mut dn = w.clone();
                up.pi0[k] += h;
                dn.pi0[k] -= h;
                let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-5 * g[k].abs().max(1.0), "{kind:?} {k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn refined_wealth_is_the_minimizer() {
        for kind in [PenaltyKind::Squared, PenaltyKind::Absolute] {
            let c = RlopConfig { batch_size: 200, ..cfg(0.2, 0.04, 5, kind) };
            let pol = BsDeltaPolicy { sigma: 0.2, r: 0.04 };
            let w = refine_wealth(&pol, &c, 200, 7).unwrap();
            let base = rlop_rollout(&pol, &w, &c, 7).unwrap().mean_penalty();
            for bump in [-1e-3, 1e-3] {
                let moved = InitialWealth { pi0: w.pi0.iter().map(|v| v + bump).collect(), trained: true };
                assert!(rlop_rollout(&pol, &moved, &c, 7).unwrap().mean_penalty() >= base);
            }
        }
    }

    #[test]
    fn deterministic_world_wealth_is_discounted_payoff() {
        let c = cfg(0.0, 0.04, 42, PenaltyKind::Squared);
        let w = refine_wealth(&ConstantPolicy(0.3), &c, 4, 1).unwrap();
        let t = 42.0 / 252.0;
        let want = (-0.04 * t as f64).exp() * c.payoff((0.04 * t as f64).exp());
        assert!((w.pi0[41] - want).abs() < 1e-12);
    }

    #[test]
    fn delta_policy_refined_price_near_black_scholes() {
        let c = cfg(0.2, 0.04, 42, PenaltyKind::Squared);
        let w = refine_wealth(&BsDeltaPolicy { sigma: 0.2, r: 0.04 }, &c, 2000, 3).unwrap();
        let price = rlop_price(&w, &c, 42, None).unwrap();
        let bs = bs_price(&EuroCall::new(1.0, 1.0, 42.0 / 252.0, 0.04), 0.2).unwrap();
        assert!((price.price - bs).abs() < 0.01 * bs, "{} vs {bs}", price.price);
        assert_eq!(price.status, PriceStatus::Ok);
        let untrained = rlop_price(&InitialWealth::intrinsic(&c), &c, 1, None).unwrap();
        assert_eq!(untrained.status, PriceStatus::UntrainedWealth);
        assert!(rlop_price(&w, &c, 0, None).is_err());
        assert!(rlop_price(&w, &c, 43, None).is_err());
    }
}
