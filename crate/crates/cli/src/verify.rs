//! Oracle and identity checks run by `hedgelab verify`.

use serde::Serialize;

use hedgelab::accounting::{portfolio_decomposition, qlbs_backward_portfolio, rlop_forward_portfolio};
use hedgelab::market::{simulate_paths};
use hedgelab::policy::{BsDeltaPolicy, ConstantPolicy, GaussianPolicy, Head, NetParams, NetSpec, ValueNet};
use hedgelab::pricing::{bs_price, implied_vol, jd_price, quad, sv_price, EuroCall, JdParams, SvParams};
use hedgelab::qlbs::{qlbs_price, qlbs_rollout, QlbsConfig};
use hedgelab::rlop::{penalty, PenaltyKind};
use hedgelab::rng::{self, domain, open_uniform, standard_normal, Stream};
use hedgelab::{CostSpec, MarketParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Deterministic,
    Statistical,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub kind: CheckKind,
    pub passed: bool,
    /// Largest observed error (or the tested statistic).
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn bound(name: &'static str, worst: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self { name, kind: CheckKind::Deterministic, passed: worst <= tolerance, worst, tolerance, detail: detail.into() }
    }

    fn failed(name: &'static str, kind: CheckKind, err: impl std::fmt::Display) -> Self {
        Self { name, kind, passed: false, worst: f64::NAN, tolerance: 0.0, detail: format!("error: {err}") }
    }

    pub fn line(&self) -> String {
        let status = match (self.passed, self.kind) {
            (true, _) => "PASS",
            (false, CheckKind::Deterministic) => "FAIL",
            (false, CheckKind::Statistical) => "WARN",
        };
        format!("{status} {:<28} worst={:.3e} tol={:.1e} {}", self.name, self.worst, self.tolerance, self.detail)
    }
}

/// Deliberate defects used to prove the checks bite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Evaluates the decomposition at `-epsilon`.
    EpsilonSign,
}

fn uniform(g: &mut Stream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * open_uniform(g)
}

fn max_abs(xs: impl Iterator<Item = f64>) -> f64 {
    xs.fold(0.0, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

/// Black-Scholes call by direct quadrature of the discounted payoff against
/// the normal density, integrating only where the payoff is positive.
pub fn bs_quadrature(opt: &EuroCall<f64>, sigma: f64) -> hedgelab::Result<f64> {
    let sd = sigma * opt.tau.sqrt();
    let drift = (opt.r - 0.5 * sigma * sigma) * opt.tau;
    let z_star = (((opt.strike / opt.spot).ln() - drift) / sd).max(-12.0);
    if z_star >= 12.0 {
        return Ok(0.0);
    }
    let density = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let integrand = |z: f64| (opt.spot * (drift + sd * z).exp() - opt.strike).max(0.0) * density(z);
    Ok(opt.discount() * quad::integrate(integrand, z_star, 12.0, 1e-13, 4000)?)
}

fn random_option(g: &mut Stream) -> (EuroCall<f64>, f64) {
    let spot = uniform(g, 50.0, 150.0);
    let opt = EuroCall::new(spot, spot * uniform(g, 0.7, 1.3), uniform(g, 0.02, 2.0), uniform(g, -0.01, 0.08));
    (opt, uniform(g, 0.05, 0.8))
}

pub fn check_bs_quadrature(n: usize, seed: u64, tol: f64) -> CheckResult {
    let mut g = rng::stream(seed, domain::MISC, 101);
    let errs: hedgelab::Result<Vec<f64>> = (0..n)
        .map(|_| {
            let (opt, sigma) = random_option(&mut g);
            Ok(bs_price(&opt, sigma)? - bs_quadrature(&opt, sigma)?)
        })
        .collect();
    match errs {
        Ok(e) => CheckResult::bound("bs_vs_quadrature", max_abs(e.into_iter()), tol, format!("{n} random contracts")),
        Err(e) => CheckResult::failed("bs_vs_quadrature", CheckKind::Deterministic, e),
    }
}

pub fn check_jd_zero_intensity(n: usize, seed: u64, tol: f64) -> CheckResult {
    let mut g = rng::stream(seed, domain::MISC, 102);
    let errs: hedgelab::Result<Vec<f64>> = (0..n)
        .map(|_| {
            let (opt, sigma) = random_option(&mut g);
            let p = JdParams { sigma, jump_intensity: 0.0, jump_mean: uniform(&mut g, -0.3, 0.3), jump_vol: uniform(&mut g, 0.0, 0.5) };
            Ok(jd_price(&opt, &p)? - bs_price(&opt, sigma)?)
        })
        .collect();
    match errs {
        Ok(e) => CheckResult::bound("jd_zero_intensity_is_bs", max_abs(e.into_iter()), tol, format!("{n} random contracts")),
        Err(e) => CheckResult::failed("jd_zero_intensity_is_bs", CheckKind::Deterministic, e),
    }
}

pub fn check_sv_small_xi(n: usize, seed: u64, tol: f64) -> CheckResult {
    let mut g = rng::stream(seed, domain::MISC, 103);
    let errs: hedgelab::Result<Vec<f64>> = (0..n)
        .map(|_| {
            let (opt, sigma) = random_option(&mut g);
            let v = sigma * sigma;
            let p = SvParams { v0: v, kappa: uniform(&mut g, 0.5, 5.0), theta: v, xi: 1e-4, rho: uniform(&mut g, -0.9, 0.9) };
            Ok(sv_price(&opt, &p)? - bs_price(&opt, sigma)?)
        })
        .collect();
    match errs {
        Ok(e) => CheckResult::bound("sv_small_xi_is_bs", max_abs(e.into_iter()), tol, format!("{n} random contracts, xi = 1e-4")),
        Err(e) => CheckResult::failed("sv_small_xi_is_bs", CheckKind::Deterministic, e),
    }
}

pub fn check_implied_vol_round_trip(n: usize, seed: u64, tol: f64) -> CheckResult {
    let mut g = rng::stream(seed, domain::MISC, 104);
    let mut worst: f64 = 0.0;
    let mut used = 0;
    for _ in 0..n {
        let (opt, sigma) = random_option(&mut g);
        let Ok(price) = bs_price(&opt, sigma) else { continue };
        // Skip prices too close to the bounds for the vol to be identified.
        if price - opt.lower_bound() < 1e-6 * opt.spot {
            continue;
        }
        match implied_vol(&opt, price) {
            Ok(iv) => worst = worst.max((iv - sigma).abs()),
            Err(e) => return CheckResult::failed("implied_vol_round_trip", CheckKind::Deterministic, e),
        }
        used += 1;
    }
    CheckResult::bound("implied_vol_round_trip", worst, tol, format!("{used} identifiable of {n} contracts"))
}

fn random_ledger_inputs(g: &mut Stream) -> (MarketParams, Vec<f64>, Vec<f64>, CostSpec, f64) {
    let n = 1 + (uniform(g, 0.0, 30.0) as usize);
    let params = MarketParams {
        mu: uniform(g, -0.1, 0.2),
        sigma: uniform(g, 0.0, 0.6),
        r: uniform(g, -0.02, 0.1),
        dt: uniform(g, 0.001, 0.1),
        n_steps: n,
        s0: uniform(g, 0.5, 200.0),
    };
    let mut path = vec![params.s0];
    for _ in 0..n {
        let last = *path.last().unwrap();
        path.push(last * (0.1 * standard_normal(g)).exp());
    }
    let actions: Vec<f64> = (0..n).map(|_| uniform(g, -1.5, 1.5)).collect();
    let cost = CostSpec {
        epsilon: uniform(g, 0.0, 0.02),
        liquidate_at_expiry: uniform(g, 0.0, 1.0) < 0.5,
        charge_initial_trade: uniform(g, 0.0, 1.0) < 0.5,
    };
    let strike = params.s0 * uniform(g, 0.8, 1.2);
    (params, path, actions, cost, strike)
}

pub fn check_self_financing(n: usize, seed: u64, tol: f64) -> CheckResult {
    let mut g = rng::stream(seed, domain::MISC, 105);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let (params, path, actions, cost, strike) = random_ledger_inputs(&mut g);
        let pi0 = uniform(&mut g, -5.0, 5.0) * params.s0;
        let fwd = rlop_forward_portfolio(pi0, &path, &actions, &params, &cost);
        let bwd = qlbs_backward_portfolio(&path, &actions, |s| (s - strike).max(0.0), &params, &cost);
        match (fwd, bwd) {
            (Ok(f), Ok(b)) => worst = worst.max(f.max_relative_residual()).max(b.max_relative_residual()),
            (Err(e), _) | (_, Err(e)) => return CheckResult::failed("self_financing_residual", CheckKind::Deterministic, e),
        }
    }
    CheckResult::bound("self_financing_residual", worst, tol, format!("{n} random forward and backward ledgers"))
}

pub fn check_decomposition(n: usize, seed: u64, tol: f64, fault: Option<Fault>) -> CheckResult {
    let mut g = rng::stream(seed, domain::MISC, 106);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let (params, path, actions, cost, strike) = random_ledger_inputs(&mut g);
        let payoff = |s: f64| (s - strike).max(0.0);
        let ledger = qlbs_backward_portfolio(&path, &actions, payoff, &params, &cost);
        let dec = portfolio_decomposition(&path, &actions, payoff, &params, &cost);
        let (Ok(l), Ok(d)) = (ledger, dec) else {
            return CheckResult::failed("backward_decomposition", CheckKind::Deterministic, "ledger construction failed");
        };
        let eps = if fault == Some(Fault::EpsilonSign) { -cost.epsilon } else { cost.epsilon };
        let scale = l.initial_value().abs().max(params.s0);
        worst = worst.max((d.value(eps) - l.initial_value()).abs() / scale);
    }
    CheckResult::bound("backward_decomposition", worst, tol, format!("{n} random ledgers, relative to max(|Pi_0|, S_0)"))
}

pub fn check_forward_backward(n: usize, seed: u64, tol: f64) -> CheckResult {
    let mut g = rng::stream(seed, domain::MISC, 107);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let (params, path, actions, cost, strike) = random_ledger_inputs(&mut g);
        let payoff = |s: f64| (s - strike).max(0.0);
        let Ok(b) = qlbs_backward_portfolio(&path, &actions, payoff, &params, &cost) else {
            return CheckResult::failed("forward_backward_consistency", CheckKind::Deterministic, "backward ledger failed");
        };
        // Forward from the backward Pi_0 must land on the payoff; the
        // backward ledger does not charge an initial trade.
        let fwd_cost = CostSpec { charge_initial_trade: false, ..cost };
        let Ok(f) = rlop_forward_portfolio(b.initial_value(), &path, &actions, &params, &fwd_cost) else {
            return CheckResult::failed("forward_backward_consistency", CheckKind::Deterministic, "forward ledger failed");
        };
        let scale = payoff(path[params.n_steps]).max(params.s0);
        worst = worst.max((f.terminal_value() - payoff(path[params.n_steps])).abs() / scale);
    }
    CheckResult::bound("forward_backward_consistency", worst, tol, format!("{n} random ledgers"))
}

fn small_policy(seed: u64) -> GaussianPolicy {
    let mut net = NetParams::init(NetSpec::new(8, 2, Head::Policy), seed, false).expect("valid spec");
    let mut g = rng::stream(seed, domain::MISC, 108);
    for w in &mut net.theta {
        *w += 0.2 * standard_normal(&mut g);
    }
    GaussianPolicy::new(net, 0.02).expect("valid policy")
}

fn qlbs_cfg(sigma: f64, lambda: f64, epsilon: f64, batch: usize) -> QlbsConfig {
    QlbsConfig {
        params: MarketParams { mu: 0.04, sigma, r: 0.04, dt: 1.0 / 252.0, n_steps: 28, s0: 1.0 },
        cost: CostSpec::linear(epsilon),
        lambda,
        strike: 1.0,
        batch_size: batch,
    }
}

pub fn check_telescoping(seed: u64, tol: f64) -> CheckResult {
    let pol = small_policy(seed);
    match qlbs_rollout(&pol, &qlbs_cfg(0.2, 0.01, 0.005, 128), seed) {
        Ok(r) => {
            let n = r.config.params.n_steps;
            let worst = max_abs(r.v_hat.iter().zip(&r.rewards).map(|(v, rw)| rw.iter().sum::<f64>() - (v[0] - v[n])));
            CheckResult::bound("qlbs_reward_telescoping", worst, tol, "128 paths, lambda 0.01, eps 0.005")
        }
        Err(e) => CheckResult::failed("qlbs_reward_telescoping", CheckKind::Deterministic, e),
    }
}

/// Mean `v_hat_0` on fixed paths and actions, for increasing `lambda`.
pub fn check_lambda_monotone(seed: u64) -> CheckResult {
    let pol = small_policy(seed);
    let lambdas = [0.0, 0.001, 0.01, 0.1];
    let means: hedgelab::Result<Vec<f64>> =
        lambdas.iter().map(|&l| qlbs_rollout(&pol, &qlbs_cfg(0.2, l, 0.0, 128), seed).map(|r| r.mean_v0())).collect();
    match means {
        Ok(m) => {
            let worst_gap = m.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
            let mut c = CheckResult::bound("qlbs_value_decreasing_in_lambda", worst_gap, 0.0, format!("mean v0 {m:?}"));
            c.passed = worst_gap < 0.0;
            c
        }
        Err(e) => CheckResult::failed("qlbs_value_decreasing_in_lambda", CheckKind::Deterministic, e),
    }
}

pub fn check_zero_vol_risk(seed: u64) -> CheckResult {
    match qlbs_rollout(&ConstantPolicy(0.5), &qlbs_cfg(0.0, 0.1, 0.0, 16), seed) {
        Ok(r) => CheckResult::bound("qlbs_zero_vol_zero_risk", max_abs(r.risk.iter().copied()), 0.0, "sigma = 0, constant hedge"),
        Err(e) => CheckResult::failed("qlbs_zero_vol_zero_risk", CheckKind::Deterministic, e),
    }
}

pub fn check_penalty_identities(n: usize, seed: u64) -> CheckResult {
    let mut g = rng::stream(seed, domain::MISC, 109);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let c = uniform(&mut g, -100.0, 100.0);
        let d = uniform(&mut g, -100.0, 100.0);
        for kind in [PenaltyKind::Absolute, PenaltyKind::Squared] {
            worst = worst.max(penalty(c, c, kind).abs());
            worst = worst.max((penalty(c, d, kind) - penalty(d, c, kind)).abs());
            if penalty(c, d, kind) > 0.0 {
                worst = f64::INFINITY;
            }
        }
    }
    CheckResult::bound("rlop_penalty_identities", worst, 0.0, "H(c,c) = 0, symmetry, H <= 0")
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central-difference checks of the policy log-density and value gradients.
pub fn check_gradients(n: usize, seed: u64, tol: f64) -> CheckResult {
    let mut g = rng::stream(seed, domain::MISC, 110);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for trial in 0..n {
        let x: [f64; 3] = std::array::from_fn(|_| uniform(&mut g, -1.5, 1.5));
        let trial_seed = rng::mix(seed, trial as u64);
        let err = if trial % 2 == 0 {
            let pol = small_policy(trial_seed);
            let a = uniform(&mut g, -2.0, 2.0);
            let Ok((_, grad)) = pol.log_prob_and_grad(&x, a) else {
                return CheckResult::failed("network_gradients", CheckKind::Deterministic, "forward failed");
            };
            let fd: Vec<f64> = (0..pol.net.theta.len())
                .map(|i| {
                    let (mut up, mut dn) = (pol.clone(), pol.clone());
                    up.net.theta[i] += h;
                    dn.net.theta[i] -= h;
                    let lu = up.log_prob_and_grad(&x, a).map(|r| r.0).unwrap_or(f64::NAN);
                    let ld = dn.log_prob_and_grad(&x, a).map(|r| r.0).unwrap_or(f64::NAN);
                    (lu - ld) / (2.0 * h)
                })
                .collect();
            rel_err(&grad, &fd)
        } else {
            let mut net = NetParams::init(NetSpec::new(8, 2, Head::Value), trial_seed, false).expect("valid spec");
            for w in &mut net.theta {
                *w += 0.2 * standard_normal(&mut g);
            }
            let value = ValueNet::new(net).expect("value head");
            let Ok(cache) = value.net.forward(&x) else {
                return CheckResult::failed("network_gradients", CheckKind::Deterministic, "forward failed");
            };
            let mut grad = vec![0.0; value.net.theta.len()];
            value.net.backward(&cache, &[1.0], &mut grad);
            let fd: Vec<f64> = (0..value.net.theta.len())
                .map(|i| {
                    let (mut up, mut dn) = (value.clone(), value.clone());
                    up.net.theta[i] += h;
                    dn.net.theta[i] -= h;
                    (up.value_forward(&x).unwrap_or(f64::NAN) - dn.value_forward(&x).unwrap_or(f64::NAN)) / (2.0 * h)
                })
                .collect();
            rel_err(&grad, &fd)
        };
        worst = if err.is_nan() { f64::NAN } else { worst.max(err) };
    }
    let mut c = CheckResult::bound("network_gradients", worst, tol, format!("{n} random nets, policy and value alternating"));
    c.passed = worst <= tol;
    c
}

/// BS-delta QLBS price at `lambda = 0` against the Black-Scholes value.
pub fn check_bs_delta_price(n_seeds: usize, seed: u64) -> CheckResult {
    let cfg = qlbs_cfg(0.2, 0.0, 0.0, 2048);
    let opt = EuroCall::new(1.0, 1.0, 28.0 / 252.0, 0.04);
    let bs = bs_price(&opt, 0.2).expect("valid contract");
    match qlbs_price(&BsDeltaPolicy { sigma: 0.2, r: 0.04 }, &cfg, n_seeds.max(2), seed) {
        Ok(p) => {
            let gap = (p.price - bs).abs();
            let tol = 2.0 * p.stderr + 0.01 * bs;
            CheckResult {
                name: "qlbs_bs_delta_price",
                kind: CheckKind::Statistical,
                passed: gap <= tol,
                worst: gap,
                tolerance: tol,
                detail: format!("price {:.6} +- {:.6} vs BS {bs:.6}", p.price, p.stderr),
            }
        }
        Err(e) => CheckResult::failed("qlbs_bs_delta_price", CheckKind::Statistical, e),
    }
}

/// Fixed-policy QLBS price non-decreasing in the friction rate across seeds.
pub fn check_epsilon_monotone(n_seeds: usize, seed: u64) -> CheckResult {
    let pol = small_policy(seed);
    let eps = [0.0, 0.005, 0.01];
    let prices: hedgelab::Result<Vec<_>> = eps
        .iter()
        .map(|&e| qlbs_price(&pol, &qlbs_cfg(0.2, 0.001, e, 256), n_seeds.max(2), rng::mix(seed, 7)))
        .collect();
    match prices {
        Ok(p) => {
            let drops = p.windows(2).map(|w| (w[0].price - w[1].price) - 2.0 * (w[0].stderr.hypot(w[1].stderr))).fold(f64::NEG_INFINITY, f64::max);
            CheckResult {
                name: "qlbs_price_increasing_in_eps",
                kind: CheckKind::Statistical,
                passed: drops <= 0.0,
                worst: drops,
                tolerance: 0.0,
                detail: format!("prices {:?}", p.iter().map(|x| x.price).collect::<Vec<_>>()),
            }
        }
        Err(e) => CheckResult::failed("qlbs_price_increasing_in_eps", CheckKind::Statistical, e),
    }
}

/// Monte Carlo check that simulated GBM has the lognormal mean.
pub fn check_gbm_mean(seed: u64) -> CheckResult {
    let params = MarketParams { mu: 0.08, sigma: 0.3, r: 0.0, dt: 1.0 / 52.0, n_steps: 52, s0: 1.0 };
    match simulate_paths(&params, 20_000, seed) {
        Ok(b) => {
            let n = b.n_paths() as f64;
            let xs: Vec<f64> = (0..b.n_paths()).map(|p| b.terminal(p)).collect();
            let mean = xs.iter().sum::<f64>() / n;
            let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let gap = (mean - 0.08f64.exp()).abs();
            CheckResult {
                name: "gbm_terminal_mean",
                kind: CheckKind::Statistical,
                passed: gap <= 4.0 * sd / n.sqrt(),
                worst: gap,
                tolerance: 4.0 * sd / n.sqrt(),
                detail: format!("mean {mean:.5} vs {:.5}", 0.08f64.exp()),
            }
        }
        Err(e) => CheckResult::failed("gbm_terminal_mean", CheckKind::Statistical, e),
    }
}

/// Every check, deterministic first.
pub fn run_all(n_cases: usize, n_seeds: usize, seed: u64, fault: Option<Fault>) -> Vec<CheckResult> {
    let mut out = vec![
        check_bs_quadrature(n_cases, seed, 1e-8),
        check_jd_zero_intensity(n_cases, seed, 1e-12),
        check_sv_small_xi(n_cases.min(200), seed, 1e-3),
        check_implied_vol_round_trip(n_cases, seed, 1e-7),
        check_self_financing(n_cases, seed, 1e-10),
        check_decomposition(n_cases, seed, 1e-10, fault),
        check_forward_backward(n_cases, seed, 1e-10),
        check_telescoping(seed, 1e-9),
        check_lambda_monotone(seed),
        check_zero_vol_risk(seed),
        check_penalty_identities(n_cases, seed),
        check_gradients(100, seed, 1e-4),
    ];
    out.extend([check_bs_delta_price(n_seeds, seed), check_epsilon_monotone(n_seeds, seed), check_gbm_mean(seed)]);
    out
}
