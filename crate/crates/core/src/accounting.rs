//! Self-financing portfolio accounting with proportional transaction costs.
//!
//! The one-step budget identity is
//!
//! ```text
//! u_t S_{t+1} + e^{r dt} B_t = u_{t+1} S_{t+1} + B_{t+1} + TC(u_{t+1} - u_t, S_{t+1})
//! ```
//!
//! with `TC(du, S) = eps |du| S`. The same identity is solved backward from a
//! terminal payoff (QLBS) or forward from an initial wealth (RLOP).

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::market::MarketParams;
use crate::scalar::Real;

/// Proportional cost rate plus the conventions at the two ends of a hedge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec<F> {
    pub epsilon: F,
    /// Unwind the final position at expiry, paying `TC(-u_{T-1}, S_T)`.
    #[serde(default)]
    pub liquidate_at_expiry: bool,
    /// Charge `TC(u_0, S_0)` when the forward portfolio is first set up.
    #[serde(default)]
    pub charge_initial_trade: bool,
}

impl<F: Real> Default for CostSpec<F> {
    fn default() -> Self {
        Self::frictionless()
    }
}

impl<F: Real> CostSpec<F> {
    pub fn linear(epsilon: F) -> Self {
        Self { epsilon, liquidate_at_expiry: false, charge_initial_trade: false }
    }

    pub fn frictionless() -> Self {
        Self::linear(F::zero())
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.epsilon >= F::zero() && self.epsilon.is_finite(),
            Validation,
            "epsilon must be a finite value >= 0, got {}",
            self.epsilon
        );
        Ok(())
    }

    /// Position held over the final step into expiry.
    fn terminal_position(&self, last: F) -> F {
        if self.liquidate_at_expiry {
            F::zero()
        } else {
            last
        }
    }
}

/// Linear transaction cost `eps |du| S`.
#[inline]
pub fn tc_linear<F: Real>(delta_u: F, s: F, cost: &CostSpec<F>) -> F {
    cost.epsilon * delta_u.abs() * s
}

/// Per-path time series of a self-financing hedge.
///
/// All vectors have `n_steps + 1` entries. `positions[n_steps]` is the
/// position carried into expiry (`u_{T-1}`, or 0 when liquidating) and
/// `costs[t]` is the cost paid when rebalancing into `positions[t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeLedger<F> {
    pub prices: Vec<F>,
    pub positions: Vec<F>,
    pub cash: Vec<F>,
    pub values: Vec<F>,
    pub costs: Vec<F>,
    pub cum_cost: F,
    pub params: MarketParams<F>,
    pub cost: CostSpec<F>,
}

impl<F: Real> HedgeLedger<F> {
    pub fn n_steps(&self) -> usize {
        self.positions.len() - 1
    }

    pub fn initial_value(&self) -> F {
        self.values[0]
    }

    pub fn terminal_value(&self) -> F {
        self.values[self.n_steps()]
    }

    /// Sum of `|u_{t+1} - u_t|` over all rebalances.
    pub fn turnover(&self) -> F {
        self.positions.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }

    /// Budget-identity residual at each step `t = 0..n_steps-1`, scaled by the
    /// magnitude of the terms involved.
    pub fn relative_residuals(&self) -> Vec<F> {
        let growth = self.params.growth();
        (0..self.n_steps())
            .map(|t| {
                let s1 = self.prices[t + 1];
                let (u0, u1) = (self.positions[t], self.positions[t + 1]);
                let (b0, b1) = (self.cash[t], self.cash[t + 1]);
                let tc = tc_linear(u1 - u0, s1, &self.cost);
                let lhs = u0 * s1 + growth * b0;
                let rhs = u1 * s1 + b1 + tc;
                let scale = (u0 * s1).abs() + (growth * b0).abs() + (u1 * s1).abs() + b1.abs() + tc;
                (lhs - rhs).abs() / scale.max(F::min_positive_value())
            })
            .collect()
    }

    pub fn max_relative_residual(&self) -> F {
        self.relative_residuals().into_iter().fold(F::zero(), F::max)
    }

    /// Largest `|Pi_t - (u_t S_t + B_t)|` relative to `|Pi_t|`.
    pub fn max_value_mismatch(&self) -> F {
        (0..=self.n_steps())
            .map(|t| {
                let v = self.positions[t] * self.prices[t] + self.cash[t];
                (v - self.values[t]).abs() / self.values[t].abs().max(F::one())
            })
            .fold(F::zero(), F::max)
    }
}

fn check_inputs<F: Real>(path: &[F], actions: &[F], params: &MarketParams<F>, cost: &CostSpec<F>) -> Result<()> {
    params.validate()?;
    cost.validate()?;
    ensure!(
        actions.len() == params.n_steps,
        Validation,
        "expected {} actions, got {}",
        params.n_steps,
        actions.len()
    );
    ensure!(
        path.len() == params.n_steps + 1,
        Validation,
        "expected {} prices, got {}",
        params.n_steps + 1,
        path.len()
    );
    ensure!(path.iter().all(|&s| s > F::zero()), Validation, "prices must be positive");
    Ok(())
}

fn full_positions<F: Real>(actions: &[F], cost: &CostSpec<F>) -> Vec<F> {
    let mut u = actions.to_vec();
    u.push(cost.terminal_position(*actions.last().expect("non-empty actions")));
    u
}

/// Builds the ledger backward from `Pi_T = h(S_T)`:
/// `Pi_t = u_t S_t + gamma (Pi_{t+1} + TC(u_{t+1} - u_t, S_{t+1}) - u_t S_{t+1})`.
pub fn qlbs_backward_portfolio<F: Real>(
    path: &[F],
    actions: &[F],
    payoff: impl Fn(F) -> F,
    params: &MarketParams<F>,
    cost: &CostSpec<F>,
) -> Result<HedgeLedger<F>> {
    check_inputs(path, actions, params, cost)?;
    let n = params.n_steps;
    let gamma = params.gamma();
    let positions = full_positions(actions, cost);
    let mut values = vec![F::zero(); n + 1];
    let mut cash = vec![F::zero(); n + 1];
    let mut costs = vec![F::zero(); n + 1];
    values[n] = payoff(path[n]);
    cash[n] = values[n] - positions[n] * path[n];
    for t in (0..n).rev() {
        let tc = tc_linear(positions[t + 1] - positions[t], path[t + 1], cost);
        costs[t + 1] = tc;
        cash[t] = gamma * (values[t + 1] + tc - positions[t] * path[t + 1]);
        values[t] = positions[t] * path[t] + cash[t];
    }
    let cum_cost = costs.iter().copied().sum();
    Ok(HedgeLedger {
        prices: path.to_vec(),
        positions,
        cash,
        values,
        costs,
        cum_cost,
        params: *params,
        cost: *cost,
    })
}

/// Builds the ledger forward from initial wealth `pi0`:
/// `B_{t+1} = u_t S_{t+1} + e^{r dt} B_t - u_{t+1} S_{t+1} - TC(u_{t+1} - u_t, S_{t+1})`.
pub fn rlop_forward_portfolio<F: Real>(
    pi0: F,
    path: &[F],
    actions: &[F],
    params: &MarketParams<F>,
    cost: &CostSpec<F>,
) -> Result<HedgeLedger<F>> {
    check_inputs(path, actions, params, cost)?;
    ensure!(pi0.is_finite(), Validation, "initial wealth must be finite");
    let n = params.n_steps;
    let growth = params.growth();
    let positions = full_positions(actions, cost);
    let mut values = vec![F::zero(); n + 1];
    let mut cash = vec![F::zero(); n + 1];
    let mut costs = vec![F::zero(); n + 1];
    if cost.charge_initial_trade {
        costs[0] = tc_linear(positions[0], path[0], cost);
    }
    cash[0] = pi0 - positions[0] * path[0] - costs[0];
    values[0] = positions[0] * path[0] + cash[0];
    for t in 0..n {
        let tc = tc_linear(positions[t + 1] - positions[t], path[t + 1], cost);
        costs[t + 1] = tc;
        cash[t + 1] = positions[t] * path[t + 1] + growth * cash[t] - positions[t + 1] * path[t + 1] - tc;
        values[t + 1] = positions[t + 1] * path[t + 1] + cash[t + 1];
    }
    let cum_cost = costs.iter().copied().sum();
    Ok(HedgeLedger {
        prices: path.to_vec(),
        positions,
        cash,
        values,
        costs,
        cum_cost,
        params: *params,
        cost: *cost,
    })
}

/// Closed-form split of the backward `Pi_0`:
///
/// ```text
/// Pi_0 = u_0 S_0 + sum_j gamma^{j+1} (u_{j+1} - u_j) S_{j+1}      (hedge leg)
///      + eps * sum_j gamma^{j+1} |u_{j+1} - u_j| S_{j+1}          (friction leg)
///      + gamma^T (h(S_T) - u_T S_T)                               (terminal leg)
/// ```
///
/// The middle sum of the hedge leg vanishes for constant positions, leaving
/// `u_0 S_0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortfolioDecomposition<F> {
    /// `u_0 S_0`.
    pub position_value: F,
    /// `sum_j gamma^{j+1} (u_{j+1} - u_j) S_{j+1}`.
    pub rebalance_carry: F,
    /// Coefficient of epsilon.
    pub friction_coefficient: F,
    /// `h(S_T) - u_T S_T`, undiscounted.
    pub terminal_residual: F,
    /// `gamma^T`.
    pub terminal_discount: F,
}

impl<F: Real> PortfolioDecomposition<F> {
    pub fn hedge_leg(&self) -> F {
        self.position_value + self.rebalance_carry
    }

    pub fn terminal_leg(&self) -> F {
        self.terminal_discount * self.terminal_residual
    }

    /// `Pi_0` at cost rate `epsilon`; affine in epsilon.
    pub fn value(&self, epsilon: F) -> F {
        self.hedge_leg() + epsilon * self.friction_coefficient + self.terminal_leg()
    }
}

pub fn portfolio_decomposition<F: Real>(
    path: &[F],
    actions: &[F],
    payoff: impl Fn(F) -> F,
    params: &MarketParams<F>,
    cost: &CostSpec<F>,
) -> Result<PortfolioDecomposition<F>> {
    check_inputs(path, actions, params, cost)?;
    let n = params.n_steps;
    let gamma = params.gamma();
    let u = full_positions(actions, cost);
    let mut carry = F::zero();
    let mut friction = F::zero();
    let mut disc = F::one();
    for j in 0..n {
        disc = disc * gamma;
        let du = u[j + 1] - u[j];
        carry += disc * du * path[j + 1];
        friction += disc * du.abs() * path[j + 1];
    }
    Ok(PortfolioDecomposition {
        position_value: u[0] * path[0],
        rebalance_carry: carry,
        friction_coefficient: friction,
        terminal_residual: payoff(path[n]) - u[n] * path[n],
        terminal_discount: disc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(r: f64, n: usize) -> MarketParams<f64> {
        MarketParams { mu: 0.0, sigma: 0.2, r, dt: 1.0 / 12.0, n_steps: n, s0: 10.0 }
    }

    fn call(k: f64) -> impl Fn(f64) -> f64 {
        move |s| (s - k).max(0.0)
    }

    #[test]
    fn tc_examples() {
        assert_eq!(tc_linear(0.0f64, 10.0, &CostSpec::linear(0.01)), 0.0);
        assert_eq!(tc_linear(5.0f64, 10.0, &CostSpec::frictionless()), 0.0);
        assert!((tc_linear(2.0f64, 10.0, &CostSpec::linear(0.01)) - 0.2).abs() < 1e-15);
        assert!((tc_linear(-2.0f64, 10.0, &CostSpec::linear(0.01)) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn zero_hedge_backward_is_payoff_when_rate_zero() {
        let p = params(0.0, 4);
        let path = [10.0, 11.0, 9.5, 12.0, 13.0];
        let ledger = qlbs_backward_portfolio(&path, &[0.0; 4], call(10.0), &p, &CostSpec::linear(0.05)).unwrap();
        assert!(ledger.values.iter().all(|&v| (v - 3.0).abs() < 1e-14));
        assert_eq!(ledger.cum_cost, 0.0);
    }

    #[test]
    fn constant_hedge_has_no_friction_leg() {
        let p = params(0.03, 5);
        let path = [10.0, 10.5, 9.0, 9.7, 11.0, 12.5];
        let d = portfolio_decomposition(&path, &[0.4; 5], call(10.0), &p, &CostSpec::linear(0.02)).unwrap();
        assert_eq!(d.friction_coefficient, 0.0);
        assert_eq!(d.rebalance_carry, 0.0);
        assert_eq!(d.hedge_leg(), 4.0);
    }

    #[test]
    fn perfect_terminal_replication_zeroes_terminal_leg() {
        let p = params(0.01, 3);
        let path = [10.0, 11.0, 12.0, 13.0];
        // h(S) = 0.5 S is replicated exactly by holding 0.5 into expiry.
        let d = portfolio_decomposition(&path, &[0.1, 0.3, 0.5], |s| 0.5 * s, &p, &CostSpec::linear(0.01)).unwrap();
        assert_eq!(d.terminal_residual, 0.0);
    }

    #[test]
    fn forward_cash_only_and_buy_and_hold() {
        let p = params(0.0, 4);
        let path = [10.0, 11.0, 9.5, 12.0, 13.0];
        let cash_only = rlop_forward_portfolio(2.5, &path, &[0.0; 4], &p, &CostSpec::linear(0.1)).unwrap();
        assert_eq!(cash_only.terminal_value(), 2.5);
        let hold = rlop_forward_portfolio(2.5, &path, &[1.0; 4], &p, &CostSpec::frictionless()).unwrap();
        assert!((hold.terminal_value() - (2.5 + 3.0)).abs() < 1e-14);
    }

    #[test]
    fn liquidation_and_initial_charge_flags() {
        let p = params(0.0, 2);
        let path = [10.0, 10.0, 10.0];
        let mut cost = CostSpec::linear(0.01);
        let plain = rlop_forward_portfolio(1.0, &path, &[1.0, 1.0], &p, &cost).unwrap();
        assert_eq!(plain.cum_cost, 0.0);
        cost.liquidate_at_expiry = true;
        cost.charge_initial_trade = true;
        let both = rlop_forward_portfolio(1.0, &path, &[1.0, 1.0], &p, &cost).unwrap();
        assert!((both.cum_cost - 0.2).abs() < 1e-15);
        assert_eq!(both.positions[2], 0.0);
        assert!(both.max_relative_residual() < 1e-14);
        assert!((both.terminal_value() - 0.8).abs() < 1e-14);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let p = params(0.0, 3);
        assert!(qlbs_backward_portfolio(&[1.0; 4], &[0.0; 2], call(1.0), &p, &CostSpec::frictionless()).is_err());
        assert!(rlop_forward_portfolio(0.0, &[1.0; 3], &[0.0; 3], &p, &CostSpec::frictionless()).is_err());
        assert!(rlop_forward_portfolio(f64::NAN, &[1.0; 4], &[0.0; 3], &p, &CostSpec::frictionless()).is_err());
        assert!(qlbs_backward_portfolio(&[1.0; 4], &[0.0; 3], call(1.0), &p, &CostSpec::linear(-0.1)).is_err());
    }

    #[test]
    fn single_precision_ledger() {
        let p = MarketParams::<f32> { mu: 0.0, sigma: 0.2, r: 0.02, dt: 0.1, n_steps: 3, s0: 1.0 };
        let path = [1.0f32, 1.1, 0.9, 1.05];
        let l = qlbs_backward_portfolio(&path, &[0.5, 0.2, 0.7], |s| (s - 1.0).max(0.0), &p, &CostSpec::linear(0.01)).unwrap();
        assert!(l.max_relative_residual() < 1e-6);
        let d = portfolio_decomposition(&path, &[0.5, 0.2, 0.7], |s| (s - 1.0).max(0.0), &p, &CostSpec::linear(0.01)).unwrap();
        assert!((d.value(0.01) - l.initial_value()).abs() < 1e-6);
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64, f64)> {
        (1usize..12).prop_flat_map(|n| {
            (
                proptest::collection::vec(0.5f64..2.0, n + 1),
                proptest::collection::vec(-1.5f64..1.5, n),
                0.0f64..0.1,
                -0.05f64..0.1,
            )
        })
    }

    proptest! {
        #[test]
        fn backward_matches_decomposition_and_is_self_financing((path, actions, eps, r) in instance()) {
            let n = actions.len();
            let p = MarketParams { mu: 0.0, sigma: 0.2, r, dt: 0.02, n_steps: n, s0: path[0] };
            for liquidate in [false, true] {
                let cost = CostSpec { epsilon: eps, liquidate_at_expiry: liquidate, charge_initial_trade: false };
                let l = qlbs_backward_portfolio(&path, &actions, call(1.0), &p, &cost).unwrap();
                prop_assert!(l.max_relative_residual() < 1e-10);
                prop_assert!(l.max_value_mismatch() < 1e-12);
                let d = portfolio_decomposition(&path, &actions, call(1.0), &p, &cost).unwrap();
                prop_assert!((d.value(eps) - l.initial_value()).abs() < 1e-10);
            }
        }

        #[test]
        fn forward_backward_round_trip((path, actions, eps, r) in instance(), pi0 in -2.0f64..2.0) {
            let n = actions.len();
            let p = MarketParams { mu: 0.0, sigma: 0.2, r, dt: 0.02, n_steps: n, s0: path[0] };
            let cost = CostSpec::linear(eps);
            let fwd = rlop_forward_portfolio(pi0, &path, &actions, &p, &cost).unwrap();
            prop_assert!(fwd.max_relative_residual() < 1e-10);
            let terminal = fwd.terminal_value();
            let back = qlbs_backward_portfolio(&path, &actions, |_| terminal, &p, &cost).unwrap();
            prop_assert!((back.initial_value() - pi0).abs() < 1e-10);
        }

        #[test]
        fn cost_is_monotone_in_epsilon((path, actions, eps, r) in instance()) {
            let n = actions.len();
            let p = MarketParams { mu: 0.0, sigma: 0.2, r, dt: 0.02, n_steps: n, s0: path[0] };
            let lo = qlbs_backward_portfolio(&path, &actions, call(1.0), &p, &CostSpec::linear(eps)).unwrap();
            let hi = qlbs_backward_portfolio(&path, &actions, call(1.0), &p, &CostSpec::linear(eps + 0.01)).unwrap();
            prop_assert!(hi.cum_cost >= lo.cum_cost);
        }
    }
}
