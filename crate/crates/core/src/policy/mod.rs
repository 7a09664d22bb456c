//! Gaussian hedging policies, value baselines and the REINFORCE trainer.

pub mod adam;
pub mod net;
mod train;

pub use adam::Adam;
pub use net::{Head, NetParams, NetSpec};
pub use train::{
    reinforce_step, train, Checkpoint, EnvConfig, EnvKind, EpochStats, StepDiagnostics, TrainConfig,
    TrainedModel, Trajectories, CHECKPOINT_SCHEMA_VERSION,
};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::pricing::{bs_delta, EuroCall};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// What a policy sees at one decision time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    /// Step index within the episode.
    pub t_index: usize,
    /// `t / T` over the simulation horizon.
    pub time_frac: f64,
    /// Normalized state `X_t`.
    pub state: f64,
    pub spot: f64,
    pub strike: f64,
    /// Years until the option being hedged expires.
    pub time_to_expiry: f64,
}

impl Observation {
    /// Network input: `[t/T, X_t - ln K, time to expiry]`. Centering the
    /// state on the log strike is a constant shift that keeps inputs O(1)
    /// at any price scale.
    pub fn features(&self) -> [f64; 3] {
        [self.time_frac, self.state - self.strike.ln(), self.time_to_expiry]
    }
}

/// A (possibly degenerate) Gaussian action distribution over hedge
/// positions. A zero scale means deterministic execution of the mean.
pub trait Policy: Sync {
    fn distribution(&self, obs: &Observation) -> (f64, f64);
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Neural Gaussian policy `N(mu, softplus(raw) + floor)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub net: NetParams,
    pub entropy_floor: f64,
}

impl GaussianPolicy {
    pub fn new(net: NetParams, entropy_floor: f64) -> Result<Self> {
        ensure!(net.spec.head == Head::Policy, Validation, "policy needs a two-output head");
        ensure!(
            entropy_floor.is_finite() && entropy_floor >= 0.0,
            Validation,
            "entropy_floor must be finite and >= 0"
        );
        Ok(Self { net, entropy_floor })
    }

    /// Action mean and standard deviation.
    pub fn policy_forward(&self, features: &[f64]) -> Result<(f64, f64)> {
        let out = self.net.forward(features)?.output;
        Ok((out[0], softplus(out[1]) + self.entropy_floor))
    }

    /// Gaussian log-density of `action` and its gradient with respect to
    /// the flat parameter vector.
    pub fn log_prob_and_grad(&self, features: &[f64], action: f64) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.net.theta.len()];
        let (lp, _) = self.accumulate_log_prob_grad(features, action, 1.0, &mut grad)?;
        Ok((lp, grad))
    }

    /// Adds `weight * d log pi(action) / d theta` into `grad` and returns the
    /// log-density and the policy scale.
    pub(crate) fn accumulate_log_prob_grad(
        &self,
        features: &[f64],
        action: f64,
        weight: f64,
        grad: &mut [f64],
    ) -> Result<(f64, f64)> {
        let cache = self.net.forward(features)?;
        let (mu, raw) = (cache.output[0], cache.output[1]);
        let sigma = softplus(raw) + self.entropy_floor;
        ensure!(sigma > 0.0, Numeric, "policy scale collapsed to zero");
        let z = (action - mu) / sigma;
        let log_prob = -0.5 * z * z - sigma.ln() - LN_SQRT_2PI;
        let d_mu = z / sigma;
        let d_sigma = (z * z - 1.0) / sigma;
        let g_out = [weight * d_mu, weight * d_sigma * sigmoid(raw)];
        self.net.backward(&cache, &g_out, grad);
        Ok((log_prob, sigma))
    }
}

impl Policy for GaussianPolicy {
    fn distribution(&self, obs: &Observation) -> (f64, f64) {
        let out = self.net.forward_unchecked(&obs.features()).output;
        (out[0], softplus(out[1]) + self.entropy_floor)
    }
}

/// Scalar state-value baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueNet {
    pub net: NetParams,
}

impl ValueNet {
    pub fn new(net: NetParams) -> Result<Self> {
        ensure!(net.spec.head == Head::Value, Validation, "value net needs a scalar head");
        Ok(Self { net })
    }

    pub fn value_forward(&self, features: &[f64]) -> Result<f64> {
        Ok(self.net.forward(features)?.output[0])
    }
}

/// Holds the same position at every step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPolicy(pub f64);

impl Policy for ConstantPolicy {
    fn distribution(&self, _obs: &Observation) -> (f64, f64) {
        (self.0, 0.0)
    }
}

/// Black-Scholes delta at a fixed volatility, executed deterministically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsDeltaPolicy {
    pub sigma: f64,
    pub r: f64,
}

impl Policy for BsDeltaPolicy {
    fn distribution(&self, obs: &Observation) -> (f64, f64) {
        let opt = EuroCall::new(obs.spot, obs.strike, obs.time_to_expiry, self.r);
        (bs_delta(&opt, self.sigma), 0.0)
    }
}

/// Executes the mean of another policy.
#[derive(Debug, Clone, Copy)]
pub struct MeanAction<'a, P: ?Sized>(pub &'a P);

impl<P: Policy + ?Sized> Policy for MeanAction<'_, P> {
    fn distribution(&self, obs: &Observation) -> (f64, f64) {
        (self.0.distribution(obs).0, 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, domain, standard_normal};
    use rand::Rng;

    fn random_policy(seed: u64, width: usize, floor: f64) -> GaussianPolicy {
        let mut net = NetParams::init(NetSpec::new(width, 2, Head::Policy), seed, false).unwrap();
        let mut rng = rng::stream(seed, domain::MISC, 0);
        for w in &mut net.theta {
            *w += 0.3 * standard_normal(&mut rng);
        }
        GaussianPolicy::new(net, floor).unwrap()
    }

    #[test]
    fn zero_head_gives_standard_start() {
        let net = NetParams::init(NetSpec::new(16, 2, Head::Policy), 1, true).unwrap();
        let pol = GaussianPolicy::new(net, 0.01).unwrap();
        let (mu, sigma) = pol.policy_forward(&[0.2, 0.1, 0.05]).unwrap();
        assert_eq!(mu, 0.0);
        assert!((sigma - (2f64.ln() + 0.01)).abs() < 1e-15);
    }

    #[test]
    fn scale_respects_floor() {
        let floor = 0.05;
        let pol = random_policy(4, 8, floor);
        let mut rng = rng::stream(4, domain::MISC, 1);
        for _ in 0..10_000 {
            let x: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-20.0..20.0));
            let (_, sigma) = pol.policy_forward(&x).unwrap();
            assert!(sigma >= floor);
        }
    }

    #[test]
    fn log_density_at_mode() {
        let pol = random_policy(5, 6, 0.01);
        let x = [0.5, -0.1, 0.2];
        let (mu, sigma) = pol.policy_forward(&x).unwrap();
        let (lp, grad) = pol.log_prob_and_grad(&x, mu).unwrap();
        assert!((lp + (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln()).abs() < 1e-12);
        // At the mode only the scale path contributes: d logp / d mu = 0, so
        // the bias of the mean output carries no gradient.
        let lay_b_out_mu = pol.net.theta.len() - 2;
        assert_eq!(grad[lay_b_out_mu], 0.0);
    }

    #[test]
    fn mismatched_features_rejected() {
        let pol = random_policy(6, 4, 0.01);
        assert!(pol.policy_forward(&[1.0]).is_err());
        assert!(GaussianPolicy::new(NetParams::init(NetSpec::new(4, 1, Head::Value), 1, true).unwrap(), 0.1).is_err());
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        if scale == 0.0 {
            0.0
        } else {
            diff / scale
        }
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let mut rng = rng::stream(11, domain::MISC, 2);
        for trial in 0..20 {
            let pol = random_policy(100 + trial, 5, 0.02);
            let x: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.5..1.5));
            let a = rng.gen_range(-2.0..2.0);
            let (_, grad) = pol.log_prob_and_grad(&x, a).unwrap();
            let h = 1e-5;
            let fd: Vec<f64> = (0..pol.net.theta.len())
                .map(|i| {
                    let mut up = pol.clone();
                    let mut dn = pol.clone();
                    up.net.theta[i] += h;
                    dn.net.theta[i] -= h;
                    let lu = up.log_prob_and_grad(&x, a).unwrap().0;
                    let ld = dn.log_prob_and_grad(&x, a).unwrap().0;
                    (lu - ld) / (2.0 * h)
                })
                .collect();
            assert!(rel_err(&grad, &fd) < 1e-4, "trial {trial}: {}", rel_err(&grad, &fd));
        }
    }

    #[test]
    fn fixed_policies() {
        let obs = Observation { t_index: 0, time_frac: 0.0, state: 0.0, spot: 100.0, strike: 100.0, time_to_expiry: 1.0 };
        assert_eq!(ConstantPolicy(0.3).distribution(&obs), (0.3, 0.0));
        let (d, s) = BsDeltaPolicy { sigma: 0.2, r: 0.05 }.distribution(&obs);
        assert!((d - 0.636_830_651_175_619).abs() < 1e-12);
        assert_eq!(s, 0.0);
        let pol = random_policy(7, 4, 0.3);
        let (m, _) = pol.distribution(&obs);
        assert_eq!(MeanAction(&pol).distribution(&obs), (m, 0.0));
    }
}
