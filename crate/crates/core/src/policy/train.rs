use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{clip_norm, Adam};
use super::net::{Head, NetParams, NetSpec};
use super::{GaussianPolicy, ValueNet};
use crate::error::{ensure, Error, Result};
use crate::qlbs::{qlbs_rollout, QlbsConfig, QlbsRollout};
use crate::rlop::{refine_wealth, rlop_rollout, InitialWealth, RlopConfig, RlopRollout};
use crate::rng;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Steps per parallel gradient chunk. Fixed so the summation order, and
/// hence the result, does not depend on the worker count.
const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Qlbs,
    Rlop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvConfig {
    Qlbs(QlbsConfig),
    Rlop(RlopConfig),
}

impl EnvConfig {
    pub fn kind(&self) -> EnvKind {
        match self {
            EnvConfig::Qlbs(_) => EnvKind::Qlbs,
            EnvConfig::Rlop(_) => EnvKind::Rlop,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvConfig::Qlbs(c) => c.validate(),
            EnvConfig::Rlop(c) => c.validate(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Rollouts (and parameter updates) per epoch.
    pub batches_per_epoch: usize,
    pub n_epochs: usize,
    /// Lower bound added to the policy scale.
    pub entropy_floor: f64,
    pub grad_clip_norm: f64,
    pub seed: u64,
    pub hidden_width: usize,
    pub n_residual_blocks: usize,
    /// Adam step size for the initial wealth, in units of `s0`.
    pub wealth_learning_rate: f64,
    /// Replace the learned wealth by its exact minimizer under the final
    /// policy after training.
    pub refine_wealth: bool,
    /// Paths used for wealth refinement and the final penalty estimate.
    pub refine_paths: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batches_per_epoch: 4,
            n_epochs: 300,
            entropy_floor: 0.01,
            grad_clip_norm: 10.0,
            seed: 0,
            hidden_width: 64,
            n_residual_blocks: 2,
            wealth_learning_rate: 1e-3,
            refine_wealth: true,
            refine_paths: 4096,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.learning_rate > 0.0 && self.learning_rate.is_finite(), Validation, "learning_rate must be > 0");
        ensure!((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2), Validation, "adam betas must lie in [0, 1)");
        ensure!(self.adam_eps > 0.0, Validation, "adam_eps must be > 0");
        ensure!(self.batches_per_epoch >= 1, Validation, "batches_per_epoch must be >= 1");
        ensure!(self.entropy_floor >= 0.0 && self.entropy_floor.is_finite(), Validation, "entropy_floor must be >= 0");
        ensure!(self.grad_clip_norm > 0.0, Validation, "grad_clip_norm must be > 0");
        ensure!(self.hidden_width >= 1, Validation, "hidden_width must be >= 1");
        ensure!(self.wealth_learning_rate > 0.0, Validation, "wealth_learning_rate must be > 0");
        ensure!(self.refine_paths >= 1, Validation, "refine_paths must be >= 1");
        Ok(())
    }

    fn adam(&self, n: usize, lr: f64) -> Adam {
        Adam::new(n, lr, self.beta1, self.beta2, self.adam_eps)
    }
}

/// Flattened episodes: step `k` belongs to the episode whose end index is
/// the first entry of `episode_ends` greater than `k`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectories {
    pub features: Vec<[f64; 3]>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub episode_ends: Vec<usize>,
    pub gamma: f64,
}

impl Trajectories {
    pub fn new(gamma: f64) -> Self {
        Self { gamma, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn push_episode(&mut self, steps: impl IntoIterator<Item = ([f64; 3], f64, f64)>) {
        for (x, a, r) in steps {
            self.features.push(x);
            self.actions.push(a);
            self.rewards.push(r);
        }
        self.episode_ends.push(self.actions.len());
    }

    /// Discounted reward-to-go within each episode.
    pub fn returns(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.len()];
        let mut start = 0;
        for &end in &self.episode_ends {
            let mut acc = 0.0;
            for k in (start..end).rev() {
                acc = self.rewards[k] + self.gamma * acc;
                g[k] = acc;
            }
            start = end;
        }
        g
    }

    /// One episode per path with the pathwise training rewards.
    pub fn from_qlbs(r: &QlbsRollout) -> Self {
        let mut traj = Self::new(r.config.params.gamma());
        for (p, rewards) in r.training_rewards().iter().enumerate() {
            traj.push_episode(
                rewards.iter().enumerate().map(|(t, &rw)| (r.observation(p, t).features(), r.actions[p][t], rw)),
            );
        }
        traj
    }

    /// One episode per (path, expiry), rewarded only at its last step.
    pub fn from_rlop(r: &RlopRollout) -> Self {
        let cfg = &r.config;
        let mut traj = Self::new(cfg.params.gamma());
        for (p, rewards) in r.training_rewards().iter().enumerate() {
            let path = r.batch.path(p);
            for (k, &rw) in rewards.iter().enumerate() {
                let expiry = k + 1;
                traj.push_episode((0..expiry).map(|t| {
                    let reward = if t + 1 == expiry { rw } else { 0.0 };
                    (cfg.observation(t, path[t], expiry).features(), r.actions[p][k][t], reward)
                }));
            }
        }
        traj
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub n_steps: usize,
    /// Mean return at episode starts.
    pub mean_return: f64,
    pub value_loss: f64,
    pub policy_grad_norm: f64,
    pub value_grad_norm: f64,
    pub mean_sigma: f64,
}

struct ChunkGrad {
    policy: Vec<f64>,
    value: Vec<f64>,
    sq_err: f64,
    sigma: f64,
}

/// Policy-gradient and value-regression gradients of a trajectory set,
/// both as minimization gradients, plus summary statistics.
fn gradients(policy: &GaussianPolicy, value: &ValueNet, traj: &Trajectories, returns: &[f64]) -> Result<ChunkGrad> {
    let n = traj.len();
    let np = policy.net.theta.len();
    let nv = value.net.theta.len();
    let chunks: Vec<ChunkGrad> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = ChunkGrad { policy: vec![0.0; np], value: vec![0.0; nv], sq_err: 0.0, sigma: 0.0 };
            for k in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let x = &traj.features[k];
                let vc = value.net.forward_unchecked(x);
                let baseline = vc.output[0];
                let err = baseline - returns[k];
                acc.sq_err += err * err;
                value.net.backward(&vc, &[2.0 * err / n as f64], &mut acc.value);
                let advantage = returns[k] - baseline;
                let (_, sigma) =
                    policy.accumulate_log_prob_grad(x, traj.actions[k], -advantage / n as f64, &mut acc.policy)?;
                acc.sigma += sigma;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = ChunkGrad { policy: vec![0.0; np], value: vec![0.0; nv], sq_err: 0.0, sigma: 0.0 };
    for c in chunks {
        total.policy.iter_mut().zip(&c.policy).for_each(|(a, b)| *a += b);
        total.value.iter_mut().zip(&c.value).for_each(|(a, b)| *a += b);
        total.sq_err += c.sq_err;
        total.sigma += c.sigma;
    }
    Ok(total)
}

/// One REINFORCE-with-baseline update of both networks in place.
pub fn reinforce_step(
    policy: &mut GaussianPolicy,
    value: &mut ValueNet,
    policy_opt: &mut Adam,
    value_opt: &mut Adam,
    traj: &Trajectories,
    grad_clip_norm: f64,
) -> Result<StepDiagnostics> {
    ensure!(!traj.is_empty(), Validation, "no trajectories to learn from");
    let returns = traj.returns();
    let mut g = gradients(policy, value, traj, &returns)?;
    let n = traj.len() as f64;
    let mut starts = Vec::with_capacity(traj.episode_ends.len());
    let mut s = 0;
    for &e in &traj.episode_ends {
        if e > s {
            starts.push(returns[s]);
        }
        s = e;
    }
    let policy_grad_norm = clip_norm(&mut g.policy, grad_clip_norm);
    let value_grad_norm = clip_norm(&mut g.value, grad_clip_norm);
    let diag = StepDiagnostics {
        n_steps: traj.len(),
        mean_return: starts.iter().sum::<f64>() / starts.len().max(1) as f64,
        value_loss: g.sq_err / n,
        policy_grad_norm,
        value_grad_norm,
        mean_sigma: g.sigma / n,
    };
    if !(policy_grad_norm.is_finite() && value_grad_norm.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient in REINFORCE step: {diag:?}")));
    }
    policy_opt.step(&mut policy.net.theta, &g.policy);
    value_opt.step(&mut value.net.theta, &g.value);
    Ok(diag)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// QLBS: mean `v_hat_0` in currency. RLOP: mean penalty magnitude.
    pub objective: f64,
    pub mean_return: f64,
    pub value_loss: f64,
    pub policy_grad_norm: f64,
    pub mean_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub policy: GaussianPolicy,
    pub value: ValueNet,
    pub wealth: Option<InitialWealth>,
    pub loss_curve: Vec<EpochStats>,
    /// RLOP: mean penalty magnitude of the final wealth and policy on a
    /// fresh evaluation batch.
    pub final_penalty: Option<f64>,
}

/// Versioned JSON checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub model: TrainedModel,
}

impl Checkpoint {
    pub fn new(model: TrainedModel) -> Self {
        Self { schema_version: CHECKPOINT_SCHEMA_VERSION, model }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(s)?;
        ensure!(
            ck.schema_version == CHECKPOINT_SCHEMA_VERSION,
            Data,
            "unsupported checkpoint schema_version {} (expected {})",
            ck.schema_version,
            CHECKPOINT_SCHEMA_VERSION
        );
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn mean_stats(epoch: usize, objective: f64, diags: &[StepDiagnostics]) -> EpochStats {
    let n = diags.len() as f64;
    let avg = |f: fn(&StepDiagnostics) -> f64| diags.iter().map(f).sum::<f64>() / n;
    EpochStats {
        epoch,
        objective,
        mean_return: avg(|d| d.mean_return),
        value_loss: avg(|d| d.value_loss),
        policy_grad_norm: avg(|d| d.policy_grad_norm),
        mean_sigma: avg(|d| d.mean_sigma),
    }
}

/// Trains a policy (and, for RLOP, the initial wealth) from scratch.
/// Deterministic given `cfg.seed`.
pub fn train(env: &EnvConfig, cfg: &TrainConfig) -> Result<TrainedModel> {
    env.validate()?;
    cfg.validate()?;
    let mut policy = GaussianPolicy::new(
        NetParams::init(NetSpec::new(cfg.hidden_width, cfg.n_residual_blocks, Head::Policy), rng::mix(cfg.seed, 1), true)?,
        cfg.entropy_floor,
    )?;
    let mut value = ValueNet::new(NetParams::init(
        NetSpec::new(cfg.hidden_width, cfg.n_residual_blocks, Head::Value),
        rng::mix(cfg.seed, 2),
        true,
    )?)?;
    let mut policy_opt = cfg.adam(policy.net.theta.len(), cfg.learning_rate);
    let mut value_opt = cfg.adam(value.net.theta.len(), cfg.learning_rate);
    let rollout_seeds = rng::mix(cfg.seed, 3);

    let mut loss_curve = Vec::with_capacity(cfg.n_epochs);
    match env {
        EnvConfig::Qlbs(qc) => {
            for epoch in 0..cfg.n_epochs {
                let mut diags = Vec::with_capacity(cfg.batches_per_epoch);
                let mut objective = 0.0;
                for b in 0..cfg.batches_per_epoch {
                    let seed = rng::mix(rollout_seeds, (epoch * cfg.batches_per_epoch + b) as u64);
                    let r = qlbs_rollout(&policy, qc, seed)?;
                    objective += r.mean_v0();
                    diags.push(reinforce_step(
                        &mut policy,
                        &mut value,
                        &mut policy_opt,
                        &mut value_opt,
                        &Trajectories::from_qlbs(&r),
                        cfg.grad_clip_norm,
                    )?);
                }
                loss_curve.push(mean_stats(epoch, objective / cfg.batches_per_epoch as f64, &diags));
            }
            Ok(TrainedModel { env: *env, train: *cfg, policy, value, wealth: None, loss_curve, final_penalty: None })
        }
        EnvConfig::Rlop(rc) => {
            let s0 = rc.params.s0;
            let mut wealth = InitialWealth::intrinsic(rc);
            let mut scaled: Vec<f64> = wealth.pi0.iter().map(|v| v / s0).collect();
            let mut wealth_opt = cfg.adam(scaled.len(), cfg.wealth_learning_rate);
            for epoch in 0..cfg.n_epochs {
                let mut diags = Vec::with_capacity(cfg.batches_per_epoch);
                let mut objective = 0.0;
                for b in 0..cfg.batches_per_epoch {
                    let seed = rng::mix(rollout_seeds, (epoch * cfg.batches_per_epoch + b) as u64);
                    let r = rlop_rollout(&policy, &wealth, rc, seed)?;
                    objective += r.mean_penalty();
                    diags.push(reinforce_step(
                        &mut policy,
                        &mut value,
                        &mut policy_opt,
                        &mut value_opt,
                        &Trajectories::from_rlop(&r),
                        cfg.grad_clip_norm,
                    )?);
                    let mut g = r.wealth_gradient();
                    ensure!(g.iter().all(|v| v.is_finite()), Numeric, "non-finite wealth gradient");
                    clip_norm(&mut g, cfg.grad_clip_norm);
                    wealth_opt.step(&mut scaled, &g);
                    wealth.pi0 = scaled.iter().map(|v| v * s0).collect();
                }
                loss_curve.push(mean_stats(epoch, objective / cfg.batches_per_epoch as f64, &diags));
            }
            let eval_seed = rng::mix(cfg.seed, 4);
            if cfg.refine_wealth {
                wealth = refine_wealth(&policy, rc, cfg.refine_paths, eval_seed)?;
            } else {
                wealth.trained = cfg.n_epochs > 0;
            }
            let eval_cfg = RlopConfig { batch_size: cfg.refine_paths, ..*rc };
            let final_penalty = rlop_rollout(&policy, &wealth, &eval_cfg, rng::mix(eval_seed, 1))?.mean_penalty();
            Ok(TrainedModel {
                env: *env,
                train: *cfg,
                policy,
                value,
                wealth: Some(wealth),
                loss_curve,
                final_penalty: Some(final_penalty),
            })
        }
    }
}
