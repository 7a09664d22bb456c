//! Experiment configuration: one TOML document covering every module.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use hedgelab::backtest::BacktestConfig;
use hedgelab::calibration::CalibrationConfig;
use hedgelab::data_io::ReportFormat;
use hedgelab::policy::{EnvConfig, EnvKind, TrainConfig};
use hedgelab::qlbs::QlbsConfig;
use hedgelab::rlop::{PenaltyKind, RlopConfig};
use hedgelab::{CostSpec, MarketParams};

use crate::exit::{CliError, ExitKind};

/// Simulated world and the option the learners price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarketSection {
    pub mu: f64,
    pub sigma: f64,
    pub r: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub s0: f64,
    pub strike: f64,
}

impl Default for MarketSection {
    /// Two months of daily steps, `K = 1`, `r = 4%`.
    fn default() -> Self {
        Self { mu: 0.04, sigma: 0.2, r: 0.04, dt: 1.0 / 252.0, n_steps: 42, s0: 1.0, strike: 1.0 }
    }
}

impl MarketSection {
    pub fn params(&self) -> MarketParams {
        MarketParams { mu: self.mu, sigma: self.sigma, r: self.r, dt: self.dt, n_steps: self.n_steps, s0: self.s0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QlbsSection {
    pub lambda: f64,
    pub batch_size: usize,
    /// Independent batches averaged for a price estimate.
    pub price_batches: usize,
}

impl Default for QlbsSection {
    fn default() -> Self {
        Self { lambda: 0.001, batch_size: 256, price_batches: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlopSection {
    pub penalty_kind: PenaltyKind,
    pub batch_size: usize,
}

impl Default for RlopSection {
    fn default() -> Self {
        Self { penalty_kind: PenaltyKind::Squared, batch_size: 32 }
    }
}

/// Grid of RL prices used to fit the RL volatility to market slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlTableSection {
    /// Fit and backtest the RL models on market data.
    pub enabled: bool,
    /// One policy is trained per node.
    pub sigmas: Vec<f64>,
    pub moneyness: Vec<f64>,
    /// Paths per table cell.
    pub n_paths: usize,
}

impl Default for RlTableSection {
    fn default() -> Self {
        Self {
            enabled: true,
            sigmas: vec![0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5, 0.7],
            moneyness: (0..=16).map(|i| 0.8 + 0.025 * i as f64).collect(),
            n_paths: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    pub chain: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/checkpoints`.
    pub checkpoint_dir: Option<PathBuf>,
    pub format: ReportFormat,
}

impl Default for IoSection {
    fn default() -> Self {
        Self { chain: None, out_dir: PathBuf::from("out"), checkpoint_dir: None, format: ReportFormat::Csv }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    /// Random cases per deterministic oracle check.
    pub n_cases: usize,
    /// Seeds per statistical check.
    pub n_seeds: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self { n_cases: 1000, n_seeds: 3 }
    }
}

/// Synthetic chain written by `hedgelab synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub asset: String,
    pub start: NaiveDate,
    /// Trading days (weekdays) in the chain.
    pub n_days: usize,
    pub s0: f64,
    /// Drift of the realized path.
    pub mu: f64,
    /// Volatility of the realized path and of the quoted prices.
    pub sigma: f64,
    pub rate: f64,
    /// Strikes as fractions of `s0`.
    pub strikes: Vec<f64>,
    /// Days between listed expiries (all expiries fall on Fridays).
    pub expiry_every_days: i64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            asset: "SYN".into(),
            start: NaiveDate::from_ymd_opt(2020, 1, 6).unwrap(),
            n_days: 60,
            s0: 100.0,
            mu: 0.05,
            sigma: 0.2,
            rate: 0.02,
            strikes: (0..=16).map(|i| 0.8 + 0.025 * i as f64).collect(),
            expiry_every_days: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    /// Master seed; overrides `train.seed` and `calibration.fit_seed`.
    pub seed: u64,
    pub market: MarketSection,
    pub cost: CostSpec,
    pub qlbs: QlbsSection,
    pub rlop: RlopSection,
    pub train: TrainConfig,
    pub calibration: CalibrationConfig,
    pub rl_table: RlTableSection,
    pub backtest: BacktestConfig,
    pub io: IoSection,
    pub verify: VerifySection,
    pub synth: SynthSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment_id: "default".into(),
            seed: 0,
            market: MarketSection::default(),
            cost: CostSpec::frictionless(),
            qlbs: QlbsSection::default(),
            rlop: RlopSection::default(),
            train: TrainConfig::default(),
            calibration: CalibrationConfig::default(),
            rl_table: RlTableSection::default(),
            backtest: BacktestConfig::default(),
            io: IoSection::default(),
            verify: VerifySection::default(),
            synth: SynthSection::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML, rejecting unknown keys.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::new(ExitKind::Config, format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new(ExitKind::Config, format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies the master seed and checks every section.
    pub fn finalize(mut self) -> Result<Self, CliError> {
        self.train.seed = self.seed;
        self.calibration.fit_seed = hedgelab::rng::mix(self.seed, hedgelab::rng::domain::FIT);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let check = |r: hedgelab::Result<()>| r.map_err(|e| CliError::new(ExitKind::Config, e.to_string()));
        check(self.market.params().validate())?;
        check(self.cost.validate())?;
        check(self.train.validate())?;
        check(self.calibration.validate())?;
        check(self.backtest.validate())?;
        check(self.env(EnvKind::Qlbs).validate())?;
        check(self.env(EnvKind::Rlop).validate())?;
        let bad = |msg: &str| Err(CliError::new(ExitKind::Config, msg.to_string()));
        if self.market.strike <= 0.0 {
            return bad("market.strike must be > 0");
        }
        if self.qlbs.price_batches == 0 {
            return bad("qlbs.price_batches must be >= 1");
        }
        let increasing = |xs: &[f64]| xs.len() >= 2 && xs.windows(2).all(|w| w[0] < w[1]) && xs[0] > 0.0;
        if self.rl_table.enabled && !(increasing(&self.rl_table.sigmas) && increasing(&self.rl_table.moneyness)) {
            return bad("rl_table.sigmas and rl_table.moneyness need >= 2 increasing positive nodes");
        }
        if self.rl_table.n_paths < 2 {
            return bad("rl_table.n_paths must be >= 2");
        }
        if self.synth.n_days == 0 || self.synth.strikes.is_empty() || self.synth.expiry_every_days <= 0 {
            return bad("synth needs days, strikes and a positive expiry spacing");
        }
        if self.verify.n_cases == 0 || self.verify.n_seeds == 0 {
            return bad("verify.n_cases and verify.n_seeds must be >= 1");
        }
        Ok(())
    }

    pub fn env(&self, kind: EnvKind) -> EnvConfig {
        let params = self.market.params();
        match kind {
            EnvKind::Qlbs => EnvConfig::Qlbs(QlbsConfig {
                params,
                cost: self.cost,
                lambda: self.qlbs.lambda,
                strike: self.market.strike,
                batch_size: self.qlbs.batch_size,
            }),
            EnvKind::Rlop => EnvConfig::Rlop(RlopConfig {
                params,
                cost: self.cost,
                strike: self.market.strike,
                penalty_kind: self.rlop.penalty_kind,
                batch_size: self.rlop.batch_size,
            }),
        }
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.io.checkpoint_dir.clone().unwrap_or_else(|| self.io.out_dir.join("checkpoints"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = ExperimentConfig::default().finalize().unwrap();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = ExperimentConfig::from_toml("[market]\nsigmaa = 0.3\n").unwrap_err();
        assert_eq!(err.kind, ExitKind::Config);
        assert!(err.message.contains("sigmaa"), "{}", err.message);
        assert!(ExperimentConfig::from_toml("bogus = 1\n").unwrap_err().message.contains("bogus"));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let cfg = ExperimentConfig::from_toml("[market]\nsigma = -1.0\n").unwrap();
        assert_eq!(cfg.finalize().unwrap_err().kind, ExitKind::Config);
    }
}
