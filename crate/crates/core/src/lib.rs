//! Option pricing and hedging laboratory.
//!
//! Two reinforcement-learning option frameworks (a backward, value-based
//! QLBS variant and the forward replication learner RLOP) next to the
//! Black-Scholes, Merton jump-diffusion and Heston baselines, with daily
//! calibration and a delta-hedging backtester.
//!
//! The market, accounting and pricing code is generic over [`Real`]
//! (`f32`/`f64`); the aliases below fix the scalar to `f64`, which is what
//! the learners, calibration and I/O use.

pub mod accounting;
pub mod backtest;
pub mod calibration;
pub mod data_io;
pub mod pricing;
pub mod error;
pub mod market;
pub mod policy;
pub mod qlbs;
pub mod rlop;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type MarketParams = market::MarketParams<f64>;
pub type PathBatch = market::PathBatch<f64>;
pub type CostSpec = accounting::CostSpec<f64>;
pub type HedgeLedger = accounting::HedgeLedger<f64>;
