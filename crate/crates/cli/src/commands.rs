//! The subcommands. Each writes its artifacts under `io.out_dir`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{Datelike, Duration, NaiveDate};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use hedgelab::backtest::{
    equal_day_aggregate, metric_rows, metrics, quarter, realized_path, run_hedge, select_strike, spot_series, CellKey,
    DeltaSource, HedgeMetrics, HedgePlan, MoneynessGroup, ParametricDelta, PolicyDelta, PremiumSource, RefitDelta,
};
use hedgelab::calibration::{
    bucket_slice, equal_day_mean, fit_parametric, fit_rl_sigma, group_days, rl_normalized_price, FitResult, FittedParams, ModelTag,
    OptionSlice, PriceTable,
};
use hedgelab::data_io::{
    emit_plot_series, emit_report, load_chain, save_chain, ChainRow, Metric, ReportFormat, ReportRow, SweepPoint,
    CHAIN_SCHEMA_VERSION,
};
use hedgelab::policy::{EnvConfig, EnvKind, TrainedModel};
use hedgelab::qlbs::qlbs_price;
use hedgelab::rlop::{discounted_shortfalls, rlop_price};
use hedgelab::rng::{self, domain};

use crate::cache::train_cached;
use crate::config::ExperimentConfig;
use crate::exit::{CliError, ExitKind};
use crate::synthetic::generate_chain;
use crate::verify::{self, CheckKind, CheckResult, Fault};

pub fn env_name(kind: EnvKind) -> &'static str {
    match kind {
        EnvKind::Qlbs => "qlbs",
        EnvKind::Rlop => "rlop",
    }
}

fn extension(format: ReportFormat) -> &'static str {
    match format {
        ReportFormat::Csv => "csv",
        ReportFormat::Json => "json",
    }
}

fn out_dir(cfg: &ExperimentConfig) -> Result<&Path> {
    let dir = cfg.io.out_dir.as_path();
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Price and standard error of a trained model at its own horizon, in
/// currency.
pub fn model_price(model: &TrainedModel, price_batches: usize, seed: u64) -> Result<(f64, f64)> {
    let eval_seed = rng::mix(seed, domain::MISC);
    match &model.env {
        EnvConfig::Qlbs(q) => {
            let est = qlbs_price(&model.policy, q, price_batches, eval_seed)?;
            Ok((est.price, est.stderr))
        }
        EnvConfig::Rlop(c) => {
            let wealth = model.wealth.as_ref().context("RLOP model has no initial wealth")?;
            let last = c.n_expiries();
            let p = rlop_price(wealth, c, last, model.final_penalty)?;
            let shortfalls: Vec<f64> =
                discounted_shortfalls(&model.policy, c, model.train.refine_paths, eval_seed)?.iter().map(|s| s[last - 1]).collect();
            let n = shortfalls.len() as f64;
            let mean = shortfalls.iter().sum::<f64>() / n;
            let var = shortfalls.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            Ok((p.price, (var / n).sqrt()))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub env: &'static str,
    pub price: f64,
    pub stderr: f64,
    pub cache_hit: bool,
    pub checkpoint: PathBuf,
}

/// Trains (or loads) one environment and writes its checkpoint, loss curve
/// and price report.
pub fn cmd_train(cfg: &ExperimentConfig, kind: EnvKind) -> Result<TrainSummary> {
    let dir = out_dir(cfg)?;
    let env = cfg.env(kind);
    let (model, cache_hit) = train_cached(&env, &cfg.train, &cfg.checkpoint_dir())?;
    let name = env_name(kind);

    let checkpoint = dir.join(format!("{name}_checkpoint.json"));
    hedgelab::policy::Checkpoint::new(model.clone()).save(&checkpoint)?;

    let mut w = csv::Writer::from_path(dir.join(format!("{name}_loss.csv")))?;
    for s in &model.loss_curve {
        w.serialize(s)?;
    }
    w.flush()?;

    let (price, stderr) = model_price(&model, cfg.qlbs.price_batches, cfg.seed)?;
    let m = &cfg.market;
    let row = |metric, value| ReportRow {
        experiment_id: cfg.experiment_id.clone(),
        asset: "simulated".into(),
        period: format!("{}", m.n_steps),
        bucket: format!("{:.4}", m.n_steps as f64 * m.dt),
        moneyness_group: format!("{:.4}", m.strike / m.s0),
        model: name.into(),
        metric,
        value,
        n_days: 0,
    };
    let rows = [row(Metric::Price, price), row(Metric::Stderr, stderr)];
    emit_report(&rows, cfg.io.format, dir.join(format!("{name}_price.{}", extension(cfg.io.format))))?;
    log::info!("{name}: price {price:.6} (stderr {stderr:.6})");
    Ok(TrainSummary { env: name, price, stderr, cache_hit, checkpoint })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepParam {
    Sigma,
    Mu,
    Lambda,
    Epsilon,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::Sigma => "sigma",
            SweepParam::Mu => "mu",
            SweepParam::Lambda => "lambda",
            SweepParam::Epsilon => "epsilon",
        }
    }

    fn apply(self, cfg: &mut ExperimentConfig, v: f64) {
        match self {
            SweepParam::Sigma => cfg.market.sigma = v,
            SweepParam::Mu => cfg.market.mu = v,
            SweepParam::Lambda => cfg.qlbs.lambda = v,
            SweepParam::Epsilon => cfg.cost.epsilon = v,
        }
    }
}

/// Trains one model per grid value and writes the price curve.
pub fn cmd_sweep(cfg: &ExperimentConfig, kind: EnvKind, param: SweepParam, grid: &[f64]) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(CliError::new(ExitKind::Config, "sweep grid is empty").into());
    }
    let dir = out_dir(cfg)?;
    let mut points = Vec::with_capacity(grid.len());
    for &v in grid {
        let mut c = cfg.clone();
        param.apply(&mut c, v);
        c.validate()?;
        let (model, _) = train_cached(&c.env(kind), &c.train, &cfg.checkpoint_dir())?;
        let (price, stderr) = model_price(&model, c.qlbs.price_batches, c.seed)?;
        log::info!("{} {}={v}: price {price:.6}", env_name(kind), param.name());
        points.push(SweepPoint { parameter: v, price, stderr, model: env_name(kind).into() });
    }
    emit_plot_series(&points, dir.join(format!("sweep_{}_{}.csv", env_name(kind), param.name())))?;
    Ok(points)
}

/// Writes a synthetic chain and returns its path.
pub fn cmd_synth(cfg: &ExperimentConfig, path: Option<&Path>) -> Result<PathBuf> {
    let path = match path {
        Some(p) => p.to_path_buf(),
        None => out_dir(cfg)?.join("synthetic_chain.csv"),
    };
    let rows = generate_chain(&cfg.synth, cfg.seed);
    save_chain(&path, &rows).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {} quotes to {}", rows.len(), path.display());
    Ok(path)
}

/// Runs every verification check; any deterministic failure exits with 1.
pub fn cmd_verify(cfg: &ExperimentConfig, fault: Option<Fault>) -> Result<Vec<CheckResult>> {
    let results = verify::run_all(cfg.verify.n_cases, cfg.verify.n_seeds, cfg.seed, fault);
    for r in &results {
        println!("{}", r.line());
    }
    let failed: Vec<&str> =
        results.iter().filter(|r| !r.passed && r.kind == CheckKind::Deterministic).map(|r| r.name).collect();
    if !failed.is_empty() {
        return Err(CliError::new(ExitKind::VerifyFailed, format!("failed checks: {}", failed.join(", "))).into());
    }
    Ok(results)
}

fn load_rows(cfg: &ExperimentConfig, chain: Option<&Path>) -> Result<Vec<ChainRow>> {
    let path = chain
        .map(Path::to_path_buf)
        .or_else(|| cfg.io.chain.clone())
        .ok_or_else(|| CliError::new(ExitKind::Data, "no option chain given (pass a path or set io.chain)"))?;
    if !path.exists() {
        return Err(CliError::new(ExitKind::Data, format!("chain file {} does not exist", path.display())).into());
    }
    let loaded = load_chain(&path, CHAIN_SCHEMA_VERSION)
        .map_err(|e| CliError::new(ExitKind::Data, format!("cannot read {}: {e}", path.display())))?;
    for (reason, n) in loaded.reject_counts() {
        log::warn!("{n} rows rejected: {reason}");
    }
    if loaded.rows.is_empty() {
        return Err(CliError::new(ExitKind::Data, format!("chain {} has no usable rows", path.display())).into());
    }
    Ok(loaded.rows)
}

/// Policies trained at each table volatility, by environment.
#[derive(Debug, Clone)]
pub struct RlModels {
    pub kind: EnvKind,
    pub sigmas: Vec<f64>,
    pub models: Vec<TrainedModel>,
    pub table: PriceTable,
}

impl RlModels {
    fn tag(&self) -> ModelTag {
        match self.kind {
            EnvKind::Qlbs => ModelTag::Qlbs,
            EnvKind::Rlop => ModelTag::Rlop,
        }
    }

    /// Model trained at the grid volatility nearest `sigma`.
    pub fn nearest(&self, sigma: f64) -> &TrainedModel {
        let k = (0..self.sigmas.len())
            .min_by(|&a, &b| (self.sigmas[a] - sigma).abs().total_cmp(&(self.sigmas[b] - sigma).abs()))
            .unwrap();
        &self.models[k]
    }
}

fn horizon_steps(days: u32, dt: f64) -> usize {
    ((days as f64 / 365.0) / dt).round().max(1.0) as usize
}

/// Trains one policy per volatility node on a unit-spot, at-the-money
/// environment long enough for the largest bucket, then tabulates prices.
fn build_rl_models(cfg: &ExperimentConfig, kind: EnvKind) -> Result<RlModels> {
    let buckets = cfg.calibration.buckets.centers.clone();
    let dt = cfg.market.dt;
    let steps: Vec<usize> = buckets.iter().map(|b| horizon_steps(*b, dt)).collect();
    let horizon = *steps.iter().max().expect("buckets are validated non-empty");
    let sigmas = cfg.rl_table.sigmas.clone();
    let models = sigmas
        .iter()
        .map(|&sigma| {
            let mut c = cfg.clone();
            c.market.sigma = sigma;
            c.market.s0 = 1.0;
            c.market.strike = 1.0;
            c.market.n_steps = horizon;
            let (model, hit) = train_cached(&c.env(kind), &c.train, &cfg.checkpoint_dir())?;
            log::info!("{} table policy sigma={sigma} ({})", env_name(kind), if hit { "cached" } else { "trained" });
            Ok(model)
        })
        .collect::<Result<Vec<_>>>()?;
    let tag = match kind {
        EnvKind::Qlbs => ModelTag::Qlbs,
        EnvKind::Rlop => ModelTag::Rlop,
    };
    let table_seed = rng::mix(cfg.seed, domain::MISC);
    let n_paths = cfg.rl_table.n_paths;
    let table = PriceTable::build(
        tag,
        cfg.market.r,
        sigmas.clone(),
        cfg.rl_table.moneyness.clone(),
        buckets,
        steps.iter().map(|s| *s as f64 * dt).collect(),
        |s, m, b| rl_normalized_price(&models[s], m, steps[b], n_paths, table_seed),
    )?;
    Ok(RlModels { kind, sigmas, models, table })
}

/// Every fit of one day-bucket slice.
#[derive(Debug, Clone, Serialize)]
pub struct SliceFits {
    pub slice: OptionSlice,
    pub fits: Vec<FitResult>,
    /// Models whose fit failed, with the reason.
    pub failures: Vec<(ModelTag, String)>,
}

impl SliceFits {
    pub fn fit(&self, model: ModelTag) -> Option<&FitResult> {
        self.fits.iter().find(|f| f.model == model)
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationRun {
    pub rows: Vec<ChainRow>,
    pub slices: Vec<SliceFits>,
    pub rl: Vec<RlModels>,
    pub skipped_slices: BTreeMap<String, usize>,
}

impl CalibrationRun {
    pub fn models(&self) -> Vec<ModelTag> {
        let mut m = vec![ModelTag::Bs, ModelTag::Jd, ModelTag::Sv];
        m.extend(self.rl.iter().map(RlModels::tag));
        m
    }

    fn rl(&self, model: ModelTag) -> Option<&RlModels> {
        self.rl.iter().find(|r| r.tag() == model)
    }
}

fn day_seed(base: u64, date: NaiveDate, asset: &str) -> u64 {
    let digest = Sha256::digest(asset.as_bytes());
    let asset_key = u64::from_le_bytes(digest[..8].try_into().unwrap());
    rng::mix(rng::mix(base, date.num_days_from_ce() as u64), asset_key)
}

fn fit_slice(cfg: &ExperimentConfig, slice: OptionSlice, rl: &[RlModels]) -> SliceFits {
    let mut cal = cfg.calibration.clone();
    cal.fit_seed = day_seed(cal.fit_seed, slice.date, &slice.asset);
    let mut fits = Vec::new();
    let mut failures = Vec::new();
    for model in [ModelTag::Bs, ModelTag::Jd, ModelTag::Sv] {
        match fit_parametric(&slice, model, &cal) {
            Ok(f) => fits.push(f),
            Err(e) => failures.push((model, e.to_string())),
        }
    }
    for r in rl {
        match fit_rl_sigma(&slice, &r.table) {
            Ok(f) => fits.push(f),
            Err(e) => failures.push((r.tag(), e.to_string())),
        }
    }
    SliceFits { slice, fits, failures }
}

/// Slices the chain into day-buckets and fits every model to each.
pub fn calibrate(cfg: &ExperimentConfig, chain: Option<&Path>) -> Result<CalibrationRun> {
    let rows = load_rows(cfg, chain)?;
    let rl = if cfg.rl_table.enabled {
        [EnvKind::Qlbs, EnvKind::Rlop].into_iter().map(|k| build_rl_models(cfg, k)).collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let mut skipped: BTreeMap<String, usize> = BTreeMap::new();
    let mut slices = Vec::new();
    for day in group_days(&rows).values() {
        for &center in &cfg.calibration.buckets.centers {
            match bucket_slice(day, center, &cfg.calibration.buckets) {
                Ok(s) => slices.push(s),
                Err(hedgelab::Error::EmptySlice(_)) => *skipped.entry("empty_slice".into()).or_default() += 1,
                Err(e) => {
                    log::warn!("skipping {} {} {center}d: {e}", day[0].asset, day[0].date);
                    *skipped.entry("inconsistent_day".into()).or_default() += 1;
                }
            }
        }
    }
    let slices: Vec<SliceFits> = slices.into_par_iter().map(|s| fit_slice(cfg, s, &rl)).collect();
    Ok(CalibrationRun { rows, slices, rl, skipped_slices: skipped })
}

/// Equal-day IVRMSE cells by asset, quarter, bucket and model.
pub fn ivrmse_report(experiment_id: &str, run: &CalibrationRun) -> Vec<ReportRow> {
    let mut cells: BTreeMap<(String, String, u32, ModelTag), Vec<Option<f64>>> = BTreeMap::new();
    for sf in &run.slices {
        for model in run.models() {
            let v = sf.fit(model).and_then(|f| f.ivrmse_1e3);
            cells.entry((sf.slice.asset.clone(), quarter(sf.slice.date), sf.slice.bucket_days, model)).or_default().push(v);
        }
    }
    cells
        .into_iter()
        .filter_map(|((asset, period, bucket, model), vals)| {
            let (value, n_days) = equal_day_mean(vals)?;
            Some(ReportRow {
                experiment_id: experiment_id.into(),
                asset,
                period,
                bucket: bucket.to_string(),
                moneyness_group: "all".into(),
                model: model.as_str().into(),
                metric: Metric::Ivrmse1e3,
                value,
                n_days,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
struct CalibrationSummary {
    experiment_id: String,
    n_rows: usize,
    n_slices: usize,
    skipped_slices: BTreeMap<String, usize>,
    failed_fits: BTreeMap<String, usize>,
    boundary_hits: BTreeMap<String, usize>,
    non_converged: BTreeMap<String, usize>,
    rl_tables: Vec<PriceTable>,
}

pub fn cmd_calibrate(cfg: &ExperimentConfig, chain: Option<&Path>) -> Result<CalibrationRun> {
    let run = calibrate(cfg, chain)?;
    let dir = out_dir(cfg)?;
    write_json(&dir.join("calibration_fits.json"), &run.slices)?;
    let mut summary = CalibrationSummary {
        experiment_id: cfg.experiment_id.clone(),
        n_rows: run.rows.len(),
        n_slices: run.slices.len(),
        skipped_slices: run.skipped_slices.clone(),
        failed_fits: BTreeMap::new(),
        boundary_hits: BTreeMap::new(),
        non_converged: BTreeMap::new(),
        rl_tables: run.rl.iter().map(|r| r.table.clone()).collect(),
    };
    for sf in &run.slices {
        for (m, _) in &sf.failures {
            *summary.failed_fits.entry(m.as_str().into()).or_default() += 1;
        }
        for f in &sf.fits {
            if f.boundary_hit {
                *summary.boundary_hits.entry(f.model.as_str().into()).or_default() += 1;
            }
            if !f.converged {
                *summary.non_converged.entry(f.model.as_str().into()).or_default() += 1;
            }
        }
    }
    write_json(&dir.join("calibration_summary.json"), &summary)?;
    let report = ivrmse_report(&cfg.experiment_id, &run);
    emit_report(&report, cfg.io.format, dir.join(format!("calibration_report.{}", extension(cfg.io.format))))?;
    log::info!("calibrated {} slices ({} report cells)", run.slices.len(), report.len());
    Ok(run)
}

/// One finished hedge, keyed by its report cell.
struct HedgeRecord {
    key: CellKey,
    pi_t: f64,
    cost: f64,
}

enum HedgeSkip {
    NoFit,
    MissingPath,
    Premium,
}

impl HedgeSkip {
    fn as_str(&self) -> &'static str {
        match self {
            HedgeSkip::NoFit => "no_fit",
            HedgeSkip::MissingPath => "missing_path",
            HedgeSkip::Premium => "premium_unavailable",
        }
    }
}

struct HedgeJob<'a> {
    sf: &'a SliceFits,
    group: MoneynessGroup,
    model: ModelTag,
    refit: bool,
}

fn run_job(
    cfg: &ExperimentConfig,
    run: &CalibrationRun,
    spots: &BTreeMap<String, BTreeMap<NaiveDate, f64>>,
    refits: &BTreeMap<(String, ModelTag), BTreeMap<(NaiveDate, u32), FittedParams>>,
    job: &HedgeJob<'_>,
) -> Result<std::result::Result<HedgeRecord, HedgeSkip>> {
    let slice = &job.sf.slice;
    let Some(q) = select_strike(slice, job.group) else {
        return Ok(Err(HedgeSkip::NoFit));
    };
    let Some(fit) = job.sf.fit(job.model) else {
        return Ok(Err(HedgeSkip::NoFit));
    };
    let expiry = slice.date + Duration::days(q.days);
    let path = match spots.get(&slice.asset).map(|s| realized_path(s, slice.date, expiry)) {
        Some(Ok(p)) => p,
        _ => return Ok(Err(HedgeSkip::MissingPath)),
    };
    let premium = match cfg.backtest.premium {
        PremiumSource::Mid => Some(q.mid),
        PremiumSource::Model => match (fit.params, run.rl(job.model)) {
            (FittedParams::Rl { sigma }, Some(rl)) => rl.table.quote_price(sigma, q, slice),
            (p, _) => p.price(&slice.option(q)).ok(),
        },
    };
    let Some(premium) = premium.filter(|p| *p > 0.0 && p.is_finite()) else {
        return Ok(Err(HedgeSkip::Premium));
    };
    let plan = HedgePlan {
        model: job.model,
        strike: q.strike,
        entry: slice.date,
        expiry,
        premium,
        rate: slice.rate,
        cost: cfg.backtest.cost,
    };
    let parametric = ParametricDelta { params: fit.params, strike: q.strike, rate: slice.rate };
    let outcome = match (fit.params, run.rl(job.model)) {
        (FittedParams::Rl { sigma }, Some(rl)) => {
            let model = rl.nearest(sigma);
            let env = match &model.env {
                EnvConfig::Qlbs(c) => c.params,
                EnvConfig::Rlop(c) => c.params,
            };
            let delta = PolicyDelta {
                policy: &model.policy,
                kind: rl.kind,
                env,
                drift: cfg.backtest.state_drift.unwrap_or(slice.rate),
                strike: q.strike,
                horizon: plan.tau_years(),
            };
            run_hedge(&plan, &path, &delta)?
        }
        _ if job.refit => {
            let fits = refits.get(&(slice.asset.clone(), job.model)).cloned().unwrap_or_default();
            let delta = RefitDelta { entry: parametric, fits, buckets: cfg.calibration.buckets.clone() };
            run_hedge(&plan, &path, &delta as &dyn DeltaSource)?
        }
        _ => run_hedge(&plan, &path, &parametric)?,
    };
    let model = if job.refit { format!("{}_refit", job.model.as_str()) } else { job.model.as_str().to_string() };
    Ok(Ok(HedgeRecord {
        key: CellKey {
            asset: slice.asset.clone(),
            period: quarter(slice.date),
            bucket: slice.bucket_days.to_string(),
            moneyness_group: job.group.as_str().into(),
            model,
        },
        pi_t: outcome.pi_t,
        cost: outcome.total_cost,
    }))
}

#[derive(Debug, Clone, Serialize)]
pub struct BacktestSummary {
    pub experiment_id: String,
    pub n_hedges: usize,
    pub skipped: BTreeMap<String, usize>,
    pub cells: BTreeMap<String, HedgeMetrics>,
}

/// Hedges a short call entered on every slice day with every model and
/// returns the equal-day metrics report.
pub fn backtest(cfg: &ExperimentConfig, run: &CalibrationRun) -> Result<(Vec<ReportRow>, BacktestSummary)> {
    let spots = spot_series(&run.rows);

    let mut refits: BTreeMap<(String, ModelTag), BTreeMap<(NaiveDate, u32), FittedParams>> = BTreeMap::new();
    if cfg.backtest.refit_daily {
        for sf in &run.slices {
            for f in sf.fits.iter().filter(|f| f.model.is_parametric()) {
                refits
                    .entry((sf.slice.asset.clone(), f.model))
                    .or_default()
                    .insert((sf.slice.date, sf.slice.bucket_days), f.params);
            }
        }
    }

    let mut jobs = Vec::new();
    for sf in &run.slices {
        for &group in &cfg.backtest.groups {
            for model in run.models() {
                jobs.push(HedgeJob { sf, group, model, refit: false });
                if cfg.backtest.refit_daily && model.is_parametric() {
                    jobs.push(HedgeJob { sf, group, model, refit: true });
                }
            }
        }
    }
    let outcomes = jobs.par_iter().map(|job| run_job(cfg, run, &spots, &refits, job)).collect::<Result<Vec<_>>>()?;

    let mut skipped: BTreeMap<String, usize> = run.skipped_slices.clone();
    // One hedge per cell per entry day, so each day contributes one metric set.
    let mut per_cell: BTreeMap<CellKey, Vec<HedgeMetrics>> = BTreeMap::new();
    let mut n_hedges = 0;
    for o in outcomes {
        match o {
            Ok(rec) => {
                n_hedges += 1;
                per_cell.entry(rec.key).or_default().push(metrics(&[rec.pi_t], &[rec.cost])?);
            }
            Err(skip) => *skipped.entry(skip.as_str().into()).or_default() += 1,
        }
    }
    let mut rows = Vec::new();
    let mut cells = BTreeMap::new();
    for (key, days) in per_cell {
        let agg = equal_day_aggregate(&days)?;
        rows.extend(metric_rows(&cfg.experiment_id, &key, &agg, days.len()));
        cells.insert(
            format!("{}/{}/{}/{}/{}", key.asset, key.period, key.bucket, key.moneyness_group, key.model),
            agg,
        );
    }
    let summary = BacktestSummary { experiment_id: cfg.experiment_id.clone(), n_hedges, skipped, cells };
    Ok((rows, summary))
}

/// Calibrates, backtests and writes the report and summary.
pub fn cmd_backtest(cfg: &ExperimentConfig, chain: Option<&Path>) -> Result<(Vec<ReportRow>, BacktestSummary)> {
    let run = calibrate(cfg, chain)?;
    let (rows, summary) = backtest(cfg, &run)?;
    let dir = out_dir(cfg)?;
    emit_report(&rows, cfg.io.format, dir.join(format!("backtest_report.{}", extension(cfg.io.format))))?;
    write_json(&dir.join("backtest_summary.json"), &summary)?;
    log::info!("backtest: {} hedges, {} report rows", summary.n_hedges, rows.len());
    Ok((rows, summary))
}
