use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

use hedgelab::data_io::ReportFormat;
use hedgelab::policy::EnvKind;
use hedgelab_cli::commands::{self, SweepParam};
use hedgelab_cli::config::ExperimentConfig;
use hedgelab_cli::exit::{exit_code, CliError, ExitKind};
use hedgelab_cli::verify::Fault;

#[derive(Parser)]
#[command(name = "hedgelab", version, about = "Option pricing and hedging with learned policies")]
struct Cli {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Env {
    Qlbs,
    Rlop,
}

impl From<Env> for EnvKind {
    fn from(e: Env) -> Self {
        match e {
            Env::Qlbs => EnvKind::Qlbs,
            Env::Rlop => EnvKind::Rlop,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InjectFault {
    EpsilonSign,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and report its price.
    Train {
        #[arg(long, value_enum)]
        env: Env,
    },
    /// Price over a grid of one parameter.
    Sweep {
        #[arg(long, value_enum)]
        env: Env,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
    },
    /// Fit every model to each day-bucket slice of an option chain.
    Calibrate {
        /// Chain CSV; defaults to `io.chain`.
        chain: Option<PathBuf>,
    },
    /// Delta-hedge short calls through the chain with every model.
    Backtest {
        chain: Option<PathBuf>,
    },
    /// Run the oracle and invariant checks.
    Verify {
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<InjectFault>,
    },
    /// Write a synthetic Black-Scholes option chain.
    Synth {
        /// Output CSV; defaults to `<out_dir>/synthetic_chain.csv`.
        output: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.out_dir {
        cfg.io.out_dir = d.clone();
    }
    if let Some(f) = cli.format {
        cfg.io.format = match f {
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
        };
    }
    cfg.finalize()
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("HEDGELAB_THREADS") else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| CliError::new(ExitKind::Config, format!("HEDGELAB_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::new(ExitKind::Config, format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Train { env } => {
            let s = commands::cmd_train(&cfg, env.into())?;
            println!("{} price {:.6} stderr {:.6}", s.env, s.price, s.stderr);
        }
        Command::Sweep { env, param, grid } => {
            for p in commands::cmd_sweep(&cfg, env.into(), param, &grid)? {
                println!("{} {:.6} {:.6}", p.parameter, p.price, p.stderr);
            }
        }
        Command::Calibrate { chain } => {
            let run = commands::cmd_calibrate(&cfg, chain.as_deref())?;
            println!("calibrated {} slices", run.slices.len());
        }
        Command::Backtest { chain } => {
            let (rows, summary) = commands::cmd_backtest(&cfg, chain.as_deref())?;
            println!("{} hedges, {} report rows", summary.n_hedges, rows.len());
            for (reason, n) in &summary.skipped {
                println!("skipped {reason}: {n}");
            }
        }
        Command::Verify { inject_fault } => {
            let fault = inject_fault.map(|InjectFault::EpsilonSign| Fault::EpsilonSign);
            commands::cmd_verify(&cfg, fault)?;
        }
        Command::Synth { output } => {
            let path = commands::cmd_synth(&cfg, output.as_deref())?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
