use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bytesize::ByteSize;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use seqgp::app::config::{self, CampaignConfig, FitConfig, FourierDemoConfig, SampleConfig};
use seqgp::app::{campaign, fit, fourier, sample, RunOptions};
use seqgp::budget::MemoryBudget;
use seqgp::error::{Error, Result};

#[derive(Parser)]
#[command(name = "seqgp", version, about = "Sequential Gaussian-process conditioning for linear inverse problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML or JSON configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed in the configuration
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Per-worker memory budget, e.g. 512MiB or 1GB
    #[arg(long, default_value = "1GiB")]
    memory_budget: String,
}

#[derive(Subcommand)]
enum Command {
    /// Fourier versus pointwise observations of a 2D field
    FourierDemo {
        #[command(flatten)]
        common: Common,
        /// Only write the storage plan
        #[arg(long)]
        plan_only: bool,
    },
    /// Sequential gravimetric survey of a synthetic volcano
    GravCampaign {
        #[command(flatten)]
        common: Common,
        /// Continue an interrupted run in --out
        #[arg(long)]
        resume: bool,
        /// Pause after this many acquisitions
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Fit kernel hyperparameters by marginal likelihood
    Fit {
        #[command(flatten)]
        common: Common,
    },
    /// Draw prior and posterior ensembles
    Sample {
        #[command(flatten)]
        common: Common,
    },
}

fn options(c: &Common) -> Result<RunOptions> {
    let budget: ByteSize = c
        .memory_budget
        .parse()
        .map_err(|e| Error::Config(format!("bad --memory-budget {:?}: {e}", c.memory_budget)))?;
    if let Some(n) = c.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(RunOptions {
        out: c.out.clone(),
        seed: c.seed,
        threads: c.threads,
        budget: MemoryBudget::new(budget.as_u64()),
    })
}

fn load_or<T: DeserializeOwned>(path: Option<&Path>, default: impl FnOnce() -> T) -> Result<T> {
    path.map_or_else(|| Ok(default()), config::load)
}

fn load_required<T: DeserializeOwned>(path: Option<&Path>, command: &str) -> Result<T> {
    let path = path.ok_or_else(|| Error::Config(format!("{command} needs --config")))?;
    config::load(path)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::FourierDemo { common, plan_only } => {
            let mut cfg: FourierDemoConfig = load_or(common.config.as_deref(), FourierDemoConfig::default)?;
            cfg.plan_only |= plan_only;
            let out = fourier::run(&cfg, &options(&common)?)?;
            println!("{}", serde_json::to_string_pretty(&out.plan)?);
            for s in &out.summaries {
                println!(
                    "{:>9} n={:<4} rows={:<4} mean var {:.3e}  max |error| {:.3e}",
                    s.design.name(),
                    s.n,
                    s.rows,
                    s.mean_variance,
                    s.max_abs_error
                );
            }
        }
        Command::GravCampaign {
            common,
            resume,
            stop_after,
        } => {
            let cfg: CampaignConfig = load_or(common.config.as_deref(), || CampaignConfig::with_threshold(2500.0))?;
            let out = campaign::run(&cfg, &options(&common)?, resume, stop_after)?;
            for r in &out.trajectory {
                println!(
                    "step {:>3}  tp {:.4}  fp {:.4}  alpha_v {:.4}  mean var {:.4e}",
                    r.step, r.tp, r.fp, r.alpha_v, r.mean_variance
                );
            }
            if !out.complete {
                println!("paused after {} steps; rerun with --resume", out.trajectory.len() - 1);
            }
        }
        Command::Fit { common } => {
            let cfg: FitConfig = load_required(common.config.as_deref(), "fit")?;
            let out = fit::run(&cfg, &options(&common)?)?;
            print!("{}", fit::format_table(&out.result));
        }
        Command::Sample { common } => {
            let cfg: SampleConfig = load_required(common.config.as_deref(), "sample")?;
            let out = sample::run(&cfg, &options(&common)?)?;
            if let Some(v) = &out.volumes {
                for (q, x) in &v.quantiles {
                    println!("volume q{q:.3} = {x:.6e}");
                }
                println!("volume mean = {:.6e} +- {:.2e}", v.mean, v.std_error);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
