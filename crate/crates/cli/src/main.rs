use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cran_cli::config::OneOrMany;
use cran_cli::experiments;
use cran_cli::{load_config, ExperimentConfig, Result};

#[derive(Parser)]
#[command(name = "cran", version, about = "Group-sparse BD precoding experiments")]
struct Cli {
    /// Flat JSON config; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated tradeoff constants, e.g. `0,0.1,0.5`.
    #[arg(long, global = true, value_delimiter = ',')]
    eta: Option<Vec<f64>>,
    /// Subgradient step size.
    #[arg(long, global = true)]
    step: Option<f64>,
    /// Exhaustive-search comparison.
    #[arg(long, global = true)]
    oracle: Option<Switch>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Residual, active-set and rate traces per step size.
    Converge,
    /// Sum rate against number of active RAPs over the η sweep.
    Tradeoff,
    /// Per-RAP transmit power per iteration.
    Powers,
    /// Per-iteration time against the number of RAPs.
    Bench,
}

fn configure(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(eta) = &cli.eta {
        cfg.eta = OneOrMany::Many(eta.clone());
    }
    if let Some(step) = cli.step {
        cfg.step = OneOrMany::One(step);
    }
    if let Some(switch) = cli.oracle {
        cfg.oracle = matches!(switch, Switch::On);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = configure(cli)?;
    let files = match cli.command {
        Command::Converge => {
            let report = experiments::converge(&cfg)?;
            for (eta, step, out) in &report.traces {
                println!(
                    "eta={eta} step={step}: {} after {} iterations, |A|={}, rate={:.4}",
                    if out.converged { "converged" } else { "not converged" },
                    out.iterations(),
                    out.solution.active_set.len(),
                    out.solution.sum_rate
                );
            }
            report.files
        }
        Command::Tradeoff => {
            let report = experiments::tradeoff(&cfg)?;
            for p in &report.points {
                println!(
                    "eta={}: mean |A|={:.2}, mean rate={:.4} ({} converged, {} not)",
                    p.eta, p.mean_active, p.mean_rate, p.n_samples, p.n_nonconverged
                );
            }
            report.files
        }
        Command::Powers => experiments::powers(&cfg)?.files,
        Command::Bench => {
            let report = experiments::bench(&cfg)?;
            for p in &report.points {
                println!("L={}: {:.3e} s/iteration, t_avg={:.1}", p.num_raps, p.median_iter_seconds, p.t_avg);
            }
            println!("log-log slope: {:.3}", report.slope);
            report.files
        }
    };
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
