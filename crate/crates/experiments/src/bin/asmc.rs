use std::path::PathBuf;
use std::process::ExitCode;

use alpha_smc_experiments::estimands::Estimand;
use alpha_smc_experiments::{
    cmd_ess_growth, cmd_hub_demo, cmd_khist, cmd_mse, cmd_naive_demo, cmd_simulate_data, cmd_trace, cmd_unbiasedness,
    ExperimentConfig, Result,
};
use clap::{Parser, Subcommand};

/// Sequential Monte Carlo with adaptive particle interaction: experiment runner.
///
/// Exit codes: 0 success, 1 invalid configuration or input, 2 numerical failure during a run.
#[derive(Debug, Parser)]
#[command(name = "asmc", version)]
struct Cli {
    /// Master seed; replicate r uses the r-th split of it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for CSV output; nothing is written without it.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Number of particles N.
    #[arg(long, global = true)]
    particles: Option<usize>,

    /// Number of time steps.
    #[arg(long, global = true)]
    steps: Option<usize>,

    /// Number of independent replicates.
    #[arg(long, global = true)]
    replicates: Option<usize>,

    /// Policy (repeatable): sis | bpf | arpf:<tau> | simple:<tau> | random:<tau> | greedy:<tau> | blocks:<q>.
    /// Replaces the configured policy list and threshold sweep.
    #[arg(long = "policy", global = true)]
    policies: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a record: observations.csv (t,y) and states.csv (t,x).
    SimulateData,
    /// Per-step diagnostics: trace_<policy>.csv (n,ess_coeff,n_eff,k_n,degree,logZ,<phi...>).
    Trace,
    /// Histogram of adaptation depths over two halves of the run: khist.csv (policy,k,first_half,second_half).
    Khist,
    /// Mean ESS coefficient after merging to each depth: ess_growth.csv (rule,k,mean_ess).
    EssGrowth,
    /// Smoother/filter/predictor MSE against a reference: mse.csv (policy,test_function,estimand,mse,se,replicates).
    Mse,
    /// Weighted vs naive averaging over independent blocks: naive_demo.csv (replicate,weighted,naive,z_ratio).
    NaiveDemo,
    /// Hub collapse and star-walk beta mass: hub_star.csv (n_particles,laziness,gap,max_beta,hub_beta).
    HubDemo,
    /// Mean of Z_n^N / Z_n per policy: unbiasedness.csv (policy,replicates,mean_ratio,se,z,min_ess,violations).
    Unbiasedness,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = Some(dir.clone());
    }
    if let Some(n) = cli.particles {
        cfg.n_particles = n;
    }
    if let Some(n) = cli.steps {
        cfg.n_steps = n;
    }
    if let Some(r) = cli.replicates {
        cfg.replicates = r;
    }
    if !cli.policies.is_empty() {
        cfg.policies = cli.policies.clone();
        cfg.sweep_rules.clear();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    match cli.command {
        Command::SimulateData => {
            let data = cmd_simulate_data(&cfg)?;
            println!("simulated {} observations", data.record.len());
        }
        Command::Trace => {
            for t in cmd_trace(&cfg)? {
                let min_ess = t.diagnostics.iter().map(|d| d.ess_coeff).fold(f64::INFINITY, f64::min);
                let interacting = t.diagnostics.iter().filter(|d| d.k_n > 0).count();
                let log_z = t.diagnostics.last().map_or(0.0, |d| d.log_z);
                println!("{:<14} min ESS coeff {min_ess:.4}  steps with K>0 {interacting:>6}  log Z {log_z:.6}", t.policy);
            }
        }
        Command::Khist => {
            for h in cmd_khist(&cfg)? {
                println!(
                    "{:<14} support {:?}  P(K>1) {:.4}  halves TV {:.4}",
                    h.policy,
                    h.support(),
                    h.fraction_above(1),
                    h.halves_tv()
                );
            }
        }
        Command::EssGrowth => {
            for g in cmd_ess_growth(&cfg)? {
                let curve: Vec<String> = g.mean_ess.iter().map(|e| format!("{e:.3}")).collect();
                println!("{:<7} tau {}  E(k): {}", g.rule.name(), g.tau, curve.join(" "));
            }
        }
        Command::Mse => {
            let report = cmd_mse(&cfg)?;
            for r in &report.rows {
                let label = match r.estimand {
                    Estimand::Smoother => format!("lag-{} smoother", cfg.lag),
                    other => other.name().to_string(),
                };
                println!("{:<14} {:<9} {:<16} MSE {:.4e} ± {:.1e}", r.policy, r.test_function.name(), label, r.mse, r.se);
            }
        }
        Command::NaiveDemo => {
            let d = cmd_naive_demo(&cfg)?;
            println!("q = {}, s = {}, n = {}, truth {:.6}", d.block_size, d.blocks, d.step, d.truth);
            println!("weighted bias {:+.3e} ± {:.1e}", d.weighted_error.mean, d.weighted_error.se);
            println!("naive    bias {:+.3e} ± {:.1e}", d.naive_error.mean, d.naive_error.se);
            println!("Z ratio  {:.4} ± {:.4}", d.z_ratio.mean, d.z_ratio.se);
        }
        Command::HubDemo => {
            let d = cmd_hub_demo(&cfg)?;
            println!("collapsed onto particle 0 at all {} steps: {}", d.steps_checked, d.collapsed);
            for r in &d.star {
                println!("star N={:<5} laziness {:.2} gap {}  max beta {:.4}", r.n_particles, r.laziness, r.gap, r.max_beta);
            }
            println!("block-diagonal beta deviation from 1/N: {:.1e}", d.blocks_beta_excess);
        }
        Command::Unbiasedness => {
            for r in cmd_unbiasedness(&cfg)? {
                println!(
                    "{:<14} Z ratio {:.4} ± {:.4} (z = {:+.2})  min ESS coeff {:.4}  violations {}",
                    r.policy,
                    r.ratio.mean,
                    r.ratio.se,
                    r.ratio.z(1.0),
                    r.min_ess,
                    r.violations
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
