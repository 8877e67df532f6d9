use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use cmdp_lab::harness::{self, ExperimentConfig};
use cmdp_lab::occupancy::true_model_lp;
use cmdp_lab::Error;

/// Optimistic constrained-MDP learning experiments.
#[derive(Parser)]
#[command(name = "cmdp-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the known-model program and print the optimal average reward.
    Oracle {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the learner for every seed and write CSV and JSON outputs.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run once per K value.
    Sweep {
        config: PathBuf,
        /// Comma-separated values; `k0` is the default K and `2k0` twice it.
        #[arg(long, value_name = "LIST")]
        k_values: String,
        #[command(flatten)]
        common: Common,
    },
    /// Compare epoch-doubling updates with per-step policy updates.
    CompareUpdates {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Use seeds 0..N instead of the configured list.
    #[arg(long, value_name = "N")]
    seed_count: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Log every STRIDE steps (overrides the config).
    #[arg(long)]
    stride: Option<u64>,
    /// Write the known-model program in text form to FILE.
    #[arg(long, value_name = "FILE")]
    dump_lp: Option<PathBuf>,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidSpec(_) | Error::InvalidModel(_) | Error::Serialization(_) => 2,
        Error::InfeasibleProgram(_) => 3,
        _ => 4,
    }
}

fn load(path: &Path, common: &Common) -> Result<ExperimentConfig, Error> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(n) = common.seed_count {
        config = config.with_seed_count(n)?;
    }
    if let Some(dir) = &common.out {
        config.output.directory = dir.clone();
    }
    if let Some(stride) = common.stride {
        config.output.stride = stride;
    }
    config.validate()?;
    if let Some(target) = &common.dump_lp {
        let (model, _) = harness::build_environment(&config.environment)?;
        std::fs::write(target, true_model_lp(&model, 0.0).to_string()).map_err(|e| Error::Io {
            path: target.clone(),
            source: e,
        })?;
    }
    Ok(config)
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Oracle { config, common } => {
            let config = load(&config, &common)?;
            let start = Instant::now();
            let (model, labels) = harness::build_environment(&config.environment)?;
            let oracle = harness::compute_oracle(&model)?;
            let out = serde_json::json!({
                "lambda_star": oracle.lambda_star,
                "avg_costs": oracle.avg_costs,
                "policy": oracle.policy.probs(),
                "action_labels": labels,
                "lp_iterations": oracle.lp_iterations,
                "wall_time_seconds": start.elapsed().as_secs_f64(),
            });
            println!("{}", serde_json::to_string_pretty(&out).map_err(|e| Error::Serialization(e.to_string()))?);
        }
        Command::Run { config, common } => {
            let config = load(&config, &common)?;
            let result = harness::run_experiment(&config)?;
            print_written(&harness::emit_outputs(&result, &config.output.directory)?);
            let s = &result.summary;
            println!(
                "final avg reward {:.4} (std {:.4}), violation {:.4}, lambda* {:.4}",
                s.final_avg_reward.mean, s.final_avg_reward.std, s.final_violation.mean, s.lambda_star
            );
        }
        Command::Sweep { config, k_values, common } => {
            let config = load(&config, &common)?;
            let choices = harness::parse_k_values(&k_values)?;
            let entries = harness::run_sweep(&config, &choices)?;
            print_written(&harness::emit_sweep(&entries, &config.output.directory)?);
            for e in &entries {
                let s = &e.result.summary;
                println!(
                    "K={} ({}): reward {:.4}, violation {:.4}",
                    s.k,
                    e.choice.label(),
                    s.final_avg_reward.mean,
                    s.final_violation.mean
                );
            }
        }
        Command::CompareUpdates { config, common } => {
            let config = load(&config, &common)?;
            let (doubling, every_step) = harness::run_compare_updates(&config)?;
            print_written(&harness::emit_comparison(&doubling, &every_step, &config.output.directory)?);
            for (name, r) in [("doubling", &doubling), ("every_step", &every_step)] {
                let s = &r.summary;
                println!(
                    "{name}: reward {:.4}, violation {:.4}, epochs {:.1}",
                    s.final_avg_reward.mean, s.final_violation.mean, s.epoch_count.mean
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
