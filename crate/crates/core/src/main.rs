use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use obsmatch::cli::{self, CliError, ExperimentConfig, Mode, RunOptions};

#[derive(Parser)]
#[command(
    name = "obsmatch",
    version,
    about = "Matching statistics of observed chaotic trajectories"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// Directory for result files.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads (default: config value, 0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment in the config's mode.
    Run { config: PathBuf },
    /// Evaluate the analytic oracles only.
    Analytic { config: PathBuf },
    /// Check the genericity conditions of an interval model.
    Genericity { config: PathBuf },
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// Re-run the experiment recorded in a manifest.
    Replay { manifest: PathBuf },
}

fn load(path: &Path, seed: Option<u64>, mode: Option<Mode>) -> Result<ExperimentConfig, CliError> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        config.master_seed = s;
    }
    if let Some(m) = mode {
        config.mode = m;
    }
    Ok(config)
}

fn execute(args: &Args) -> Result<(), CliError> {
    let opts = RunOptions {
        out_dir: args.out_dir.clone(),
        threads: args.threads,
    };
    let summary = match &args.command {
        Command::Validate { config } => {
            let config = load(config, args.seed, None)?;
            config.validate()?;
            if !args.quiet {
                println!("{}: ok", config.system.label());
            }
            return Ok(());
        }
        Command::Run { config } => cli::run_experiment(&load(config, args.seed, None)?, &opts)?,
        Command::Analytic { config } => {
            cli::run_experiment(&load(config, args.seed, Some(Mode::Analytic))?, &opts)?
        }
        Command::Genericity { config } => {
            cli::run_experiment(&load(config, args.seed, Some(Mode::Genericity))?, &opts)?
        }
        Command::Replay { manifest } => cli::replay(manifest, &opts)?,
    };
    if !args.quiet {
        for row in &summary.rows {
            println!(
                "{:<15} q={:<3} mean={:<12.6} std={:<10.4} runs={}",
                row.kind.to_string(),
                row.q,
                row.estimate_mean,
                row.estimate_std,
                row.run_count
            );
        }
        if let Some(g) = &summary.genericity {
            println!(
                "genericity: {} samples, h1 violations {}, h2 violations {:?}",
                g.samples, g.h1_violations, g.h2_violations
            );
        }
        println!(
            "wrote {} and {} ({:.1} s)",
            summary.csv_path.display(),
            summary.manifest_path.display(),
            summary.manifest.wall_time_s
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    let level = if args.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
