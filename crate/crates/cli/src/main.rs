use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spde_cli::commands::{apply_overrides, cmd_convergence, cmd_figure, cmd_run, selftest_slope, Options};
use spde_cli::{CliError, ExperimentConfig, CONFIG_KEYS};

#[derive(Parser)]
#[command(name = "spde", version, about = "Deep predictor-corrector solver for backward SPDEs")]
#[command(after_long_help = config_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides SPDE_SEED and the file.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 is the deterministic reference.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Artifact directory; overrides SPDE_OUT and the file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// No per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Repeated runs over sampled B paths, written as a report.
    #[command(after_long_help = config_help())]
    Run {
        #[command(flatten)]
        common: Common,
        /// Skip writing per-run checkpoints.
        #[arg(long)]
        no_checkpoints: bool,
    },
    /// Mean squared error at t = 0 against the step count, with a fitted rate.
    #[command(after_long_help = config_help())]
    Convergence {
        #[command(flatten)]
        common: Common,
        /// Comma separated step counts; overrides convergence.n_list.
        #[arg(long, value_delimiter = ',')]
        n_list: Option<Vec<usize>>,
        /// Fit the slope of synthetic errors c/N instead of solving.
        #[arg(long)]
        selftest_slope: bool,
    },
    /// Approximate and exact solution at simulated states of one node.
    #[command(after_long_help = config_help())]
    Figure {
        #[command(flatten)]
        common: Common,
        /// Time node index.
        #[arg(long)]
        step: usize,
        /// Saved solution directory; solved on the fly when absent.
        #[arg(long)]
        solution: Option<PathBuf>,
    },
}

fn config_help() -> String {
    let mut s = String::from("Configuration keys:\n");
    for (k, v) in CONFIG_KEYS {
        s.push_str(&format!("  {k:<36} {v}\n"));
    }
    s.push_str("\nEnvironment: SPDE_SEED and SPDE_OUT override seeds.master and output.dir.\n");
    s.push_str("Exit status: 0 success, 2 configuration error, 3 solver failure.");
    s
}

fn load(common: &Common) -> Result<(ExperimentConfig, Options), CliError> {
    let mut config = ExperimentConfig::load(&common.config)?;
    apply_overrides(&mut config, common.seed, common.out.clone(), |k| std::env::var(k).ok())?;
    if common.workers == 0 {
        return Err(CliError::Config("--workers must be at least 1".into()));
    }
    let opts = Options {
        workers: common.workers,
        quiet: common.quiet,
        checkpoints: true,
    };
    Ok((config, opts))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { common, no_checkpoints } => {
            let (config, mut opts) = load(&common)?;
            opts.checkpoints = !no_checkpoints;
            let report = cmd_run(&config, &opts)?;
            println!("relative L2 error {}", report.relative_l2);
            if report.failed_runs > 0 {
                return Err(CliError::Solver(format!(
                    "{} runs failed; partial report in {}",
                    report.failed_runs,
                    config.out_dir.display()
                )));
            }
            Ok(())
        }
        Command::Convergence {
            common,
            n_list,
            selftest_slope: selftest,
        } => {
            let (mut config, opts) = load(&common)?;
            if let Some(list) = n_list {
                config.n_list = list;
            }
            if selftest {
                let slope = selftest_slope(&config)?;
                println!("synthetic slope {slope:.9}");
                return if (slope - 1.0).abs() <= 1e-6 {
                    Ok(())
                } else {
                    Err(CliError::Solver(format!("synthetic slope {slope} differs from 1")))
                };
            }
            let report = cmd_convergence(&config, &opts)?;
            for e in &report.entries {
                println!("N {:>4} mse {:.6e} +- {:.2e}", e.n, e.mse, e.mse_stderr);
            }
            match report.fit {
                Some(f) => println!("slope {:.4} ({:.4}, {:.4})", f.slope, f.slope_low, f.slope_high),
                None => println!("slope undefined"),
            }
            Ok(())
        }
        Command::Figure { common, step, solution } => {
            let (config, opts) = load(&common)?;
            let file = cmd_figure(&config, step, solution.as_deref(), &opts)?;
            println!("{}", file.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("spde: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
