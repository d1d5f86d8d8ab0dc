use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedaccess::runner::{self, RunSpec, SweepAxis};
use fedaccess::Error;

/// Federated learning with user selection through CSMA contention.
#[derive(Parser)]
#[command(name = "fedaccess", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML). Defaults apply to anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set mac.cw_base=512`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, env = "FEDACCESS_OUT", default_value = "runs")]
    out: PathBuf,
    /// Master seed; replicate seeds are derived from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Runs executed concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

impl Common {
    fn spec(&self) -> RunSpec {
        RunSpec {
            config: self.config.clone(),
            overrides: self.overrides.clone(),
            out: self.out.clone(),
            seed: self.seed,
            jobs: self.jobs,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured strategy for every replicate seed.
    Run(Common),
    /// Repeat the run for each value of one parameter and summarize.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `cw_base` or `threshold`.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
    },
    /// Per-user selection counts from a winners log.
    FairnessReport {
        /// winners.csv written by `run`.
        log: PathBuf,
        /// Include users that never won, up to this count.
        #[arg(long)]
        users: Option<usize>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Resolve and check a configuration, printing the result.
    ValidateConfig(Common),
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run(common) => {
            for r in runner::cmd_run(&common.spec())? {
                println!("{}\tseed {}\tfinal {:.4}\tbest {:.4}", r.strategy, r.seed, r.final_accuracy, r.best_accuracy);
            }
        }
        Command::Sweep { common, axis, values } => {
            let axis: SweepAxis = axis.parse()?;
            for r in runner::cmd_sweep(&common.spec(), axis, &values)? {
                println!("{}={}\t{}\tfinal {:.4}\tbest {:.4}", axis.name(), r.value, r.strategy, r.final_accuracy, r.best_accuracy);
            }
        }
        Command::FairnessReport { log, users, out } => {
            let table = runner::fairness_csv(&runner::fairness_report(&log, users)?);
            match out {
                Some(path) => fedaccess::output::write_csv(&path, &table)?,
                None => print!("{}", String::from_utf8_lossy(&table)),
            }
        }
        Command::ValidateConfig(common) => print!("{}", runner::validate_config(&common.spec())?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
