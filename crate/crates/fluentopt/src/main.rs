//! Command-line entry point. All logic lives in the library's `cli` module;
//! this file parses arguments and maps errors to exit codes (0 success,
//! 1 runtime failure, 2 validation failure).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fluentopt::cli;
use fluentopt::runconfig::{Overrides, TrainKind};

#[derive(Parser)]
#[command(name = "fluentopt", version, about = "Fluent discrete prompt optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model artifact (lm, sae, denoiser, backdoor).
    Train {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a benchmark task file.
    GenTasks {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the (method x task) benchmark grid and write a report.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
        /// "mock" or an HTTP address like 127.0.0.1:9000.
        #[arg(long)]
        oracle: Option<String>,
    },
    /// Regenerate summary.json and scatter.svg from results.csv.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve mock proposals over HTTP (for oracle integration tests).
    OracleMock {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, default_value = "127.0.0.1:0")]
        addr: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        max_requests: Option<usize>,
    },
}

fn run(command: Command) -> Result<i32, fluentopt::error::Error> {
    match command {
        Command::Train { kind, config, seed, out } => {
            let kind = TrainKind::parse(&kind)?;
            let ov = Overrides { seed, out, ..Overrides::default() };
            cli::cmd_train(kind, &config, &ov)?;
            Ok(0)
        }
        Command::GenTasks { config, seed, out } => {
            let ov = Overrides { seed, out, ..Overrides::default() };
            cli::cmd_gen_tasks(&config, &ov)?;
            Ok(0)
        }
        Command::Bench { config, seed, out, jobs, oracle } => {
            let ov = Overrides { seed, out, jobs, oracle };
            cli::cmd_bench(&config, &ov)
        }
        Command::Report { out, seed } => {
            cli::cmd_report(&out, seed)?;
            Ok(0)
        }
        Command::OracleMock { vocab, addr, seed, max_requests } => {
            cli::cmd_oracle_mock(&vocab, &addr, seed, max_requests)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code_for(&e) as u8)
        }
    }
}
