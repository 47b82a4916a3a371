use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cusp_spectra::config::RunConfig;

#[derive(Parser)]
#[command(name = "cusp-spectra", version, about = "Eigenvalue stability under cusp domain perturbation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML configuration file.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the property suite.
    Verify,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run {
            config,
            seed,
            workers,
            out,
        } => {
            let result = RunConfig::load(&config).and_then(|mut cfg| {
                // flags override the file
                cfg.seed = seed.unwrap_or(cfg.seed);
                cfg.workers = workers.or(cfg.workers);
                cfg.out = out.unwrap_or(cfg.out);
                cusp_spectra::run(&cfg).map(|r| (cfg, r))
            });
            match result {
                Ok((cfg, report)) => {
                    for line in &report.summary {
                        println!("{line}");
                    }
                    println!("report written to {}", cfg.out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Verify => {
            let checks = cusp_spectra::verify::run_all();
            for c in &checks {
                println!("{c}");
            }
            if checks.iter().all(|c| c.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
