use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use respo_core::harness::{
    export_feasible_set, oracle_report, run_acceptance_suite, run_experiment_file, Tier, OUTPUT_ROOT_VAR,
};
use respo_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_ACCEPTANCE: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

#[derive(Parser)]
#[command(name = "respo", version, about = "Run safe-RL experiments, oracles and the acceptance suite")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config file and write metric CSVs.
    Run { config: PathBuf },
    /// Run the acceptance checks (`fast` or `full`).
    Accept { tier: String },
    /// Write per-cell optimal REF values and the feasible flag.
    ExportFeasible { env: String, resolution: usize, out: PathBuf },
    /// Solve an MDP text file under the uniform policy.
    Oracle { mdp: PathBuf, out: PathBuf },
}

fn output_root() -> Option<PathBuf> {
    std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from)
}

fn exit_for(e: &Error) -> ExitCode {
    match e {
        Error::Config { .. } | Error::Parse { .. } => ExitCode::from(EXIT_CONFIG),
        Error::Divergence { .. } => ExitCode::from(EXIT_DIVERGED),
        _ => ExitCode::FAILURE,
    }
}

fn run(config: PathBuf) -> ExitCode {
    match run_experiment_file(&config) {
        Ok(report) => {
            println!("wrote {} seed files and {}", report.seed_files.len(), report.aggregate.display());
            let diverged: Vec<u64> = report.diverged().map(|r| r.seed).collect();
            if diverged.is_empty() {
                ExitCode::SUCCESS
            } else {
                eprintln!("diverged seeds {diverged:?}; their CSVs are partial");
                ExitCode::from(EXIT_DIVERGED)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}

fn accept(tier: &str) -> ExitCode {
    let tier: Tier = match tier.parse() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("usage: respo accept <fast|full>");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let dir = output_root().unwrap_or_default().join("results").join("acceptance");
    match run_acceptance_suite(tier, &dir, |r| println!("{}", r.line())) {
        Ok(report) if report.passed() => {
            println!("all {} criteria passed; report in {}", report.results.len(), dir.join("acceptance.csv").display());
            ExitCode::SUCCESS
        }
        Ok(report) => {
            let ids: Vec<&str> = report.failures().iter().map(|r| r.id).collect();
            eprintln!("failed criteria: {}", ids.join(", "));
            ExitCode::from(EXIT_ACCEPTANCE)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ACCEPTANCE)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => run(config),
        Command::Accept { tier } => accept(&tier),
        Command::ExportFeasible { env, resolution, out } => match export_feasible_set(&env, resolution, &out) {
            Ok(n) => {
                println!("wrote {n} cells to {}", out.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                match e {
                    Error::Unsupported(_) => ExitCode::from(EXIT_CONFIG),
                    other => exit_for(&other),
                }
            }
        },
        Command::Oracle { mdp, out } => match oracle_report(&mdp, &out) {
            Ok(()) => {
                log::info!("oracle table written to {}", out.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                exit_for(&e)
            }
        },
    }
}
