use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sepam::harness::{acceptance, emit_figures_data, run_scenario, Report, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "sepam",
    version,
    about = "PAM with an exclusion catalyst: scenarios and checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario config and write report.json to its output directory.
    Run {
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config against its scenario schema.
    Validate { config: PathBuf },
    /// Write one TSV per curve of a κ-sweep report.
    Figures {
        report: PathBuf,
        /// Output directory (default: the report's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance criteria (all, or those listed).
    Selftest { criteria: Vec<usize> },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> sepam::Result<bool> {
    match cli.command {
        Command::Run { config, out } => {
            let mut cfg = ScenarioConfig::load(&config)?;
            if let Some(o) = out {
                cfg.output = o;
            }
            let report = run_scenario(&cfg)?;
            for c in &report.checks {
                println!(
                    "{} {} = {:.6e} (threshold {:.6e})",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.threshold
                );
            }
            let path = report.write()?;
            println!("report: {}", path.display());
            Ok(report.pass)
        }
        Command::Validate { config } => {
            let cfg = ScenarioConfig::load(&config)?;
            println!("valid: scenario {}", cfg.scenario);
            Ok(true)
        }
        Command::Figures { report, out } => {
            let rep = Report::from_json(&std::fs::read_to_string(&report)?)?;
            let dir = out.unwrap_or_else(|| report.parent().map(PathBuf::from).unwrap_or_default());
            for p in emit_figures_data(&rep, &dir)? {
                println!("{}", p.display());
            }
            Ok(true)
        }
        Command::Selftest { criteria } => {
            let ids = if criteria.is_empty() {
                (1..=12).collect()
            } else {
                criteria
            };
            let mut all = true;
            for id in ids {
                let c = acceptance::run(id);
                println!("{}", c.line());
                all &= c.pass;
            }
            Ok(all)
        }
    }
}
