use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod analyze;
mod run;

#[derive(Parser)]
#[command(name = "repex", version, about = "Replica-exchange simulations on a pilot-style scheduler")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// Simulation configuration (JSON).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the configured global seed.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory; overrides the configured one.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run replicas on worker threads and write all run artifacts.
    Run {
        #[command(flatten)]
        common: Common,
        /// Continue from a restart file; artifacts are appended.
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
    },
    /// Schedule the workload on the virtual clock only (no physics).
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Derive metrics, acceptance statistics and free-energy surfaces from a run directory.
    Analyze {
        /// Run directory to analyze.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Reference run for scaling efficiencies.
        #[arg(long, value_name = "DIR")]
        baseline: Option<PathBuf>,
    },
    /// Run the built-in oracle suite.
    Validate,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("REPEX_LOG_LEVEL", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { common, resume } => run::cmd_run(&common, resume.as_deref()),
        Command::Simulate { common } => run::cmd_simulate(&common),
        Command::Analyze { out, baseline } => analyze::cmd_analyze(&out, baseline.as_deref()),
        Command::Validate => cmd_validate(),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn cmd_validate() -> anyhow::Result<bool> {
    let checks = repex_core::validation::run_suite()?;
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in &checks {
        let mark = if c.passed { "PASS" } else { "FAIL" };
        println!("{mark}  {:width$}  {}", c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed", checks.len());
    Ok(failed == 0)
}
