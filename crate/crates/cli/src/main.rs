use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ppde_cli::{init_threads, list_catalogs, run, ExperimentConfig};

#[derive(Parser)]
#[command(name = "ppde", version, about = "Path-dependent PDE numerical laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiments of a config and write reports.
    Run {
        config: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "ppde-out")]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List functionals, generators, scheme operators and experiment kinds.
    List,
    /// Check a config without running it.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> anyhow::Result<bool> {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            print!("{}", list_catalogs());
            Ok(true)
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            println!("{}: {} experiment(s) ok", config.display(), cfg.experiments.len());
            Ok(true)
        }
        Command::Run { config, out, seed } => {
            init_threads()?;
            let cfg = ExperimentConfig::load(&config)?;
            let report = run(&cfg, seed)?;
            report.write(&out)?;
            for r in &report.results {
                println!("[{}] {} ({}) {:.2}s", if r.pass { "PASS" } else { "FAIL" }, r.label, r.kind, r.seconds);
                for c in &r.checks {
                    println!("    [{}] {}: {}", if c.pass { "ok" } else { "FAIL" }, c.name, c.detail);
                }
            }
            println!("reports written to {}", out.display());
            Ok(report.pass)
        }
    }
}
