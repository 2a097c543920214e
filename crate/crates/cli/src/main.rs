use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use randmaps_cli::error::CliError;
use randmaps_cli::{output, replay, run, ExperimentConfig};

/// Run random-map experiments from TOML configs and replay their reports.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Directory for report.json and CSV tables; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment. Exit 0 if every verdict passes, 2 if any fails.
    Run { config: PathBuf },
    /// Re-run a report's config and compare every numeric field bit for bit.
    Replay { report: PathBuf },
}

const EXIT_FAIL_VERDICT: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> Result<u8, CliError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::ConfigInvalid {
                path: "--workers".into(),
                message: "must be at least 1".into(),
            });
        }
        // fails only if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Run { config } => {
            let text = std::fs::read_to_string(&config).map_err(|source| CliError::Io {
                context: format!("reading {}", config.display()),
                source,
            })?;
            let cfg = ExperimentConfig::from_toml(&text)?;
            let (report, tables) = run(&cfg)?;
            let dir = cli.out.or_else(|| cfg.output.as_ref().map(|o| o.dir.clone()));
            match dir {
                Some(dir) => {
                    for p in output::write_outputs(&dir, &report, &tables)? {
                        eprintln!("wrote {}", p.display());
                    }
                }
                None => print!("{}", output::report_json(&report)),
            }
            for v in &report.verdicts {
                eprintln!("{}: {}", v.name, if v.pass { "pass" } else { "fail" });
            }
            Ok(if report.all_pass() { 0 } else { EXIT_FAIL_VERDICT })
        }
        Command::Replay { report } => {
            let stored = replay::read_report(&report)?;
            match replay::replay(&stored)?.mismatch {
                None => {
                    eprintln!("replay: all fields match");
                    Ok(0)
                }
                Some(m) => {
                    eprintln!("replay: `{}` differs (stored {}, replayed {})", m.field, m.stored, m.replayed);
                    Ok(EXIT_FAIL_VERDICT)
                }
            }
        }
    }
}
