use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cfe_cli::commands::{cmd_converge, cmd_run, cmd_verify};
use cfe_cli::error::CliError;

/// Solver and verification lab for truncated coagulation-fragmentation
/// equations: conservative and non-conservative truncations, a boundary
/// mass-loss ledger, and a convergence study of the loss as the truncation
/// radius grows.
#[derive(Parser)]
#[command(name = "cfe", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one configuration; writes ledger.csv, snapshots/ and
    /// manifest.json into the output directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run the configured problem for each truncation radius (cells
    /// scaled proportionally) and tabulate the final boundary-loss fraction.
    Converge {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated increasing radii, e.g. 10,20,40,80,160
        #[arg(long = "R", value_name = "LIST")]
        radii: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the verification suite (oracles, convex-weight inequalities,
    /// proved bounds, ledger identity, weak-form residuals).
    Verify {
        /// Optional config replacing the reference setup of the
        /// ledger-driven checks (must use scheme "noncons_coag").
        #[arg(long)]
        config: Option<PathBuf>,
        /// Select checks by substring, e.g. "oracle-run/binary_frag".
        #[arg(long)]
        only: Option<String>,
        /// Emit the check rows as a JSON array instead of a table.
        #[arg(long)]
        json: bool,
    },
}

fn init_thread_pool() -> Result<(), CliError> {
    if let Ok(raw) = std::env::var("CFE_THREADS") {
        let n: usize = raw.parse().ok().filter(|&n| n >= 1).ok_or_else(|| {
            CliError::usage(format!(
                "CFE_THREADS must be a positive integer, got '{raw}'"
            ))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::solver(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn parse_radii(raw: &str) -> Result<Vec<f64>, CliError> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::usage(format!("bad radius '{s}' in --R list")))
        })
        .collect()
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    init_thread_pool()?;
    match cli.command {
        Command::Run { config, out } => {
            let outcome = cmd_run(&config, &out)?;
            let s = &outcome.manifest.summary;
            println!("run complete: {}", outcome.ledger_path.display());
            println!("  config hash   {}", outcome.manifest.config_hash);
            println!("  final M0      {}", s.final_m0);
            println!("  final M1      {}", s.final_m1);
            println!("  boundary loss {}", s.accumulated_loss);
            println!("  clipped mass  {}", s.clipped_mass);
            Ok(())
        }
        Command::Converge { config, radii, out } => {
            let radii = parse_radii(&radii)?;
            let rows = cmd_converge(&config, &radii, &out)?;
            println!(
                "{:>10} {:>14} {:>14} {:>14}  note",
                "R", "final_M1", "loss", "loss_fraction"
            );
            for row in &rows {
                println!(
                    "{:>10} {:>14.6e} {:>14.6e} {:>14.6e}  {}",
                    row.r, row.final_m1, row.final_accumulated_loss, row.loss_fraction, row.note
                );
            }
            println!(
                "convergence table written to {}",
                out.join("convergence.csv").display()
            );
            Ok(())
        }
        Command::Verify { config, only, json } => {
            let rows = cmd_verify(config.as_deref(), only.as_deref())?;
            let failed: Vec<String> = rows
                .iter()
                .filter(|r| !r.pass)
                .map(|r| format!("{}: {}", r.name, r.detail))
                .collect();
            if json {
                let items: Vec<serde_json::Value> = rows
                    .iter()
                    .map(|r| {
                        serde_json::json!({
                            "check": r.name,
                            "pass": r.pass,
                            "detail": r.detail,
                        })
                    })
                    .collect();
                println!(
                    "{}",
                    serde_json::to_string_pretty(&items).expect("rows serialize")
                );
            } else {
                let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(10);
                for row in &rows {
                    let status = if row.pass { "PASS" } else { "FAIL" };
                    println!(
                        "{:width$}  {status}  {}",
                        row.name,
                        row.detail,
                        width = width
                    );
                }
                println!("{} checks, {} failed", rows.len(), failed.len());
            }
            if !failed.is_empty() {
                return Err(CliError::Verification(failed));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cfe: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
