use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lcvx::output;
use lcvx::pipeline::{self, exit, RunOptions};
use lcvx::scenario::{Scenario, SweepParam};
use log::error;

/// Lossless convexification of pointing-constrained landing problems.
#[derive(Parser, Debug)]
#[command(name = "lcvx", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve a scenario, certify every grid point and repair violations.
    Run {
        scenario: PathBuf,
        /// Output directory (default: out/<scenario name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip projection repair.
        #[arg(long)]
        no_repair: bool,
        /// Seed for the complement basis and the subset audit.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the conic program as program.txt.
        #[arg(long)]
        dump_program: bool,
    },
    /// Run the pipeline for several values of one parameter.
    Sweep {
        scenario: PathBuf,
        /// One of N, penalty_weight, rho_min, tf.
        #[arg(long)]
        param: String,
        /// Comma-separated values; an empty list does nothing.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check the assumptions of a scenario without solving it.
    Check {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load(path: &Path) -> Result<Scenario, i32> {
    Scenario::load(path).map_err(|e| {
        eprintln!("{}: {e}", path.display());
        pipeline::exit_code_for(&e)
    })
}

fn execute(cli: Cli) -> Result<i32, i32> {
    let fail = |e: lcvx::LcvxError| {
        eprintln!("error: {e}");
        pipeline::exit_code_for(&e)
    };
    match cli.command {
        Command::Run {
            scenario,
            out,
            no_repair,
            seed,
            dump_program,
        } => {
            let sc = load(&scenario)?;
            let dir = out.unwrap_or_else(|| PathBuf::from("out").join(&sc.name));
            let opts = RunOptions {
                seed,
                repair: !no_repair,
                dump_program,
            };
            let r = pipeline::run_to_dir(&sc, &opts, &dir).map_err(fail)?;
            println!(
                "{}: status {}, objective {}, {} -> {}",
                r.scenario,
                r.status,
                r.objective.map(output::fmt_f64).unwrap_or_else(|| "n/a".into()),
                r.message,
                dir.display()
            );
            Ok(r.exit_code)
        }
        Command::Sweep {
            scenario,
            param,
            values,
            out,
            seed,
        } => {
            let sc = load(&scenario)?;
            let param: SweepParam = param.parse().map_err(fail)?;
            let values: Vec<f64> = values
                .iter()
                .filter(|v| !v.trim().is_empty())
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|_| {
                        eprintln!("error: cannot parse sweep value `{v}`");
                        exit::MALFORMED_SCENARIO
                    })
                })
                .collect::<Result<_, _>>()?;
            if values.is_empty() {
                println!("empty value list; nothing to do");
                return Ok(exit::OK);
            }
            let dir = out.unwrap_or_else(|| PathBuf::from("out").join(format!("{}_sweep_{param}", sc.name)));
            let opts = RunOptions {
                seed,
                ..RunOptions::default()
            };
            let res = pipeline::sweep(&sc, param, &values, &opts, Some(&dir)).map_err(fail)?;
            for row in &res.rows {
                println!(
                    "{param} = {}: {} violations={} final_error={}",
                    row.value,
                    row.status,
                    row.violations.map(|v| v.to_string()).unwrap_or_else(|| "n/a".into()),
                    row.final_error_after_repair.map(output::fmt_f64).unwrap_or_else(|| "n/a".into())
                );
            }
            println!("wrote {}", dir.join("sweep.csv").display());
            Ok(res.exit_code)
        }
        Command::Check { scenario, seed } => {
            let sc = load(&scenario)?;
            let (a, code) = pipeline::check(&sc, seed).map_err(fail)?;
            println!("{}", output::to_json(&a).map_err(fail)?.trim_end());
            if code != exit::OK {
                eprintln!("failed: {}", a.failures().join(", "));
            }
            Ok(code)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LCVX_LOG", "error")).init();
    let cli = Cli::parse();
    let code = execute(cli).unwrap_or_else(|code| code);
    if code != exit::OK {
        error!("exiting with status {code}");
    }
    ExitCode::from(code as u8)
}
