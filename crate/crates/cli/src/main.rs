use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use tcsl::checks::{self, Settings};
use tcsl::commands;
use tcsl::config::Scenario;
use tcsl::ensemble::{worker_count, Meta};
use tcsl::output::write_json;

#[derive(Parser)]
#[command(name = "tcsl", version, about = "Stochastic collapse with quantised position and time")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to TCSL_WORKERS or 1.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; defaults to the scenario's `output` or `./out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every trajectory and write sample series, snapshots and histograms.
    Simulate(RunArgs),
    /// Run the ensemble and write the statistics report.
    Ensemble(RunArgs),
    /// Recompute ensemble statistics from a stored simulate run.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evolve a density matrix, or run a built-in two-particle example.
    Master {
        #[arg(long, conflicts_with = "example", required_unless_present = "example")]
        config: Option<PathBuf>,
        /// `no-collapse` or `collapse`.
        #[arg(long)]
        example: Option<String>,
        /// Example parameters such as `L=0 C=1 R=3 S=1 lambda=1`.
        params: Vec<String>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance checks.
    Validate {
        /// Run only the criterion or check with this name.
        #[arg(long)]
        only: Option<String>,
        /// List criteria and check names without running them.
        #[arg(long)]
        list: bool,
        #[arg(long)]
        workers: Option<usize>,
        /// Also write the results as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn load(args: &RunArgs) -> Result<(Scenario, u64, PathBuf, usize)> {
    let sc = Scenario::load(&args.config)?;
    let seed = args.seed.unwrap_or(sc.config.seed);
    let out = commands::output_dir(&sc, args.out.as_deref());
    Ok((sc, seed, out, worker_count(args.workers)))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn validate(only: Option<&str>, list: bool, workers: Option<usize>, json: Option<PathBuf>) -> Result<bool> {
    let selected = checks::select(only);
    if selected.is_empty() {
        bail!("no criterion or check named {:?}; see `tcsl validate --list`", only.unwrap_or_default());
    }
    if list {
        for c in &selected {
            println!("{:>2} {:<18} {}", c.id, c.key, c.title);
            for n in c.checks {
                println!("     {n}");
            }
        }
        return Ok(true);
    }
    let settings = Settings {
        workers: worker_count(workers),
    };
    let mut results = Vec::new();
    for c in &selected {
        let r = checks::run_criterion(c, &settings, only);
        println!("{:>2} {:<18} {}  ({:.1} s)", r.id, r.key, if r.pass() { "PASS" } else { "FAIL" }, r.seconds);
        if let Some(e) = &r.error {
            println!("     error: {e}");
        }
        for row in &r.rows {
            println!(
                "     {:<4} {:<32} {:>14.6e} vs {:>14.6e} [{}]  {}",
                if row.pass { "ok" } else { "FAIL" },
                row.name,
                row.measured,
                row.expected,
                row.tolerance,
                row.law
            );
        }
        results.push(r);
    }
    if let Some(path) = json {
        write_json(&path, &results)?;
    }
    Ok(results.iter().all(|r| r.pass()))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate(args) => {
            let (sc, seed, out, workers) = load(&args)?;
            print_json(&commands::simulate(&sc, seed, &out, workers)?)?;
        }
        Command::Ensemble(args) => {
            let (sc, seed, out, workers) = load(&args)?;
            let report = commands::ensemble(&sc, seed, &out, workers)?;
            eprintln!("wrote {}", out.join("report.json").display());
            if report.max_edge_probability > tcsl_core::EDGE_THRESHOLD {
                eprintln!(
                    "warning: up to {:.1e} probability near a lattice edge; enlarge the grid",
                    report.max_edge_probability
                );
            }
            if !report.failures.is_empty() {
                eprintln!("{} of {} trajectories failed", report.failures.len(), report.trajectories);
                return Ok(false);
            }
        }
        Command::Analyze { config, out } => {
            let sc = Scenario::load(&config)?;
            let out = commands::output_dir(&sc, out.as_deref());
            commands::analyze(&sc, &out)?;
            eprintln!("wrote {}", out.join("analysis.json").display());
        }
        Command::Master {
            config,
            example,
            params,
            out,
        } => {
            let report = match (config, example) {
                (Some(path), _) => {
                    if !params.is_empty() {
                        bail!("KEY=VALUE parameters apply only to --example");
                    }
                    serde_json::to_value(commands::master_from_config(&path)?)?
                }
                (None, Some(name)) => {
                    let meta = Meta {
                        schema_version: tcsl::config::SCHEMA_VERSION,
                        config_hash: tcsl::config::hash_text(&format!("{name} {}", params.join(" "))),
                        seed: 0,
                    };
                    serde_json::json!({ "meta": meta, "example": commands::run_example(&name, &params)? })
                }
                (None, None) => bail!("give --config or --example"),
            };
            match out {
                Some(path) => write_json(&path, &report)?,
                None => print_json(&report)?,
            }
        }
        Command::Validate {
            only,
            list,
            workers,
            json,
        } => return validate(only.as_deref(), list, workers, json),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
