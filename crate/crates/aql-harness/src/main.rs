//! `aql`: run sweeps, aggregate results, export plot data, spot-check
//! oracles. Exit codes: 0 success, 1 validation error, 2 run failure.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use aql_core::expectile::sample_expectile;
use aql_core::mdp::{build_chain_mdp, value_iteration, ChainMdpParams, MdpSpec};
use aql_harness::{aggregate_dir, emit_plot_data, run_sweep, HarnessError, SeriesSpec};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aql", version, about = "Annealed Q-learning experiment harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute every (cell × seed) run of a sweep config.
    Run {
        /// Sweep definition (TOML).
        config: PathBuf,
        /// Output directory for traces, aggregates, and the manifest.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; 0 uses the rayon default.
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recompute per-cell aggregates over a finished sweep directory.
    Aggregate {
        dir: PathBuf,
    },
    /// Emit long-format CSV of logged traces.
    Plotdata {
        dir: PathBuf,
        /// Comma-separated metric columns, e.g. "q_s0_a0,episode_return".
        #[arg(long)]
        series: String,
        /// Comma-separated cell names (default: all cells).
        #[arg(long)]
        cells: Option<String>,
        /// Collapse seeds into mean and confidence-interval columns.
        #[arg(long)]
        agg: bool,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Spot-check numeric oracles.
    Oracle {
        #[command(subcommand)]
        which: OracleCmd,
    },
}

#[derive(Subcommand)]
enum OracleCmd {
    /// Weighted sample expectile of a comma-separated list.
    Expectile {
        /// Comma-separated values, e.g. "0,1".
        #[arg(long)]
        data: String,
        #[arg(long)]
        tau: f64,
        /// Comma-separated weights matching --data (default: uniform).
        #[arg(long)]
        weights: Option<String>,
    },
    /// Value-iteration Q* and V* for a finite MDP.
    Valueiter(ValueiterArgs),
}

#[derive(Args)]
struct ValueiterArgs {
    /// MDP description file (TOML); omitted: the diagnostic chain.
    #[arg(long)]
    mdp: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    r1: f64,
    #[arg(long, default_value_t = 0.5)]
    r2: f64,
    #[arg(long, default_value_t = 0.5)]
    r3: f64,
    #[arg(long, default_value_t = 0.5)]
    r4: f64,
    #[arg(long, default_value_t = 0.9)]
    discount: f64,
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|f| f.trim().parse::<f64>().map_err(|e| format!("bad {what} entry '{f}': {e}")))
        .collect()
}

fn fail(message: impl std::fmt::Display, code: u8) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match cli.cmd {
        Cmd::Run { config, out, workers, seed } => {
            let text = match fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => return fail(format_args!("{}: {e}", config.display()), 1),
            };
            match run_sweep(&text, &out, workers, seed) {
                Ok(outcome) => {
                    println!(
                        "ran {} run(s), skipped {} already-finished",
                        outcome.executed, outcome.skipped
                    );
                    for report in &outcome.reports {
                        println!(
                            "{}: n={} final {} = {:.6} [{:.6}, {:.6}]",
                            report.cell,
                            report.n_seeds,
                            report.metric,
                            report.final_point,
                            report.final_ci_lower,
                            report.final_ci_upper
                        );
                    }
                    if outcome.failures.is_empty() {
                        ExitCode::SUCCESS
                    } else {
                        for f in &outcome.failures {
                            eprintln!("failed: {} ({})", f.run, f.error);
                        }
                        ExitCode::from(2)
                    }
                }
                Err(e) => fail(e, 1),
            }
        }
        Cmd::Aggregate { dir } => match aggregate_dir(&dir) {
            Ok(reports) => {
                println!("cell,metric,n_seeds,final_mean,final_iqm,ci_lower,ci_upper");
                for r in &reports {
                    println!(
                        "{},{},{},{},{},{},{}",
                        r.cell,
                        r.metric,
                        r.n_seeds,
                        r.final_mean,
                        r.final_iqm,
                        r.final_ci_lower,
                        r.final_ci_upper
                    );
                }
                ExitCode::SUCCESS
            }
            Err(e) => fail(e, 1),
        },
        Cmd::Plotdata { dir, series, cells, agg, out } => {
            let spec = SeriesSpec {
                metrics: series.split(',').map(|s| s.trim().to_owned()).collect(),
                cells: cells.map(|c| c.split(',').map(|s| s.trim().to_owned()).collect()),
                aggregated: agg,
            };
            match emit_plot_data(&dir, &spec) {
                Ok(csv) => match out {
                    Some(path) => match fs::write(&path, csv) {
                        Ok(()) => ExitCode::SUCCESS,
                        Err(e) => fail(format_args!("{}: {e}", path.display()), 1),
                    },
                    None => {
                        print!("{csv}");
                        ExitCode::SUCCESS
                    }
                },
                Err(e @ HarnessError::MissingCell(_)) => fail(e, 1),
                Err(e) => fail(e, 1),
            }
        }
        Cmd::Oracle { which } => match which {
            OracleCmd::Expectile { data, tau, weights } => {
                let values = match parse_list(&data, "--data") {
                    Ok(v) => v,
                    Err(e) => return fail(e, 1),
                };
                let weights = match weights.map(|w| parse_list(&w, "--weights")).transpose() {
                    Ok(w) => w,
                    Err(e) => return fail(e, 1),
                };
                match sample_expectile(&values, weights.as_deref(), tau) {
                    Ok(m) => {
                        println!("{m}");
                        ExitCode::SUCCESS
                    }
                    Err(e) => fail(e, 1),
                }
            }
            OracleCmd::Valueiter(args) => {
                let mdp = if let Some(path) = &args.mdp {
                    let text = match fs::read_to_string(path) {
                        Ok(t) => t,
                        Err(e) => return fail(format_args!("{}: {e}", path.display()), 1),
                    };
                    match MdpSpec::from_toml_str(&text).and_then(|spec| spec.build()) {
                        Ok(mdp) => mdp,
                        Err(e) => return fail(e, 1),
                    }
                } else {
                    build_chain_mdp(ChainMdpParams {
                        r1: args.r1,
                        r2: args.r2,
                        r3: args.r3,
                        r4: args.r4,
                        discount: args.discount,
                    })
                };
                match value_iteration(&mdp, 1e-12, 100_000) {
                    Ok(table) => {
                        for (s, row) in table.q.iter().enumerate() {
                            let cells: Vec<String> =
                                row.iter().map(|q| format!("{q:.6}")).collect();
                            println!("Q[s{s}] = [{}]  V[s{s}] = {:.6}", cells.join(", "), table.v[s]);
                        }
                        ExitCode::SUCCESS
                    }
                    Err(e) => fail(e, 1),
                }
            }
        },
    }
}
