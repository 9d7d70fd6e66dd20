//! `igpk` — kriging with intrinsic Gaussian-process priors.
//!
//! Subcommands: `variogram`, `predict`, `posterior`, `sample`,
//! `demo fig1`, `demo swot`, `bench`, `diag cnd`. Set `IGPK_LOG` to
//! `error|warn|info|debug` to control logging. Exit codes: 0 success,
//! 1 numeric failure, 2 configuration error.

use clap::{Args, Parser, Subcommand};
use igpk::demo::{
    bench_csv, posterior_for, posterior_table, predict_table, run_bench, run_demo_fig1,
    run_demo_swot, sample_table, variogram_table, MethodSpec,
};
use igpk::io;
use igpk::posterior::PredictionLattice;
use igpk::simdata::SwotConfig;
use igpk::structmat::{build_gamma, cnd_diagnostics, CndDiagnostics};
use igpk::{Error, Result};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "igpk", version, about = "Kriging with intrinsic Gaussian-process priors")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Variogram model JSON file
    #[arg(long)]
    model: PathBuf,
    /// Observations CSV (coordinate columns, then a value column)
    #[arg(long)]
    obs: PathBuf,
    /// Target/lattice locations CSV (coordinate columns only)
    #[arg(long)]
    targets: PathBuf,
    /// White observation-noise scale σ
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Override for the shift δ (chosen automatically when absent)
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate γ(d) on a distance grid
    Variogram {
        /// Variogram model JSON file
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        dmin: f64,
        #[arg(long)]
        dmax: f64,
        #[arg(long, default_value_t = 101)]
        steps: usize,
        /// Output CSV path (stdout when absent)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict at targets with a chosen weight family
    Predict {
        #[command(flatten)]
        data: DataArgs,
        /// igp | igp0 | limit | rational:{perron,ones,rinv} | shepard |
        /// gshepard | jk:<degree>
        #[arg(long)]
        method: String,
        /// Worker threads for independent target evaluations
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Posterior mean and standard deviation over a lattice
    Posterior {
        #[command(flatten)]
        data: DataArgs,
        /// Use the zero-mean stationary-GP baseline instead of the IGP path
        #[arg(long)]
        stationary: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw posterior realizations over a lattice
    Sample {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of realizations
        #[arg(long, default_value_t = 3)]
        draws: usize,
        /// Use the zero-mean stationary-GP baseline instead of the IGP path
        #[arg(long)]
        stationary: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit a demo data set
    Demo {
        #[command(subcommand)]
        which: DemoCommand,
    },
    /// Per-target factorization timings, twisted vs direct
    Bench {
        /// Ascending problem sizes
        #[arg(long, value_delimiter = ',', default_value = "256,512,1024")]
        n: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        /// Worker threads for benchmark repetitions
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Matrix diagnostics
    Diag {
        #[command(subcommand)]
        which: DiagCommand,
    },
}

#[derive(Subcommand)]
enum DemoCommand {
    /// Seven-point 1-d demo: variograms, prior draws, posterior means/draws
    Fig1 {
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1940)]
        seed: u64,
    },
    /// Synthetic satellite-altimetry scene with posterior field estimation
    Swot {
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 39952)]
        seed: u64,
        /// Grid resolution per axis
        #[arg(long, default_value_t = 64)]
        grid: usize,
        /// Observation points per swath line
        #[arg(long, default_value_t = 128)]
        track_points: usize,
    },
}

#[derive(Subcommand)]
enum DiagCommand {
    /// Conditional-negative-definiteness report for a variogram matrix
    Cnd {
        /// Variogram model JSON file
        #[arg(long)]
        model: PathBuf,
        /// Observations CSV supplying the locations (values ignored)
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit_csv(out: Option<&PathBuf>, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let href: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    match out {
        Some(path) => io::write_csv(path, &href, rows),
        None => {
            print!("{}", igpk::io::csv_string(&href, rows));
            Ok(())
        }
    }
}

fn emit_text(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text)?;
            Ok(())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Variogram { model, dmin, dmax, steps, out } => {
            let m = io::read_model(&model)?;
            let (header, rows) = variogram_table(&m, dmin, dmax, steps)?;
            emit_csv(out.as_ref(), &header, &rows)
        }
        Command::Predict { data, method, threads, out } => {
            let m = io::read_model(&data.model)?;
            let obs = io::read_observations(&data.obs)?;
            let targets = io::read_locations(&data.targets)?;
            let spec = MethodSpec::parse(&method)?;
            let (header, rows) =
                predict_table(&obs, &m, spec, &targets, data.sigma, data.delta, threads)?;
            emit_csv(out.as_ref(), &header, &rows)
        }
        Command::Posterior { data, stationary, out } => {
            let m = io::read_model(&data.model)?;
            let obs = io::read_observations(&data.obs)?;
            let lattice = PredictionLattice::new(io::read_locations(&data.targets)?);
            let pg = posterior_for(&obs, &m, data.sigma, data.delta, &lattice, stationary)?;
            let (header, rows) = posterior_table(&pg)?;
            emit_csv(out.as_ref(), &header, &rows)
        }
        Command::Sample { data, seed, draws, stationary, out } => {
            let m = io::read_model(&data.model)?;
            let obs = io::read_observations(&data.obs)?;
            let lattice = PredictionLattice::new(io::read_locations(&data.targets)?);
            let pg = posterior_for(&obs, &m, data.sigma, data.delta, &lattice, stationary)?;
            let (header, rows) = sample_table(&pg, seed, draws)?;
            emit_csv(out.as_ref(), &header, &rows)
        }
        Command::Demo { which } => {
            let files = match which {
                DemoCommand::Fig1 { out, seed } => run_demo_fig1(&out, seed)?,
                DemoCommand::Swot { out, seed, grid, track_points } => {
                    let cfg = SwotConfig {
                        seed,
                        grid: (grid, grid),
                        track_points_per_line: track_points,
                        ..SwotConfig::default()
                    };
                    run_demo_swot(&out, &cfg)?
                }
            };
            for f in files {
                println!("{}", f.display());
            }
            Ok(())
        }
        Command::Bench { n, reps, threads, out } => {
            let rows = run_bench(&n, reps, threads)?;
            emit_text(out.as_ref(), &bench_csv(&rows))
        }
        Command::Diag { which } => match which {
            DiagCommand::Cnd { model, obs, out } => {
                let m = io::read_model(&model)?;
                let observations = io::read_observations(&obs)?;
                let gm = build_gamma(&m, observations.locs())?;
                let report = match cnd_diagnostics(&gm) {
                    CndDiagnostics::Singular => serde_json::json!({
                        "n": gm.n(),
                        "singular": true,
                    }),
                    CndDiagnostics::Regular { n_pos_eig, perron, e_ginv_e } => serde_json::json!({
                        "n": gm.n(),
                        "singular": false,
                        "n_pos_eig": n_pos_eig,
                        "e_ginv_e": e_ginv_e,
                        "perron": perron.iter().copied().collect::<Vec<f64>>(),
                    }),
                };
                let mut text = serde_json::to_string_pretty(&report)
                    .map_err(|e| Error::Config(format!("diagnostics encode: {e}")))?;
                text.push('\n');
                emit_text(out.as_ref(), &text)
            }
        },
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("IGPK_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            let code = if e.is_config() { 2 } else { 1 };
            std::process::exit(code);
        }
    }
}
