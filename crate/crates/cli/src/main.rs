//! `sbridge` binary: argument parsing and exit-code mapping.
//!
//! Exit codes: 0 success, 2 configuration problems (clap usage errors
//! included), 3 numerical divergence, 4 I/O failures.

use clap::{Parser, Subcommand, ValueEnum};
use sbridge_cli::commands::{self, GlobalArgs};
use sbridge_cli::CliError;
use sbridge_core::bridge::Direction;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "sbridge",
    version,
    about = "Iterative proportional fitting of diffusion bridges on 2D toy data",
    propagate_version = true
)]
struct Cli {
    /// Seed override: replaces the config seed for train, seeds sampling
    /// for sample/translate/eval (default 0 there).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Parent directory that run directories are created under.
    #[arg(long, global = true, default_value = "runs")]
    run_dir: PathBuf,

    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DirArg {
    /// Latent/target side toward the data/source side (generation).
    Backward,
    /// Data/source side toward the latent/target side.
    Forward,
}

impl From<DirArg> for Direction {
    fn from(d: DirArg) -> Direction {
        match d {
            DirArg::Backward => Direction::Backward,
            DirArg::Forward => Direction::Forward,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a bridge per a TOML config file.
    Train {
        /// Path to the run configuration.
        config: PathBuf,
    },
    /// Draw samples from a trained checkpoint.
    Sample {
        /// Checkpoint to sample from.
        checkpoint: PathBuf,
        /// Number of samples.
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        /// Which process to roll out.
        #[arg(long, value_enum, default_value_t = DirArg::Backward)]
        direction: DirArg,
        /// Output CSV (default: next to the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write every intermediate slice to this trajectory CSV.
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
    /// Push the points of a CSV through the forward process.
    Translate {
        /// Checkpoint with the trained processes.
        checkpoint: PathBuf,
        /// Input CSV of x,y points in source-side data units.
        #[arg(long)]
        input: PathBuf,
        /// Output CSV (default: next to the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write every intermediate slice to this trajectory CSV.
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
    /// Report generation metrics of a checkpoint as JSON.
    Eval {
        /// Checkpoint to evaluate.
        checkpoint: PathBuf,
        /// Number of generated/reference samples.
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve entropic optimal transport between two weighted point clouds.
    Oracle {
        /// CSV of x,y[,weight] rows for the row marginal.
        #[arg(long)]
        mu: PathBuf,
        /// CSV of x,y[,weight] rows for the column marginal.
        #[arg(long)]
        nu: PathBuf,
        /// Entropic regularization strength.
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        /// Marginal violation tolerance.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Iteration budget.
        #[arg(long, default_value_t = 10_000)]
        max_iters: usize,
        /// Write the transport plan as i,j,mass rows.
        #[arg(long)]
        plan_out: Option<PathBuf>,
        /// Write the summary JSON here (it always prints unless --quiet).
        #[arg(long)]
        summary_out: Option<PathBuf>,
    },
    /// Render a points or trajectory CSV to a standalone SVG.
    Plot {
        /// Input CSV: x,y or slice,x,y rows.
        input: PathBuf,
        /// Output SVG path.
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = GlobalArgs {
        seed: cli.seed,
        run_root: cli.run_dir,
        quiet: cli.quiet,
    };
    match cli.cmd {
        Cmd::Train { config } => commands::cmd_train(&config, &g).map(drop),
        Cmd::Sample {
            checkpoint,
            n,
            direction,
            out,
            trajectories,
        } => commands::cmd_sample(&checkpoint, n, direction.into(), out, trajectories, &g)
            .map(drop),
        Cmd::Translate {
            checkpoint,
            input,
            out,
            trajectories,
        } => commands::cmd_translate(&checkpoint, &input, out, trajectories, &g).map(drop),
        Cmd::Eval { checkpoint, n, out } => commands::cmd_eval(&checkpoint, n, out, &g).map(drop),
        Cmd::Oracle {
            mu,
            nu,
            eps,
            tol,
            max_iters,
            plan_out,
            summary_out,
        } => commands::cmd_oracle(
            &mu,
            &nu,
            commands::OracleOpts { eps, tol, max_iters },
            plan_out,
            summary_out,
            &g,
        )
        .map(drop),
        Cmd::Plot { input, out } => commands::cmd_plot(&input, &out, &g),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
