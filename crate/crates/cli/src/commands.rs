//! Subcommand implementations. Argument parsing lives in the binary; these
//! functions take plain values so integration tests can drive them directly.

use crate::checkpoint::Checkpoint;
use crate::config::{self, ResolvedConfig};
use crate::csvio;
use crate::error::CliError;
use crate::evalutil;
use crate::observer::CliObserver;
use crate::plot;
use crate::rundir::RunDir;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sbridge_core::bridge::{self, Direction, DriftRole};
use sbridge_core::ipf::{self, IPFState};
use sbridge_core::metrics::EvalReport;
use sbridge_core::sinkhorn::{self, DiscreteMeasure, SolverMode};
use serde::Serialize;
use std::path::{Path, PathBuf};

/// Options shared by every subcommand.
#[derive(Debug, Clone)]
pub struct GlobalArgs {
    /// Overrides the config seed for `train`; seeds sampling otherwise.
    pub seed: Option<u64>,
    /// Parent directory for run directories.
    pub run_root: PathBuf,
    pub quiet: bool,
}

impl GlobalArgs {
    fn sampling_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

use crate::evalutil::direction_name;

/// Train per the config file; writes the run directory and returns the final
/// checkpoint path.
pub fn cmd_train(config_path: &Path, g: &GlobalArgs) -> Result<PathBuf, CliError> {
    let ResolvedConfig { name, train, eval } = config::load_config(config_path, g.seed)?;
    let run = RunDir::create(&g.run_root, &name)?;
    std::fs::copy(config_path, run.config_path())
        .map_err(|e| CliError::io(&format!("copy config into {}", run.root().display()), e))?;

    let mut observer = CliObserver::new(&run, &train, eval, g.quiet)?;
    let state = ipf::train(&train, &mut observer)?;
    observer.finish()?;

    let final_ckpt = run.checkpoint_path(state.stage);
    if !g.quiet {
        println!("training complete -> {}", final_ckpt.display());
    }
    Ok(final_ckpt)
}

/// The drift used when sampling in `direction`: the trained side's EMA
/// weights, except a never-trained forward process, which still runs its
/// analytic initialization.
fn sampling_role(state: &IPFState, direction: Direction) -> DriftRole {
    match direction {
        Direction::Forward if state.forward.epoch == 0 => state.forward_init.clone(),
        Direction::Forward => DriftRole::Learned(state.forward.ema.clone()),
        Direction::Backward => DriftRole::Learned(state.backward.ema.clone()),
    }
}

fn default_output(ckpt_path: &Path, filename: &str) -> PathBuf {
    let parent = ckpt_path.parent().unwrap_or_else(|| Path::new("."));
    let samples = parent.join("samples");
    if samples.is_dir() {
        samples.join(filename)
    } else {
        parent.join(filename)
    }
}

/// Generate `n` samples from a checkpoint.
///
/// A backward pass generates data-side samples, a forward pass latent- or
/// target-side ones. The output CSV is in data units; the optional
/// trajectory CSV stays in the chain's standardized units (slices near the
/// latent side have no data-unit meaning for unconditional tasks).
pub fn cmd_sample(
    ckpt_path: &Path,
    n: usize,
    direction: Direction,
    out: Option<PathBuf>,
    trajectories: Option<PathBuf>,
    g: &GlobalArgs,
) -> Result<PathBuf, CliError> {
    let (cfg, state) = Checkpoint::load(ckpt_path)?.into_state()?;
    let seed = g.sampling_seed();
    let out = out.unwrap_or_else(|| {
        default_output(
            ckpt_path,
            &format!("samples_{}_seed{}.csv", direction_name(direction), seed),
        )
    });

    if n == 0 {
        csvio::write_points(&out, &Array2::zeros((0, 2)))?;
        if let Some(traj_path) = &trajectories {
            std::fs::write(traj_path, format!("{}\n", csvio::TRAJECTORY_HEADER))
                .map_err(|e| CliError::io(&format!("write {}", traj_path.display()), e))?;
        }
        return Ok(out);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = cfg.task.sample_start(direction, n, &mut rng)?;
    let role = sampling_role(&state, direction);
    let traj = bridge::rollout(&role, &start, &cfg.grid, &mut rng, direction)?;

    let mut terminal = traj.end_slice().to_owned();
    evalutil::scale_inplace(
        &mut terminal,
        evalutil::end_side_constant(&cfg.task, direction),
    );
    csvio::write_points(&out, &terminal)?;
    if let Some(traj_path) = &trajectories {
        csvio::write_trajectory(traj_path, &traj.states)?;
    }
    if !g.quiet {
        println!(
            "wrote {n} {} samples -> {}",
            direction_name(direction),
            out.display()
        );
    }
    Ok(out)
}

/// Push the points of an input CSV through the forward process.
///
/// Inputs are read in data units of the start side and outputs written in
/// data units of the end side; the row count is preserved.
pub fn cmd_translate(
    ckpt_path: &Path,
    input: &Path,
    out: Option<PathBuf>,
    trajectories: Option<PathBuf>,
    g: &GlobalArgs,
) -> Result<PathBuf, CliError> {
    let (cfg, state) = Checkpoint::load(ckpt_path)?.into_state()?;
    let out = out.unwrap_or_else(|| default_output(ckpt_path, "translated.csv"));

    let mut start = csvio::read_points(input)?;
    let n = start.nrows();
    if n == 0 {
        csvio::write_points(&out, &start)?;
        if let Some(traj_path) = &trajectories {
            std::fs::write(traj_path, format!("{}\n", csvio::TRAJECTORY_HEADER))
                .map_err(|e| CliError::io(&format!("write {}", traj_path.display()), e))?;
        }
        return Ok(out);
    }

    let constant = cfg.task.standardization_constant();
    evalutil::scale_inplace(&mut start, 1.0 / constant);

    let mut rng = ChaCha8Rng::seed_from_u64(g.sampling_seed());
    let role = sampling_role(&state, Direction::Forward);
    let traj = bridge::rollout(&role, &start, &cfg.grid, &mut rng, Direction::Forward)?;

    let mut terminal = traj.end_slice().to_owned();
    debug_assert_eq!(terminal.nrows(), n);
    evalutil::scale_inplace(
        &mut terminal,
        evalutil::end_side_constant(&cfg.task, Direction::Forward),
    );
    csvio::write_points(&out, &terminal)?;
    if let Some(traj_path) = &trajectories {
        csvio::write_trajectory(traj_path, &traj.states)?;
    }
    if !g.quiet {
        println!("translated {n} points -> {}", out.display());
    }
    Ok(out)
}

/// JSON emitted by `eval` when the generated side has no mode structure.
#[derive(Debug, Serialize)]
struct PlainEvalJson {
    sliced_w2: f64,
    n_samples: usize,
}

/// Evaluate generation quality of a checkpoint's backward process.
pub fn cmd_eval(
    ckpt_path: &Path,
    n: usize,
    out: Option<PathBuf>,
    g: &GlobalArgs,
) -> Result<String, CliError> {
    if n == 0 {
        return Err(CliError::Config("eval needs n ≥ 1".into()));
    }
    let (cfg, state) = Checkpoint::load(ckpt_path)?.into_state()?;
    let mut rng = ChaCha8Rng::seed_from_u64(g.sampling_seed());
    let role = sampling_role(&state, Direction::Backward);
    let start = cfg.task.sample_start(Direction::Backward, n, &mut rng)?;
    let traj = bridge::rollout(&role, &start, &cfg.grid, &mut rng, Direction::Backward)?;
    let eval = evalutil::evaluate_terminal(
        &cfg.task,
        traj.end_slice(),
        Direction::Backward,
        sbridge_core::metrics::DEFAULT_N_PROJ,
        &mut rng,
    )?;

    let json = match eval.coverage {
        Some((fraction, counts)) => serde_json::to_string_pretty(&EvalReport {
            sliced_w2: eval.sliced_w2,
            mode_coverage: fraction,
            per_mode_counts: counts,
            n_samples: n,
        }),
        None => serde_json::to_string_pretty(&PlainEvalJson {
            sliced_w2: eval.sliced_w2,
            n_samples: n,
        }),
    }
    .map_err(|e| CliError::Io(format!("serialize eval report: {e}")))?;

    if let Some(path) = &out {
        std::fs::write(path, &json)
            .map_err(|e| CliError::io(&format!("write {}", path.display()), e))?;
    }
    println!("{json}");
    Ok(json)
}

/// Summary emitted by the `oracle` subcommand.
#[derive(Debug, Serialize)]
pub struct OracleSummary {
    pub epsilon: f64,
    pub converged: bool,
    pub iterations: usize,
    pub violation: f64,
    pub mode: &'static str,
    /// `Σ π_ij · C_ij` under the returned plan.
    pub transport_cost: f64,
    /// Entropic objective: transport cost plus ε · KL(π ‖ μ⊗ν).
    pub objective: f64,
}

/// Solver knobs for [`cmd_oracle`], mirroring the `oracle` subcommand flags.
#[derive(Debug, Clone, Copy)]
pub struct OracleOpts {
    pub eps: f64,
    pub tol: f64,
    pub max_iters: usize,
}

/// Solve entropic optimal transport between two weighted point clouds.
pub fn cmd_oracle(
    mu_path: &Path,
    nu_path: &Path,
    opts: OracleOpts,
    plan_out: Option<PathBuf>,
    summary_out: Option<PathBuf>,
    g: &GlobalArgs,
) -> Result<OracleSummary, CliError> {
    let OracleOpts { eps, tol, max_iters } = opts;
    let (mu_support, mu_weights) = csvio::read_weighted_points(mu_path)?;
    let (nu_support, nu_weights) = csvio::read_weighted_points(nu_path)?;
    let mu = DiscreteMeasure::new(mu_support, mu_weights)?;
    let nu = DiscreteMeasure::new(nu_support, nu_weights)?;

    let cost = sinkhorn::cost_matrix(&mu, &nu);
    let result = sinkhorn::sinkhorn_solve(&mu, &nu, eps, max_iters, tol)?;
    let plan = &result.coupling.plan;
    let transport_cost = (plan * &cost).sum();
    let objective = sinkhorn::coupling_objective(plan, &cost, eps, &mu, &nu)?;

    let summary = OracleSummary {
        epsilon: eps,
        converged: result.converged,
        iterations: result.iterations,
        violation: result.violation,
        mode: match result.mode {
            SolverMode::Standard => "standard",
            SolverMode::LogDomain => "log_domain",
        },
        transport_cost,
        objective,
    };

    if let Some(path) = &plan_out {
        let mut text = String::from("i,j,mass\n");
        for ((i, j), &mass) in plan.indexed_iter() {
            use std::fmt::Write as _;
            writeln!(text, "{i},{j},{mass:?}").expect("string write");
        }
        std::fs::write(path, text)
            .map_err(|e| CliError::io(&format!("write {}", path.display()), e))?;
    }
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::Io(format!("serialize oracle summary: {e}")))?;
    if let Some(path) = &summary_out {
        std::fs::write(path, &json)
            .map_err(|e| CliError::io(&format!("write {}", path.display()), e))?;
    }
    if !g.quiet {
        println!("{json}");
    }
    Ok(summary)
}

/// Render a CSV of points or trajectories to SVG.
pub fn cmd_plot(input: &Path, out: &Path, g: &GlobalArgs) -> Result<(), CliError> {
    plot::render_csv(input, out)?;
    if !g.quiet {
        println!("wrote {}", out.display());
    }
    Ok(())
}
