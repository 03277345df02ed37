//! Shared rollout/evaluation helpers used by the observer and the
//! subcommands.
//!
//! Everything here works in standardized (training) units; callers multiply
//! by the appropriate side constant when writing data-unit files.

use crate::error::CliError;
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use sbridge_core::bridge::{self, Direction, DriftRole, TimeGrid, Trajectory};
use sbridge_core::ipf::Task;
use sbridge_core::metrics;
use sbridge_core::nnet::ParameterSet;
use sbridge_core::toydata::{self, ToyKind, ToySpec};

/// Lowercase direction label used in CSV rows and file names.
pub fn direction_name(direction: Direction) -> &'static str {
    match direction {
        Direction::Backward => "backward",
        Direction::Forward => "forward",
    }
}

/// Roll `n` fresh start points of `direction` through the learned drift.
pub fn generation_trajectory(
    task: &Task,
    params: &ParameterSet,
    grid: &TimeGrid,
    direction: Direction,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Trajectory, CliError> {
    let start = task.sample_start(direction, n, rng)?;
    rollout_from(params, grid, &start, direction, rng)
}

/// Roll given start points (standardized units) through the learned drift.
pub fn rollout_from(
    params: &ParameterSet,
    grid: &TimeGrid,
    start: &Array2<f64>,
    direction: Direction,
    rng: &mut impl Rng,
) -> Result<Trajectory, CliError> {
    let role = DriftRole::Learned(params.clone());
    bridge::rollout(&role, start, grid, rng, direction).map_err(CliError::from)
}

/// The toy distribution a rollout of `direction` terminates on, when that
/// side is a named distribution (the unconditional latent side is not).
pub fn end_side_spec(task: &Task, direction: Direction) -> Option<ToySpec> {
    match (task, direction) {
        (Task::Unconditional { data }, Direction::Backward) => Some(*data),
        (Task::Unconditional { .. }, Direction::Forward) => None,
        (Task::Translation { source, .. }, Direction::Backward) => Some(*source),
        (Task::Translation { target, .. }, Direction::Forward) => Some(*target),
    }
}

/// Factor that maps standardized units back to data units on the side a
/// rollout of `direction` ends on.
pub fn end_side_constant(task: &Task, direction: Direction) -> f64 {
    match end_side_spec(task, direction) {
        Some(_) => task.standardization_constant(),
        None => 1.0,
    }
}

/// Quality summary of a terminal slice against its side's ground truth.
#[derive(Debug, Clone)]
pub struct SideEval {
    pub sliced_w2: f64,
    /// Mode-coverage fraction and per-mode counts; present only when the
    /// side is a Gaussian-mixture kind.
    pub coverage: Option<(f64, Vec<usize>)>,
}

/// Compare terminal samples (standardized units) from a rollout of
/// `direction` against fresh draws from that side's distribution.
pub fn evaluate_terminal(
    task: &Task,
    terminal: ArrayView2<'_, f64>,
    direction: Direction,
    n_projections: usize,
    rng: &mut impl Rng,
) -> Result<SideEval, CliError> {
    let terminal = terminal.to_owned();
    let n = terminal.nrows();
    // The end side of `direction` is the start side of the other direction.
    let reference = task.sample_start(direction.other(), n, rng)?;
    let sliced_w2 = metrics::sliced_w2(&terminal, &reference, n_projections, rng)?;

    let coverage = match end_side_spec(task, direction) {
        Some(spec)
            if matches!(
                spec.kind,
                ToyKind::EightGaussians | ToyKind::TwentyfiveGaussians
            ) =>
        {
            let constant = task.standardization_constant();
            let centers: Vec<[f64; 2]> = toydata::mode_centers(&spec)
                .map_err(|e| CliError::Config(e.to_string()))?
                .into_iter()
                .map(|[x, y]| [x / constant, y / constant])
                .collect();
            let radius = metrics::coverage_radius(spec.mode_std / constant);
            let min_count = metrics::default_min_count(n, centers.len());
            Some(metrics::mode_coverage(
                &terminal, &centers, radius, min_count,
            )?)
        }
        _ => None,
    };

    Ok(SideEval {
        sliced_w2,
        coverage,
    })
}

/// Multiply an array in place by a scalar (standardized → data units).
pub fn scale_inplace(points: &mut Array2<f64>, factor: f64) {
    if factor != 1.0 {
        points.mapv_inplace(|v| v * factor);
    }
}
