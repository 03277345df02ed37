//! Discrete-time Markov transition kernels and trajectory rollouts.
//!
//! A bridge process moves a batch of 2D points through `T` steps. One step
//! in either direction is the Gaussian kernel
//!
//! ```text
//! x' = x + γ_t · drift(x, index) + √(2γ_t) · z,   z ~ N(0, I)
//! ```
//!
//! where the drift is a learned network, the analytic variance-preserving
//! drift `−½β_t x`, or zero (Brownian motion). Forward rollouts apply drift
//! indices `0..T−1` left to right; backward rollouts walk right to left and
//! consume indices `t+1 ∈ {1..T}`, mirroring the reversed kernel's
//! convention. The noise variance is `2γ_t` for every bridge kernel.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nnet::{self, NnetError, ParameterSet};

/// Errors from grid construction, kernel stepping, and rollouts.
#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("time grid needs at least one step")]
    EmptyGrid,
    #[error("step size γ_{t} must be positive and finite, got {gamma}")]
    BadGamma { t: usize, gamma: f64 },
    #[error("vp_linear needs 0 ≤ beta_min ≤ beta_max, got ({beta_min}, {beta_max})")]
    BadBeta { beta_min: f64, beta_max: f64 },
    #[error("timestep {t} out of range for grid with {t_steps} steps")]
    TimeOutOfRange { t: usize, t_steps: usize },
    #[error("non-finite state after transition at timestep {t}")]
    Diverged { t: usize },
    #[error(transparent)]
    Net(#[from] NnetError),
}

/// Number of timesteps `T` together with the per-step sizes `γ_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    gamma: Vec<f64>,
}

impl TimeGrid {
    /// Grid from explicit step sizes; every γ_t must be positive and finite.
    pub fn new(gamma: Vec<f64>) -> Result<Self, BridgeError> {
        if gamma.is_empty() {
            return Err(BridgeError::EmptyGrid);
        }
        for (t, &g) in gamma.iter().enumerate() {
            if g <= 0.0 || !g.is_finite() {
                return Err(BridgeError::BadGamma { t, gamma: g });
            }
        }
        Ok(TimeGrid { gamma })
    }

    /// Uniform grid: `T` steps of size `horizon / T`.
    pub fn uniform(t_steps: usize, horizon: f64) -> Result<Self, BridgeError> {
        if t_steps == 0 {
            return Err(BridgeError::EmptyGrid);
        }
        TimeGrid::new(vec![horizon / t_steps as f64; t_steps])
    }

    /// Number of steps `T`.
    pub fn t_steps(&self) -> usize {
        self.gamma.len()
    }

    /// Step size γ_t for `t < T`.
    pub fn gamma(&self, t: usize) -> f64 {
        self.gamma[t]
    }

    /// All step sizes in order.
    pub fn gammas(&self) -> &[f64] {
        &self.gamma
    }

    /// Total horizon Γ = Σ γ_t.
    pub fn horizon(&self) -> f64 {
        self.gamma.iter().sum()
    }
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = BridgeError;
    fn try_from(gamma: Vec<f64>) -> Result<Self, BridgeError> {
        TimeGrid::new(gamma)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(grid: TimeGrid) -> Vec<f64> {
        grid.gamma
    }
}

/// Which way a rollout walks the time axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn other(self) -> Direction {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }
}

/// The drift function a process uses: a learned network, the analytic
/// variance-preserving linear drift, or zero (Brownian motion).
#[derive(Debug, Clone, PartialEq)]
pub enum DriftRole {
    Learned(ParameterSet),
    VpLinear { beta_min: f64, beta_max: f64 },
    Zero,
}

impl DriftRole {
    /// Validated variance-preserving drift with β_t linearly interpolated
    /// from `beta_min` to `beta_max` over `t/T`.
    pub fn vp_linear(beta_min: f64, beta_max: f64) -> Result<Self, BridgeError> {
        if !(0.0 <= beta_min && beta_min <= beta_max) || !beta_max.is_finite() {
            return Err(BridgeError::BadBeta { beta_min, beta_max });
        }
        Ok(DriftRole::VpLinear { beta_min, beta_max })
    }
}

/// Evaluate the drift `f_t(x)` for one shared timestep index (the value
/// before multiplication by γ_t).
pub fn drift_eval(
    role: &DriftRole,
    x: &Array2<f64>,
    t: usize,
    grid: &TimeGrid,
) -> Result<Array2<f64>, BridgeError> {
    let t_steps = grid.t_steps();
    if t > t_steps {
        return Err(BridgeError::TimeOutOfRange { t, t_steps });
    }
    match role {
        DriftRole::Zero => Ok(Array2::zeros(x.dim())),
        DriftRole::VpLinear { beta_min, beta_max } => {
            let beta = beta_min + (beta_max - beta_min) * (t as f64 / t_steps as f64);
            Ok(x.mapv(|v| -0.5 * beta * v))
        }
        DriftRole::Learned(params) => Ok(nnet::net_forward(params, x, t, t_steps)?),
    }
}

/// Drift evaluation with an independent timestep index per row.
pub fn drift_eval_multi(
    role: &DriftRole,
    x: &Array2<f64>,
    ts: &[usize],
    grid: &TimeGrid,
) -> Result<Array2<f64>, BridgeError> {
    let t_steps = grid.t_steps();
    if let Some(&bad) = ts.iter().find(|&&t| t > t_steps) {
        return Err(BridgeError::TimeOutOfRange { t: bad, t_steps });
    }
    match role {
        DriftRole::Zero => Ok(Array2::zeros(x.dim())),
        DriftRole::VpLinear { beta_min, beta_max } => {
            let mut out = x.clone();
            for (i, mut row) in out.outer_iter_mut().enumerate() {
                let beta = beta_min + (beta_max - beta_min) * (ts[i] as f64 / t_steps as f64);
                row.mapv_inplace(|v| -0.5 * beta * v);
            }
            Ok(out)
        }
        DriftRole::Learned(params) => Ok(nnet::net_forward_multi(params, x, ts, t_steps)?),
    }
}

/// One Gaussian kernel step `x + γ·drift + √(2γ)·z` given a precomputed
/// drift batch. Noise draws go row by row, coordinate by coordinate, so the
/// consumption order from the generator is pinned.
pub fn kernel_step(
    x: &Array2<f64>,
    drift: &Array2<f64>,
    gamma: f64,
    rng: &mut impl Rng,
) -> Array2<f64> {
    let noise_scale = (2.0 * gamma).sqrt();
    let mut out = Array2::zeros(x.dim());
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            let z: f64 = rng.sample(StandardNormal);
            out[[i, j]] = x[[i, j]] + gamma * drift[[i, j]] + noise_scale * z;
        }
    }
    out
}

/// Sample `x_{t+1} ~ N(x_t + γ_t f_t(x_t), 2γ_t I)`.
///
/// The same kernel serves the backward process by passing the backward
/// drift and reversed time indexing (see [`rollout`]).
pub fn transition(
    role: &DriftRole,
    x_t: &Array2<f64>,
    t: usize,
    grid: &TimeGrid,
    rng: &mut impl Rng,
) -> Result<Array2<f64>, BridgeError> {
    if t >= grid.t_steps() {
        return Err(BridgeError::TimeOutOfRange {
            t,
            t_steps: grid.t_steps(),
        });
    }
    let drift = drift_eval(role, x_t, t, grid)?;
    let next = kernel_step(x_t, &drift, grid.gamma(t), rng);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(BridgeError::Diverged { t });
    }
    Ok(next)
}

/// A full rollout: `(T+1) × n × 2` states plus direction metadata.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Array3<f64>,
    pub direction: Direction,
    pub grid: TimeGrid,
}

impl Trajectory {
    /// Number of stored time slices, always `T + 1`.
    pub fn n_slices(&self) -> usize {
        self.states.dim().0
    }

    /// Batch size n.
    pub fn n_samples(&self) -> usize {
        self.states.dim().1
    }

    /// The slice the rollout started from: index 0 forward, T backward.
    pub fn start_slice(&self) -> ndarray::ArrayView2<'_, f64> {
        match self.direction {
            Direction::Forward => self.states.index_axis(ndarray::Axis(0), 0),
            Direction::Backward => self.states.index_axis(ndarray::Axis(0), self.n_slices() - 1),
        }
    }

    /// The slice the rollout ended on: index T forward, 0 backward.
    pub fn end_slice(&self) -> ndarray::ArrayView2<'_, f64> {
        match self.direction {
            Direction::Forward => self.states.index_axis(ndarray::Axis(0), self.n_slices() - 1),
            Direction::Backward => self.states.index_axis(ndarray::Axis(0), 0),
        }
    }
}

/// Roll a batch through all `T` steps of the grid.
///
/// Forward: `states[0] = x_start`, `states[t+1]` steps with drift index `t`.
/// Backward: `states[T] = x_start`, `states[t]` steps from `states[t+1]`
/// with drift index `t+1` and step size γ_t.
pub fn rollout(
    role: &DriftRole,
    x_start: &Array2<f64>,
    grid: &TimeGrid,
    rng: &mut impl Rng,
    direction: Direction,
) -> Result<Trajectory, BridgeError> {
    rollout_with_eval(
        |x, idx| drift_eval(role, x, idx, grid),
        x_start,
        grid,
        rng,
        direction,
    )
}

/// [`rollout`] with the drift evaluation supplied as a closure of
/// `(batch, drift index)`. This is the seam tests use to log exactly which
/// indices a rollout consumes, and lets callers substitute instrumented or
/// cached drifts.
pub fn rollout_with_eval<F>(
    mut eval: F,
    x_start: &Array2<f64>,
    grid: &TimeGrid,
    rng: &mut impl Rng,
    direction: Direction,
) -> Result<Trajectory, BridgeError>
where
    F: FnMut(&Array2<f64>, usize) -> Result<Array2<f64>, BridgeError>,
{
    if x_start.iter().any(|v| !v.is_finite()) {
        return Err(BridgeError::Net(NnetError::NonFinite {
            what: "rollout start batch",
        }));
    }
    let t_steps = grid.t_steps();
    let n = x_start.nrows();
    let mut states = Array3::zeros((t_steps + 1, n, x_start.ncols()));

    match direction {
        Direction::Forward => {
            states.index_axis_mut(ndarray::Axis(0), 0).assign(x_start);
            let mut current = x_start.clone();
            for t in 0..t_steps {
                let drift = eval(&current, t)?;
                current = kernel_step(&current, &drift, grid.gamma(t), rng);
                if current.iter().any(|v| !v.is_finite()) {
                    return Err(BridgeError::Diverged { t });
                }
                states.index_axis_mut(ndarray::Axis(0), t + 1).assign(&current);
            }
        }
        Direction::Backward => {
            states.index_axis_mut(ndarray::Axis(0), t_steps).assign(x_start);
            let mut current = x_start.clone();
            for t in (0..t_steps).rev() {
                // The reversed kernel at slot t reads the drift at index t+1
                // and uses step size γ_t.
                let drift = eval(&current, t + 1)?;
                current = kernel_step(&current, &drift, grid.gamma(t), rng);
                if current.iter().any(|v| !v.is_finite()) {
                    return Err(BridgeError::Diverged { t });
                }
                states.index_axis_mut(ndarray::Axis(0), t).assign(&current);
            }
        }
    }
    Ok(Trajectory {
        states,
        direction,
        grid: grid.clone(),
    })
}
