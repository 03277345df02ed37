//! The iterative-proportional-fitting training loop.
//!
//! Training alternates two half-bridges. The *backward* half-stage freezes
//! the forward process, rolls trajectory caches under it, and regresses the
//! backward map `B_{t+1}(x) = x + γ_t·b_{t+1}(x)` onto the target
//!
//! ```text
//! backward_target = x_t + γ_t (f_t(x_t) − f_t(x_{t+1}))
//! ```
//!
//! over cached transitions `(x_t, x_{t+1})`; the *forward* half-stage is the
//! mirror image with `forward_target = x_{t+1} + γ_t (b_{t+1}(x_{t+1}) −
//! b_{t+1}(x_t))`. One completed stage is a backward half followed by a
//! forward half.
//!
//! Two optional regularizers extend the plain regression loss, weighted by
//! `alpha` and `beta_reg`:
//!
//! - the `alpha` term penalizes the squared step displacement
//!   `‖γ_t·net(x, ·)‖²` — the per-step transport cost of the learned map;
//! - the `beta_reg` term anchors the map value to the observed endpoint of
//!   the cached transition (`x_t` when training backward, `x_{t+1}` when
//!   training forward), a variance-reduction pull toward the empirical
//!   transition whose conditional mean coincides with the plain target.
//!
//! Both weights default to 0, and zero-weight terms are skipped rather than
//! added, so the regularized loss degenerates tos the plain one bit for bit.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bridge::{
    self, BridgeError, Direction, DriftRole, TimeGrid,
};
use crate::nnet::{
    self, AdamHyper, Activation, Gradient, NnetError, OptimizerState, ParameterSet,
};
use crate::toydata::{self, ToySpec, ToydataError};

/// Errors from configuration, training, and cache handling.
#[derive(Debug, Error)]
pub enum IpfError {
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Net(#[from] NnetError),
    #[error(transparent)]
    Data(#[from] ToydataError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("stale cache: minibatch stamped {got:?}, frozen process is {expected:?}")]
    StaleCache { expected: ProcessStamp, got: ProcessStamp },
    #[error("non-finite loss at stage {stage}, {direction:?} half-stage, iteration {iter}")]
    Diverged {
        stage: usize,
        direction: Direction,
        iter: usize,
    },
    #[error("observer failed: {0}")]
    Observer(String),
}

/// Identity of the process that produced a batch of trajectories: its
/// direction and how many half-stages it had completed at production time
/// (epoch 0 is the untrained initialization).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessStamp {
    pub direction: Direction,
    pub epoch: u64,
}

/// A frozen process handed to the loss functions: its drift plus the stamp
/// minibatches must carry to be accepted.
#[derive(Debug, Clone)]
pub struct FrozenProcess {
    pub role: DriftRole,
    pub stamp: ProcessStamp,
}

/// Fixed-capacity store of trajectories rolled under one frozen process.
#[derive(Debug, Clone)]
pub struct ReplayCache {
    /// `(T+1) × n × 2` states, always indexed in forward time order.
    pub states: Array3<f64>,
    pub stamp: ProcessStamp,
}

impl ReplayCache {
    pub fn n_trajectories(&self) -> usize {
        self.states.dim().1
    }

    /// Draw a minibatch of transitions, uniform over (trajectory, t) pairs,
    /// sampled with replacement in a fixed per-slot order.
    pub fn sample_minibatch(&self, batch_size: usize, rng: &mut impl Rng) -> Minibatch {
        let t_steps = self.states.dim().0 - 1;
        let n = self.n_trajectories();
        let mut x_t = Array2::zeros((batch_size, 2));
        let mut x_t1 = Array2::zeros((batch_size, 2));
        let mut ts = Vec::with_capacity(batch_size);
        for b in 0..batch_size {
            let traj = rng.random_range(0..n);
            let t = rng.random_range(0..t_steps);
            for j in 0..2 {
                x_t[[b, j]] = self.states[[t, traj, j]];
                x_t1[[b, j]] = self.states[[t + 1, traj, j]];
            }
            ts.push(t);
        }
        Minibatch {
            x_t,
            x_t1,
            ts,
            stamp: self.stamp,
        }
    }
}

/// One training minibatch: consecutive state pairs `(x_t, x_{t+1})` with
/// their step indices and the producing cache's stamp.
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub x_t: Array2<f64>,
    pub x_t1: Array2<f64>,
    pub ts: Vec<usize>,
    pub stamp: ProcessStamp,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }
}

/// Architecture hyperparameters of the two drift networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetHyper {
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub activation: Activation,
}

impl Default for NetHyper {
    fn default() -> Self {
        NetHyper {
            hidden: vec![128, 128, 128],
            time_embed_dim: 32,
            activation: Activation::Silu,
        }
    }
}

/// What the bridge connects: a data distribution to the Gaussian latent, or
/// a source distribution to a target distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    Unconditional { data: ToySpec },
    Translation { source: ToySpec, target: ToySpec },
}

impl Task {
    /// Shared divisor applied to data-side samples so training happens in
    /// standardized units. For translation both sides share the larger
    /// constant so they live in one ambient scale; the Gaussian latent is
    /// left untouched.
    pub fn standardization_constant(&self) -> f64 {
        match self {
            Task::Unconditional { data } => data.standardization_constant(),
            Task::Translation { source, target } => source
                .standardization_constant()
                .max(target.standardization_constant()),
        }
    }

    /// The analytic drift the forward process starts from: a
    /// variance-preserving noising drift toward the latent for unconditional
    /// tasks, plain Brownian motion for translation (no natural reference).
    pub fn initial_forward_role(&self) -> DriftRole {
        match self {
            Task::Unconditional { .. } => DriftRole::VpLinear {
                beta_min: 0.1,
                beta_max: 3.0,
            },
            Task::Translation { .. } => DriftRole::Zero,
        }
    }

    /// Sample start points, in standardized units, for a rollout of the
    /// given direction: forward rollouts start on the x_0 side, backward
    /// rollouts on the x_T side.
    pub fn sample_start(
        &self,
        direction: Direction,
        n: usize,
        rng: &mut impl Rng,
    ) -> Result<Array2<f64>, IpfError> {
        let constant = self.standardization_constant();
        let (spec, divisor) = match (self, direction) {
            (Task::Unconditional { data }, Direction::Forward) => (*data, constant),
            (Task::Unconditional { .. }, Direction::Backward) => {
                (ToySpec::standard_gaussian(), 1.0)
            }
            (Task::Translation { source, .. }, Direction::Forward) => (*source, constant),
            (Task::Translation { target, .. }, Direction::Backward) => (*target, constant),
        };
        let mut batch = toydata::sample(&spec, n, rng)?;
        if divisor != 1.0 {
            batch.mapv_inplace(|v| v / divisor);
        }
        Ok(batch)
    }
}

/// Full training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub grid: TimeGrid,
    pub alpha: f64,
    pub beta_reg: f64,
    pub ipf_stages: usize,
    pub iters_backward: usize,
    pub iters_forward: usize,
    pub batch_size: usize,
    pub cache_trajectories: usize,
    pub cache_refresh_every: usize,
    pub net: NetHyper,
    pub optim: AdamHyper,
    /// Multiplier applied to the learning rate at each stage boundary:
    /// stage `s` (1-based) trains at `optim.lr · lr_stage_decay^(s−1)`.
    /// `1.0` keeps the rate constant.
    #[serde(default = "default_lr_stage_decay")]
    pub lr_stage_decay: f64,
    /// EMA decay for the evaluation copies of the weights; `None` disables.
    pub ema_decay: Option<f64>,
    pub task: Task,
    pub seed: u64,
}

fn default_lr_stage_decay() -> f64 {
    1.0
}

impl TrainConfig {
    /// Defaults for a task on a grid: regularizers off, 10 stages, batch
    /// 128, cache 10·batch refreshed every 500 iterations, EMA 0.999. The
    /// forward budget is half the backward one for unconditional tasks and
    /// symmetric for translation.
    pub fn defaults(task: Task, grid: TimeGrid) -> Self {
        let iters_backward = 4000;
        let iters_forward = match task {
            Task::Unconditional { .. } => iters_backward / 2,
            Task::Translation { .. } => iters_backward,
        };
        TrainConfig {
            grid,
            alpha: 0.0,
            beta_reg: 0.0,
            ipf_stages: 10,
            iters_backward,
            iters_forward,
            batch_size: 128,
            cache_trajectories: 1280,
            cache_refresh_every: 500,
            net: NetHyper::default(),
            optim: AdamHyper::default(),
            lr_stage_decay: 1.0,
            ema_decay: Some(0.999),
            task,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), IpfError> {
        let positive = [
            ("ipf_stages", self.ipf_stages),
            ("iters_backward", self.iters_backward),
            ("iters_forward", self.iters_forward),
            ("batch_size", self.batch_size),
            ("cache_trajectories", self.cache_trajectories),
            ("cache_refresh_every", self.cache_refresh_every),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(IpfError::Config(format!("{name} must be ≥ 1")));
            }
        }
        for (name, value) in [("alpha", self.alpha), ("beta_reg", self.beta_reg)] {
            if value < 0.0 || !value.is_finite() {
                return Err(IpfError::Config(format!(
                    "{name} must be a non-negative finite number, got {value}"
                )));
            }
        }
        if let Some(decay) = self.ema_decay {
            if !(0.0..1.0).contains(&decay) {
                return Err(IpfError::Config(format!(
                    "ema_decay must lie in [0, 1), got {decay}"
                )));
            }
        }
        if self.optim.lr <= 0.0 || !self.optim.lr.is_finite() {
            return Err(IpfError::Config(format!(
                "learning rate must be positive, got {}",
                self.optim.lr
            )));
        }
        if self.lr_stage_decay <= 0.0 || self.lr_stage_decay > 1.0 || self.lr_stage_decay.is_nan() {
            return Err(IpfError::Config(format!(
                "lr_stage_decay must lie in (0, 1], got {}",
                self.lr_stage_decay
            )));
        }
        if self.net.time_embed_dim == 0 || !self.net.time_embed_dim.is_multiple_of(2) {
            return Err(IpfError::Config(format!(
                "time_embed_dim must be positive and even, got {}",
                self.net.time_embed_dim
            )));
        }
        match &self.task {
            Task::Unconditional { data } => data.validate()?,
            Task::Translation { source, target } => {
                source.validate()?;
                target.validate()?;
            }
        }
        Ok(())
    }
}

/// One direction's mutable training state.
#[derive(Debug, Clone)]
pub struct ProcessState {
    pub params: ParameterSet,
    /// Exponential moving average of `params`, used for evaluation rollouts.
    pub ema: ParameterSet,
    pub opt: OptimizerState,
    /// Completed half-stages; 0 means untrained.
    pub epoch: u64,
}

/// The alternation state: stage counter, both processes, the analytic
/// forward initialization, and the replay caches keyed by producer.
#[derive(Debug, Clone)]
pub struct IPFState {
    pub stage: usize,
    pub forward: ProcessState,
    pub backward: ProcessState,
    /// Drift the forward process uses until its network first trains.
    pub forward_init: DriftRole,
    /// Cache of forward-produced trajectories (trains the backward net).
    pub forward_cache: Option<ReplayCache>,
    /// Cache of backward-produced trajectories (trains the forward net).
    pub backward_cache: Option<ReplayCache>,
}

impl IPFState {
    /// Fresh state: both networks zero-map initialized (forward first, then
    /// backward, so the draw order is pinned), caches empty, stage 0.
    pub fn init(cfg: &TrainConfig, rng: &mut impl Rng) -> Result<Self, IpfError> {
        let forward_params = ParameterSet::init_drift(
            &cfg.net.hidden,
            cfg.net.time_embed_dim,
            cfg.net.activation,
            rng,
        )?;
        let backward_params = ParameterSet::init_drift(
            &cfg.net.hidden,
            cfg.net.time_embed_dim,
            cfg.net.activation,
            rng,
        )?;
        let process = |params: ParameterSet| ProcessState {
            ema: params.clone(),
            opt: OptimizerState::fresh(&params, cfg.optim),
            params,
            epoch: 0,
        };
        Ok(IPFState {
            stage: 0,
            forward: process(forward_params),
            backward: process(backward_params),
            forward_init: cfg.task.initial_forward_role(),
            forward_cache: None,
            backward_cache: None,
        })
    }

    /// The process of `direction` viewed as a frozen drift: the analytic
    /// initialization until the forward net first trains, the learned
    /// network afterwards. (A freshly initialized network is the zero map,
    /// so the untrained backward process is Brownian by construction.)
    pub fn frozen_role(&self, direction: Direction) -> DriftRole {
        match direction {
            Direction::Forward if self.forward.epoch == 0 => self.forward_init.clone(),
            Direction::Forward => DriftRole::Learned(self.forward.params.clone()),
            Direction::Backward => DriftRole::Learned(self.backward.params.clone()),
        }
    }

    /// Stamp identifying `direction`'s process right now.
    pub fn frozen_stamp(&self, direction: Direction) -> ProcessStamp {
        let epoch = match direction {
            Direction::Forward => self.forward.epoch,
            Direction::Backward => self.backward.epoch,
        };
        ProcessStamp { direction, epoch }
    }

    fn process_mut(&mut self, direction: Direction) -> &mut ProcessState {
        match direction {
            Direction::Forward => &mut self.forward,
            Direction::Backward => &mut self.backward,
        }
    }

    fn cache_slot(&mut self, producer: Direction) -> &mut Option<ReplayCache> {
        match producer {
            Direction::Forward => &mut self.forward_cache,
            Direction::Backward => &mut self.backward_cache,
        }
    }
}

/// Regression target for the backward map at `x_{t+1}`:
/// `x_t + γ_t (f_t(x_t) − f_t(x_{t+1}))` under the frozen forward drift.
/// With a drift-free frozen forward this is exactly `x_t`.
pub fn backward_target(
    frozen_forward: &DriftRole,
    x_t: &Array2<f64>,
    x_t1: &Array2<f64>,
    t: usize,
    grid: &TimeGrid,
) -> Result<Array2<f64>, IpfError> {
    let ts = vec![t; x_t.nrows()];
    backward_target_multi(frozen_forward, x_t, x_t1, &ts, grid)
}

/// [`backward_target`] with a per-row step index.
pub fn backward_target_multi(
    frozen_forward: &DriftRole,
    x_t: &Array2<f64>,
    x_t1: &Array2<f64>,
    ts: &[usize],
    grid: &TimeGrid,
) -> Result<Array2<f64>, IpfError> {
    let f_at_t = bridge::drift_eval_multi(frozen_forward, x_t, ts, grid)?;
    let f_at_t1 = bridge::drift_eval_multi(frozen_forward, x_t1, ts, grid)?;
    let mut target = x_t.clone();
    for (i, mut row) in target.outer_iter_mut().enumerate() {
        let gamma = grid.gamma(ts[i]);
        for j in 0..row.len() {
            row[j] += gamma * (f_at_t[[i, j]] - f_at_t1[[i, j]]);
        }
    }
    Ok(target)
}

/// Regression target for the forward map at `x_t`:
/// `x_{t+1} + γ_t (b_{t+1}(x_{t+1}) − b_{t+1}(x_t))` under the frozen
/// backward drift (evaluated at index t+1 for both arguments). With a
/// drift-free frozen backward this is exactly `x_{t+1}`.
pub fn forward_target(
    frozen_backward: &DriftRole,
    x_t1: &Array2<f64>,
    x_t: &Array2<f64>,
    t: usize,
    grid: &TimeGrid,
) -> Result<Array2<f64>, IpfError> {
    let ts = vec![t; x_t1.nrows()];
    forward_target_multi(frozen_backward, x_t1, x_t, &ts, grid)
}

/// [`forward_target`] with a per-row step index.
pub fn forward_target_multi(
    frozen_backward: &DriftRole,
    x_t1: &Array2<f64>,
    x_t: &Array2<f64>,
    ts: &[usize],
    grid: &TimeGrid,
) -> Result<Array2<f64>, IpfError> {
    let ts_next: Vec<usize> = ts.iter().map(|&t| t + 1).collect();
    let b_at_t1 = bridge::drift_eval_multi(frozen_backward, x_t1, &ts_next, grid)?;
    let b_at_t = bridge::drift_eval_multi(frozen_backward, x_t, &ts_next, grid)?;
    let mut target = x_t1.clone();
    for (i, mut row) in target.outer_iter_mut().enumerate() {
        let gamma = grid.gamma(ts[i]);
        for j in 0..row.len() {
            row[j] += gamma * (b_at_t1[[i, j]] - b_at_t[[i, j]]);
        }
    }
    Ok(target)
}

/// Plain half-bridge regression loss and gradient: the regularized loss at
/// neutral weights (this is literally [`rsb_loss`] with both weights 0, so
/// the degeneracy is structural).
pub fn dsb_loss(
    trainee: &ParameterSet,
    frozen: &FrozenProcess,
    minibatch: &Minibatch,
    direction: Direction,
    grid: &TimeGrid,
) -> Result<(f64, Gradient), IpfError> {
    rsb_loss(trainee, frozen, minibatch, direction, grid, 0.0, 0.0)
}

/// Regularized half-bridge loss.
///
/// `direction` names the trainee. Training the backward net evaluates it at
/// `x_{t+1}` with drift index `t+1` against [`backward_target`]; training
/// the forward net evaluates it at `x_t` with index `t` against
/// [`forward_target`]. On top of the squared-residual mean, `alpha` weights
/// the squared step displacement `‖γ_t·net‖²` and `beta_reg` weights the
/// squared distance of the map value from the observed endpoint of the
/// cached transition. Zero-weight terms are skipped entirely.
pub fn rsb_loss(
    trainee: &ParameterSet,
    frozen: &FrozenProcess,
    minibatch: &Minibatch,
    direction: Direction,
    grid: &TimeGrid,
    alpha: f64,
    beta_reg: f64,
) -> Result<(f64, Gradient), IpfError> {
    if minibatch.is_empty() {
        return Err(IpfError::Net(NnetError::EmptyBatch));
    }
    if frozen.stamp.direction != direction.other() {
        return Err(IpfError::Config(format!(
            "training {direction:?} requires a frozen {:?} process, got {:?}",
            direction.other(),
            frozen.stamp.direction
        )));
    }
    if minibatch.stamp != frozen.stamp {
        return Err(IpfError::StaleCache {
            expected: frozen.stamp,
            got: minibatch.stamp,
        });
    }
    if alpha < 0.0 || alpha.is_nan() || beta_reg < 0.0 || beta_reg.is_nan() {
        return Err(IpfError::Config(format!(
            "regularization weights must be non-negative, got alpha={alpha}, beta_reg={beta_reg}"
        )));
    }

    let n = minibatch.len();
    let t_steps = grid.t_steps();
    // Trainee inputs, drift indices, regression target, and anchor point.
    let (inputs, net_ts, target, anchor) = match direction {
        Direction::Backward => {
            let net_ts: Vec<usize> = minibatch.ts.iter().map(|&t| t + 1).collect();
            let target = backward_target_multi(
                &frozen.role,
                &minibatch.x_t,
                &minibatch.x_t1,
                &minibatch.ts,
                grid,
            )?;
            (&minibatch.x_t1, net_ts, target, &minibatch.x_t)
        }
        Direction::Forward => {
            let target = forward_target_multi(
                &frozen.role,
                &minibatch.x_t1,
                &minibatch.x_t,
                &minibatch.ts,
                grid,
            )?;
            (&minibatch.x_t, minibatch.ts.clone(), target, &minibatch.x_t1)
        }
    };

    let taus: Vec<f64> = net_ts.iter().map(|&t| t as f64 / t_steps as f64).collect();
    let tape = nnet::forward_tape(trainee, inputs.view(), &taus)?;
    let y = tape.output();
    let gammas: Vec<f64> = minibatch.ts.iter().map(|&t| grid.gamma(t)).collect();

    // Map value F(x) = x + γ·net(x), shared by every loss term.
    let mut map = inputs.clone();
    for (i, mut row) in map.outer_iter_mut().enumerate() {
        for j in 0..row.len() {
            row[j] += gammas[i] * y[[i, j]];
        }
    }

    let nf = n as f64;
    let mut loss = 0.0;
    let mut d_y = Array2::zeros(y.dim());

    // Plain regression term: mean‖map − target‖².
    for i in 0..n {
        for j in 0..2 {
            let r = map[[i, j]] - target[[i, j]];
            loss += r * r / nf;
            d_y[[i, j]] += 2.0 * gammas[i] * r / nf;
        }
    }

    // Step-displacement penalty: α · mean‖γ·net‖².
    if alpha != 0.0 {
        for i in 0..n {
            for j in 0..2 {
                let d = gammas[i] * y[[i, j]];
                loss += alpha * d * d / nf;
                d_y[[i, j]] += alpha * 2.0 * gammas[i] * d / nf;
            }
        }
    }

    // Anchor penalty: β · mean‖map − observed endpoint‖².
    if beta_reg != 0.0 {
        for i in 0..n {
            for j in 0..2 {
                let r = map[[i, j]] - anchor[[i, j]];
                loss += beta_reg * r * r / nf;
                d_y[[i, j]] += beta_reg * 2.0 * gammas[i] * r / nf;
            }
        }
    }

    let grad = nnet::backprop(trainee, &tape, &d_y);
    Ok((loss, grad))
}

/// Roll a fresh cache of `n_trajectories` full trajectories under the
/// frozen process, starting from points drawn by `endpoint_sampler`, and
/// stamp it with the frozen identity.
pub fn refresh_cache<R, F>(
    frozen: &FrozenProcess,
    mut endpoint_sampler: F,
    grid: &TimeGrid,
    n_trajectories: usize,
    rng: &mut R,
) -> Result<ReplayCache, IpfError>
where
    R: Rng,
    F: FnMut(usize, &mut R) -> Result<Array2<f64>, IpfError>,
{
    let starts = endpoint_sampler(n_trajectories, rng)?;
    let traj = bridge::rollout(&frozen.role, &starts, grid, rng, frozen.stamp.direction)?;
    Ok(ReplayCache {
        states: traj.states,
        stamp: frozen.stamp,
    })
}

/// Observation hooks for the training loop. All methods default to no-ops;
/// `on_stage` may abort training by returning an error message.
pub trait TrainObserver {
    fn on_iteration(&mut self, _stage: usize, _direction: Direction, _iter: usize, _loss: f64) {}
    fn on_half_stage(&mut self, _stage: usize, _direction: Direction, _state: &IPFState) {}
    fn on_stage(&mut self, _completed_stage: usize, _state: &IPFState) -> Result<(), String> {
        Ok(())
    }
}

/// Observer that records nothing.
pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

/// Run one half-stage: freeze `direction.other()`, then take
/// `iters_{direction}` optimizer steps of [`rsb_loss`] on cache minibatches,
/// refreshing the cache every `cache_refresh_every` iterations (including
/// iteration 0). Returns the state with the trainee's parameters, EMA, and
/// epoch advanced.
pub fn ipf_half_stage<R: Rng, O: TrainObserver>(
    mut state: IPFState,
    direction: Direction,
    cfg: &TrainConfig,
    observer: &mut O,
    rng: &mut R,
) -> Result<IPFState, IpfError> {
    let iters = match direction {
        Direction::Backward => cfg.iters_backward,
        Direction::Forward => cfg.iters_forward,
    };
    if iters == 0 {
        return Err(IpfError::Config("half-stage iteration count must be ≥ 1".into()));
    }
    let frozen_dir = direction.other();
    let frozen = FrozenProcess {
        role: state.frozen_role(frozen_dir),
        stamp: state.frozen_stamp(frozen_dir),
    };

    for iter in 0..iters {
        if iter % cfg.cache_refresh_every == 0 {
            let cache = refresh_cache(
                &frozen,
                |n, rng| cfg.task.sample_start(frozen_dir, n, rng),
                &cfg.grid,
                cfg.cache_trajectories,
                rng,
            )?;
            *state.cache_slot(frozen_dir) = Some(cache);
        }
        let minibatch = state
            .cache_slot(frozen_dir)
            .as_ref()
            .expect("cache refreshed at iteration 0")
            .sample_minibatch(cfg.batch_size, rng);

        let trainee = state.process_mut(direction);
        let (loss, grad) = rsb_loss(
            &trainee.params,
            &frozen,
            &minibatch,
            direction,
            &cfg.grid,
            cfg.alpha,
            cfg.beta_reg,
        )?;
        if !loss.is_finite() {
            return Err(IpfError::Diverged {
                stage: state.stage,
                direction,
                iter,
            });
        }
        let (params, opt) = nnet::optimizer_step(&trainee.params, &grad, &trainee.opt)?;
        trainee.params = params;
        trainee.opt = opt;
        if let Some(decay) = cfg.ema_decay {
            trainee.ema = nnet::ema_blend(&trainee.ema, &trainee.params, decay)?;
        } else {
            trainee.ema = trainee.params.clone();
        }
        observer.on_iteration(state.stage, direction, iter, loss);
    }

    state.process_mut(direction).epoch += 1;
    observer.on_half_stage(state.stage, direction, &state);
    Ok(state)
}

/// Full IPF training: `ipf_stages` alternations of a backward half-stage
/// followed by a forward half-stage, all randomness drawn from one
/// sequential generator seeded by `cfg.seed`.
pub fn train<O: TrainObserver>(cfg: &TrainConfig, observer: &mut O) -> Result<IPFState, IpfError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = IPFState::init(cfg, &mut rng)?;
    for stage_idx in 0..cfg.ipf_stages {
        let stage_lr = cfg.optim.lr * cfg.lr_stage_decay.powi(stage_idx as i32);
        state.backward.opt.hyper.lr = stage_lr;
        state.forward.opt.hyper.lr = stage_lr;
        state = ipf_half_stage(state, Direction::Backward, cfg, observer, &mut rng)?;
        state = ipf_half_stage(state, Direction::Forward, cfg, observer, &mut rng)?;
        state.stage += 1;
        observer
            .on_stage(state.stage, &state)
            .map_err(IpfError::Observer)?;
    }
    Ok(state)
}
