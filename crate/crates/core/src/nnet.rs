//! Minimal dense-network core: forward evaluation, exact reverse-mode
//! backpropagation, and an adaptive-moment optimizer.
//!
//! The networks here parameterize residual drifts on 2D points. Time is fed
//! to the network as a fixed sinusoidal embedding of the normalized step
//! `τ = t/T`, concatenated to the point coordinates, so one network covers
//! all timesteps. Everything is plain `f64` on `ndarray` types with no
//! autodiff framework: the layer topology is fixed (dense chain, one hidden
//! activation, linear output), so the backward pass is written out by hand
//! and checked against central finite differences in the tests.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::DATA_DIM;

/// Errors from network construction, evaluation, and optimization.
#[derive(Debug, Error)]
pub enum NnetError {
    /// A batch operation received zero rows.
    #[error("empty batch: at least one row is required")]
    EmptyBatch,
    /// The input batch width does not match what the network expects.
    #[error("input has {got} columns, expected {expected}")]
    InputDim { expected: usize, got: usize },
    /// A timestep index lies outside `0..=total`.
    #[error("timestep {t} out of range for {total} total steps")]
    TimeOutOfRange { t: usize, total: usize },
    /// Consecutive layers have incompatible dimensions.
    #[error("layers do not chain at layer {layer}: previous output dim {prev_out}, input dim {this_in}")]
    LayerChain {
        layer: usize,
        prev_out: usize,
        this_in: usize,
    },
    /// A weight, input, gradient, or loss value is NaN or infinite.
    #[error("{what} contains a non-finite entry")]
    NonFinite { what: &'static str },
    /// Two structures that must be shape-congruent are not.
    #[error("shape mismatch between parameters and {what} at layer {layer}")]
    ShapeCongruence { what: &'static str, layer: usize },
    /// An invalid hyperparameter combination.
    #[error("invalid network configuration: {0}")]
    Config(String),
}

/// Hidden-layer activation function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Silu,
    Tanh,
}

impl Activation {
    /// Apply the activation to a pre-activation value.
    pub fn eval(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Silu => z * sigmoid(z),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative with respect to the pre-activation value.
    pub fn deriv(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = sigmoid(z);
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// One dense layer: `y = x · Wᵀ + b` with `W: [out × in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }
}

/// Weights and biases of a time-conditioned dense drift network.
///
/// The layer list chains dimensionally; for drift networks built by
/// [`ParameterSet::init_drift`] the first layer consumes
/// `DATA_DIM + time_embed_dim` inputs and the last layer emits `DATA_DIM`
/// outputs. Hidden layers use `activation`; the output layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub layers: Vec<DenseLayer>,
    pub time_embed_dim: usize,
    pub activation: Activation,
}

impl ParameterSet {
    /// Build a parameter set from explicit layers, validating that the
    /// dimensions chain and every entry is finite.
    pub fn from_layers(
        layers: Vec<DenseLayer>,
        time_embed_dim: usize,
        activation: Activation,
    ) -> Result<Self, NnetError> {
        if layers.is_empty() {
            return Err(NnetError::Config("network needs at least one layer".into()));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.out_dim() {
                return Err(NnetError::ShapeCongruence {
                    what: "bias",
                    layer: k,
                });
            }
            if k > 0 {
                let prev_out = layers[k - 1].out_dim();
                if layer.in_dim() != prev_out {
                    return Err(NnetError::LayerChain {
                        layer: k,
                        prev_out,
                        this_in: layer.in_dim(),
                    });
                }
            }
            if layer.weight.iter().any(|w| !w.is_finite())
                || layer.bias.iter().any(|b| !b.is_finite())
            {
                return Err(NnetError::NonFinite { what: "parameters" });
            }
        }
        Ok(ParameterSet {
            layers,
            time_embed_dim,
            activation,
        })
    }

    /// Initialize a drift network `(2 + embed) → hidden… → 2`.
    ///
    /// Hidden weights draw from the fan-in-scaled uniform range
    /// `±1/√fan_in`; all biases and the entire final layer start at zero, so
    /// a freshly initialized network is exactly the zero map and the drifts
    /// it parameterizes start as pure Gaussian steps.
    pub fn init_drift(
        hidden: &[usize],
        time_embed_dim: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self, NnetError> {
        if time_embed_dim == 0 || !time_embed_dim.is_multiple_of(2) {
            return Err(NnetError::Config(format!(
                "time_embed_dim must be a positive even number, got {time_embed_dim}"
            )));
        }
        if hidden.contains(&0) {
            return Err(NnetError::Config("hidden layer width must be positive".into()));
        }
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(DATA_DIM + time_embed_dim);
        dims.extend_from_slice(hidden);
        dims.push(DATA_DIM);

        let mut layers = Vec::with_capacity(dims.len() - 1);
        for k in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[k], dims[k + 1]);
            let last = k == dims.len() - 2;
            let bound = if last { 0.0 } else { 1.0 / (fan_in as f64).sqrt() };
            let mut weight = Array2::zeros((fan_out, fan_in));
            if !last {
                // Fill in row-major order so the draw sequence is pinned.
                for w in weight.iter_mut() {
                    *w = rng.random_range(-bound..bound);
                }
            }
            layers.push(DenseLayer {
                weight,
                bias: Array1::zeros(fan_out),
            });
        }
        ParameterSet::from_layers(layers, time_embed_dim, activation)
    }

    /// Total number of scalar parameters.
    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Input width of the first layer.
    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }
}

/// Sinusoidal embedding of a normalized time `τ ∈ [0, 1]` into `dim` values.
///
/// Uses the usual geometric frequency ladder: the i-th sin/cos pair has
/// argument `τ · 1000 / 10000^(i/(half−1))`. The base-10000 ladder is
/// deliberately non-dyadic so that uniform grids `τ = t/T` with power-of-two
/// `T` do not alias to repeated embedding values.
pub fn time_embedding(tau: f64, dim: usize) -> Vec<f64> {
    debug_assert!(dim.is_multiple_of(2) && dim > 0, "embedding dim must be even");
    let half = dim / 2;
    let mut emb = Vec::with_capacity(dim);
    for i in 0..half {
        let exponent = if half > 1 {
            i as f64 / (half - 1) as f64
        } else {
            0.0
        };
        let arg = tau * 1000.0 * 10000f64.powf(-exponent);
        emb.push(arg.sin());
        emb.push(arg.cos());
    }
    emb
}

/// Forward-pass record for the fixed MLP topology: the input (with time
/// embedding columns appended), every pre-activation, and every
/// post-activation, as needed by [`backprop`].
pub(crate) struct Tape {
    /// `acts[0]` is the embedded input; `acts[k]` for `k ≥ 1` is layer k's
    /// output after activation (last layer linear). Length `n_layers + 1`.
    pub(crate) acts: Vec<Array2<f64>>,
    /// Pre-activations `z_k` per layer. Length `n_layers`.
    pub(crate) zs: Vec<Array2<f64>>,
}

impl Tape {
    pub(crate) fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("tape always holds the input row")
    }
}

/// Run the network on a batch with a per-row normalized time, recording the
/// tape for backprop. `x` is `[n × 2]`, `taus[i]` the time for row i.
pub(crate) fn forward_tape(
    params: &ParameterSet,
    x: ArrayView2<'_, f64>,
    taus: &[f64],
) -> Result<Tape, NnetError> {
    let n = x.nrows();
    if n == 0 {
        return Err(NnetError::EmptyBatch);
    }
    if x.ncols() != DATA_DIM {
        return Err(NnetError::InputDim {
            expected: DATA_DIM,
            got: x.ncols(),
        });
    }
    assert_eq!(taus.len(), n, "one tau per batch row");
    let in_dim = DATA_DIM + params.time_embed_dim;
    if params.in_dim() != in_dim {
        return Err(NnetError::InputDim {
            expected: params.in_dim(),
            got: in_dim,
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(NnetError::NonFinite { what: "input batch" });
    }

    // Assemble [x | emb(τ)] row by row.
    let mut input = Array2::zeros((n, in_dim));
    for (i, row) in x.outer_iter().enumerate() {
        input[[i, 0]] = row[0];
        input[[i, 1]] = row[1];
        for (j, e) in time_embedding(taus[i], params.time_embed_dim).into_iter().enumerate() {
            input[[i, DATA_DIM + j]] = e;
        }
    }

    let n_layers = params.layers.len();
    let mut acts = Vec::with_capacity(n_layers + 1);
    let mut zs = Vec::with_capacity(n_layers);
    acts.push(input);
    for (k, layer) in params.layers.iter().enumerate() {
        let z = acts[k].dot(&layer.weight.t()) + &layer.bias;
        let a = if k + 1 == n_layers {
            z.clone() // linear output layer
        } else {
            z.mapv(|v| params.activation.eval(v))
        };
        zs.push(z);
        acts.push(a);
    }
    Ok(Tape { acts, zs })
}

/// Per-entry partial derivatives of a scalar loss, shape-congruent with the
/// [`ParameterSet`] the loss was evaluated at.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradient {
    /// All-zero gradient congruent with `params`.
    pub fn zeros_like(params: &ParameterSet) -> Self {
        Gradient {
            layers: params
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weight.dim()), Array1::zeros(l.bias.len())))
                .collect(),
        }
    }

    /// True when every entry is finite.
    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().all(|v| v.is_finite()) && b.iter().all(|v| v.is_finite()))
    }

    /// In-place `self += other`, used to accumulate loss-term gradients.
    pub fn add_assign(&mut self, other: &Gradient) {
        assert_eq!(self.layers.len(), other.layers.len());
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }

    fn congruent_with(&self, params: &ParameterSet) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|((w, b), l)| w.dim() == l.weight.dim() && b.len() == l.bias.len())
    }
}

/// Reverse-mode accumulation through the tape: given `d_out = ∂L/∂output`
/// (shape `[n × 2]`), produce `∂L/∂θ` for every parameter.
pub(crate) fn backprop(params: &ParameterSet, tape: &Tape, d_out: &Array2<f64>) -> Gradient {
    let n_layers = params.layers.len();
    assert_eq!(tape.acts.len(), n_layers + 1);
    let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(n_layers);

    // delta starts at the linear output; walk layers back to front.
    let mut delta = d_out.clone();
    for k in (0..n_layers).rev() {
        if k + 1 != n_layers {
            // Hidden layer: fold in the activation derivative at z_k.
            delta.zip_mut_with(&tape.zs[k], |d, &z| *d *= params.activation.deriv(z));
        }
        let dw = delta.t().dot(&tape.acts[k]);
        let db = delta.sum_axis(Axis(0));
        grads.push((dw, db));
        if k > 0 {
            delta = delta.dot(&params.layers[k].weight);
        }
    }
    grads.reverse();
    Gradient { layers: grads }
}

/// Evaluate the drift network on a batch at one shared timestep.
///
/// Time enters as the sinusoidal embedding of `t/total` concatenated to the
/// coordinates. The result is a deterministic function of
/// `(params, x, t, total)`.
pub fn net_forward(
    params: &ParameterSet,
    x: &Array2<f64>,
    t: usize,
    total: usize,
) -> Result<Array2<f64>, NnetError> {
    if total == 0 || t > total {
        return Err(NnetError::TimeOutOfRange { t, total });
    }
    let taus = vec![t as f64 / total as f64; x.nrows()];
    let tape = forward_tape(params, x.view(), &taus)?;
    Ok(tape.output().clone())
}

/// Batch forward with an independent timestep per row (`ts[i]/total`), used
/// by training code whose minibatches mix timesteps.
pub fn net_forward_multi(
    params: &ParameterSet,
    x: &Array2<f64>,
    ts: &[usize],
    total: usize,
) -> Result<Array2<f64>, NnetError> {
    if total == 0 || ts.iter().any(|&t| t > total) {
        let bad = ts.iter().copied().find(|&t| t > total).unwrap_or(0);
        return Err(NnetError::TimeOutOfRange { t: bad, total });
    }
    let taus: Vec<f64> = ts.iter().map(|&t| t as f64 / total as f64).collect();
    let tape = forward_tape(params, x.view(), &taus)?;
    Ok(tape.output().clone())
}

/// Mean-squared regression loss and its exact gradient.
///
/// `loss = meanᵢ ‖net(xᵢ, t) − targetᵢ‖²`, the mean over the batch of the
/// squared Euclidean norm of the residual; the gradient comes from one
/// reverse-mode sweep.
pub fn loss_and_grad(
    params: &ParameterSet,
    inputs: &Array2<f64>,
    t: usize,
    total: usize,
    targets: &Array2<f64>,
) -> Result<(f64, Gradient), NnetError> {
    if inputs.nrows() == 0 {
        return Err(NnetError::EmptyBatch);
    }
    if inputs.dim() != targets.dim() {
        return Err(NnetError::InputDim {
            expected: inputs.ncols(),
            got: targets.ncols(),
        });
    }
    if total == 0 || t > total {
        return Err(NnetError::TimeOutOfRange { t, total });
    }
    let n = inputs.nrows() as f64;
    let taus = vec![t as f64 / total as f64; inputs.nrows()];
    let tape = forward_tape(params, inputs.view(), &taus)?;
    let resid = tape.output() - targets;
    let loss = resid.iter().map(|r| r * r).sum::<f64>() / n;
    let d_out = resid.mapv(|r| 2.0 * r / n);
    Ok((loss, backprop(params, &tape, &d_out)))
}

/// Adaptive-moment hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second-moment accumulators plus step counter for the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<(Array2<f64>, Array1<f64>)>,
    pub v: Vec<(Array2<f64>, Array1<f64>)>,
    pub step: u64,
    pub hyper: AdamHyper,
}

impl OptimizerState {
    /// Zeroed moments at step 0, congruent with `params`.
    pub fn fresh(params: &ParameterSet, hyper: AdamHyper) -> Self {
        let zeros: Vec<(Array2<f64>, Array1<f64>)> = params
            .layers
            .iter()
            .map(|l| (Array2::zeros(l.weight.dim()), Array1::zeros(l.bias.len())))
            .collect();
        OptimizerState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            hyper,
        }
    }

    fn congruent_with(&self, params: &ParameterSet) -> bool {
        let ok = |acc: &Vec<(Array2<f64>, Array1<f64>)>| {
            acc.len() == params.layers.len()
                && acc
                    .iter()
                    .zip(&params.layers)
                    .all(|((w, b), l)| w.dim() == l.weight.dim() && b.len() == l.bias.len())
        };
        ok(&self.m) && ok(&self.v)
    }
}

/// One adaptive-moment update with bias correction.
///
/// Returns fresh `(parameters, state)` values; inputs are untouched, so a
/// caller can keep the pre-step parameters (e.g. for frozen copies).
pub fn optimizer_step(
    params: &ParameterSet,
    grad: &Gradient,
    state: &OptimizerState,
) -> Result<(ParameterSet, OptimizerState), NnetError> {
    if !grad.congruent_with(params) {
        return Err(NnetError::ShapeCongruence {
            what: "gradient",
            layer: 0,
        });
    }
    if !state.congruent_with(params) {
        return Err(NnetError::ShapeCongruence {
            what: "optimizer state",
            layer: 0,
        });
    }
    if !grad.is_finite() {
        return Err(NnetError::NonFinite { what: "gradient" });
    }

    let h = state.hyper;
    let step = state.step + 1;
    let bias1 = 1.0 - h.beta1.powi(step as i32);
    let bias2 = 1.0 - h.beta2.powi(step as i32);

    let mut new_params = params.clone();
    let mut new_state = state.clone();
    new_state.step = step;

    for (k, layer) in new_params.layers.iter_mut().enumerate() {
        let (gw, gb) = &grad.layers[k];
        let (mw, mb) = &mut new_state.m[k];
        let (vw, vb) = &mut new_state.v[k];

        mw.zip_mut_with(gw, |m, &g| *m = h.beta1 * *m + (1.0 - h.beta1) * g);
        mb.zip_mut_with(gb, |m, &g| *m = h.beta1 * *m + (1.0 - h.beta1) * g);
        vw.zip_mut_with(gw, |v, &g| *v = h.beta2 * *v + (1.0 - h.beta2) * g * g);
        vb.zip_mut_with(gb, |v, &g| *v = h.beta2 * *v + (1.0 - h.beta2) * g * g);

        ndarray::Zip::from(&mut layer.weight)
            .and(&*mw)
            .and(&*vw)
            .for_each(|w, &m, &v| {
                *w -= h.lr * (m / bias1) / ((v / bias2).sqrt() + h.eps);
            });
        ndarray::Zip::from(&mut layer.bias)
            .and(&*mb)
            .and(&*vb)
            .for_each(|b, &m, &v| {
                *b -= h.lr * (m / bias1) / ((v / bias2).sqrt() + h.eps);
            });
    }
    Ok((new_params, new_state))
}

/// Exponential moving average of two congruent parameter sets:
/// `decay · ema + (1 − decay) · params`.
pub fn ema_blend(
    ema: &ParameterSet,
    params: &ParameterSet,
    decay: f64,
) -> Result<ParameterSet, NnetError> {
    if ema.layers.len() != params.layers.len() {
        return Err(NnetError::ShapeCongruence {
            what: "EMA parameters",
            layer: 0,
        });
    }
    if !(0.0..=1.0).contains(&decay) {
        return Err(NnetError::Config(format!("EMA decay must lie in [0,1], got {decay}")));
    }
    let mut out = ema.clone();
    for (k, layer) in out.layers.iter_mut().enumerate() {
        let src = &params.layers[k];
        if layer.weight.dim() != src.weight.dim() {
            return Err(NnetError::ShapeCongruence {
                what: "EMA parameters",
                layer: k,
            });
        }
        layer
            .weight
            .zip_mut_with(&src.weight, |e, &p| *e = decay * *e + (1.0 - decay) * p);
        layer
            .bias
            .zip_mut_with(&src.bias, |e, &p| *e = decay * *e + (1.0 - decay) * p);
    }
    Ok(out)
}
