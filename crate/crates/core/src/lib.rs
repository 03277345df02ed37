//! Core library for discrete-time diffusion Schrödinger bridges on 2D toy data.
//!
//! The crate is organized bottom-up:
//!
//! - [`nnet`] — a minimal dense-network core (forward, exact backprop, Adam)
//!   for the time-conditioned drift networks;
//! - [`toydata`] — samplers for the toy distributions and the Gaussian latent;
//! - [`bridge`] — discrete-time forward/backward Markov kernels and rollouts;
//! - [`ipf`] — iterative proportional fitting: alternating drift regression
//!   with replay caching and optional map regularization;
//! - [`sinkhorn`] — an independent entropic optimal-transport oracle on
//!   discrete measures, used to validate trained bridges;
//! - [`metrics`] — sliced Wasserstein-2 and mode-coverage evaluation.
//!
//! All randomness flows through caller-provided RNGs (`rand::Rng`); every
//! function is deterministic given its inputs and the RNG state, and all
//! numerics are `f64` on a single thread, so runs are bit-reproducible.

pub mod bridge;
pub mod ipf;
pub mod metrics;
pub mod nnet;
pub mod sinkhorn;
pub mod toydata;

/// Ambient dimension of every point batch in this crate.
pub const DATA_DIM: usize = 2;
