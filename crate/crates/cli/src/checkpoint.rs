//! Checkpoint files: one JSON document per training stage carrying the full
//! resumable state.
//!
//! Numeric arrays are stored as base64-encoded little-endian `f64` bytes in
//! row-major order alongside their shapes, so a save/load cycle reproduces
//! every weight bit for bit and the files stay diffable at the structural
//! level. `format_version` gates decoding: files written by an incompatible
//! layout are rejected rather than misread.

use crate::error::CliError;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use ndarray::{Array1, Array2};
use sbridge_core::ipf::{IPFState, ProcessState, TrainConfig};
use sbridge_core::nnet::{Activation, AdamHyper, DenseLayer, OptimizerState, ParameterSet};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Version written by this build; loading any other version fails.
pub const FORMAT_VERSION: u32 = 1;

/// A shaped array as stored on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArrayBlob {
    shape: Vec<usize>,
    /// Base64 of the row-major little-endian `f64` buffer.
    data: String,
}

impl ArrayBlob {
    fn from2(a: &Array2<f64>) -> Self {
        let mut bytes = Vec::with_capacity(a.len() * 8);
        for &v in a.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        ArrayBlob {
            shape: vec![a.nrows(), a.ncols()],
            data: B64.encode(bytes),
        }
    }

    fn from1(a: &Array1<f64>) -> Self {
        let mut bytes = Vec::with_capacity(a.len() * 8);
        for &v in a.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        ArrayBlob {
            shape: vec![a.len()],
            data: B64.encode(bytes),
        }
    }

    fn decode_values(&self, what: &str) -> Result<Vec<f64>, CliError> {
        let bytes = B64
            .decode(&self.data)
            .map_err(|e| CliError::Config(format!("checkpoint {what}: bad base64: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(CliError::Config(format!(
                "checkpoint {what}: byte length {} is not a multiple of 8",
                bytes.len()
            )));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }

    fn to2(&self, what: &str) -> Result<Array2<f64>, CliError> {
        if self.shape.len() != 2 {
            return Err(CliError::Config(format!(
                "checkpoint {what}: expected rank-2 shape, got {:?}",
                self.shape
            )));
        }
        let values = self.decode_values(what)?;
        Array2::from_shape_vec((self.shape[0], self.shape[1]), values).map_err(|e| {
            CliError::Config(format!("checkpoint {what}: shape/data mismatch: {e}"))
        })
    }

    fn to1(&self, what: &str) -> Result<Array1<f64>, CliError> {
        if self.shape.len() != 1 {
            return Err(CliError::Config(format!(
                "checkpoint {what}: expected rank-1 shape, got {:?}",
                self.shape
            )));
        }
        let values = self.decode_values(what)?;
        if values.len() != self.shape[0] {
            return Err(CliError::Config(format!(
                "checkpoint {what}: shape/data mismatch: {} values for shape {:?}",
                values.len(),
                self.shape
            )));
        }
        Ok(Array1::from_vec(values))
    }
}

/// A per-layer (matrix, vector) pair: weights and biases, or their optimizer
/// moments.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerBlob {
    weight: ArrayBlob,
    bias: ArrayBlob,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetBlob {
    layers: Vec<LayerBlob>,
    time_embed_dim: usize,
    activation: Activation,
}

impl NetBlob {
    fn from_params(p: &ParameterSet) -> Self {
        NetBlob {
            layers: p
                .layers
                .iter()
                .map(|l| LayerBlob {
                    weight: ArrayBlob::from2(&l.weight),
                    bias: ArrayBlob::from1(&l.bias),
                })
                .collect(),
            time_embed_dim: p.time_embed_dim,
            activation: p.activation,
        }
    }

    fn to_params(&self, what: &str) -> Result<ParameterSet, CliError> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (k, l) in self.layers.iter().enumerate() {
            layers.push(DenseLayer {
                weight: l.weight.to2(&format!("{what}.layers[{k}].weight"))?,
                bias: l.bias.to1(&format!("{what}.layers[{k}].bias"))?,
            });
        }
        ParameterSet::from_layers(layers, self.time_embed_dim, self.activation)
            .map_err(|e| CliError::Config(format!("checkpoint {what}: {e}")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimBlob {
    m: Vec<LayerBlob>,
    v: Vec<LayerBlob>,
    step: u64,
    hyper: AdamHyper,
}

fn moments_to_blobs(moments: &[(Array2<f64>, Array1<f64>)]) -> Vec<LayerBlob> {
    moments
        .iter()
        .map(|(a, b)| LayerBlob {
            weight: ArrayBlob::from2(a),
            bias: ArrayBlob::from1(b),
        })
        .collect()
}

/// Per-layer (weight, bias) pairs in [`ParameterSet`] layout, as used for
/// both parameters and optimizer moment accumulators.
type LayerMoments = Vec<(Array2<f64>, Array1<f64>)>;

fn blobs_to_moments(blobs: &[LayerBlob], what: &str) -> Result<LayerMoments, CliError> {
    blobs
        .iter()
        .enumerate()
        .map(|(k, l)| {
            Ok((
                l.weight.to2(&format!("{what}[{k}].weight"))?,
                l.bias.to1(&format!("{what}[{k}].bias"))?,
            ))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProcessBlob {
    params: NetBlob,
    ema: NetBlob,
    opt: OptimBlob,
    epoch: u64,
}

impl ProcessBlob {
    fn from_state(s: &ProcessState) -> Self {
        ProcessBlob {
            params: NetBlob::from_params(&s.params),
            ema: NetBlob::from_params(&s.ema),
            opt: OptimBlob {
                m: moments_to_blobs(&s.opt.m),
                v: moments_to_blobs(&s.opt.v),
                step: s.opt.step,
                hyper: s.opt.hyper,
            },
            epoch: s.epoch,
        }
    }

    fn to_state(&self, what: &str) -> Result<ProcessState, CliError> {
        Ok(ProcessState {
            params: self.params.to_params(&format!("{what}.params"))?,
            ema: self.ema.to_params(&format!("{what}.ema"))?,
            opt: OptimizerState {
                m: blobs_to_moments(&self.opt.m, &format!("{what}.opt.m"))?,
                v: blobs_to_moments(&self.opt.v, &format!("{what}.opt.v"))?,
                step: self.opt.step,
                hyper: self.opt.hyper,
            },
            epoch: self.epoch,
        })
    }
}

/// Everything needed to resume or sample from a run, as stored on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: TrainConfig,
    /// Completed alternation stages.
    pub stage: usize,
    forward: ProcessBlob,
    backward: ProcessBlob,
    /// Divisor that maps data units to training units.
    pub standardization_constant: f64,
    /// Master seed the run was launched with.
    pub seed: u64,
}

impl Checkpoint {
    /// Snapshot a training state.
    pub fn from_state(config: &TrainConfig, state: &IPFState) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            config: config.clone(),
            stage: state.stage,
            forward: ProcessBlob::from_state(&state.forward),
            backward: ProcessBlob::from_state(&state.backward),
            standardization_constant: config.task.standardization_constant(),
            seed: config.seed,
        }
    }

    /// Rebuild the live training state. Replay caches are not persisted;
    /// training refreshes them on the first iteration after a resume.
    pub fn into_state(self) -> Result<(TrainConfig, IPFState), CliError> {
        let state = IPFState {
            stage: self.stage,
            forward: self.forward.to_state("forward")?,
            backward: self.backward.to_state("backward")?,
            forward_init: self.config.task.initial_forward_role(),
            forward_cache: None,
            backward_cache: None,
        };
        Ok((self.config, state))
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Io(format!("serialize checkpoint: {e}")))?;
        std::fs::write(path, json)
            .map_err(|e| CliError::io(&format!("write {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(&format!("read {}", path.display()), e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if ckpt.format_version != FORMAT_VERSION {
            return Err(CliError::Config(format!(
                "{}: format version {} is not supported (expected {FORMAT_VERSION})",
                path.display(),
                ckpt.format_version
            )));
        }
        Ok(ckpt)
    }
}
