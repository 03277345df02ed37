//! Samplers and ground-truth descriptors for the 2D toy distributions and
//! the standard-Gaussian latent.
//!
//! Five families are supported: a ring of 8 Gaussians, a 5×5 grid of 25
//! Gaussians, a 4×4 checkerboard, two concentric circles, and `N(0, I)`.
//! Every sampler draws through a caller-provided RNG in a fixed per-row
//! order, so batches are bit-reproducible from the seed.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Errors from invalid specifications or kind-restricted queries.
#[derive(Debug, Error)]
pub enum ToydataError {
    #[error("invalid toy spec: {0}")]
    InvalidSpec(String),
    #[error("{kind:?} is not a Gaussian-mixture kind")]
    NotMixture { kind: ToyKind },
}

/// Which toy distribution family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyKind {
    EightGaussians,
    TwentyfiveGaussians,
    Checkerboard,
    Circles,
    StandardGaussian,
}

/// A toy distribution: family plus geometry.
///
/// `scale` sets the overall extent (ring radius, grid half-span, board
/// half-width, outer circle radius). `mode_std` is the per-mode Gaussian
/// std for the mixture kinds and the radial noise std for `Circles`; it is
/// ignored by `Checkerboard` and `StandardGaussian`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    pub kind: ToyKind,
    pub scale: f64,
    #[serde(default)]
    pub mode_std: f64,
}

impl ToySpec {
    /// 8 isotropic Gaussians (std 0.3) at angles kπ/4 on a circle of radius 8.
    pub fn eight_gaussians() -> Self {
        ToySpec {
            kind: ToyKind::EightGaussians,
            scale: 8.0,
            mode_std: 0.3,
        }
    }

    /// 25 isotropic Gaussians (std 0.15) on the {−2..2}² grid scaled by 4.
    pub fn twentyfive_gaussians() -> Self {
        ToySpec {
            kind: ToyKind::TwentyfiveGaussians,
            scale: 8.0,
            mode_std: 0.15,
        }
    }

    /// Uniform mass on the black squares of a 4×4 board over [−4, 4]².
    pub fn checkerboard() -> Self {
        ToySpec {
            kind: ToyKind::Checkerboard,
            scale: 4.0,
            mode_std: 0.0,
        }
    }

    /// Two concentric rings of radii 8 and 4 with radial noise 0.2.
    pub fn circles() -> Self {
        ToySpec {
            kind: ToyKind::Circles,
            scale: 8.0,
            mode_std: 0.2,
        }
    }

    /// The latent `N(0, I)`.
    pub fn standard_gaussian() -> Self {
        ToySpec {
            kind: ToyKind::StandardGaussian,
            scale: 1.0,
            mode_std: 0.0,
        }
    }

    /// Check geometric invariants: positive scale, and positive noise std
    /// for the kinds that use one.
    pub fn validate(&self) -> Result<(), ToydataError> {
        if self.scale <= 0.0 || !self.scale.is_finite() {
            return Err(ToydataError::InvalidSpec(format!(
                "scale must be positive and finite, got {}",
                self.scale
            )));
        }
        let needs_std = matches!(
            self.kind,
            ToyKind::EightGaussians | ToyKind::TwentyfiveGaussians | ToyKind::Circles
        );
        if needs_std && (self.mode_std <= 0.0 || !self.mode_std.is_finite()) {
            return Err(ToydataError::InvalidSpec(format!(
                "mode_std must be positive and finite for {:?}, got {}",
                self.kind, self.mode_std
            )));
        }
        Ok(())
    }

    /// Divisor that brings samples of this spec roughly into [−2, 2]².
    ///
    /// The shaped kinds span about ±scale, so the constant is `scale/2`;
    /// the latent is already standardized.
    pub fn standardization_constant(&self) -> f64 {
        match self.kind {
            ToyKind::StandardGaussian => 1.0,
            _ => self.scale / 2.0,
        }
    }
}

/// Draw `n` i.i.d. points from the spec's distribution.
pub fn sample(spec: &ToySpec, n: usize, rng: &mut impl Rng) -> Result<Array2<f64>, ToydataError> {
    spec.validate()?;
    let mut out = Array2::zeros((n, 2));
    for i in 0..n {
        let (x, y) = match spec.kind {
            ToyKind::EightGaussians | ToyKind::TwentyfiveGaussians => {
                let centers = mode_centers(spec)?;
                let c = centers[rng.random_range(0..centers.len())];
                let dx: f64 = rng.sample(StandardNormal);
                let dy: f64 = rng.sample(StandardNormal);
                (c[0] + spec.mode_std * dx, c[1] + spec.mode_std * dy)
            }
            ToyKind::Checkerboard => {
                // 8 black cells on the 4×4 board; pick one, then a uniform
                // point inside it. Cell (i, j) covers
                // [i·s/2, (i+1)·s/2) × [j·s/2, (j+1)·s/2) for i, j ∈ −2..2.
                let cells = black_cells();
                let (ci, cj) = cells[rng.random_range(0..cells.len())];
                let half = spec.scale / 2.0;
                let x = (ci as f64 + rng.random_range(0.0..1.0)) * half;
                let y = (cj as f64 + rng.random_range(0.0..1.0)) * half;
                (x, y)
            }
            ToyKind::Circles => {
                let radius = if rng.random_range(0..2) == 0 {
                    spec.scale
                } else {
                    spec.scale / 2.0
                };
                let theta = rng.random_range(0.0..(2.0 * PI));
                let noise: f64 = rng.sample(StandardNormal);
                let r = radius + spec.mode_std * noise;
                (r * theta.cos(), r * theta.sin())
            }
            ToyKind::StandardGaussian => {
                let x: f64 = rng.sample(StandardNormal);
                let y: f64 = rng.sample(StandardNormal);
                (x, y)
            }
        };
        out[[i, 0]] = x;
        out[[i, 1]] = y;
    }
    Ok(out)
}

/// The 8 black cells of the 4×4 board, as lower-left corner indices
/// (i, j) ∈ {−2,−1,0,1}² with even i+j.
fn black_cells() -> Vec<(i64, i64)> {
    let mut cells = Vec::with_capacity(8);
    for i in -2i64..2 {
        for j in -2i64..2 {
            if (i + j).rem_euclid(2) == 0 {
                cells.push((i, j));
            }
        }
    }
    cells
}

/// Exact mixture centers for the Gaussian-mixture kinds.
pub fn mode_centers(spec: &ToySpec) -> Result<Vec<[f64; 2]>, ToydataError> {
    spec.validate()?;
    match spec.kind {
        ToyKind::EightGaussians => Ok((0..8)
            .map(|k| {
                let theta = k as f64 * PI / 4.0;
                [spec.scale * theta.cos(), spec.scale * theta.sin()]
            })
            .collect()),
        ToyKind::TwentyfiveGaussians => {
            let step = spec.scale / 2.0;
            let mut centers = Vec::with_capacity(25);
            for i in -2i64..=2 {
                for j in -2i64..=2 {
                    centers.push([i as f64 * step, j as f64 * step]);
                }
            }
            Ok(centers)
        }
        kind => Err(ToydataError::NotMixture { kind }),
    }
}
