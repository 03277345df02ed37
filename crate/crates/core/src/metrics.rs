//! Quantitative evaluation of generated point clouds.
//!
//! Two measurements cover the toy setting: a sliced 2-Wasserstein distance
//! between equal-sized batches (random 1D projections, sorted matching),
//! and mode coverage against a known list of mixture centers. Both are
//! deliberately simple — fast enough to run every training stage, sharp
//! enough to separate a trained bridge from an untrained one and to detect
//! dropped modes.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from malformed metric inputs.
#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("point batches must be non-empty and equal-sized, got {a} and {b}")]
    SizeMismatch { a: usize, b: usize },
    #[error("mode centers must be non-empty")]
    EmptyCenters,
    #[error("invalid metric parameter: {0}")]
    Config(String),
}

/// Default number of random projection directions.
pub const DEFAULT_N_PROJ: usize = 256;

/// Default evaluation batch size.
pub const DEFAULT_EVAL_BATCH: usize = 10_000;

/// Default membership radius for a mode of the given per-mode std.
pub fn coverage_radius(mode_std: f64) -> f64 {
    3.0 * mode_std
}

/// Default per-mode count threshold: a quarter of the uniform share,
/// floored at one sample.
pub fn default_min_count(n_samples: usize, n_modes: usize) -> usize {
    (n_samples / (4 * n_modes)).max(1)
}

/// Evaluation summary of one sample batch, serialized to JSON by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sliced_w2: f64,
    /// Fraction of modes whose within-radius count reached the threshold.
    pub mode_coverage: f64,
    pub per_mode_counts: Vec<usize>,
    pub n_samples: usize,
}

/// Sliced 2-Wasserstein distance between two equal-sized point batches:
/// the average over `n_proj` uniform random unit directions of the 1D
/// 2-Wasserstein distance along that direction (sort both projected
/// batches, root-mean-square the paired differences).
pub fn sliced_w2(
    a: &Array2<f64>,
    b: &Array2<f64>,
    n_proj: usize,
    rng: &mut impl Rng,
) -> Result<f64, MetricsError> {
    let n = a.nrows();
    if n == 0 || b.nrows() != n {
        return Err(MetricsError::SizeMismatch { a: n, b: b.nrows() });
    }
    if n_proj == 0 {
        return Err(MetricsError::Config("n_proj must be ≥ 1".into()));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(MetricsError::Config("point batches must be finite".into()));
    }
    let mut pa = vec![0.0; n];
    let mut pb = vec![0.0; n];
    let mut total = 0.0;
    for _ in 0..n_proj {
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let (dx, dy) = (theta.cos(), theta.sin());
        for i in 0..n {
            pa[i] = dx * a[[i, 0]] + dy * a[[i, 1]];
            pb[i] = dx * b[[i, 0]] + dy * b[[i, 1]];
        }
        pa.sort_unstable_by(f64::total_cmp);
        pb.sort_unstable_by(f64::total_cmp);
        let mse = pa
            .iter()
            .zip(&pb)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n as f64;
        total += mse.sqrt();
    }
    Ok(total / n_proj as f64)
}

/// Mode coverage: assign each sample to its nearest center (lowest index on
/// ties) when within `radius`, then report the fraction of centers whose
/// count reached `min_count`, along with the per-center counts.
pub fn mode_coverage(
    samples: &Array2<f64>,
    centers: &[[f64; 2]],
    radius: f64,
    min_count: usize,
) -> Result<(f64, Vec<usize>), MetricsError> {
    if centers.is_empty() {
        return Err(MetricsError::EmptyCenters);
    }
    if radius <= 0.0 || !radius.is_finite() {
        return Err(MetricsError::Config(format!(
            "radius must be positive and finite, got {radius}"
        )));
    }
    let mut counts = vec![0usize; centers.len()];
    let r2 = radius * radius;
    for p in samples.outer_iter() {
        let mut best = 0;
        let mut best_d2 = f64::INFINITY;
        for (k, c) in centers.iter().enumerate() {
            let d2 = (p[0] - c[0]) * (p[0] - c[0]) + (p[1] - c[1]) * (p[1] - c[1]);
            if d2 < best_d2 {
                best_d2 = d2;
                best = k;
            }
        }
        if best_d2 <= r2 {
            counts[best] += 1;
        }
    }
    let covered = counts.iter().filter(|&&c| c >= min_count).count();
    Ok((covered as f64 / centers.len() as f64, counts))
}
