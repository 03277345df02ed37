//! TOML run-configuration schema and its resolution into a
//! [`TrainConfig`](sbridge_core::ipf::TrainConfig).
//!
//! A config file looks like:
//!
//! ```toml
//! name = "8gauss_rsb"
//! seed = 0
//!
//! [task]
//! kind = "unconditional"          # or "translation" with source/target
//! [task.data]
//! kind = "eight_gaussians"        # scale / mode_std override the defaults
//!
//! [bridge]
//! timesteps = 8                   # required
//! horizon = 0.4                   # total time; uniform steps (default 1.0)
//! # gammas = [0.05, ...]          # alternatively: explicit step sizes
//!
//! [loss]
//! alpha = 0.5                     # drift-magnitude penalty (default 0)
//! beta = 2.5                      # observation anchor penalty (default 0)
//!
//! [training]
//! ipf_stages = 10
//! iters_backward = 4000
//! iters_forward = 2000            # defaults to a task-dependent budget
//! batch_size = 128
//! cache_trajectories = 1280
//! cache_refresh_every = 500
//! learning_rate = 1e-3
//! lr_stage_decay = 1.0            # per-stage learning-rate multiplier
//! ema_decay = 0.999               # 0.0 keeps the EMA glued to the weights
//!
//! [net]
//! hidden = [64, 64]
//! time_embed_dim = 32
//! activation = "silu"             # relu | silu | tanh
//!
//! [eval]
//! n_samples = 4000                # per half-stage metric evaluation
//! n_projections = 128
//! enabled = true
//! ```
//!
//! Every section except `[task]` and `[bridge]` is optional; unknown keys are
//! rejected so typos fail loudly instead of silently using defaults.

use crate::error::CliError;
use sbridge_core::bridge::TimeGrid;
use sbridge_core::ipf::{Task, TrainConfig};
use sbridge_core::nnet::Activation;
use sbridge_core::toydata::{ToyKind, ToySpec};
use serde::Deserialize;
use std::path::Path;

/// Per-half-stage evaluation settings used by the training observer.
#[derive(Debug, Clone, Copy)]
pub struct EvalSettings {
    pub n_samples: usize,
    pub n_projections: usize,
    pub enabled: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            n_samples: 4000,
            n_projections: 128,
            enabled: true,
        }
    }
}

/// A fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    /// Run name; directories under the run root use it.
    pub name: String,
    pub train: TrainConfig,
    pub eval: EvalSettings,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    name: Option<String>,
    seed: Option<u64>,
    task: TaskSection,
    bridge: BridgeSection,
    #[serde(default)]
    loss: LossSection,
    #[serde(default)]
    training: TrainingSection,
    #[serde(default)]
    net: NetSection,
    #[serde(default)]
    eval: EvalSection,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TaskKindField {
    Unconditional,
    Translation,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskSection {
    kind: TaskKindField,
    data: Option<ToySpecSection>,
    source: Option<ToySpecSection>,
    target: Option<ToySpecSection>,
}

/// Toy-distribution reference: a kind plus optional geometry overrides.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToySpecSection {
    kind: ToyKind,
    scale: Option<f64>,
    mode_std: Option<f64>,
}

impl ToySpecSection {
    fn resolve(&self) -> ToySpec {
        let mut spec = match self.kind {
            ToyKind::EightGaussians => ToySpec::eight_gaussians(),
            ToyKind::TwentyfiveGaussians => ToySpec::twentyfive_gaussians(),
            ToyKind::Checkerboard => ToySpec::checkerboard(),
            ToyKind::Circles => ToySpec::circles(),
            ToyKind::StandardGaussian => ToySpec::standard_gaussian(),
        };
        if let Some(scale) = self.scale {
            spec.scale = scale;
        }
        if let Some(mode_std) = self.mode_std {
            spec.mode_std = mode_std;
        }
        spec
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BridgeSection {
    timesteps: usize,
    horizon: Option<f64>,
    gammas: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LossSection {
    #[serde(default)]
    alpha: f64,
    #[serde(default)]
    beta: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainingSection {
    ipf_stages: Option<usize>,
    iters_backward: Option<usize>,
    iters_forward: Option<usize>,
    batch_size: Option<usize>,
    cache_trajectories: Option<usize>,
    cache_refresh_every: Option<usize>,
    learning_rate: Option<f64>,
    lr_stage_decay: Option<f64>,
    ema_decay: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetSection {
    hidden: Option<Vec<usize>>,
    time_embed_dim: Option<usize>,
    activation: Option<Activation>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalSection {
    n_samples: Option<usize>,
    n_projections: Option<usize>,
    enabled: Option<bool>,
}

impl TaskSection {
    fn resolve(&self) -> Result<Task, CliError> {
        match self.kind {
            TaskKindField::Unconditional => {
                if self.source.is_some() || self.target.is_some() {
                    return Err(CliError::Config(
                        "unconditional task takes [task.data], not source/target".into(),
                    ));
                }
                let data = self.data.as_ref().ok_or_else(|| {
                    CliError::Config("unconditional task requires [task.data]".into())
                })?;
                Ok(Task::Unconditional {
                    data: data.resolve(),
                })
            }
            TaskKindField::Translation => {
                if self.data.is_some() {
                    return Err(CliError::Config(
                        "translation task takes [task.source]/[task.target], not data".into(),
                    ));
                }
                let source = self.source.as_ref().ok_or_else(|| {
                    CliError::Config("translation task requires [task.source]".into())
                })?;
                let target = self.target.as_ref().ok_or_else(|| {
                    CliError::Config("translation task requires [task.target]".into())
                })?;
                Ok(Task::Translation {
                    source: source.resolve(),
                    target: target.resolve(),
                })
            }
        }
    }
}

impl BridgeSection {
    fn resolve(&self) -> Result<TimeGrid, CliError> {
        match &self.gammas {
            Some(gammas) => {
                if self.horizon.is_some() {
                    return Err(CliError::Config(
                        "[bridge] takes either horizon or gammas, not both".into(),
                    ));
                }
                if gammas.len() != self.timesteps {
                    return Err(CliError::Config(format!(
                        "gammas has {} entries but timesteps = {}",
                        gammas.len(),
                        self.timesteps
                    )));
                }
                TimeGrid::new(gammas.clone()).map_err(|e| CliError::Config(e.to_string()))
            }
            None => TimeGrid::uniform(self.timesteps, self.horizon.unwrap_or(1.0))
                .map_err(|e| CliError::Config(e.to_string())),
        }
    }
}

/// Parse a TOML config file and resolve it into a [`ResolvedConfig`].
///
/// `seed_override` (from `--seed`) wins over the file's `seed` key. The run
/// name defaults to the file stem.
pub fn load_config(path: &Path, seed_override: Option<u64>) -> Result<ResolvedConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(&format!("read {}", path.display()), e))?;
    let file: FileConfig = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    resolve(path, file, seed_override)
}

fn resolve(
    path: &Path,
    file: FileConfig,
    seed_override: Option<u64>,
) -> Result<ResolvedConfig, CliError> {
    let task = file.task.resolve()?;
    let grid = file.bridge.resolve()?;
    let mut train = TrainConfig::defaults(task, grid);

    train.alpha = file.loss.alpha;
    train.beta_reg = file.loss.beta;

    let t = &file.training;
    if let Some(v) = t.ipf_stages {
        train.ipf_stages = v;
    }
    if let Some(v) = t.iters_backward {
        train.iters_backward = v;
        // Keep the task-dependent ratio unless the file pins the forward
        // budget explicitly below.
        train.iters_forward = match train.task {
            Task::Unconditional { .. } => v / 2,
            Task::Translation { .. } => v,
        };
    }
    if let Some(v) = t.iters_forward {
        train.iters_forward = v;
    }
    if let Some(v) = t.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = t.cache_trajectories {
        train.cache_trajectories = v;
    }
    if let Some(v) = t.cache_refresh_every {
        train.cache_refresh_every = v;
    }
    if let Some(v) = t.learning_rate {
        train.optim.lr = v;
    }
    if let Some(v) = t.lr_stage_decay {
        train.lr_stage_decay = v;
    }
    if let Some(v) = t.ema_decay {
        train.ema_decay = Some(v);
    }

    if let Some(v) = file.net.hidden.clone() {
        train.net.hidden = v;
    }
    if let Some(v) = file.net.time_embed_dim {
        train.net.time_embed_dim = v;
    }
    if let Some(v) = file.net.activation {
        train.net.activation = v;
    }

    train.seed = seed_override.or(file.seed).unwrap_or(0);
    train.validate().map_err(CliError::from)?;

    let defaults = EvalSettings::default();
    let eval = EvalSettings {
        n_samples: file.eval.n_samples.unwrap_or(defaults.n_samples),
        n_projections: file.eval.n_projections.unwrap_or(defaults.n_projections),
        enabled: file.eval.enabled.unwrap_or(defaults.enabled),
    };
    if eval.enabled && (eval.n_samples == 0 || eval.n_projections == 0) {
        return Err(CliError::Config(
            "[eval] n_samples and n_projections must be ≥ 1 when evaluation is enabled".into(),
        ));
    }

    let name = match file.name {
        Some(name) if !name.trim().is_empty() => name,
        Some(_) => return Err(CliError::Config("name must be non-empty".into())),
        None => path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into()),
    };
    if name.contains(['/', '\\']) {
        return Err(CliError::Config(format!(
            "name must not contain path separators: {name}"
        )));
    }

    Ok(ResolvedConfig { name, train, eval })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn tmp(name: &str, text: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("sbridge-config-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        std::fs::write(&path, text).unwrap();
        path
    }

    const MINIMAL: &str = r#"
        [task]
        kind = "unconditional"
        [task.data]
        kind = "eight_gaussians"

        [bridge]
        timesteps = 8
    "#;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = load_config(&tmp("minimal.toml", MINIMAL), None).unwrap();
        assert_eq!(cfg.name, "minimal");
        assert_eq!(cfg.train.grid.t_steps(), 8);
        assert!((cfg.train.grid.horizon() - 1.0).abs() < 1e-12);
        assert_eq!(cfg.train.alpha, 0.0);
        assert_eq!(cfg.train.beta_reg, 0.0);
        assert_eq!(cfg.train.iters_backward, 4000);
        assert_eq!(cfg.train.iters_forward, 2000);
        assert_eq!(cfg.train.seed, 0);
        assert!(cfg.eval.enabled);
    }

    #[test]
    fn missing_timesteps_is_named_in_the_error() {
        let text = r#"
            [task]
            kind = "unconditional"
            [task.data]
            kind = "eight_gaussians"

            [bridge]
            horizon = 0.5
        "#;
        let err = load_config(&tmp("no_timesteps.toml", text), None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("timesteps"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"
            [task]
            kind = "unconditional"
            [task.data]
            kind = "eight_gaussians"

            [bridge]
            timesteps = 8
            timestep_count = 9
        "#;
        let err = load_config(&tmp("unknown.toml", text), None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("timestep_count"), "{err}");
    }

    #[test]
    fn translation_requires_both_sides() {
        let text = r#"
            [task]
            kind = "translation"
            [task.source]
            kind = "circles"

            [bridge]
            timesteps = 4
        "#;
        let err = load_config(&tmp("half_translation.toml", text), None).unwrap_err();
        assert!(err.to_string().contains("task.target"), "{err}");
    }

    #[test]
    fn translation_defaults_to_symmetric_budgets() {
        let text = r#"
            [task]
            kind = "translation"
            [task.source]
            kind = "circles"
            [task.target]
            kind = "eight_gaussians"

            [bridge]
            timesteps = 8

            [training]
            iters_backward = 3000
        "#;
        let cfg = load_config(&tmp("translation.toml", text), None).unwrap();
        assert_eq!(cfg.train.iters_backward, 3000);
        assert_eq!(cfg.train.iters_forward, 3000);
    }

    #[test]
    fn explicit_gammas_build_the_grid() {
        let text = r#"
            [task]
            kind = "unconditional"
            [task.data]
            kind = "circles"

            [bridge]
            timesteps = 3
            gammas = [0.1, 0.2, 0.3]
        "#;
        let cfg = load_config(&tmp("gammas.toml", text), None).unwrap();
        assert_eq!(cfg.train.grid.gammas(), &[0.1, 0.2, 0.3]);

        let mismatch = text.replace("timesteps = 3", "timesteps = 4");
        let err = load_config(&tmp("gammas_bad.toml", &mismatch), None).unwrap_err();
        assert!(err.to_string().contains("timesteps"), "{err}");
    }

    #[test]
    fn overrides_and_seed_precedence() {
        let text = r#"
            name = "custom"
            seed = 7

            [task]
            kind = "unconditional"
            [task.data]
            kind = "twentyfive_gaussians"
            mode_std = 0.2

            [bridge]
            timesteps = 8
            horizon = 0.4

            [loss]
            alpha = 0.5
            beta = 2.5

            [training]
            iters_backward = 1000
            learning_rate = 3e-4
            lr_stage_decay = 0.8
            ema_decay = 0.99

            [net]
            hidden = [64, 64]
        "#;
        let path = tmp("full.toml", text);
        let cfg = load_config(&path, None).unwrap();
        assert_eq!(cfg.name, "custom");
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.train.alpha, 0.5);
        assert_eq!(cfg.train.beta_reg, 2.5);
        assert_eq!(cfg.train.iters_backward, 1000);
        assert_eq!(cfg.train.iters_forward, 500);
        assert_eq!(cfg.train.optim.lr, 3e-4);
        assert_eq!(cfg.train.lr_stage_decay, 0.8);
        assert_eq!(cfg.train.ema_decay, Some(0.99));
        assert_eq!(cfg.train.net.hidden, vec![64, 64]);
        match cfg.train.task {
            Task::Unconditional { data } => {
                assert_eq!(data.kind, ToyKind::TwentyfiveGaussians);
                assert_eq!(data.mode_std, 0.2);
                assert_eq!(data.scale, 8.0);
            }
            _ => panic!("expected unconditional task"),
        }

        let cfg2 = load_config(&path, Some(99)).unwrap();
        assert_eq!(cfg2.train.seed, 99);
    }

    #[test]
    fn core_validation_failures_surface_as_config_errors() {
        let text = r#"
            [task]
            kind = "unconditional"
            [task.data]
            kind = "eight_gaussians"

            [bridge]
            timesteps = 8

            [training]
            batch_size = 0
        "#;
        let err = load_config(&tmp("invalid_core.toml", text), None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("batch_size"), "{err}");
    }
}
