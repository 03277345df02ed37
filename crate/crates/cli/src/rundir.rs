//! Run-directory layout.
//!
//! A training run named `foo` under run root `runs/` produces:
//!
//! ```text
//! runs/foo/
//!   config.toml            # verbatim copy of the launching config
//!   metrics.csv            # per-iteration losses and per-half-stage metrics
//!   stage_<n>.ckpt.json    # checkpoint after each completed stage
//!   samples/               # default output location for sample files
//! ```

use crate::error::CliError;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Create `run_root/name` (and its `samples/` subdirectory), reusing the
    /// directory if it already exists.
    pub fn create(run_root: &Path, name: &str) -> Result<Self, CliError> {
        let root = run_root.join(name);
        std::fs::create_dir_all(root.join("samples"))
            .map_err(|e| CliError::io(&format!("create {}", root.display()), e))?;
        Ok(RunDir { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn checkpoint_path(&self, stage: usize) -> PathBuf {
        self.root.join(format!("stage_{stage}.ckpt.json"))
    }

    pub fn samples_dir(&self) -> PathBuf {
        self.root.join("samples")
    }
}
