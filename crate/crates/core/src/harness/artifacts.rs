//! Writes a run's artifacts to `<root>/runs/<config hash>-seed<seed>/`.

use std::fs;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::provision::{load_validation, validation_path};
use super::run::{run_experiment, CHECKPOINT_FILE};
use crate::agent::checkpoint::{save_checkpoint, CheckpointMeta};
use crate::error::{Error, Result};
use crate::storage::{RunLog, RunStatus};

pub const CONFIG_FILE: &str = "config.toml";
pub const LOG_FILE: &str = "log.jsonl";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.jsonl";
pub const PROVIDER_LOG_FILE: &str = "provider_log.jsonl";

pub fn run_dir(root: &Path, config: &ExperimentConfig) -> PathBuf {
    root.join("runs").join(config.run_dir_name())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub status: RunStatus,
    pub final_return: Option<f64>,
}

/// True when `dir` holds a completed run.
pub fn is_complete(dir: &Path) -> bool {
    RunLog::read(&dir.join(LOG_FILE)).map(|l| l.status() == Some(RunStatus::Completed)).unwrap_or(false) && dir.join(CHECKPOINT_FILE).exists()
}

/// Runs `config` and writes its configuration, log, diagnostics and checkpoint.
/// The validation buffer defaults to `<root>/validation/<env>.buf`.
pub fn execute_run(config: &ExperimentConfig, root: &Path, validation: Option<&Path>, force: bool) -> Result<RunSummary> {
    config.validate()?;
    let dir = run_dir(root, config);
    if dir.exists() && !force {
        return Err(Error::Refused(format!("{} already exists (use --force to overwrite)", dir.display())));
    }
    let val = if config.diagnostics {
        let path = validation.map(Path::to_path_buf).unwrap_or_else(|| validation_path(root, config.env));
        if !path.exists() {
            return Err(Error::Missing(format!(
                "validation buffer {} not found; provision it first or disable diagnostics",
                path.display()
            )));
        }
        Some(load_validation(&path, config.env)?)
    } else {
        None
    };
    let out = run_experiment(config, val.as_ref())?;
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(CONFIG_FILE), config.to_toml())?;
    fs::write(dir.join(LOG_FILE), out.log.to_jsonl())?;
    fs::write(dir.join(DIAGNOSTICS_FILE), out.log.diagnostics_jsonl())?;
    if let Some(pl) = &out.provider_log {
        fs::write(dir.join(PROVIDER_LOG_FILE), pl.to_jsonl())?;
    }
    let status = out.status();
    if status == RunStatus::Completed {
        let meta = CheckpointMeta {
            env_id: config.env.as_str().into(),
            size_tag: config.actor_size.as_str().into(),
            env_steps: out.steps,
        };
        save_checkpoint(&dir.join(CHECKPOINT_FILE), &out.agent, &meta)?;
    }
    Ok(RunSummary {
        dir,
        status,
        final_return: out.log.final_return(),
    })
}
