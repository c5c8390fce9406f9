//! Validation buffers and the seed registry that keeps their seeds apart
//! from the seeds of evaluated runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{DataSource, ExperimentConfig, SizeTag};
use super::run::{run_with_observer, TransitionObserver};
use crate::agent::{AggregationMode, Regularizers};
use crate::envs::EnvId;
use crate::error::{Error, Result};
use crate::seeding::{stream_rng, Stream};
use crate::storage::{load_buffer, ReplayBuffer, TransitionBatch, TransitionRecord};

pub const REGISTRY_FILE: &str = "seed_registry.json";

/// Where the validation buffer for `env` lives under an output root.
pub fn validation_path(root: &Path, env: EnvId) -> PathBuf {
    root.join("validation").join(format!("{env}.buf"))
}

/// Loads a validation buffer, checking its environment and widths.
pub fn load_validation(path: &Path, env: EnvId) -> Result<TransitionBatch> {
    let spec = env.spec();
    let (_, buf) = load_buffer(path, Some((env.as_str(), spec.obs_dim, spec.action_dim)))?;
    if buf.is_empty() {
        return Err(Error::Format(format!("validation buffer {} is empty", path.display())));
    }
    Ok(buf.all())
}

/// Seeds used for validation provisioning and for evaluated runs. The two
/// sets must stay disjoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedRegistry {
    pub validation: BTreeMap<String, u64>,
    pub runs: BTreeSet<u64>,
}

impl SeedRegistry {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(REGISTRY_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        serde_json::from_str(&fs::read_to_string(&path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root)?;
        fs::write(root.join(REGISTRY_FILE), serde_json::to_string_pretty(self).expect("registry serializes"))?;
        Ok(())
    }

    pub fn register_validation(&mut self, env: EnvId, seed: u64) -> Result<()> {
        if self.runs.contains(&seed) {
            return Err(Error::Config(format!("seed {seed} is already used by an evaluated run")));
        }
        self.validation.insert(env.as_str().into(), seed);
        Ok(())
    }

    pub fn register_run(&mut self, seed: u64) -> Result<()> {
        if let Some((env, _)) = self.validation.iter().find(|(_, s)| **s == seed) {
            return Err(Error::Config(format!("seed {seed} provisioned the {env} validation buffer")));
        }
        self.runs.insert(seed);
        Ok(())
    }

    /// Registers the student seed and, for tandem or switch runs, the provider seed.
    pub fn register_config(&mut self, config: &ExperimentConfig) -> Result<()> {
        self.register_run(config.seed)?;
        if let Some(p) = config.provider() {
            self.register_run(p.seed)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ProvisionOptions {
    pub size: usize,
    /// Sample from the final replay buffer instead of the whole history.
    pub final_buffer: bool,
}

impl Default for ProvisionOptions {
    fn default() -> Self {
        Self {
            size: crate::diagnostics::VALIDATION_SIZE,
            final_buffer: false,
        }
    }
}

struct Reservoir<R: Rng> {
    keep: usize,
    seen: u64,
    items: Vec<TransitionRecord>,
    rng: R,
}

impl<R: Rng> TransitionObserver for Reservoir<R> {
    fn observe(&mut self, record: &TransitionRecord) {
        if self.items.len() < self.keep {
            self.items.push(record.clone());
        } else {
            let j = self.rng.random_range(0..=self.seen);
            if (j as usize) < self.keep {
                self.items[j as usize] = record.clone();
            }
        }
        self.seen += 1;
    }
}

/// Trains an unmodified baseline and keeps `size` transitions drawn
/// uniformly from its history (or from its final replay buffer).
pub fn provision_validation_buffer(base: &ExperimentConfig, options: &ProvisionOptions) -> Result<ReplayBuffer> {
    let unmodified = base.actor_size == SizeTag::R
        && base.mode == AggregationMode::Min
        && base.regularizers == Regularizers::default()
        && !base.mask_actor_inputs
        && base.data_source == DataSource::SelfCollect;
    if !unmodified {
        return Err(Error::Config("validation data must come from an unmodified r/min agent".into()));
    }
    if options.size == 0 || (base.total_steps as usize) < options.size {
        return Err(Error::Config(format!("{} steps cannot supply {} validation transitions", base.total_steps, options.size)));
    }
    let mut config = base.clone();
    config.diagnostics = false;
    let mut reservoir = Reservoir {
        keep: options.size,
        seen: 0,
        items: Vec::with_capacity(options.size),
        rng: stream_rng(base.seed, Stream::ValidationSample),
    };
    let out = run_with_observer(&config, None, &mut reservoir)?;
    let records = if options.final_buffer {
        if out.buffer.len() < options.size {
            return Err(Error::Config("final replay buffer is smaller than the validation size".into()));
        }
        let mut rng = stream_rng(base.seed, Stream::ValidationSample);
        rand::seq::index::sample(&mut rng, out.buffer.len(), options.size)
            .into_iter()
            .map(|i| out.buffer.get(i).expect("index in range"))
            .collect()
    } else {
        reservoir.items
    };
    let spec = base.env.spec();
    let mut buffer = ReplayBuffer::new(spec.obs_dim, spec.action_dim, options.size);
    for r in records {
        buffer.push(r)?;
    }
    Ok(buffer)
}
