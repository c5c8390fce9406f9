//! Multi-seed studies described by a TOML manifest:
//!
//! ```toml
//! name = "size-ladder"
//! [defaults]
//! total_steps = 200000
//! [[run]]
//! envs = ["pendulum_swingup", "cartpole_swingup"]
//! actor_size = "xs"
//! mode = "min"
//! seed_count = 10
//! ```
//!
//! Each `[[run]]` entry takes any configuration key plus `seeds` (a list),
//! `seed_count` (seeds `0..n`) and optionally `envs`.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::Serialize;

use super::artifacts::{execute_run, is_complete, run_dir, LOG_FILE};
use super::config::{ExperimentConfig, RawConfig};
use super::provision::{validation_path, SeedRegistry};
use super::report::write_report;
use crate::error::{Error, Result};
use crate::storage::{RunLog, RunStatus};

pub const RESULTS_FILE: &str = "results.jsonl";

#[derive(Debug, Clone, PartialEq)]
pub struct StudyManifest {
    pub name: String,
    pub runs: Vec<ExperimentConfig>,
}

impl StudyManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::Config(format!("manifest: {}", e.message())))?;
        let name = match doc.remove("name") {
            Some(toml::Value::String(s)) => s,
            None => "study".into(),
            Some(_) => return Err(Error::Config("manifest 'name' must be a string".into())),
        };
        let defaults = match doc.remove("defaults") {
            Some(toml::Value::Table(t)) => t,
            None => toml::Table::new(),
            Some(_) => return Err(Error::Config("manifest 'defaults' must be a table".into())),
        };
        let entries = match doc.remove("run") {
            Some(toml::Value::Array(a)) => a,
            _ => return Err(Error::Config("manifest needs at least one [[run]] entry".into())),
        };
        if let Some(key) = doc.keys().next() {
            return Err(Error::Config(format!("unknown manifest key '{key}'")));
        }
        let mut runs = Vec::new();
        for entry in entries {
            let toml::Value::Table(mut table) = entry else {
                return Err(Error::Config("[[run]] entries must be tables".into()));
            };
            let seeds: Vec<u64> = match (table.remove("seeds"), table.remove("seed_count")) {
                (Some(s), None) => s.try_into().map_err(|_| Error::Config("'seeds' must be a list of integers".into()))?,
                (None, Some(toml::Value::Integer(n))) if n > 0 => (0..n as u64).collect(),
                (None, None) => vec![0],
                _ => return Err(Error::Config("give either 'seeds' or a positive 'seed_count'".into())),
            };
            let envs: Option<Vec<String>> = table
                .remove("envs")
                .map(|v| v.try_into().map_err(|_| Error::Config("'envs' must be a list of strings".into())))
                .transpose()?;
            let mut merged = defaults.clone();
            merged.extend(table);
            let raw = RawConfig::from_table(merged)?;
            let env_list = envs.unwrap_or_else(|| raw.env.clone().into_iter().collect());
            if env_list.is_empty() {
                return Err(Error::Config("[[run]] entry names no environment".into()));
            }
            for env in env_list {
                for &seed in &seeds {
                    let mut r = raw.clone();
                    r.env = Some(env.clone());
                    r.seed = Some(seed);
                    runs.push(r.resolve()?);
                }
            }
        }
        Ok(Self { name, runs })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }
}

/// Outcome of one study run as recorded in `results.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRunRecord {
    pub env: String,
    pub label: String,
    pub config_hash: String,
    pub seed: u64,
    pub status: String,
    pub final_return: Option<f64>,
    pub error: Option<String>,
}

/// Executes every run of the manifest on up to `jobs` worker threads, reusing
/// completed run directories, then writes `results.jsonl` and the report.
/// Failed runs are recorded and skipped by the aggregation.
pub fn run_study(manifest: &StudyManifest, root: &Path, jobs: usize, validation_dir: Option<&Path>) -> Result<Vec<StudyRunRecord>> {
    fs::create_dir_all(root)?;
    let mut registry = SeedRegistry::load(root)?;
    for c in &manifest.runs {
        registry.register_config(c)?;
    }
    registry.save(root)?;
    for c in manifest.runs.iter().filter(|c| c.diagnostics) {
        let path = validation_path(validation_dir.unwrap_or(root), c.env);
        if !path.exists() {
            return Err(Error::Missing(format!("validation buffer {} not found", path.display())));
        }
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<StudyRunRecord>>> = Mutex::new(vec![None; manifest.runs.len()]);
    thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, manifest.runs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(c) = manifest.runs.get(i) else { break };
                let rec = run_one(c, root, validation_dir);
                slots.lock().expect("no worker panicked")[i] = Some(rec);
            });
        }
    });
    let records: Vec<StudyRunRecord> = slots.into_inner().expect("no worker panicked").into_iter().flatten().collect();
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    fs::write(root.join(RESULTS_FILE), text)?;
    write_report(root)?;
    Ok(records)
}

fn run_one(c: &ExperimentConfig, root: &Path, validation_dir: Option<&Path>) -> StudyRunRecord {
    let mut rec = StudyRunRecord {
        env: c.env.as_str().into(),
        label: c.label(),
        config_hash: c.config_hash(),
        seed: c.seed,
        status: String::new(),
        final_return: None,
        error: None,
    };
    let dir = run_dir(root, c);
    if is_complete(&dir) {
        rec.status = "reused".into();
        rec.final_return = RunLog::read(&dir.join(LOG_FILE)).ok().and_then(|l| l.final_return());
        return rec;
    }
    let val = validation_dir.map(|d| validation_path(d, c.env));
    match execute_run(c, root, val.as_deref(), true) {
        Ok(s) => {
            rec.status = match s.status {
                RunStatus::Completed => "completed".into(),
                RunStatus::Aborted => "aborted".into(),
            };
            rec.final_return = s.final_return;
        }
        Err(e) => {
            rec.status = "failed".into();
            rec.error = Some(e.to_string());
        }
    }
    rec
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_expands_envs_and_seeds() {
        let m = StudyManifest::from_toml(
            "name = \"t\"\n[defaults]\ntotal_steps = 100\n[[run]]\nenvs = [\"pendulum_swingup\", \"cartpole_swingup\"]\nactor_size = \"xs\"\nseed_count = 3\n[[run]]\nenv = \"pendulum_swingup\"\nseeds = [7]\n",
        )
        .unwrap();
        assert_eq!(m.name, "t");
        assert_eq!(m.runs.len(), 7);
        assert!(m.runs.iter().all(|r| r.total_steps == 100));
        assert_eq!(m.runs[6].seed, 7);
        assert_eq!(m.runs[6].label(), "r/min");
    }

    #[test]
    fn bad_manifests() {
        assert!(StudyManifest::from_toml("name = \"x\"").is_err());
        assert!(StudyManifest::from_toml("[[run]]\nactor_size = \"xs\"").is_err());
        assert!(StudyManifest::from_toml("[[run]]\nenv = \"pendulum_swingup\"\nwat = 1").is_err());
        assert!(StudyManifest::from_toml("extra = 1\n[[run]]\nenv = \"pendulum_swingup\"").is_err());
    }
}
