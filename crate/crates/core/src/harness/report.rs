//! Study reports: final-performance table with 95% intervals, deltas relative
//! to the unmodified `r/min` baseline, and per-metric time series for plotting. Reports
//! are pure functions of the run logs on disk.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::artifacts::{CONFIG_FILE, LOG_FILE};
use super::config::{DataSource, ExperimentConfig, SizeTag};
use super::stats::{mean_ci95, MeanCi};
use super::study::RESULTS_FILE;
use crate::agent::{AggregationMode, Regularizers};
use crate::diagnostics::{relative_to_baseline, DiagnosticsReport};
use crate::error::{Error, Result};
use crate::storage::{RunLog, RunStatus};

pub const REPORT_DIR: &str = "report";

/// Metrics emitted as time series and compared in the relative table.
pub const METRICS: [&str; 10] = [
    "eval_return",
    "o_phi_critic",
    "o_phi_actor",
    "dormant_fraction",
    "effective_rank",
    "actor_dormant_fraction",
    "mean_validation_q",
    "policy_entropy",
    "actor_param_norm",
    "critic_param_norm",
];

pub fn metric_value(report: &DiagnosticsReport, metric: &str) -> Option<f64> {
    match metric {
        "eval_return" => report.eval_return,
        "o_phi_critic" => report.o_phi_critic,
        "o_phi_actor" => report.o_phi_actor,
        "dormant_fraction" => report.dormant_fraction,
        "effective_rank" => report.effective_rank.map(|r| r as f64),
        "actor_dormant_fraction" => report.actor_dormant_fraction,
        "mean_validation_q" => report.mean_validation_q,
        "policy_entropy" => report.policy_entropy,
        "actor_param_norm" => Some(report.actor_param_norm),
        "critic_param_norm" => Some(report.critic_param_norm),
        _ => None,
    }
}

/// A run read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub config: ExperimentConfig,
    pub log: RunLog,
}

impl LoadedRun {
    pub fn completed(&self) -> bool {
        self.log.status() == Some(RunStatus::Completed)
    }

    /// Last value of `metric`; evaluation returns come from eval records.
    pub fn final_metric(&self, metric: &str) -> Option<f64> {
        if metric == "eval_return" {
            return self.log.final_return();
        }
        self.log.diagnostics().last().and_then(|d| metric_value(d, metric))
    }

    /// `(step, value)` pairs of `metric`.
    pub fn series(&self, metric: &str) -> Vec<(u64, f64)> {
        if metric == "eval_return" {
            return self.log.evals();
        }
        self.log.diagnostics().iter().filter_map(|d| metric_value(d, metric).map(|v| (d.step, v))).collect()
    }
}

/// Every run directory under `<root>/runs` that holds a config and a log,
/// sorted by environment, label and seed. When the root holds a study's
/// `results.jsonl`, only the runs it lists are loaded.
pub fn load_runs(root: &Path) -> Result<Vec<LoadedRun>> {
    let runs_dir = root.join("runs");
    let listed = study_run_dirs(root)?;
    let mut runs = Vec::new();
    if runs_dir.is_dir() {
        for entry in fs::read_dir(&runs_dir)? {
            let dir = entry?.path();
            if let Some(listed) = &listed {
                if !dir.file_name().is_some_and(|n| listed.contains(&n.to_string_lossy().into_owned())) {
                    continue;
                }
            }
            let (cfg, log) = (dir.join(CONFIG_FILE), dir.join(LOG_FILE));
            if cfg.exists() && log.exists() {
                runs.push(LoadedRun {
                    config: ExperimentConfig::load(&cfg)?,
                    log: RunLog::read(&log)?,
                });
            }
        }
    }
    runs.sort_by(|a, b| {
        (a.config.env.as_str(), a.config.label(), a.config.seed).cmp(&(b.config.env.as_str(), b.config.label(), b.config.seed))
    });
    Ok(runs)
}

fn study_run_dirs(root: &Path) -> Result<Option<BTreeSet<String>>> {
    let path = root.join(RESULTS_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let mut dirs = BTreeSet::new();
    for line in fs::read_to_string(&path)?.lines().filter(|l| !l.trim().is_empty()) {
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        match (v["config_hash"].as_str(), v["seed"].as_u64()) {
            (Some(h), Some(s)) => dirs.insert(format!("{h}-seed{s}")),
            _ => return Err(Error::Format(format!("{}: record without config_hash or seed", path.display()))),
        };
    }
    Ok(Some(dirs))
}

/// `(environment, label, config hash)`.
pub type GroupKey = (String, String, String);

/// Runs grouped by configuration, ignoring the seed.
pub fn group_runs(runs: &[LoadedRun]) -> BTreeMap<GroupKey, Vec<&LoadedRun>> {
    let mut groups: BTreeMap<GroupKey, Vec<&LoadedRun>> = BTreeMap::new();
    for r in runs {
        let key = (r.config.env.as_str().to_string(), r.config.label(), r.config.config_hash());
        groups.entry(key).or_default().push(r);
    }
    groups
}

/// The unmodified `r/min` agent trained under the same protocol as `config`.
pub fn baseline_config(config: &ExperimentConfig) -> ExperimentConfig {
    let mut b = config.clone();
    b.actor_size = SizeTag::R;
    b.mode = AggregationMode::Min;
    b.regularizers = Regularizers::default();
    b.mask_actor_inputs = false;
    b.data_source = DataSource::SelfCollect;
    b
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalRow {
    pub env: String,
    pub label: String,
    pub config_hash: String,
    pub ci: Option<MeanCi>,
    /// Runs in the group that did not complete.
    pub incomplete: usize,
}

/// Mean over completed runs of each run's final value of `metric`.
pub fn group_final(runs: &[&LoadedRun], metric: &str) -> Option<MeanCi> {
    let values: Vec<f64> = runs.iter().filter(|r| r.completed()).filter_map(|r| r.final_metric(metric)).collect();
    mean_ci95(&values)
}

pub fn final_rows(runs: &[LoadedRun]) -> Vec<FinalRow> {
    group_runs(runs)
        .into_iter()
        .map(|((env, label, config_hash), rs)| FinalRow {
            config_hash,
            ci: group_final(&rs, "eval_return"),
            incomplete: rs.iter().filter(|r| !r.completed()).count(),
            env,
            label,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelativeRow {
    pub env: String,
    pub label: String,
    pub config_hash: String,
    /// One entry per [`METRICS`] element.
    pub deltas: Vec<Option<f64>>,
}

pub fn relative_rows(runs: &[LoadedRun]) -> Vec<RelativeRow> {
    let groups = group_runs(runs);
    groups
        .iter()
        .map(|((env, label, config_hash), rs)| {
            let b = baseline_config(&rs[0].config);
            let baseline = groups.get(&(env.clone(), b.label(), b.config_hash()));
            let deltas = METRICS
                .iter()
                .map(|m| {
                    let v = group_final(rs, m)?.mean;
                    let b = group_final(baseline?, m)?.mean;
                    relative_to_baseline(v, b)
                })
                .collect();
            RelativeRow {
                env: env.clone(),
                label: label.clone(),
                config_hash: config_hash.clone(),
                deltas,
            }
        })
        .collect()
}

/// Per-step mean and interval of `metric` over a group's completed runs.
pub fn time_series(runs: &[&LoadedRun], metric: &str) -> Vec<(u64, MeanCi)> {
    let mut by_step: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in runs.iter().filter(|r| r.completed()) {
        for (step, v) in r.series(metric) {
            by_step.entry(step).or_default().push(v);
        }
    }
    by_step.into_iter().filter_map(|(s, vs)| mean_ci95(&vs).map(|ci| (s, ci))).collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn file_label(label: &str) -> String {
    label.replace('/', "_").replace('<', "_from_").replace(':', "-")
}

/// Writes all report files under `<root>/report` and returns their paths.
pub fn write_report(root: &Path) -> Result<Vec<PathBuf>> {
    let runs = load_runs(root)?;
    if runs.is_empty() {
        return Err(Error::Missing(format!("no runs found under {}", root.join("runs").display())));
    }
    let dir = root.join(REPORT_DIR);
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    let mut files = Vec::new();

    let mut text = String::from("env\tlabel\tconfig_hash\tn\tmean_return\tci_low\tci_high\tincomplete\n");
    for row in final_rows(&runs) {
        let (n, m, lo, hi) = match row.ci {
            Some(ci) => (ci.n, Some(ci.mean), Some(ci.low()), Some(ci.high())),
            None => (0, None, None, None),
        };
        writeln!(text, "{}\t{}\t{}\t{n}\t{}\t{}\t{}\t{}", row.env, row.label, row.config_hash, opt(m), opt(lo), opt(hi), row.incomplete).unwrap();
    }
    let path = dir.join("final_performance.tsv");
    fs::write(&path, text)?;
    files.push(path);

    let mut text = format!("env\tlabel\tconfig_hash\t{}\n", METRICS.join("\t"));
    for row in relative_rows(&runs) {
        let cells: Vec<String> = row.deltas.iter().map(|d| opt(*d)).collect();
        writeln!(text, "{}\t{}\t{}\t{}", row.env, row.label, row.config_hash, cells.join("\t")).unwrap();
    }
    let path = dir.join("relative_to_baseline.tsv");
    fs::write(&path, text)?;
    files.push(path);

    for ((env, label, hash), rs) in group_runs(&runs) {
        for metric in METRICS {
            let series = time_series(&rs, metric);
            if series.is_empty() {
                continue;
            }
            let mut text = String::from("step\tmean\tci_low\tci_high\n");
            for (step, ci) in series {
                writeln!(text, "{step}\t{}\t{}\t{}", ci.mean, ci.low(), ci.high()).unwrap();
            }
            let sub = dir.join("timeseries").join(metric).join(&env);
            fs::create_dir_all(&sub)?;
            let path = sub.join(format!("{}-{hash}.tsv", file_label(&label)));
            fs::write(&path, text)?;
            files.push(path);
        }
    }
    Ok(files)
}
