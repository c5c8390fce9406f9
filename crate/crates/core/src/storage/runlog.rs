//! Line-delimited JSON run logs. Every line carries `schema_version` and a
//! `kind` tag.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::StepMetrics;
use crate::diagnostics::DiagnosticsReport;
use crate::error::{Error, Result};

pub const RUN_LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// Training stopped on a non-finite signal.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Eval {
        step: u64,
        mean_return: f64,
        returns: Vec<f64>,
    },
    Train {
        step: u64,
        updates: u64,
        metrics: StepMetrics,
    },
    Diagnostics(DiagnosticsReport),
    /// SHA-256 over the replay indices consumed since the previous digest.
    Batches {
        step: u64,
        updates: u64,
        digest: String,
    },
    Final {
        step: u64,
        status: RunStatus,
        checkpoint: Option<String>,
        message: Option<String>,
    },
}

impl LogRecord {
    pub fn step(&self) -> u64 {
        match self {
            LogRecord::Eval { step, .. } | LogRecord::Train { step, .. } | LogRecord::Batches { step, .. } | LogRecord::Final { step, .. } => *step,
            LogRecord::Diagnostics(r) => r.step,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Line {
    schema_version: u32,
    #[serde(flatten)]
    record: LogRecord,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<LogRecord>,
}

impl RunLog {
    pub fn push(&mut self, record: LogRecord) {
        self.records.push(record);
    }

    pub fn to_jsonl(&self) -> String {
        render(self.records.iter())
    }

    /// Only the diagnostics records, in the same line format.
    pub fn diagnostics_jsonl(&self) -> String {
        render(self.records.iter().filter(|r| matches!(r, LogRecord::Diagnostics(_))))
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parsed: Line = serde_json::from_str(line).map_err(|e| Error::Format(format!("run log line {}: {e}", i + 1)))?;
            if parsed.schema_version != RUN_LOG_SCHEMA_VERSION {
                return Err(Error::Format(format!(
                    "run log schema {} (expected {RUN_LOG_SCHEMA_VERSION})",
                    parsed.schema_version
                )));
            }
            records.push(parsed.record);
        }
        Ok(Self { records })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_jsonl(&fs::read_to_string(path)?)
    }

    /// `(step, mean_return)` of every evaluation.
    pub fn evals(&self) -> Vec<(u64, f64)> {
        self.records
            .iter()
            .filter_map(|r| match r {
                LogRecord::Eval { step, mean_return, .. } => Some((*step, *mean_return)),
                _ => None,
            })
            .collect()
    }

    pub fn final_return(&self) -> Option<f64> {
        self.evals().last().map(|e| e.1)
    }

    pub fn diagnostics(&self) -> Vec<&DiagnosticsReport> {
        self.records
            .iter()
            .filter_map(|r| match r {
                LogRecord::Diagnostics(d) => Some(d),
                _ => None,
            })
            .collect()
    }

    pub fn batch_digests(&self) -> Vec<(u64, String)> {
        self.records
            .iter()
            .filter_map(|r| match r {
                LogRecord::Batches { updates, digest, .. } => Some((*updates, digest.clone())),
                _ => None,
            })
            .collect()
    }

    pub fn status(&self) -> Option<RunStatus> {
        self.records.iter().rev().find_map(|r| match r {
            LogRecord::Final { status, .. } => Some(*status),
            _ => None,
        })
    }
}

fn render<'a>(records: impl Iterator<Item = &'a LogRecord>) -> String {
    let mut out = String::new();
    for record in records {
        let line = Line {
            schema_version: RUN_LOG_SCHEMA_VERSION,
            record: record.clone(),
        };
        out.push_str(&serde_json::to_string(&line).expect("log records serialize"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_log() -> RunLog {
        let mut log = RunLog::default();
        log.push(LogRecord::Eval {
            step: 10,
            mean_return: 0.1 + 0.2,
            returns: vec![1.0 / 3.0, 2.0f64.sqrt()],
        });
        log.push(LogRecord::Diagnostics(DiagnosticsReport {
            step: 10,
            o_phi_critic: Some(1.234_567_890_123_456_7),
            effective_rank: Some(7),
            ..Default::default()
        }));
        log.push(LogRecord::Batches {
            step: 10,
            updates: 4,
            digest: "ab".into(),
        });
        log.push(LogRecord::Final {
            step: 10,
            status: RunStatus::Completed,
            checkpoint: Some("checkpoint.bin".into()),
            message: None,
        });
        log
    }

    #[test]
    fn round_trip_is_exact() {
        let log = sample_log();
        let text = log.to_jsonl();
        let back = RunLog::from_jsonl(&text).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.to_jsonl(), text);
        assert!(text.lines().all(|l| l.starts_with("{\"schema_version\":1,")));
    }

    #[test]
    fn unknown_schema_is_rejected() {
        let text = sample_log().to_jsonl().replace("\"schema_version\":1", "\"schema_version\":2");
        assert!(matches!(RunLog::from_jsonl(&text), Err(Error::Format(_))));
    }

    #[test]
    fn accessors() {
        let log = sample_log();
        assert_eq!(log.final_return(), Some(0.1 + 0.2));
        assert_eq!(log.status(), Some(RunStatus::Completed));
        assert_eq!(log.diagnostics().len(), 1);
        assert_eq!(log.batch_digests(), vec![(4, "ab".to_string())]);
    }
}
