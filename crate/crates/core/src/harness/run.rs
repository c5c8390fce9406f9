//! The training loop shared by standard, tandem and fraction-switch runs.
//!
//! A run has a student and optionally a provider. For the first
//! `provider_steps` environment steps the provider acts, samples replay
//! indices and trains; the student trains on exactly those batches. After
//! that the student acts and samples for itself. A standard run is the case
//! `provider_steps = 0`, a tandem run the case `provider_steps = total_steps`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::agent::{SacAgent, StepMetrics};
use crate::diagnostics::{compute_report, ReportOptions, VALIDATION_SIZE};
use crate::envs::{Env, EnvId};
use crate::error::{Error, Result};
use crate::seeding::{event_seed, stream_rng, Stream};
use crate::storage::{LogRecord, ReplayBuffer, RunLog, RunStatus, TransitionBatch, TransitionRecord};

/// File name recorded in the final log record; written by the caller.
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

/// Everything a finished (or aborted) run produced in memory.
#[derive(Debug)]
pub struct RunOutput {
    pub log: RunLog,
    pub agent: SacAgent,
    pub provider_log: Option<RunLog>,
    pub provider_agent: Option<SacAgent>,
    pub buffer: ReplayBuffer,
    /// Environment steps completed.
    pub steps: u64,
}

impl RunOutput {
    pub fn status(&self) -> RunStatus {
        self.log.status().unwrap_or(RunStatus::Completed)
    }
}

/// One learner: its agent, private random streams, environment and log.
struct Learner {
    config: ExperimentConfig,
    agent: SacAgent,
    exploration: ChaCha8Rng,
    update_noise: ChaCha8Rng,
    replay: ChaCha8Rng,
    env: Env,
    obs: Vec<f64>,
    episodes: u64,
    resets: u64,
    evals: u64,
    digest: Sha256,
    last_metrics: Option<StepMetrics>,
    log: RunLog,
}

impl Learner {
    fn new(config: ExperimentConfig) -> Result<Self> {
        let seed = config.seed;
        let agent = SacAgent::new(config.sac_config(), &mut stream_rng(seed, Stream::NetworkInit))?;
        let mut env = Env::new(config.env);
        let obs = env.reset(event_seed(seed, Stream::EnvReset, 0));
        Ok(Self {
            agent,
            exploration: stream_rng(seed, Stream::Exploration),
            update_noise: stream_rng(seed, Stream::UpdateNoise),
            replay: stream_rng(seed, Stream::Replay),
            env,
            obs,
            episodes: 0,
            resets: 0,
            evals: 0,
            digest: Sha256::new(),
            last_metrics: None,
            log: RunLog::default(),
            config,
        })
    }

    fn choose_action(&mut self, t: u64) -> Result<Vec<f64>> {
        if t < self.config.warmup_steps {
            let a = self.env.spec().action_dim;
            Ok((0..a).map(|_| self.exploration.random_range(-1.0..=1.0)).collect())
        } else {
            self.agent.act(&self.obs, &mut self.exploration)
        }
    }

    /// Acts once and returns the transition (episode ids come from the caller).
    fn collect(&mut self, t: u64, episode: u64) -> Result<TransitionRecord> {
        let action = self.choose_action(t)?;
        let out = self.env.step(&action)?;
        let record = TransitionRecord {
            state: std::mem::replace(&mut self.obs, out.observation),
            action,
            reward: out.reward,
            next_state: self.obs.clone(),
            terminated: out.terminated,
            truncated: out.truncated,
            episode,
        };
        if out.terminated || out.truncated {
            self.episodes += 1;
            self.obs = self.env.reset(event_seed(self.config.seed, Stream::EnvReset, self.episodes));
        }
        Ok(record)
    }

    fn train(&mut self, batch: &TransitionBatch, indices: &[usize]) -> Result<()> {
        for &i in indices {
            self.digest.update((i as u64).to_le_bytes());
        }
        self.last_metrics = Some(self.agent.train_step(batch, &mut self.update_noise)?);
        Ok(())
    }

    fn maybe_reset(&mut self, t: u64) {
        if self.config.regularizers.output_reset && (t + 1) % self.config.reset_interval == 0 {
            let seed = event_seed(self.config.seed, Stream::OutputReset, self.resets);
            self.agent.reset_critic_output_layers(seed);
            self.resets += 1;
        }
    }

    fn checkpoint_records(&mut self, step: u64, buffer: &ReplayBuffer, validation: Option<&TransitionBatch>) -> Result<()> {
        if let Some(metrics) = self.last_metrics {
            self.log.push(LogRecord::Train {
                step,
                updates: self.agent.updates,
                metrics,
            });
        }
        let returns = evaluate(&self.agent, self.config.env, self.config.seed, self.config.eval_episodes)?;
        let mean_return = returns.iter().sum::<f64>() / returns.len() as f64;
        self.log.push(LogRecord::Eval { step, mean_return, returns });
        if let Some(val) = validation {
            let seed = event_seed(self.config.seed, Stream::Diagnostics, self.evals);
            let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            let n = VALIDATION_SIZE.min(buffer.len());
            let idx = buffer.sample_indices(n, &mut rng)?;
            let train = buffer.gather(&idx)?;
            let options = ReportOptions { seed, ..ReportOptions::default() };
            let report = compute_report(&self.agent, val, &train, step, Some(mean_return), &options)?;
            self.log.push(LogRecord::Diagnostics(report));
        }
        let digest = std::mem::take(&mut self.digest).finalize();
        self.log.push(LogRecord::Batches {
            step,
            updates: self.agent.updates,
            digest: hex::encode(digest),
        });
        self.evals += 1;
        Ok(())
    }

    fn finish(&mut self, step: u64, outcome: &Result<()>) {
        let (status, checkpoint, message) = match outcome {
            Ok(()) => (RunStatus::Completed, Some(CHECKPOINT_FILE.to_string()), None),
            Err(e) => (RunStatus::Aborted, None, Some(e.to_string())),
        };
        self.log.push(LogRecord::Final {
            step,
            status,
            checkpoint,
            message,
        });
    }
}

/// Mean-action returns of `episodes` fresh episodes on a dedicated
/// environment instance. Start states depend only on `(seed, episode)`.
pub fn evaluate(agent: &SacAgent, env_id: EnvId, seed: u64, episodes: usize) -> Result<Vec<f64>> {
    let mut env = Env::new(env_id);
    (0..episodes)
        .map(|e| {
            let mut obs = env.reset(event_seed(seed, Stream::Evaluation, e as u64));
            let mut total = 0.0;
            loop {
                let out = env.step(&agent.act_deterministic(&obs)?)?;
                total += out.reward;
                obs = out.observation;
                if out.terminated || out.truncated {
                    break Ok(total);
                }
            }
        })
        .collect()
}

/// Returns of a uniformly random policy; the floor trained agents are compared against.
pub fn random_policy_returns(env_id: EnvId, seed: u64, episodes: usize) -> Result<Vec<f64>> {
    let mut env = Env::new(env_id);
    let mut rng = stream_rng(seed, Stream::Exploration);
    let a = env_id.spec().action_dim;
    (0..episodes)
        .map(|e| {
            env.reset(event_seed(seed, Stream::Evaluation, e as u64));
            let mut total = 0.0;
            loop {
                let action: Vec<f64> = (0..a).map(|_| rng.random_range(-1.0..=1.0)).collect();
                let out = env.step(&action)?;
                total += out.reward;
                if out.truncated || out.terminated {
                    break Ok(total);
                }
            }
        })
        .collect()
}

/// Hooks for callers that need to see every stored transition.
pub trait TransitionObserver {
    fn observe(&mut self, record: &TransitionRecord);
}

impl TransitionObserver for () {
    fn observe(&mut self, _: &TransitionRecord) {}
}

/// Runs `config` with its data source. `validation` enables diagnostics.
pub fn run_experiment(config: &ExperimentConfig, validation: Option<&TransitionBatch>) -> Result<RunOutput> {
    run_with_observer(config, validation, &mut ())
}

pub fn run_with_observer(
    config: &ExperimentConfig,
    validation: Option<&TransitionBatch>,
    observer: &mut dyn TransitionObserver,
) -> Result<RunOutput> {
    config.validate()?;
    let validation = if config.diagnostics { validation } else { None };
    if let Some(v) = validation {
        let spec = config.env.spec();
        if v.states.cols() != spec.obs_dim || v.actions.cols() != spec.action_dim {
            return Err(Error::Config(format!("validation data does not match {}", config.env)));
        }
    }
    let boundary = config.provider_steps();
    let mut student = Learner::new(config.clone())?;
    let mut provider = match config.provider_config() {
        Some(pc) if boundary > 0 => Some(Learner::new(pc)?),
        _ => None,
    };
    let spec = config.env.spec();
    let mut buffer = ReplayBuffer::new(spec.obs_dim, spec.action_dim, config.replay_capacity);
    let mut next_episode = 0u64;
    let mut step = 0u64;

    let outcome = (|| -> Result<()> {
        for t in 0..config.total_steps {
            let provided = t < boundary;
            if t == boundary {
                if let Some(p) = &provider {
                    // the student starts a new episode where the provider left off mid-episode
                    if p.env.state().step != 0 {
                        next_episode += 1;
                    }
                }
            }
            let collector = match (&mut provider, provided) {
                (Some(p), true) => p,
                _ => &mut student,
            };
            let before = collector.episodes;
            let record = collector.collect(t, next_episode)?;
            if collector.episodes != before {
                next_episode += 1;
            }
            observer.observe(&record);
            buffer.push(record)?;

            if buffer.len() >= config.batch_size && t + 1 >= config.warmup_steps {
                let sampler = match (&mut provider, provided) {
                    (Some(p), true) => p,
                    _ => &mut student,
                };
                let indices = buffer.sample_indices(config.batch_size, &mut sampler.replay)?;
                let batch = buffer.gather(&indices)?;
                if let (Some(p), true) = (&mut provider, provided) {
                    p.train(&batch, &indices)?;
                }
                student.train(&batch, &indices)?;
            }
            if let (Some(p), true) = (&mut provider, provided) {
                p.maybe_reset(t);
            }
            student.maybe_reset(t);
            step = t + 1;

            if step % config.eval_interval == 0 || step == config.total_steps {
                if let (Some(p), true) = (&mut provider, provided) {
                    p.checkpoint_records(step, &buffer, validation)?;
                }
                student.checkpoint_records(step, &buffer, validation)?;
            }
        }
        Ok(())
    })();

    match &outcome {
        Err(Error::NonFinite(_)) | Ok(()) => {}
        Err(_) => return Err(outcome.unwrap_err()),
    }
    student.finish(step, &outcome);
    let provider_parts = provider.map(|mut p| {
        p.finish(step.min(boundary), &outcome);
        (p.log, p.agent)
    });
    let (provider_log, provider_agent) = match provider_parts {
        Some((l, a)) => (Some(l), Some(a)),
        None => (None, None),
    };
    Ok(RunOutput {
        log: student.log,
        agent: student.agent,
        provider_log,
        provider_agent,
        buffer,
        steps: step,
    })
}

/// Self-collected training.
pub fn run_standard(config: &ExperimentConfig, validation: Option<&TransitionBatch>) -> Result<RunOutput> {
    let mut c = config.clone();
    c.data_source = super::config::DataSource::SelfCollect;
    run_experiment(&c, validation)
}

fn provider_spec_of(student: &ExperimentConfig, provider: &ExperimentConfig) -> Result<super::config::ProviderSpec> {
    let same = |a: &ExperimentConfig| {
        (
            a.env,
            a.total_steps,
            a.batch_size,
            a.replay_capacity,
            a.warmup_steps,
            a.eval_interval,
            a.eval_episodes,
            a.critic_hidden.clone(),
            a.reset_interval,
            a.diagnostics,
        )
    };
    if student.env != provider.env {
        return Err(Error::Config(format!("provider runs on {} but student on {}", provider.env, student.env)));
    }
    if same(student) != same(provider) {
        return Err(Error::Config("provider and student differ in schedule or critic settings".into()));
    }
    Ok(super::config::ProviderSpec {
        actor_size: provider.actor_size,
        mode: provider.mode,
        regularizers: provider.regularizers.clone(),
        mask_actor_inputs: provider.mask_actor_inputs,
        seed: provider.seed,
    })
}

/// Student trained only on the provider's batches; the student never acts.
pub fn run_tandem(student: &ExperimentConfig, provider: &ExperimentConfig, validation: Option<&TransitionBatch>) -> Result<RunOutput> {
    let mut c = student.clone();
    c.data_source = super::config::DataSource::Tandem(provider_spec_of(student, provider)?);
    run_experiment(&c, validation)
}

/// Provider data for the first `fraction` of training, the student's own afterwards.
pub fn run_fraction_switch(
    student: &ExperimentConfig,
    provider: &ExperimentConfig,
    fraction: f64,
    validation: Option<&TransitionBatch>,
) -> Result<RunOutput> {
    let mut c = student.clone();
    c.data_source = super::config::DataSource::FractionSwitch(provider_spec_of(student, provider)?, fraction);
    run_experiment(&c, validation)
}
