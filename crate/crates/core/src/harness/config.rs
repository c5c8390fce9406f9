//! Experiment configuration: a flat key-value TOML document with typed
//! validation. Defaults are filled in explicitly so that the resolved
//! configuration written next to each run is complete.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{AggregationMode, Regularizers, SacConfig};
use crate::envs::EnvId;
use crate::error::{Error, Result};

pub const DEFAULT_EVAL_INTERVAL: u64 = 10_000;
pub const DEFAULT_EVAL_EPISODES: usize = 10;
pub const DEFAULT_BATCH_SIZE: usize = 256;
pub const DEFAULT_REPLAY_CAPACITY: usize = 1_000_000;
pub const DEFAULT_WARMUP_STEPS: u64 = 1_000;
pub const DEFAULT_RESET_INTERVAL: u64 = 50_000;
pub const DEFAULT_CRITIC_WIDTH: usize = 256;

/// Actor size ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeTag {
    R,
    M,
    S,
    Xs,
}

impl SizeTag {
    pub const ALL: [SizeTag; 4] = [SizeTag::R, SizeTag::M, SizeTag::S, SizeTag::Xs];

    /// Width of each of the actor's two hidden layers.
    pub fn width(self) -> usize {
        match self {
            SizeTag::R => 256,
            SizeTag::M => 128,
            SizeTag::S => 32,
            SizeTag::Xs => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SizeTag::R => "r",
            SizeTag::M => "m",
            SizeTag::S => "s",
            SizeTag::Xs => "xs",
        }
    }
}

impl FromStr for SizeTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SizeTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown actor size '{s}' (expected r, m, s or xs)")))
    }
}

impl fmt::Display for SizeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The agent that collects data for a tandem or fraction-switch student.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderSpec {
    pub actor_size: SizeTag,
    pub mode: AggregationMode,
    pub regularizers: Regularizers,
    pub mask_actor_inputs: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    SelfCollect,
    Tandem(ProviderSpec),
    /// Provider data for the first `fraction` of training, own data afterwards.
    FractionSwitch(ProviderSpec, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvId,
    pub actor_size: SizeTag,
    pub critic_hidden: Vec<usize>,
    pub mode: AggregationMode,
    pub regularizers: Regularizers,
    pub mask_actor_inputs: bool,
    pub data_source: DataSource,
    pub seed: u64,
    pub total_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Steps of uniformly random actions before the policy acts and updates begin.
    pub warmup_steps: u64,
    pub reset_interval: u64,
    pub diagnostics: bool,
}

impl ExperimentConfig {
    pub fn new(env: EnvId) -> Self {
        Self {
            env,
            actor_size: SizeTag::R,
            critic_hidden: vec![DEFAULT_CRITIC_WIDTH; 2],
            mode: AggregationMode::Min,
            regularizers: Regularizers::default(),
            mask_actor_inputs: false,
            data_source: DataSource::SelfCollect,
            seed: 0,
            total_steps: env.default_steps(),
            eval_interval: DEFAULT_EVAL_INTERVAL,
            eval_episodes: DEFAULT_EVAL_EPISODES,
            batch_size: DEFAULT_BATCH_SIZE,
            replay_capacity: DEFAULT_REPLAY_CAPACITY,
            warmup_steps: DEFAULT_WARMUP_STEPS,
            reset_interval: DEFAULT_RESET_INTERVAL,
            diagnostics: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.total_steps == 0 {
            return bad("total_steps must be positive".into());
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return bad("eval_interval and eval_episodes must be positive".into());
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return bad(format!("batch_size {} must be in 1..=replay_capacity {}", self.batch_size, self.replay_capacity));
        }
        if self.critic_hidden.is_empty() || self.critic_hidden.contains(&0) {
            return bad("critic_hidden needs positive widths".into());
        }
        if self.regularizers.output_reset && self.reset_interval == 0 {
            return bad("reset_interval must be positive".into());
        }
        for (who, regs) in std::iter::once(("student", &self.regularizers)).chain(self.provider().map(|p| ("provider", &p.regularizers))) {
            if regs.layer_norm && regs.spectral_norm {
                return bad(format!("{who}: layernorm and spectral both target the second critic layer"));
            }
            if (regs.layer_norm || regs.spectral_norm) && self.critic_hidden.len() < 2 {
                return bad(format!("{who}: critic normalization needs two hidden layers"));
            }
        }
        if let DataSource::FractionSwitch(_, f) = self.data_source {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("fraction {f} outside [0, 1]"));
            }
            let b = f * self.total_steps as f64;
            if (b - b.round()).abs() > 1e-9 {
                return bad(format!("fraction {f} of {} steps is not a whole step", self.total_steps));
            }
        }
        Ok(())
    }

    pub fn provider(&self) -> Option<&ProviderSpec> {
        match &self.data_source {
            DataSource::SelfCollect => None,
            DataSource::Tandem(p) | DataSource::FractionSwitch(p, _) => Some(p),
        }
    }

    /// Number of leading steps in which the provider collects data.
    pub fn provider_steps(&self) -> u64 {
        match self.data_source {
            DataSource::SelfCollect => 0,
            DataSource::Tandem(_) => self.total_steps,
            DataSource::FractionSwitch(_, f) => (f * self.total_steps as f64).round() as u64,
        }
    }

    /// Stand-alone configuration of the provider; it shares everything but
    /// the agent description with the student.
    pub fn provider_config(&self) -> Option<ExperimentConfig> {
        self.provider().map(|p| ExperimentConfig {
            actor_size: p.actor_size,
            mode: p.mode,
            regularizers: p.regularizers.clone(),
            mask_actor_inputs: p.mask_actor_inputs,
            seed: p.seed,
            data_source: DataSource::SelfCollect,
            ..self.clone()
        })
    }

    pub fn sac_config(&self) -> SacConfig {
        let spec = self.env.spec();
        let mut c = SacConfig::new(spec.obs_dim, spec.action_dim, self.actor_size.width());
        c.critic_hidden = self.critic_hidden.clone();
        c.mode = self.mode;
        c.regularizers = self.regularizers.clone();
        c.mask_actor_inputs = self.mask_actor_inputs;
        c
    }

    /// Short description such as `xs/mean+layernorm`.
    pub fn agent_label(&self) -> String {
        agent_label(self.actor_size, self.mode, &self.regularizers, self.mask_actor_inputs)
    }

    /// Agent label plus the data source, e.g. `r/min<tandem:xs/min`.
    pub fn label(&self) -> String {
        let base = self.agent_label();
        match &self.data_source {
            DataSource::SelfCollect => base,
            DataSource::Tandem(p) => format!("{base}<tandem:{}", agent_label(p.actor_size, p.mode, &p.regularizers, p.mask_actor_inputs)),
            DataSource::FractionSwitch(p, f) => {
                format!("{base}<switch{f}:{}", agent_label(p.actor_size, p.mode, &p.regularizers, p.mask_actor_inputs))
            }
        }
    }

    /// First 12 hex digits of the SHA-256 of the resolved configuration with the seed removed.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        let digest = Sha256::digest(c.to_toml().as_bytes());
        hex::encode(digest)[..12].to_string()
    }

    pub fn run_dir_name(&self) -> String {
        format!("{}-seed{}", self.config_hash(), self.seed)
    }

    pub fn to_raw(&self) -> RawConfig {
        let (ds, fraction, provider) = match &self.data_source {
            DataSource::SelfCollect => ("self", None, None),
            DataSource::Tandem(p) => ("tandem", None, Some(p)),
            DataSource::FractionSwitch(p, f) => ("switch", Some(*f), Some(p)),
        };
        RawConfig {
            env: Some(self.env.as_str().into()),
            actor_size: Some(self.actor_size.as_str().into()),
            critic_hidden: Some(self.critic_hidden.clone()),
            mode: Some(self.mode.as_str().into()),
            regularizers: Some(self.regularizers.tags().into_iter().map(String::from).collect()),
            bias_correction: None,
            mask_actor_inputs: Some(self.mask_actor_inputs),
            data_source: Some(ds.into()),
            fraction,
            provider_actor_size: provider.map(|p| p.actor_size.as_str().into()),
            provider_mode: provider.map(|p| p.mode.as_str().into()),
            provider_regularizers: provider.map(|p| p.regularizers.tags().into_iter().map(String::from).collect()),
            provider_mask_actor_inputs: provider.map(|p| p.mask_actor_inputs),
            provider_seed: provider.map(|p| p.seed),
            seed: Some(self.seed),
            total_steps: Some(self.total_steps),
            eval_interval: Some(self.eval_interval),
            eval_episodes: Some(self.eval_episodes),
            batch_size: Some(self.batch_size),
            replay_capacity: Some(self.replay_capacity),
            warmup_steps: Some(self.warmup_steps),
            reset_interval: Some(self.reset_interval),
            diagnostics: Some(self.diagnostics),
        }
    }

    /// Fully resolved configuration as flat TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_raw()).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        RawConfig::from_toml(text)?.resolve()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

fn agent_label(size: SizeTag, mode: AggregationMode, regs: &Regularizers, mask: bool) -> String {
    let mut s = format!("{size}/{mode}");
    for tag in regs.tags() {
        s.push('+');
        s.push_str(tag);
    }
    if mask {
        s.push_str("+mask");
    }
    s
}

/// Unresolved configuration: every key optional. Unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub env: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub actor_size: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub critic_hidden: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none", alias = "agg")]
    pub mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regularizers: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias_correction: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_actor_inputs: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_source: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provider_actor_size: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provider_mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provider_regularizers: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provider_mask_actor_inputs: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provider_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_steps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_interval: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_episodes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replay_capacity: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup_steps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reset_interval: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<bool>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($field:ident),*) => {
        $( if $src.$field.is_some() { $dst.$field = $src.$field.clone(); } )*
    };
}

impl RawConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config: {}", e.message())))
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Keys set in `other` replace those in `self`.
    pub fn overlay(&mut self, other: &RawConfig) {
        overlay!(self, other;
            env, actor_size, critic_hidden, mode, regularizers, bias_correction, mask_actor_inputs,
            data_source, fraction, provider_actor_size, provider_mode, provider_regularizers,
            provider_mask_actor_inputs, provider_seed, seed, total_steps, eval_interval, eval_episodes,
            batch_size, replay_capacity, warmup_steps, reset_interval, diagnostics);
    }

    /// Copies the agent description of `provider` into the `provider_*` keys.
    /// Both documents must name the same environment when both name one.
    pub fn set_provider(&mut self, provider: &RawConfig) -> Result<()> {
        if let (Some(a), Some(b)) = (&self.env, &provider.env) {
            if a != b {
                return Err(Error::Config(format!("provider environment '{b}' differs from '{a}'")));
            }
        }
        self.provider_actor_size = provider.actor_size.clone().or_else(|| Some("r".into()));
        self.provider_mode = provider.mode.clone();
        let mut regs = provider.regularizers.clone().unwrap_or_default();
        if provider.bias_correction == Some(true) {
            regs.push("bc".into());
        }
        self.provider_regularizers = Some(regs);
        self.provider_mask_actor_inputs = provider.mask_actor_inputs;
        self.provider_seed = provider.seed;
        Ok(())
    }

    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let env: EnvId = self.env.as_deref().ok_or_else(|| Error::Config("missing key 'env'".into()))?.parse()?;
        let mut c = ExperimentConfig::new(env);
        if let Some(s) = &self.actor_size {
            c.actor_size = s.parse()?;
        }
        if let Some(h) = &self.critic_hidden {
            c.critic_hidden = h.clone();
        }
        if let Some(m) = &self.mode {
            c.mode = m.parse()?;
        }
        c.regularizers = regularizers(self.regularizers.as_deref().unwrap_or_default())?;
        if self.bias_correction == Some(true) {
            c.regularizers.bias_correction = true;
        }
        c.mask_actor_inputs = self.mask_actor_inputs.unwrap_or(false);
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        take!(seed, total_steps, eval_interval, eval_episodes, batch_size, replay_capacity, warmup_steps, reset_interval, diagnostics);

        let kind = self.data_source.as_deref().unwrap_or("self");
        let provider = || -> Result<ProviderSpec> {
            Ok(ProviderSpec {
                actor_size: self
                    .provider_actor_size
                    .as_deref()
                    .ok_or_else(|| Error::Config(format!("data_source '{kind}' needs provider_actor_size")))?
                    .parse()?,
                mode: self.provider_mode.as_deref().map(str::parse).transpose()?.unwrap_or(AggregationMode::Min),
                regularizers: regularizers(self.provider_regularizers.as_deref().unwrap_or_default())?,
                mask_actor_inputs: self.provider_mask_actor_inputs.unwrap_or(false),
                seed: self.provider_seed.unwrap_or(c.seed),
            })
        };
        c.data_source = match kind {
            "self" => {
                if self.fraction.is_some() || self.provider_actor_size.is_some() {
                    return Err(Error::Config("provider keys given for data_source 'self'".into()));
                }
                DataSource::SelfCollect
            }
            "tandem" => DataSource::Tandem(provider()?),
            "switch" => {
                let f = self.fraction.ok_or_else(|| Error::Config("data_source 'switch' needs 'fraction'".into()))?;
                DataSource::FractionSwitch(provider()?, f)
            }
            other => return Err(Error::Config(format!("unknown data_source '{other}'"))),
        };
        c.validate()?;
        Ok(c)
    }
}

fn regularizers(tags: &[String]) -> Result<Regularizers> {
    let mut r = Regularizers::default();
    for t in tags {
        r.enable(t)?;
    }
    Ok(r)
}

/// Splits a `--data-source` value: `self`, `tandem:<path>` or `switch:<path>:<fraction>`.
pub fn parse_data_source_flag(flag: &str) -> Result<(String, Option<String>, Option<f64>)> {
    if flag == "self" {
        return Ok(("self".into(), None, None));
    }
    if let Some(path) = flag.strip_prefix("tandem:") {
        if !path.is_empty() {
            return Ok(("tandem".into(), Some(path.into()), None));
        }
    }
    if let Some(rest) = flag.strip_prefix("switch:") {
        if let Some((path, frac)) = rest.rsplit_once(':') {
            let f: f64 = frac.parse().map_err(|_| Error::Config(format!("bad fraction '{frac}'")))?;
            if !path.is_empty() {
                return Ok(("switch".into(), Some(path.into()), Some(f)));
            }
        }
    }
    Err(Error::Config(format!(
        "bad data source '{flag}' (expected self, tandem:<cfg> or switch:<cfg>:<fraction>)"
    )))
}
