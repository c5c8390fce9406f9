//! Deterministic continuous-control tasks with rewards in `[0, 1]` and
//! 1000-step episodes.
//!
//! Every environment is a plain value: its complete dynamical state lives in
//! [`EnvState`], so saving and restoring that struct reproduces a trajectory
//! exactly.

mod cartpole;
mod pendulum;
mod reacher;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

pub use pendulum::pendulum_energy;

pub const EPISODE_LENGTH: usize = 1000;
pub const CONTROL_DT: f64 = 0.02;
/// Integration substeps per control step.
pub const SUBSTEPS: usize = 100;
pub const ACTION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvId {
    PendulumSwingup,
    CartpoleSwingup,
    PointmassReacher,
}

impl EnvId {
    pub const ALL: [EnvId; 3] = [EnvId::PendulumSwingup, EnvId::CartpoleSwingup, EnvId::PointmassReacher];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::PendulumSwingup => "pendulum_swingup",
            EnvId::CartpoleSwingup => "cartpole_swingup",
            EnvId::PointmassReacher => "pointmass_reacher",
        }
    }

    pub fn spec(self) -> EnvSpec {
        let (obs_dim, action_dim) = match self {
            EnvId::PendulumSwingup => (3, 1),
            EnvId::CartpoleSwingup => (5, 1),
            EnvId::PointmassReacher => (6, 2),
        };
        EnvSpec {
            obs_dim,
            action_dim,
            episode_length: EPISODE_LENGTH,
        }
    }

    /// Default training budget in environment steps.
    pub fn default_steps(self) -> u64 {
        match self {
            EnvId::CartpoleSwingup => 500_000,
            _ => 200_000,
        }
    }
}

impl std::str::FromStr for EnvId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EnvId::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown environment '{s}'")))
    }
}

impl std::fmt::Display for EnvId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvSpec {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub episode_length: usize,
}

/// Physical state plus the step counter of the current episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub physical: Vec<f64>,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Env {
    id: EnvId,
    state: EnvState,
}

impl Env {
    /// A fresh environment; call [`Env::reset`] before stepping.
    pub fn new(id: EnvId) -> Self {
        let mut env = Self {
            id,
            state: EnvState { physical: Vec::new(), step: 0 },
        };
        env.reset(0);
        env
    }

    pub fn id(&self) -> EnvId {
        self.id
    }

    pub fn spec(&self) -> EnvSpec {
        self.id.spec()
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn restore(&mut self, state: EnvState) -> Result<()> {
        let expected = match self.id {
            EnvId::PendulumSwingup => 2,
            EnvId::CartpoleSwingup => 4,
            EnvId::PointmassReacher => 6,
        };
        if state.physical.len() != expected || state.step > EPISODE_LENGTH {
            return Err(shape_err(format!("state of width {} for {}", state.physical.len(), self.id)));
        }
        self.state = state;
        Ok(())
    }

    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = EnvState {
            physical: match self.id {
                EnvId::PendulumSwingup => pendulum::initial_state(&mut rng),
                EnvId::CartpoleSwingup => cartpole::initial_state(&mut rng),
                EnvId::PointmassReacher => reacher::initial_state(&mut rng),
            },
            step: 0,
        };
        self.observation()
    }

    pub fn observation(&self) -> Vec<f64> {
        let s = &self.state.physical;
        match self.id {
            EnvId::PendulumSwingup => pendulum::observe(s),
            EnvId::CartpoleSwingup => cartpole::observe(s),
            EnvId::PointmassReacher => reacher::observe(s),
        }
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let spec = self.spec();
        if action.len() != spec.action_dim {
            return Err(shape_err(format!("action of width {} for {}", action.len(), self.id)));
        }
        if self.state.step >= spec.episode_length {
            return Err(Error::Usage("episode already truncated; reset first".into()));
        }
        let action = clip_action(action)?;
        let s = &mut self.state.physical;
        let reward = match self.id {
            EnvId::PendulumSwingup => pendulum::advance(s, &action),
            EnvId::CartpoleSwingup => cartpole::advance(s, &action),
            EnvId::PointmassReacher => reacher::advance(s, &action),
        };
        self.state.step += 1;
        Ok(StepResult {
            observation: self.observation(),
            reward,
            terminated: false,
            truncated: self.state.step == spec.episode_length,
        })
    }
}

/// Clips actions that exceed `[−1, 1]` by at most the tolerance and rejects the rest.
pub fn clip_action(action: &[f64]) -> Result<Vec<f64>> {
    action
        .iter()
        .map(|&a| {
            if a.is_nan() {
                Err(Error::InvalidInput("NaN action".into()))
            } else if a.abs() > 1.0 + ACTION_TOLERANCE {
                Err(Error::InvalidInput(format!("action {a} outside [-1, 1]")))
            } else {
                Ok(a.clamp(-1.0, 1.0))
            }
        })
        .collect()
}

/// Smooth bump that is 1 at zero and decays with `x / scale`.
#[inline]
pub(crate) fn bump(x: f64, scale: f64) -> f64 {
    let z = x / scale;
    1.0 / (1.0 + z * z)
}
