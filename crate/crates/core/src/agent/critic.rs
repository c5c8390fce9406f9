use rand::Rng;
use serde::{Deserialize, Serialize};

use super::policy::GaussianTanhPolicy;
use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::nn::norm::NormKind;
use crate::nn::{DenseNetwork, ForwardTrace, NetworkSpec};

/// How the two critic estimates are combined in the value target and the
/// policy objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMode {
    Min,
    Mean,
    Max,
}

impl AggregationMode {
    pub const ALL: [AggregationMode; 3] = [AggregationMode::Min, AggregationMode::Mean, AggregationMode::Max];

    #[inline]
    pub fn combine(self, q1: f64, q2: f64) -> f64 {
        match self {
            AggregationMode::Min => q1.min(q2),
            AggregationMode::Mean => 0.5 * (q1 + q2),
            AggregationMode::Max => q1.max(q2),
        }
    }

    /// Weights `(w1, w2)` with `∂combine = w1·∂q1 + w2·∂q2`. Ties go to the first critic.
    #[inline]
    pub fn weights(self, q1: f64, q2: f64) -> (f64, f64) {
        match self {
            AggregationMode::Min => {
                if q1 <= q2 {
                    (1.0, 0.0)
                } else {
                    (0.0, 1.0)
                }
            }
            AggregationMode::Mean => (0.5, 0.5),
            AggregationMode::Max => {
                if q1 >= q2 {
                    (1.0, 0.0)
                } else {
                    (0.0, 1.0)
                }
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AggregationMode::Min => "min",
            AggregationMode::Mean => "mean",
            AggregationMode::Max => "max",
        }
    }
}

impl std::str::FromStr for AggregationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "min" => Ok(Self::Min),
            "mean" | "avg" => Ok(Self::Mean),
            "max" => Ok(Self::Max),
            other => Err(Error::Config(format!("unknown aggregation mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticSet {
    Online,
    Target,
}

/// Construction options for [`TwinCritics`].
#[derive(Debug, Clone, PartialEq)]
pub struct CriticSpec {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
    /// Normalizer on the second hidden layer.
    pub second_layer_norm: NormKind,
    /// Width of the projected actor latent appended to the final hidden layer; 0 disables it.
    pub bias_projection: usize,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinCritics {
    pub online: [DenseNetwork; 2],
    pub target: [DenseNetwork; 2],
    pub tau: f64,
    /// Frozen projection of the actor's final hidden activation.
    pub projection: Option<DenseNetwork>,
}

/// Twin critic outputs with the traces needed for backpropagation.
#[derive(Debug)]
pub struct TwinForward {
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
    pub traces: [ForwardTrace; 2],
}

impl TwinCritics {
    /// `actor_latent_width` is only used when a bias projection is requested.
    pub fn new(spec: &CriticSpec, actor_latent_width: usize, rng: &mut impl Rng) -> Result<Self> {
        if spec.hidden.len() < 2 && spec.second_layer_norm != NormKind::None {
            return Err(Error::Config("second-layer normalizer needs at least two hidden layers".into()));
        }
        let mut net_spec = NetworkSpec::mlp(spec.obs_dim + spec.action_dim, &spec.hidden, 1).with_side_input(spec.bias_projection);
        if spec.second_layer_norm != NormKind::None {
            net_spec = net_spec.with_norm(1, spec.second_layer_norm);
        }
        let q1 = DenseNetwork::new(&net_spec, rng)?;
        let q2 = DenseNetwork::new(&net_spec, rng)?;
        let projection = if spec.bias_projection > 0 {
            Some(DenseNetwork::new(&NetworkSpec::mlp(actor_latent_width, &[], spec.bias_projection), rng)?)
        } else {
            None
        };
        Ok(Self {
            target: [q1.clone(), q2.clone()],
            online: [q1, q2],
            tau: spec.tau,
            projection,
        })
    }

    pub fn set(&self, which: CriticSet) -> &[DenseNetwork; 2] {
        match which {
            CriticSet::Online => &self.online,
            CriticSet::Target => &self.target,
        }
    }

    pub fn has_bias_correction(&self) -> bool {
        self.projection.is_some()
    }

    /// Projected actor latent for `states`, or `None` without bias correction.
    pub fn side_input(&self, policy: &GaussianTanhPolicy, states: &Matrix) -> Result<Option<Matrix>> {
        match &self.projection {
            None => Ok(None),
            Some(proj) => {
                let trace = policy.net.forward(&policy.masked_input(states))?;
                Ok(Some(proj.predict(trace.last_hidden())?))
            }
        }
    }

    /// Side input computed from an already available actor latent.
    pub fn side_from_latent(&self, latent: &Matrix) -> Result<Option<Matrix>> {
        self.projection.as_ref().map(|p| p.predict(latent)).transpose()
    }

    pub fn forward(&self, which: CriticSet, states: &Matrix, actions: &Matrix, side: Option<&Matrix>) -> Result<TwinForward> {
        if states.rows() != actions.rows() {
            return Err(shape_err("states and actions differ in batch size"));
        }
        let input = states.hcat(actions);
        let [n1, n2] = self.set(which);
        let t1 = n1.forward_with_side(&input, side)?;
        let t2 = n2.forward_with_side(&input, side)?;
        let q1 = t1.output().as_slice().to_vec();
        let q2 = t2.output().as_slice().to_vec();
        Ok(TwinForward { q1, q2, traces: [t1, t2] })
    }

    /// Twin Q values without traces.
    pub fn q_values(&self, which: CriticSet, states: &Matrix, actions: &Matrix, side: Option<&Matrix>) -> Result<(Vec<f64>, Vec<f64>)> {
        let f = self.forward(which, states, actions, side)?;
        Ok((f.q1, f.q2))
    }

    /// Polyak averaging `θ̄ ← (1 − τ)·θ̄ + τ·θ` for both critics.
    pub fn target_update(&mut self) -> Result<()> {
        let tau = self.tau;
        for (t, o) in self.target.iter_mut().zip(&self.online) {
            t.polyak_from(o, tau)?;
        }
        Ok(())
    }
}

/// Twin Q values with the actor latent routed through the frozen projection.
pub fn bias_corrected_critic_forward(
    critics: &TwinCritics,
    policy: &GaussianTanhPolicy,
    states: &Matrix,
    actions: &Matrix,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !critics.has_bias_correction() {
        return Err(Error::Config("critics were built without bias correction".into()));
    }
    let side = critics.side_input(policy, states)?;
    critics.q_values(CriticSet::Online, states, actions, side.as_ref())
}
