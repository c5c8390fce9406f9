//! Soft Actor-Critic with separately sized actor and critics.
//!
//! One [`SacAgent::train_step`] performs, in order: a critic update on both
//! critics, an actor update, a temperature update and a Polyak target update.
//! The aggregation mode decides how the two critic estimates are combined in
//! the soft value target and in the actor objective.

pub mod checkpoint;
pub mod critic;
pub mod policy;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::adam::ScalarAdam;
use crate::nn::norm::NormKind;
use crate::nn::{adam_step, AdamConfig, AdamState, Gradients};
use crate::storage::TransitionBatch;

pub use critic::{bias_corrected_critic_forward, AggregationMode, CriticSet, CriticSpec, TwinCritics};
pub use policy::{every_third_mask, GaussianTanhPolicy, PolicySample};

/// Learned entropy temperature, `α = exp(log α)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Temperature {
    pub log_alpha: f64,
    pub target_entropy: f64,
    pub optimizer: ScalarAdam,
}

impl Temperature {
    pub fn new(initial_alpha: f64, target_entropy: f64, config: AdamConfig) -> Self {
        Self {
            log_alpha: initial_alpha.ln(),
            target_entropy,
            optimizer: ScalarAdam::new(config),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn update(&mut self, log_probs: &[f64]) -> f64 {
        let (loss, grad) = temperature_loss(self, log_probs);
        self.optimizer.step(&mut self.log_alpha, grad);
        loss
    }
}

/// `−log α · mean(log π + target_entropy)` and its derivative in `log α`.
pub fn temperature_loss(temperature: &Temperature, log_probs: &[f64]) -> (f64, f64) {
    let n = log_probs.len().max(1) as f64;
    let m = log_probs.iter().map(|lp| lp + temperature.target_entropy).sum::<f64>() / n;
    (-temperature.log_alpha * m, -m)
}

/// Soft value target `agg(Q̄1, Q̄2)(x', a') − α·log π(a'|x')` for `a' ~ π(·|x')`.
pub fn soft_value_target(
    critics: &TwinCritics,
    policy: &GaussianTanhPolicy,
    alpha: f64,
    next_states: &Matrix,
    mode: AggregationMode,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let noise = policy.draw_noise(next_states.rows(), rng);
    soft_value_target_with_noise(critics, policy, alpha, next_states, mode, &noise)
}

/// [`soft_value_target`] with explicit reparameterization noise.
pub fn soft_value_target_with_noise(
    critics: &TwinCritics,
    policy: &GaussianTanhPolicy,
    alpha: f64,
    next_states: &Matrix,
    mode: AggregationMode,
    noise: &Matrix,
) -> Result<Vec<f64>> {
    let sample = policy.sample_with_noise(next_states, noise)?;
    let side = critics.side_from_latent(sample.latent())?;
    let (q1, q2) = critics.q_values(CriticSet::Target, next_states, &sample.actions, side.as_ref())?;
    Ok((0..q1.len())
        .map(|i| mode.combine(q1[i], q2[i]) - alpha * sample.log_probs[i])
        .collect())
}

/// `r + γ·(1 − terminated)·V̄(x')`; truncated transitions bootstrap.
pub fn td_targets(batch: &TransitionBatch, next_values: &[f64], gamma: f64) -> Vec<f64> {
    batch
        .rewards
        .iter()
        .zip(&batch.terminated)
        .zip(next_values)
        .map(|((&r, &done), &v)| if done { r } else { r + gamma * v })
        .collect()
}

#[derive(Debug, Clone)]
pub struct CriticLoss {
    pub loss: f64,
    /// `|Q_i(x, a) − y|` per transition for each critic.
    pub td_errors: [Vec<f64>; 2],
    pub grads: [Gradients; 2],
}

impl CriticLoss {
    /// Per-transition TD error averaged over the two critics.
    pub fn mean_td_errors(&self) -> Vec<f64> {
        self.td_errors[0].iter().zip(&self.td_errors[1]).map(|(a, b)| 0.5 * (a + b)).collect()
    }
}

/// Mean over batch and critics of `½(Q_i(x, a) − (r + γ(1 − d)V̄(x')))²`.
///
/// `next_values` are treated as constants; no gradient reaches the targets.
pub fn critic_loss(
    critics: &TwinCritics,
    batch: &TransitionBatch,
    side: Option<&Matrix>,
    next_values: &[f64],
    gamma: f64,
) -> Result<CriticLoss> {
    let b = batch.len();
    if next_values.len() != b {
        return Err(Error::Shape(format!("{} targets for {b} transitions", next_values.len())));
    }
    let y = td_targets(batch, next_values, gamma);
    let fwd = critics.forward(CriticSet::Online, &batch.states, &batch.actions, side)?;
    let scale = 1.0 / (2.0 * b as f64);
    let mut loss = 0.0;
    let mut td_errors = [vec![0.0; b], vec![0.0; b]];
    let mut grads = Vec::with_capacity(2);
    for (i, q) in [&fwd.q1, &fwd.q2].into_iter().enumerate() {
        let mut g = Matrix::zeros(b, 1);
        for k in 0..b {
            let delta = q[k] - y[k];
            loss += 0.5 * delta * delta * scale;
            td_errors[i][k] = delta.abs();
            g[(k, 0)] = delta * scale;
        }
        grads.push(critics.online[i].backward(&fwd.traces[i], &g)?.grads);
    }
    let [g1, g2]: [Gradients; 2] = grads.try_into().expect("two critics");
    Ok(CriticLoss { loss, td_errors, grads: [g1, g2] })
}

#[derive(Debug, Clone)]
pub struct ActorLoss {
    pub loss: f64,
    pub grads: Gradients,
    pub log_probs: Vec<f64>,
}

/// `mean_x [α·log π(a|x) − agg(Q1, Q2)(x, a)]` with `a` reparameterized.
/// Critic parameters only supply input gradients.
pub fn actor_loss(
    policy: &GaussianTanhPolicy,
    critics: &TwinCritics,
    alpha: f64,
    states: &Matrix,
    mode: AggregationMode,
    rng: &mut impl Rng,
) -> Result<ActorLoss> {
    let noise = policy.draw_noise(states.rows(), rng);
    actor_loss_with_noise(policy, critics, alpha, states, mode, &noise)
}

pub fn actor_loss_with_noise(
    policy: &GaussianTanhPolicy,
    critics: &TwinCritics,
    alpha: f64,
    states: &Matrix,
    mode: AggregationMode,
    noise: &Matrix,
) -> Result<ActorLoss> {
    let b = states.rows();
    let sample = policy.sample_with_noise(states, noise)?;
    let side = critics.side_from_latent(sample.latent())?;
    let fwd = critics.forward(CriticSet::Online, states, &sample.actions, side.as_ref())?;
    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut gq = [Matrix::zeros(b, 1), Matrix::zeros(b, 1)];
    for k in 0..b {
        let (q1, q2) = (fwd.q1[k], fwd.q2[k]);
        loss += (alpha * sample.log_probs[k] - mode.combine(q1, q2)) * inv_b;
        let (w1, w2) = mode.weights(q1, q2);
        gq[0][(k, 0)] = -w1 * inv_b;
        gq[1][(k, 0)] = -w2 * inv_b;
    }
    let obs = states.cols();
    let act = policy.action_dim;
    let mut grad_actions = Matrix::zeros(b, act);
    for i in 0..2 {
        let gin = critics.online[i].input_gradient(&fwd.traces[i], &gq[i])?;
        for k in 0..b {
            for j in 0..act {
                grad_actions[(k, j)] += gin[(k, obs + j)];
            }
        }
    }
    let grad_lp = vec![alpha * inv_b; b];
    let grads = policy.backward(&sample, &grad_actions, &grad_lp)?;
    Ok(ActorLoss { loss, grads, log_probs: sample.log_probs })
}

/// Critic regularizers and the bias-correction variant.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Regularizers {
    pub layer_norm: bool,
    pub spectral_norm: bool,
    pub weight_decay: bool,
    pub l2_init: bool,
    pub output_reset: bool,
    pub bias_correction: bool,
}

impl Regularizers {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    /// Short tags in a fixed order, e.g. `["layernorm", "reset"]`.
    pub fn tags(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.layer_norm {
            out.push("layernorm");
        }
        if self.spectral_norm {
            out.push("spectral");
        }
        if self.weight_decay {
            out.push("wd");
        }
        if self.l2_init {
            out.push("l2init");
        }
        if self.output_reset {
            out.push("reset");
        }
        if self.bias_correction {
            out.push("bc");
        }
        out
    }

    pub fn enable(&mut self, tag: &str) -> Result<()> {
        match tag {
            "layernorm" | "ln" => self.layer_norm = true,
            "spectral" | "sn" => self.spectral_norm = true,
            "wd" | "weight_decay" => self.weight_decay = true,
            "l2init" | "l2_init" => self.l2_init = true,
            "reset" | "output_reset" => self.output_reset = true,
            "bc" | "bias_correction" => self.bias_correction = true,
            other => return Err(Error::Config(format!("unknown regularizer '{other}'"))),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacConfig {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub mode: AggregationMode,
    pub regularizers: Regularizers,
    pub mask_actor_inputs: bool,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub temperature_lr: f64,
    pub initial_temperature: f64,
    pub target_entropy: f64,
    pub weight_decay: f64,
    pub l2_init: f64,
    pub bias_projection: usize,
}

impl SacConfig {
    pub fn new(obs_dim: usize, action_dim: usize, actor_hidden: usize) -> Self {
        Self {
            obs_dim,
            action_dim,
            actor_hidden: vec![actor_hidden; 2],
            critic_hidden: vec![256; 2],
            mode: AggregationMode::Min,
            regularizers: Regularizers::default(),
            mask_actor_inputs: false,
            gamma: 0.99,
            tau: 0.005,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            temperature_lr: 3e-4,
            initial_temperature: 1.0,
            target_entropy: -(action_dim as f64),
            weight_decay: 0.01,
            l2_init: 1e-7,
            bias_projection: 8,
        }
    }

    fn adam(lr: f64) -> AdamConfig {
        AdamConfig { lr, ..AdamConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepMetrics {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub temperature_loss: f64,
    pub alpha: f64,
    pub entropy: f64,
    pub mean_td_error: f64,
    pub mean_next_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SacAgent {
    pub config: SacConfig,
    pub policy: GaussianTanhPolicy,
    pub critics: TwinCritics,
    pub temperature: Temperature,
    pub actor_opt: AdamState,
    pub critic_opts: [AdamState; 2],
    pub updates: u64,
}

impl SacAgent {
    pub fn new(config: SacConfig, rng: &mut impl Rng) -> Result<Self> {
        let regs = &config.regularizers;
        if regs.layer_norm && regs.spectral_norm {
            return Err(Error::Config("layer norm and spectral norm both target the second critic layer".into()));
        }
        let mask = config.mask_actor_inputs.then(|| every_third_mask(config.obs_dim));
        let policy = GaussianTanhPolicy::new(config.obs_dim, &config.actor_hidden, config.action_dim, mask, rng)?;
        let second_layer_norm = if regs.layer_norm {
            NormKind::LayerNorm
        } else if regs.spectral_norm {
            NormKind::Spectral
        } else {
            NormKind::None
        };
        let critics = TwinCritics::new(
            &CriticSpec {
                obs_dim: config.obs_dim,
                action_dim: config.action_dim,
                hidden: config.critic_hidden.clone(),
                second_layer_norm,
                bias_projection: if regs.bias_correction { config.bias_projection } else { 0 },
                tau: config.tau,
            },
            policy.latent_width(),
            rng,
        )?;
        let actor_opt = AdamState::new(&policy.net, SacConfig::adam(config.actor_lr));
        let critic_opts = [
            AdamState::new(&critics.online[0], SacConfig::adam(config.critic_lr)),
            AdamState::new(&critics.online[1], SacConfig::adam(config.critic_lr)),
        ];
        let temperature = Temperature::new(config.initial_temperature, config.target_entropy, SacConfig::adam(config.temperature_lr));
        Ok(Self {
            config,
            policy,
            critics,
            temperature,
            actor_opt,
            critic_opts,
            updates: 0,
        })
    }

    /// Bias correction changes critic input widths and can only be chosen at construction.
    pub fn enable_bias_correction(&mut self) -> Result<()> {
        if self.critics.has_bias_correction() {
            Ok(())
        } else {
            Err(Error::Config("bias correction must be enabled when the agent is constructed".into()))
        }
    }

    pub fn mode(&self) -> AggregationMode {
        self.config.mode
    }

    /// Stochastic action for data collection.
    pub fn act(&self, state: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
        Ok(self.policy.sample_action(state, rng)?.0)
    }

    /// Deterministic (mean) action for evaluation.
    pub fn act_deterministic(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.policy.mean_action(state)
    }

    pub fn train_step(&mut self, batch: &TransitionBatch, rng: &mut impl Rng) -> Result<StepMetrics> {
        let regs = self.config.regularizers.clone();
        let mode = self.config.mode;
        let alpha = self.temperature.alpha();

        if regs.spectral_norm {
            for net in &mut self.critics.online {
                net.refresh_spectral(1);
            }
        }

        // critics
        let next_values = soft_value_target(&self.critics, &self.policy, alpha, &batch.next_states, mode, rng)?;
        let side = self.critics.side_input(&self.policy, &batch.states)?;
        let closs = critic_loss(&self.critics, batch, side.as_ref(), &next_values, self.config.gamma)?;
        if !closs.loss.is_finite() {
            return Err(Error::NonFinite(format!("critic loss at update {}", self.updates)));
        }
        let wd = if regs.weight_decay { self.config.weight_decay } else { 0.0 };
        let l2 = if regs.l2_init { self.config.l2_init } else { 0.0 };
        for i in 0..2 {
            adam_step(&mut self.critics.online[i], &closs.grads[i], &mut self.critic_opts[i], wd, l2)?;
        }

        // actor
        let aloss = actor_loss(&self.policy, &self.critics, alpha, &batch.states, mode, rng)?;
        if !aloss.loss.is_finite() {
            return Err(Error::NonFinite(format!("actor loss at update {}", self.updates)));
        }
        adam_step(&mut self.policy.net, &aloss.grads, &mut self.actor_opt, 0.0, 0.0)?;

        // temperature
        let tloss = self.temperature.update(&aloss.log_probs);

        self.critics.target_update()?;
        self.updates += 1;

        let b = batch.len() as f64;
        let td = closs.mean_td_errors();
        Ok(StepMetrics {
            critic_loss: closs.loss,
            actor_loss: aloss.loss,
            temperature_loss: tloss,
            alpha: self.temperature.alpha(),
            entropy: -aloss.log_probs.iter().sum::<f64>() / b,
            mean_td_error: td.iter().sum::<f64>() / b,
            mean_next_value: next_values.iter().sum::<f64>() / b,
        })
    }

    /// Re-draws both critics' output layers (targets receive the same fresh
    /// layer) and clears the matching optimizer moments.
    pub fn reset_critic_output_layers(&mut self, seed: u64) {
        for i in 0..2 {
            let net = &mut self.critics.online[i];
            net.reset_output_layer(crate::seeding::mix(seed, i as u64));
            let last = net.layers().len() - 1;
            self.critic_opts[i].zero_layer(net, last);
            let fresh = net.layers()[last].clone();
            let target = &mut self.critics.target[i];
            target.layers_mut()[last] = fresh;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.policy.net.is_finite()
            && self.critics.online.iter().all(|n| n.is_finite())
            && self.critics.target.iter().all(|n| n.is_finite())
            && self.temperature.log_alpha.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn temperature_fixed_point_has_zero_gradient() {
        let t = Temperature::new(0.5, -2.0, AdamConfig::default());
        let (_, g) = temperature_loss(&t, &[2.0, 2.0, 2.0]);
        assert_eq!(g, 0.0);
    }

    #[test]
    fn low_entropy_raises_alpha() {
        let mut t = Temperature::new(0.5, -1.0, AdamConfig::default());
        let before = t.alpha();
        // log π = 3 means entropy ≈ −3, below the target of −1
        t.update(&[3.0, 3.0]);
        assert!(t.alpha() > before);
    }

    #[test]
    fn temperature_gradient_matches_scalar_derivative() {
        let t = Temperature::new(0.3, -1.5, AdamConfig::default());
        let lps = [0.2, -0.7, 1.1];
        let (_, g) = temperature_loss(&t, &lps);
        let h = 1e-6;
        let f = |la: f64| {
            let mut t2 = t.clone();
            t2.log_alpha = la;
            temperature_loss(&t2, &lps).0
        };
        let fd = (f(t.log_alpha + h) - f(t.log_alpha - h)) / (2.0 * h);
        assert!((g - fd).abs() < 1e-8);
    }

    #[test]
    fn bias_correction_cannot_be_enabled_late() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut cfg = SacConfig::new(3, 1, 8);
        cfg.critic_hidden = vec![16, 16];
        let mut agent = SacAgent::new(cfg.clone(), &mut rng).unwrap();
        assert!(matches!(agent.enable_bias_correction(), Err(Error::Config(_))));
        cfg.regularizers.bias_correction = true;
        let mut agent = SacAgent::new(cfg, &mut rng).unwrap();
        assert!(agent.enable_bias_correction().is_ok());
        assert_eq!(agent.critics.online[0].layers()[2].in_width(), 16 + 8);
    }

    #[test]
    fn layer_and_spectral_norm_conflict() {
        let mut cfg = SacConfig::new(3, 1, 8);
        cfg.regularizers.layer_norm = true;
        cfg.regularizers.spectral_norm = true;
        assert!(SacAgent::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
