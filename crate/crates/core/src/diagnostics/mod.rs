//! Measurements taken on a frozen agent: overfitting ratios, dormant units,
//! feature rank, validation Q values, policy entropy and parameter norms.
//!
//! Every function borrows the agent immutably, so computing diagnostics can
//! never perturb training.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{soft_value_target_with_noise, td_targets, AggregationMode, CriticSet, GaussianTanhPolicy, SacAgent};
use crate::error::{shape_err, Result};
use crate::linalg::Matrix;
use crate::nn::DenseNetwork;
use crate::storage::TransitionBatch;

/// Number of transitions in a validation buffer.
pub const VALIDATION_SIZE: usize = 11_000;
/// Singular-value mass left out by [`effective_rank`].
pub const SRANK_DELTA: f64 = 0.01;
pub const ENTROPY_SAMPLES: usize = 10;
/// Baselines smaller than this in magnitude yield no relative delta.
pub const BASELINE_EPS: f64 = 1e-12;

/// One diagnostics snapshot. `None` marks a value that could not be
/// computed, such as a ratio with a zero denominator.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub step: u64,
    pub eval_return: Option<f64>,
    pub o_phi_critic: Option<f64>,
    pub o_phi_actor: Option<f64>,
    /// Pooled over all hidden units of both online critics.
    pub dormant_fraction: Option<f64>,
    /// Rank of the first online critic's last hidden layer.
    pub effective_rank: Option<usize>,
    pub actor_dormant_fraction: Option<f64>,
    pub actor_effective_rank: Option<usize>,
    pub mean_validation_q: Option<f64>,
    pub policy_entropy: Option<f64>,
    pub actor_param_norm: f64,
    pub critic_param_norm: f64,
}

/// Which actions the validation Q expectation is evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QActions {
    Stored,
    /// Actions freshly sampled from the current policy using `seed`.
    Fresh { seed: u64 },
}

fn noise_for(policy: &GaussianTanhPolicy, rows: usize, seed: u64) -> Matrix {
    policy.draw_noise(rows, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Per-transition `½(|Q1 − y| + |Q2 − y|)` using the agent's aggregation
/// mode, current temperature and target critics. Next actions are drawn with
/// noise derived from `seed`.
pub fn td_errors(agent: &SacAgent, batch: &TransitionBatch, seed: u64) -> Result<Vec<f64>> {
    let noise = noise_for(&agent.policy, batch.len(), seed);
    let next = soft_value_target_with_noise(
        &agent.critics,
        &agent.policy,
        agent.temperature.alpha(),
        &batch.next_states,
        agent.mode(),
        &noise,
    )?;
    let y = td_targets(batch, &next, agent.config.gamma);
    let side = agent.critics.side_input(&agent.policy, &batch.states)?;
    let (q1, q2) = agent.critics.q_values(CriticSet::Online, &batch.states, &batch.actions, side.as_ref())?;
    Ok((0..y.len()).map(|k| 0.5 * ((q1[k] - y[k]).abs() + (q2[k] - y[k]).abs())).collect())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    let r = num / den;
    (den != 0.0 && r.is_finite()).then_some(r)
}

/// Mean TD error on validation data over mean TD error on training data.
pub fn o_phi_critic(agent: &SacAgent, validation: &TransitionBatch, train: &TransitionBatch, seed: u64) -> Result<Option<f64>> {
    if validation.is_empty() || train.is_empty() {
        return Ok(None);
    }
    let num = mean(&td_errors(agent, validation, seed)?);
    let den = mean(&td_errors(agent, train, seed)?);
    Ok(ratio(num, den))
}

/// Monte-Carlo entropy `−log π(a|x)` per state, averaged over `n_samples`
/// draws. The same noise vectors are used for every state.
pub fn entropy_per_state(policy: &GaussianTanhPolicy, states: &Matrix, n_samples: usize, seed: u64) -> Result<Vec<f64>> {
    if n_samples == 0 {
        return Err(shape_err("entropy estimate needs at least one sample"));
    }
    let draws = noise_for(policy, n_samples, seed);
    let rows = states.rows();
    let mut acc = vec![0.0; rows];
    for j in 0..n_samples {
        let mut noise = Matrix::zeros(rows, policy.action_dim);
        for r in 0..rows {
            noise.row_mut(r).copy_from_slice(draws.row(j));
        }
        let sample = policy.sample_with_noise(states, &noise)?;
        for (a, lp) in acc.iter_mut().zip(&sample.log_probs) {
            *a -= lp;
        }
    }
    Ok(acc.into_iter().map(|a| a / n_samples as f64).collect())
}

pub fn policy_entropy_estimate(policy: &GaussianTanhPolicy, states: &Matrix, n_samples: usize, seed: u64) -> Result<f64> {
    Ok(mean(&entropy_per_state(policy, states, n_samples, seed)?))
}

/// Mean policy entropy on training states over that on validation states.
pub fn o_phi_actor(
    policy: &GaussianTanhPolicy,
    validation_states: &Matrix,
    train_states: &Matrix,
    n_samples: usize,
    seed: u64,
) -> Result<Option<f64>> {
    if validation_states.rows() == 0 || train_states.rows() == 0 {
        return Ok(None);
    }
    let num = policy_entropy_estimate(policy, train_states, n_samples, seed)?;
    let den = policy_entropy_estimate(policy, validation_states, n_samples, seed)?;
    Ok(ratio(num, den))
}

/// Fraction of hidden units whose post-activation is exactly zero on every input.
pub fn dormant_fraction(net: &DenseNetwork, inputs: &Matrix) -> Result<f64> {
    dormant_fraction_with_side(net, inputs, None)
}

pub fn dormant_fraction_with_side(net: &DenseNetwork, inputs: &Matrix, side: Option<&Matrix>) -> Result<f64> {
    let (dormant, total) = dormant_counts(net, inputs, side)?;
    Ok(if total == 0 { 0.0 } else { dormant as f64 / total as f64 })
}

fn dormant_counts(net: &DenseNetwork, inputs: &Matrix, side: Option<&Matrix>) -> Result<(usize, usize)> {
    let trace = net.forward_with_side(inputs, side)?;
    let mut dormant = 0;
    let mut total = 0;
    for h in trace.hidden_activations() {
        total += h.cols();
        let mut alive = vec![false; h.cols()];
        for r in 0..h.rows() {
            for (flag, &v) in alive.iter_mut().zip(h.row(r)) {
                *flag |= v != 0.0;
            }
        }
        dormant += alive.iter().filter(|a| !**a).count();
    }
    Ok((dormant, total))
}

/// Smallest `k` whose top-`k` singular values hold at least `1 − δ` of the
/// singular-value mass. A zero matrix has rank 0.
pub fn effective_rank(features: &Matrix) -> usize {
    if features.rows() == 0 || features.cols() == 0 {
        return 0;
    }
    let m = DMatrix::from_row_slice(features.rows(), features.cols(), features.as_slice());
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    srank_from_singular_values(&sv, SRANK_DELTA)
}

/// Rank rule applied to descending singular values.
pub fn srank_from_singular_values(sorted_desc: &[f64], delta: f64) -> usize {
    let total: f64 = sorted_desc.iter().sum();
    if total <= 0.0 {
        return 0;
    }
    let mut acc = 0.0;
    for (k, s) in sorted_desc.iter().enumerate() {
        acc += s;
        if acc >= (1.0 - delta) * total {
            return k + 1;
        }
    }
    sorted_desc.len()
}

/// Mean aggregated online Q over the validation transitions.
pub fn mean_validation_q(agent: &SacAgent, validation: &TransitionBatch, mode: AggregationMode, actions: QActions) -> Result<f64> {
    let fresh;
    let acts = match actions {
        QActions::Stored => &validation.actions,
        QActions::Fresh { seed } => {
            let noise = noise_for(&agent.policy, validation.len(), seed);
            fresh = agent.policy.sample_with_noise(&validation.states, &noise)?.actions;
            &fresh
        }
    };
    let side = agent.critics.side_input(&agent.policy, &validation.states)?;
    let (q1, q2) = agent.critics.q_values(CriticSet::Online, &validation.states, acts, side.as_ref())?;
    Ok(q1.iter().zip(&q2).map(|(&a, &b)| mode.combine(a, b)).sum::<f64>() / q1.len() as f64)
}

/// `(value − baseline) / baseline`.
pub fn relative_to_baseline(value: f64, baseline: f64) -> Option<f64> {
    (baseline.abs() >= BASELINE_EPS).then(|| (value - baseline) / baseline)
}

/// Options for [`compute_report`].
#[derive(Debug, Clone, Copy)]
pub struct ReportOptions {
    pub entropy_samples: usize,
    pub seed: u64,
    pub q_actions: QActions,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            entropy_samples: ENTROPY_SAMPLES,
            seed: 0,
            q_actions: QActions::Stored,
        }
    }
}

/// Parameter norm of both online critics together.
pub fn critic_param_norm(agent: &SacAgent) -> f64 {
    agent
        .critics
        .online
        .iter()
        .map(|n| n.parameter_stats().l2_norm.powi(2))
        .sum::<f64>()
        .sqrt()
}

/// All diagnostics for one snapshot. Quantities that would be non-finite are
/// reported as missing.
pub fn compute_report(
    agent: &SacAgent,
    validation: &TransitionBatch,
    train: &TransitionBatch,
    step: u64,
    eval_return: Option<f64>,
    options: &ReportOptions,
) -> Result<DiagnosticsReport> {
    let finite = |x: f64| x.is_finite().then_some(x);
    let seed = options.seed;
    let critic_input = validation.states.hcat(&validation.actions);
    let side = agent.critics.side_input(&agent.policy, &validation.states)?;
    let (mut dormant, mut total) = (0, 0);
    for net in &agent.critics.online {
        let (d, t) = dormant_counts(net, &critic_input, side.as_ref())?;
        dormant += d;
        total += t;
    }
    let critic_trace = agent.critics.online[0].forward_with_side(&critic_input, side.as_ref())?;
    let actor_input = agent.policy.masked_input(&validation.states);
    let actor_trace = agent.policy.net.forward(&actor_input)?;
    Ok(DiagnosticsReport {
        step,
        eval_return,
        o_phi_critic: o_phi_critic(agent, validation, train, seed)?,
        o_phi_actor: o_phi_actor(&agent.policy, &validation.states, &train.states, options.entropy_samples, seed)?,
        dormant_fraction: (total > 0).then(|| dormant as f64 / total as f64),
        effective_rank: Some(effective_rank(critic_trace.last_hidden())),
        actor_dormant_fraction: Some(dormant_fraction(&agent.policy.net, &actor_input)?),
        actor_effective_rank: Some(effective_rank(actor_trace.last_hidden())),
        mean_validation_q: finite(mean_validation_q(agent, validation, agent.mode(), options.q_actions)?),
        policy_entropy: finite(policy_entropy_estimate(&agent.policy, &validation.states, options.entropy_samples, seed)?),
        actor_param_norm: agent.policy.net.parameter_stats().l2_norm,
        critic_param_norm: critic_param_norm(agent),
    })
}
