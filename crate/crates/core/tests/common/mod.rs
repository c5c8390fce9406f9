//! Checks shared by the property suites and the acceptance target. Each
//! returns `Err` with a description of the first mismatch.

#![allow(dead_code)]

use asym_ac::agent::{
    actor_loss_with_noise, critic_loss, every_third_mask, soft_value_target_with_noise, AggregationMode, CriticSet, CriticSpec,
    GaussianTanhPolicy, Regularizers, SacAgent, SacConfig, TwinCritics,
};
use asym_ac::diagnostics::policy_entropy_estimate;
use asym_ac::nn::norm::NormKind;
use asym_ac::nn::{adam_step, AdamConfig, AdamState, DenseNetwork, Gradients, NetworkSpec};
use asym_ac::storage::TransitionBatch;
use asym_ac::Matrix;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = std::result::Result<(), String>;

pub fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

pub fn random_batch(obs: usize, act: usize, b: usize, rng: &mut ChaCha8Rng) -> TransitionBatch {
    TransitionBatch {
        states: random(b, obs, rng),
        actions: random(b, act, rng),
        rewards: (0..b).map(|_| rng.random_range(0.0..1.0)).collect(),
        next_states: random(b, obs, rng),
        terminated: (0..b).map(|i| i == 2).collect(),
        truncated: vec![false; b],
    }
}

pub fn critics(obs: usize, act: usize, hidden: usize, norm: NormKind, projection: usize, latent: usize, rng: &mut ChaCha8Rng) -> TwinCritics {
    let spec = CriticSpec {
        obs_dim: obs,
        action_dim: act,
        hidden: vec![hidden, hidden],
        second_layer_norm: norm,
        bias_projection: projection,
        tau: 0.005,
    };
    TwinCritics::new(&spec, latent, rng).unwrap()
}

// ------------------------------------------------------------- gradients

const H: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-4;
/// Floor for gradients that are exactly zero analytically (dead units).
const ABS_FLOOR: f64 = 1e-8;

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= REL_TOL * analytic.abs().max(numeric.abs()) + ABS_FLOOR
}

/// Central differences of `loss` over every parameter of the network
/// selected by `net_of`.
fn numeric_grads<T: Clone>(state: &T, net_of: impl Fn(&mut T) -> &mut DenseNetwork, loss: impl Fn(&T) -> f64) -> Vec<f64> {
    let mut probe = state.clone();
    let count = net_of(&mut probe).parameter_stats().count;
    (0..count)
        .map(|idx| {
            let mut plus = state.clone();
            bump(net_of(&mut plus), idx, H);
            let mut minus = state.clone();
            bump(net_of(&mut minus), idx, -H);
            (loss(&plus) - loss(&minus)) / (2.0 * H)
        })
        .collect()
}

fn bump(net: &mut DenseNetwork, mut idx: usize, delta: f64) {
    for block in net.blocks_mut() {
        if idx < block.len() {
            block[idx] += delta;
            return;
        }
        idx -= block.len();
    }
    panic!("parameter index out of range");
}

fn compare(analytic: &[f64], numeric: &[f64], what: &str) -> Check {
    if analytic.len() != numeric.len() {
        return Err(format!("{what}: {} analytic vs {} numeric entries", analytic.len(), numeric.len()));
    }
    match analytic.iter().zip(numeric).position(|(a, n)| !close(*a, *n)) {
        Some(i) => Err(format!("{what}: entry {i}: analytic {} vs numeric {}", analytic[i], numeric[i])),
        None => Ok(()),
    }
}

fn weighted_sum(out: &Matrix, weights: &Matrix) -> f64 {
    out.as_slice().iter().zip(weights.as_slice()).map(|(a, b)| a * b).sum()
}

/// Numeric derivative of `f` at every entry of `x`.
fn numeric_input_grads(x: &Matrix, f: impl Fn(&Matrix) -> f64) -> Vec<f64> {
    (0..x.as_slice().len())
        .map(|i| {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            let (r, c) = (i / x.cols(), i % x.cols());
            xp[(r, c)] += H;
            xm[(r, c)] -= H;
            (f(&xp) - f(&xm)) / (2.0 * H)
        })
        .collect()
}

/// Parameter, input and side-input gradients of a random network.
pub fn network_gradients(spec: &NetworkSpec, seed: u64, side: bool) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = DenseNetwork::new(spec, &mut rng).unwrap();
    if net.parameter_stats().count > 200 {
        return Err("network exceeds 200 parameters".into());
    }
    let x = random(5, spec.input, &mut rng);
    let s = side.then(|| random(5, spec.side_input, &mut rng));
    let w = random(5, spec.output, &mut rng);
    let loss = |n: &DenseNetwork| weighted_sum(n.forward_with_side(&x, s.as_ref()).unwrap().output(), &w);
    let back = net.backward(&net.forward_with_side(&x, s.as_ref()).unwrap(), &w).unwrap();
    compare(&back.grads.flatten(), &numeric_grads(&net, |n| n, loss), "parameters")?;
    let f = |xx: &Matrix| weighted_sum(net.forward_with_side(xx, s.as_ref()).unwrap().output(), &w);
    compare(back.input.as_slice(), &numeric_input_grads(&x, f), "input")?;
    if let Some(s) = &s {
        let g = |ss: &Matrix| weighted_sum(net.forward_with_side(&x, Some(ss)).unwrap().output(), &w);
        let gs = back.side.as_ref().ok_or("missing side gradient")?;
        compare(gs.as_slice(), &numeric_input_grads(s, g), "side input")?;
    }
    Ok(())
}

pub fn network_cases() -> Vec<(&'static str, NetworkSpec, bool)> {
    vec![
        ("plain", NetworkSpec::mlp(3, &[6, 5], 2), false),
        ("layer norm", NetworkSpec::mlp(3, &[6, 5], 2).with_norm(0, NormKind::LayerNorm).with_norm(1, NormKind::LayerNorm), false),
        ("spectral norm", NetworkSpec::mlp(3, &[6, 5], 2).with_norm(1, NormKind::Spectral), false),
        ("side input", NetworkSpec::mlp(3, &[6, 5], 1).with_side_input(2), true),
    ]
}

/// Twin-critic TD loss gradients, optionally with a side input.
pub fn critic_loss_gradients(seed: u64, norm: NormKind, side_input: bool) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (obs, act) = (3, 2);
    let tc = critics(obs, act, 6, norm, if side_input { 2 } else { 0 }, 4, &mut rng);
    let batch = random_batch(obs, act, 6, &mut rng);
    let side = side_input.then(|| random(batch.len(), 2, &mut rng));
    let next: Vec<f64> = (0..batch.len()).map(|_| rng.random_range(-2.0..2.0)).collect();
    let out = critic_loss(&tc, &batch, side.as_ref(), &next, 0.99).unwrap();
    for i in 0..2 {
        if tc.online[i].parameter_stats().count > 200 {
            return Err("critic exceeds 200 parameters".into());
        }
        let numeric = numeric_grads(&tc, |t| &mut t.online[i], |t| critic_loss(t, &batch, side.as_ref(), &next, 0.99).unwrap().loss);
        compare(&out.grads[i].flatten(), &numeric, &format!("critic {i}"))?;
    }
    Ok(())
}

/// Policy loss gradients through the squashed sample and the critics.
pub fn actor_loss_gradients(seed: u64, mode: AggregationMode, masked: bool) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (obs, act) = (4, 2);
    let mask = masked.then(|| every_third_mask(obs));
    let policy = GaussianTanhPolicy::new(obs, &[5, 5], act, mask, &mut rng).unwrap();
    if policy.net.parameter_stats().count > 200 {
        return Err("actor exceeds 200 parameters".into());
    }
    let tc = critics(obs, act, 6, NormKind::None, 0, 5, &mut rng);
    let states = random(6, obs, &mut rng);
    let noise = policy.draw_noise(6, &mut rng);
    let alpha = rng.random_range(0.05..1.0);
    let out = actor_loss_with_noise(&policy, &tc, alpha, &states, mode, &noise).unwrap();
    let numeric = numeric_grads(&policy, |p| &mut p.net, |p| actor_loss_with_noise(p, &tc, alpha, &states, mode, &noise).unwrap().loss);
    compare(&out.grads.flatten(), &numeric, "actor")
}

// --------------------------------------------------------------- density

/// One-dimensional policy whose output is the constant `(mu, log_std)`.
pub fn constant_policy(mu: f64, log_std: f64) -> GaussianTanhPolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut p = GaussianTanhPolicy::new(1, &[2], 1, None, &mut rng).unwrap();
    let last = p.net.layers_mut().last_mut().unwrap();
    last.weight.fill(0.0);
    last.bias = vec![mu, log_std];
    p
}

/// `∫ f(a) da` over (−1, 1) through `a = tanh(u)`, composite Simpson in `u`.
pub fn integrate_actions(mu: f64, sigma: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (lo, hi) = (mu - 12.0 * sigma, mu + 12.0 * sigma);
    let n = 20_000;
    let h = (hi - lo) / n as f64;
    let g = |u: f64| {
        let t = u.tanh();
        f(t) * (1.0 - t * t)
    };
    let mut s = g(lo) + g(hi);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(lo + i as f64 * h);
    }
    s * h / 3.0
}

fn log_prob_1d(p: &GaussianTanhPolicy, a: f64) -> f64 {
    p.log_prob(&Matrix::zeros(1, 1), &Matrix::from_vec(1, 1, vec![a])).unwrap()[0]
}

pub fn density_mass(mu: f64, log_std: f64) -> Check {
    let p = constant_policy(mu, log_std);
    let mass = integrate_actions(mu, log_std.exp(), |a| log_prob_1d(&p, a).exp());
    if (mass - 1.0).abs() <= 1e-3 {
        Ok(())
    } else {
        Err(format!("mu {mu} log_std {log_std}: mass {mass}"))
    }
}

/// Monte-Carlo entropy from `n` samples, both from sampled log-probs and
/// from the diagnostics estimator, against the quadrature entropy.
pub fn entropy_matches_quadrature(mu: f64, log_std: f64, n: usize, seed: u64) -> Check {
    let p = constant_policy(mu, log_std);
    let exact = -integrate_actions(mu, log_std.exp(), |a| {
        let lp = log_prob_1d(&p, a);
        lp.exp() * lp
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<f64> = p.sample(&Matrix::zeros(n, 1), &mut rng).unwrap().log_probs.iter().map(|l| -l).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    if (mean - exact).abs() > 3.0 * se {
        return Err(format!("mu {mu} log_std {log_std}: sampled {mean} vs {exact} (se {se})"));
    }
    let estimate = policy_entropy_estimate(&p, &Matrix::zeros(1, 1), n, seed).unwrap();
    if (estimate - exact).abs() > 3.0 * se {
        return Err(format!("mu {mu} log_std {log_std}: estimator {estimate} vs {exact} (se {se})"));
    }
    Ok(())
}

// ----------------------------------------------------------- aggregation

/// Twin critics whose target networks are independently initialized.
pub fn disagreeing_critics(obs: usize, act: usize, rng: &mut ChaCha8Rng) -> TwinCritics {
    let mut c = critics(obs, act, 8, NormKind::None, 0, 1, rng);
    c.target = [c.online[1].clone(), DenseNetwork::new(&NetworkSpec::mlp(obs + act, &[8, 8], 1), rng).unwrap()];
    c
}

/// `MIN ≤ MEAN ≤ MAX` on soft value targets, with equality exactly where
/// the twins agree.
pub fn targets_ordered(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (obs, act) = (3, 2);
    let critics = disagreeing_critics(obs, act, &mut rng);
    let policy = GaussianTanhPolicy::new(obs, &[4], act, None, &mut rng).unwrap();
    let next = random(8, obs, &mut rng);
    let noise = policy.draw_noise(8, &mut rng);
    let alpha = rng.random_range(0.0..1.0);
    let t = |m| soft_value_target_with_noise(&critics, &policy, alpha, &next, m, &noise).unwrap();
    let (lo, mid, hi) = (t(AggregationMode::Min), t(AggregationMode::Mean), t(AggregationMode::Max));
    let actions = policy.sample_with_noise(&next, &noise).unwrap().actions;
    let (q1, q2) = critics.q_values(CriticSet::Target, &next, &actions, None).unwrap();
    for i in 0..next.rows() {
        let ordered = lo[i] <= mid[i] && mid[i] <= hi[i];
        let equal = lo[i] == mid[i] && mid[i] == hi[i];
        if !ordered || equal != (q1[i] == q2[i]) {
            return Err(format!("row {i}: min {} mean {} max {} (q1 {} q2 {})", lo[i], mid[i], hi[i], q1[i], q2[i]));
        }
    }
    Ok(())
}

/// With identical twins every mode yields the same targets, losses and gradients.
pub fn identical_twins_agree(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (obs, act) = (3, 2);
    let mut critics = disagreeing_critics(obs, act, &mut rng);
    critics.online[1] = critics.online[0].clone();
    critics.target[1] = critics.target[0].clone();
    let policy = GaussianTanhPolicy::new(obs, &[4], act, None, &mut rng).unwrap();
    let batch = random_batch(obs, act, 8, &mut rng);
    let noise = policy.draw_noise(8, &mut rng);
    let per_mode: Vec<_> = AggregationMode::ALL
        .iter()
        .map(|&m| {
            let next = soft_value_target_with_noise(&critics, &policy, 0.3, &batch.next_states, m, &noise).unwrap();
            let c = critic_loss(&critics, &batch, None, &next, 0.99).unwrap();
            let a = actor_loss_with_noise(&policy, &critics, 0.3, &batch.states, m, &noise).unwrap();
            (next, c.loss, c.grads[0].flatten(), c.grads[1].flatten(), a.loss, a.grads.flatten())
        })
        .collect();
    if per_mode.iter().all(|m| *m == per_mode[0]) {
        Ok(())
    } else {
        Err("modes disagree on identical twins".into())
    }
}

// ---------------------------------------------------------- regularizers

pub fn small_agent(regs: Regularizers, seed: u64) -> SacAgent {
    let mut config = SacConfig::new(3, 1, 8);
    config.critic_hidden = vec![16, 16];
    config.regularizers = regs;
    SacAgent::new(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

pub fn largest_singular_value(w: &Matrix) -> f64 {
    DMatrix::from_row_slice(w.rows(), w.cols(), w.as_slice()).singular_values().max()
}

/// After `steps` updates, the normalized second critic layer has unit
/// spectral norm once power iteration has converged on the final weights.
pub fn spectral_sigma_after_training(seed: u64, steps: usize) -> Check {
    let regs = Regularizers { spectral_norm: true, ..Regularizers::default() };
    let mut agent = small_agent(regs, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let batch = random_batch(3, 1, 32, &mut rng);
    for _ in 0..steps {
        agent.train_step(&batch, &mut rng).unwrap();
    }
    for net in &agent.critics.online {
        let mut net = net.clone();
        // converge on the final weights; the rate is (σ₂/σ₁)² per iteration
        net.refresh_spectral(5000);
        let (w, sigma) = net.layers()[1].effective_weight();
        if sigma.is_none() {
            return Err("second critic layer is not spectrally normalized".into());
        }
        let s = largest_singular_value(&w);
        if (s - 1.0).abs() > 1e-3 {
            return Err(format!("sigma_max {s}"));
        }
    }
    Ok(())
}

/// Output resets leave every other layer of both online and target critics
/// bit-identical, re-draw the output layer and leave the actor alone.
pub fn reset_preserves_hidden_layers(seed: u64) -> Check {
    let mut agent = small_agent(Regularizers::default(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e5e7);
    let batch = random_batch(3, 1, 32, &mut rng);
    for _ in 0..20 {
        agent.train_step(&batch, &mut rng).unwrap();
    }
    let before = agent.clone();
    agent.reset_critic_output_layers(seed.wrapping_add(99));
    for i in 0..2 {
        let (old, new) = (&before.critics.online[i], &agent.critics.online[i]);
        let last = new.layers().len() - 1;
        for k in 0..last {
            if old.layers()[k] != new.layers()[k] || before.critics.target[i].layers()[k] != agent.critics.target[i].layers()[k] {
                return Err(format!("critic {i} layer {k} changed"));
            }
        }
        if old.layers()[last] == new.layers()[last] {
            return Err(format!("critic {i} output layer was not re-drawn"));
        }
        if agent.critics.target[i].layers()[last] != new.layers()[last] {
            return Err(format!("critic {i} target output layer not synced"));
        }
    }
    if before.policy != agent.policy {
        return Err("actor changed".into());
    }
    Ok(())
}

fn distances(net: &DenseNetwork, snapshot: &[Vec<f64>]) -> Vec<f64> {
    net.blocks().iter().zip(snapshot).flat_map(|(b, s)| b.iter().zip(s).map(|(p, p0)| (p - p0).abs())).collect()
}

/// Under zero task gradient, each Adam step with the L2-init penalty moves
/// every parameter strictly closer to its initial value.
pub fn l2_init_pull(seed: u64, steps: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = DenseNetwork::new(&NetworkSpec::mlp(4, &[8, 8], 1), &mut rng).unwrap();
    let snapshot = net.init_snapshot().to_vec();
    for block in net.blocks_mut() {
        for p in block.iter_mut() {
            *p += if rng.random_bool(0.5) { 0.05 } else { -0.05 };
        }
    }
    let mut opt = AdamState::new(&net, AdamConfig::default());
    let zeros = Gradients::zeros_like(&net);
    for step in 0..steps {
        let d0 = distances(&net, &snapshot);
        adam_step(&mut net, &zeros, &mut opt, 0.0, 1e-7).unwrap();
        let d1 = distances(&net, &snapshot);
        if let Some(i) = d0.iter().zip(&d1).position(|(a, b)| b >= a) {
            return Err(format!("step {step}: parameter {i} distance {} -> {}", d0[i], d1[i]));
        }
    }
    Ok(())
}
