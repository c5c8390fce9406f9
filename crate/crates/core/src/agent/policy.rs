//! Tanh-squashed diagonal Gaussian policy.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::nn::{DenseNetwork, ForwardTrace, Gradients, NetworkSpec};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

/// `log(1 − tanh²(u))`, stable for large `|u|`.
#[inline]
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Keep-every-third-dimension mask: positions 0, 3, 6, ... are kept.
pub fn every_third_mask(dim: usize) -> Vec<bool> {
    (0..dim).map(|i| i % 3 == 0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTanhPolicy {
    /// Trunk plus a linear output of width `2·action_dim` holding
    /// `[mean | log_std]`.
    pub net: DenseNetwork,
    pub action_dim: usize,
    /// `true` marks observation dimensions the actor sees.
    pub mask: Option<Vec<bool>>,
    pub log_std_bounds: (f64, f64),
}

/// A batch of reparameterized samples with everything needed to
/// backpropagate through them.
#[derive(Debug, Clone)]
pub struct PolicySample {
    pub actions: Matrix,
    pub log_probs: Vec<f64>,
    noise: Matrix,
    std: Matrix,
    /// 1 where `log_std` lies inside its clamp bounds, 0 where it was clamped.
    log_std_open: Matrix,
    trace: ForwardTrace,
}

impl PolicySample {
    /// Actor trunk's final hidden activation for the sampled states.
    pub fn latent(&self) -> &Matrix {
        self.trace.last_hidden()
    }

    pub fn trace(&self) -> &ForwardTrace {
        &self.trace
    }
}

impl GaussianTanhPolicy {
    pub fn new(obs_dim: usize, hidden: &[usize], action_dim: usize, mask: Option<Vec<bool>>, rng: &mut impl Rng) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::Config("actor needs at least one hidden layer".into()));
        }
        if let Some(m) = &mask {
            if m.len() != obs_dim {
                return Err(Error::Config(format!("mask length {} != observation dim {obs_dim}", m.len())));
            }
        }
        let net = DenseNetwork::new(&NetworkSpec::mlp(obs_dim, hidden, 2 * action_dim), rng)?;
        Ok(Self {
            net,
            action_dim,
            mask,
            log_std_bounds: (LOG_STD_MIN, LOG_STD_MAX),
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_width()
    }

    pub fn latent_width(&self) -> usize {
        *self.net.hidden_widths().last().expect("actor has hidden layers")
    }

    /// States with masked dimensions zeroed.
    pub fn masked_input(&self, states: &Matrix) -> Matrix {
        match &self.mask {
            None => states.clone(),
            Some(mask) => {
                let mut out = states.clone();
                for r in 0..out.rows() {
                    for (x, &keep) in out.row_mut(r).iter_mut().zip(mask) {
                        if !keep {
                            *x = 0.0;
                        }
                    }
                }
                out
            }
        }
    }

    /// Forward pass returning the trace, mean and clamped log-std.
    pub fn distribution(&self, states: &Matrix) -> Result<(ForwardTrace, Matrix, Matrix, Matrix)> {
        let trace = self.net.forward(&self.masked_input(states))?;
        let out = trace.output();
        if !out.is_finite() {
            return Err(Error::NonFinite("actor network produced a non-finite output".into()));
        }
        let a = self.action_dim;
        let mean = out.columns(0, a);
        let raw = out.columns(a, 2 * a);
        let (lo, hi) = self.log_std_bounds;
        let log_std = raw.map(|x| x.clamp(lo, hi));
        let open = raw.map(|x| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 });
        Ok((trace, mean, log_std, open))
    }

    /// Draws a standard-normal noise matrix, row-major.
    pub fn draw_noise(&self, rows: usize, rng: &mut impl Rng) -> Matrix {
        let data = (0..rows * self.action_dim).map(|_| rng.sample(StandardNormal)).collect();
        Matrix::from_vec(rows, self.action_dim, data)
    }

    pub fn sample(&self, states: &Matrix, rng: &mut impl Rng) -> Result<PolicySample> {
        let noise = self.draw_noise(states.rows(), rng);
        self.sample_with_noise(states, &noise)
    }

    /// `a = tanh(μ + σ·ξ)` with the change-of-variables corrected log-density.
    pub fn sample_with_noise(&self, states: &Matrix, noise: &Matrix) -> Result<PolicySample> {
        if noise.shape() != (states.rows(), self.action_dim) {
            return Err(shape_err(format!("noise {:?} for {} states", noise.shape(), states.rows())));
        }
        let (trace, mean, log_std, log_std_open) = self.distribution(states)?;
        let std = log_std.map(f64::exp);
        let (rows, a) = mean.shape();
        let mut actions = Matrix::zeros(rows, a);
        let mut log_probs = vec![0.0; rows];
        for r in 0..rows {
            let mut lp = 0.0;
            for j in 0..a {
                let xi = noise[(r, j)];
                let u = mean[(r, j)] + std[(r, j)] * xi;
                actions[(r, j)] = u.tanh();
                lp += -0.5 * xi * xi - log_std[(r, j)] - HALF_LOG_2PI - log_one_minus_tanh_sq(u);
            }
            log_probs[r] = lp;
        }
        Ok(PolicySample {
            actions,
            log_probs,
            noise: noise.clone(),
            std,
            log_std_open,
            trace,
        })
    }

    /// Single-state sample.
    pub fn sample_action(&self, state: &[f64], rng: &mut impl Rng) -> Result<(Vec<f64>, f64)> {
        let s = self.sample(&Matrix::row_vector(state), rng)?;
        Ok((s.actions.row(0).to_vec(), s.log_probs[0]))
    }

    /// Deterministic action `tanh(μ)` used for evaluation.
    pub fn mean_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        let (_, mean, _, _) = self.distribution(&Matrix::row_vector(state))?;
        Ok(mean.row(0).iter().map(|m| m.tanh()).collect())
    }

    /// Log-density of given actions (each strictly inside `(−1, 1)`).
    pub fn log_prob(&self, states: &Matrix, actions: &Matrix) -> Result<Vec<f64>> {
        let (_, mean, log_std, _) = self.distribution(states)?;
        if actions.shape() != mean.shape() {
            return Err(shape_err("actions do not match batch/action dims"));
        }
        let mut out = vec![0.0; states.rows()];
        for (r, lp) in out.iter_mut().enumerate() {
            for j in 0..self.action_dim {
                let a = actions[(r, j)];
                let u = a.atanh();
                let s = log_std[(r, j)].exp();
                let z = (u - mean[(r, j)]) / s;
                *lp += -0.5 * z * z - log_std[(r, j)] - HALF_LOG_2PI - log_one_minus_tanh_sq(u);
            }
        }
        Ok(out)
    }

    /// Parameter gradients given `∂L/∂a` (per action entry) and `∂L/∂log π`
    /// (per row), via the reparameterization `u = μ + σ·ξ`.
    pub fn backward(&self, sample: &PolicySample, grad_actions: &Matrix, grad_log_probs: &[f64]) -> Result<Gradients> {
        let (rows, a) = sample.actions.shape();
        if grad_actions.shape() != (rows, a) || grad_log_probs.len() != rows {
            return Err(shape_err("policy gradient shapes do not match the sample"));
        }
        let mut grad_out = Matrix::zeros(rows, 2 * a);
        for r in 0..rows {
            let glp = grad_log_probs[r];
            for j in 0..a {
                let act = sample.actions[(r, j)];
                let du = grad_actions[(r, j)] * (1.0 - act * act) + glp * 2.0 * act;
                grad_out[(r, j)] = du;
                let dlog_std = du * sample.std[(r, j)] * sample.noise[(r, j)] - glp;
                grad_out[(r, a + j)] = dlog_std * sample.log_std_open[(r, j)];
            }
        }
        Ok(self.net.backward(&sample.trace, &grad_out)?.grads)
    }
}
