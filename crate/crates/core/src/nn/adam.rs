use serde::{Deserialize, Serialize};

use super::{DenseNetwork, Gradients};
use crate::error::{shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers laid out like the owning network's blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(net: &DenseNetwork, config: AdamConfig) -> Self {
        Self::with_block_lengths(net.blocks().iter().map(|b| b.len()), config)
    }

    pub fn with_block_lengths(lengths: impl IntoIterator<Item = usize>, config: AdamConfig) -> Self {
        let m: Vec<Vec<f64>> = lengths.into_iter().map(|n| vec![0.0; n]).collect();
        Self {
            config,
            v: m.clone(),
            m,
            step: 0,
        }
    }

    /// Zeroes the moments of every block belonging to `layer`.
    pub fn zero_layer(&mut self, net: &DenseNetwork, layer: usize) {
        for (i, info) in net.block_layout().iter().enumerate() {
            if info.layer == layer {
                self.m[i].iter_mut().for_each(|x| *x = 0.0);
                self.v[i].iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    /// Adam update of a flat parameter vector block. `grad` already includes
    /// any penalty gradients.
    fn update(&mut self, block: usize, params: &mut [f64], grad: &[f64], bias1: f64, bias2: f64) {
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let m = &mut self.m[block];
        let v = &mut self.v[block];
        for i in 0..params.len() {
            let g = grad[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// One Adam step on `net`.
///
/// `l2_init_coeff` adds `2·c·(θ − θ_init)` to the gradient before the moment
/// update; `weight_decay` shrinks weights and biases by `lr·wd·θ` outside the
/// moment machinery. Layer-norm gain and shift are not decayed.
pub fn adam_step(
    net: &mut DenseNetwork,
    grads: &Gradients,
    state: &mut AdamState,
    weight_decay: f64,
    l2_init_coeff: f64,
) -> Result<()> {
    let layout = net.block_layout();
    if grads.blocks.len() != layout.len() || state.m.len() != layout.len() {
        return Err(shape_err("gradient/optimizer layout does not match network"));
    }
    for (i, info) in layout.iter().enumerate() {
        if grads.blocks[i].len() != info.len || state.m[i].len() != info.len {
            return Err(shape_err(format!("block {i} length mismatch")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - state.config.beta1.powi(t);
    let bias2 = 1.0 - state.config.beta2.powi(t);
    let lr = state.config.lr;
    let snapshot = net.init_snapshot().to_vec();
    for (i, params) in net.blocks_mut().into_iter().enumerate() {
        let grad: std::borrow::Cow<'_, [f64]> = if l2_init_coeff > 0.0 {
            grads.blocks[i]
                .iter()
                .zip(params.iter())
                .zip(&snapshot[i])
                .map(|((g, p), p0)| g + 2.0 * l2_init_coeff * (p - p0))
                .collect::<Vec<_>>()
                .into()
        } else {
            grads.blocks[i].as_slice().into()
        };
        if weight_decay > 0.0 && layout[i].kind.decays() {
            params.iter_mut().for_each(|p| *p -= lr * weight_decay * *p);
        }
        state.update(i, params, &grad, bias1, bias2);
    }
    Ok(())
}

/// Adam on a single scalar parameter (the temperature's `log α`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarAdam {
    pub config: AdamConfig,
    pub m: f64,
    pub v: f64,
    pub step: u64,
}

impl ScalarAdam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, m: 0.0, v: 0.0, step: 0 }
    }

    pub fn step(&mut self, param: &mut f64, grad: f64) {
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.step += 1;
        let t = self.step as i32;
        self.m = beta1 * self.m + (1.0 - beta1) * grad;
        self.v = beta2 * self.v + (1.0 - beta2) * grad * grad;
        let m_hat = self.m / (1.0 - beta1.powi(t));
        let v_hat = self.v / (1.0 - beta2.powi(t));
        *param -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
