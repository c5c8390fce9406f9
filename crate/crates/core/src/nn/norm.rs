//! Normalization layers: per-row layer normalization on pre-activations and
//! spectral normalization of weight matrices.

use serde::{Deserialize, Serialize};

use crate::linalg::{self, Matrix};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    None,
    LayerNorm,
    Spectral,
}

/// Values retained by a layer-norm forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: Matrix,
    pub inv_std: Vec<f64>,
}

/// Normalizes each row of `z` to zero mean and unit variance, then applies
/// `gain` and `shift` element-wise.
pub fn layer_norm_forward(z: &Matrix, gain: &[f64], shift: &[f64]) -> (Matrix, LayerNormCache) {
    let (rows, width) = z.shape();
    debug_assert_eq!(gain.len(), width);
    let mut normalized = Matrix::zeros(rows, width);
    let mut inv_std = vec![0.0; rows];
    let mut out = Matrix::zeros(rows, width);
    for r in 0..rows {
        let row = z.row(r);
        let mean = row.iter().sum::<f64>() / width as f64;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / width as f64;
        let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std[r] = s;
        let nrow = normalized.row_mut(r);
        for (n, x) in nrow.iter_mut().zip(row) {
            *n = (x - mean) * s;
        }
        let orow = out.row_mut(r);
        for c in 0..width {
            orow[c] = gain[c] * normalized[(r, c)] + shift[c];
        }
    }
    (out, LayerNormCache { normalized, inv_std })
}

/// Layer normalization with identity scale and zero shift.
pub fn apply_layer_norm(pre_activation: &Matrix) -> Matrix {
    let w = pre_activation.cols();
    layer_norm_forward(pre_activation, &vec![1.0; w], &vec![0.0; w]).0
}

/// Backward through layer norm. Returns the gradient with respect to the
/// pre-normalization input and accumulates gain/shift gradients.
pub fn layer_norm_backward(
    grad_out: &Matrix,
    cache: &LayerNormCache,
    gain: &[f64],
    grad_gain: &mut [f64],
    grad_shift: &mut [f64],
) -> Matrix {
    let (rows, width) = grad_out.shape();
    let n = width as f64;
    let mut dz = Matrix::zeros(rows, width);
    let mut g_hat = vec![0.0; width];
    for r in 0..rows {
        let g = grad_out.row(r);
        let xhat = cache.normalized.row(r);
        for c in 0..width {
            grad_gain[c] += g[c] * xhat[c];
            grad_shift[c] += g[c];
            g_hat[c] = g[c] * gain[c];
        }
        let sum_g: f64 = g_hat.iter().sum();
        let sum_gx: f64 = g_hat.iter().zip(xhat).map(|(a, b)| a * b).sum();
        let s = cache.inv_std[r];
        let drow = dz.row_mut(r);
        for c in 0..width {
            drow[c] = s / n * (n * g_hat[c] - sum_g - xhat[c] * sum_gx);
        }
    }
    dz
}

/// Persistent power-iteration vectors for one spectrally normalized weight
/// (`u` spans rows, `v` spans columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl SpectralState {
    pub fn new(weight: &Matrix) -> Self {
        let (rows, cols) = weight.shape();
        let mut s = Self {
            u: vec![1.0 / (rows as f64).sqrt(); rows],
            v: vec![1.0 / (cols as f64).sqrt(); cols],
        };
        s.iterate(weight, 1);
        s
    }

    /// Runs `iterations` rounds of power iteration, updating `u` and `v`.
    pub fn iterate(&mut self, weight: &Matrix, iterations: usize) {
        for _ in 0..iterations {
            linalg::mat_t_vec(weight, &self.u, &mut self.v);
            linalg::normalize(&mut self.v);
            linalg::mat_vec(weight, &self.v, &mut self.u);
            linalg::normalize(&mut self.u);
        }
    }

    /// Current estimate `uᵀ W v` of the largest singular value.
    pub fn sigma(&self, weight: &Matrix) -> f64 {
        let mut wv = vec![0.0; weight.rows()];
        linalg::mat_vec(weight, &self.v, &mut wv);
        linalg::dot(&self.u, &wv)
    }
}

/// Result of [`apply_spectral_norm`]; `degenerate` marks a zero matrix that
/// was returned unchanged.
#[derive(Debug, Clone)]
pub struct SpectralNormalized {
    pub weight: Matrix,
    pub sigma: f64,
    pub degenerate: bool,
}

/// Divides `weight` by its largest singular value estimated with
/// `iterations` rounds of power iteration.
pub fn apply_spectral_norm(weight: &Matrix, iterations: usize) -> SpectralNormalized {
    if weight.as_slice().iter().all(|&x| x == 0.0) {
        return SpectralNormalized {
            weight: weight.clone(),
            sigma: 0.0,
            degenerate: true,
        };
    }
    let mut state = SpectralState::new(weight);
    state.iterate(weight, iterations.saturating_sub(1));
    let sigma = state.sigma(weight);
    SpectralNormalized {
        weight: weight.map(|x| x / sigma),
        sigma,
        degenerate: false,
    }
}

/// Gradient of the loss with respect to `W` given the gradient with respect
/// to `W / σ`, where `σ = uᵀ W v` with `u`, `v` held fixed.
pub fn spectral_backward(grad_eff: &Matrix, weight: &Matrix, state: &SpectralState, sigma: f64) -> Matrix {
    let inner = linalg::dot(grad_eff.as_slice(), weight.as_slice());
    let coeff = inner / (sigma * sigma);
    let mut out = grad_eff.map(|g| g / sigma);
    for (r, &ur) in state.u.iter().enumerate() {
        linalg::axpy(-coeff * ur, &state.v, out.row_mut(r));
    }
    out
}
