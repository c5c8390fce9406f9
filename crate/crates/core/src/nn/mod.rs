//! Feed-forward dense networks with hand-written reverse-mode gradients.
//!
//! Weights are stored `in × out` so a forward pass is `x · W + b` row by row.
//! Parameters are exposed as an ordered list of flat blocks
//! (weight, bias, and for layer-normed layers gain, shift); gradients,
//! optimizer moments and the initialization snapshot share that layout.

pub mod adam;
pub mod norm;

use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::{self, Matrix};
use norm::{LayerNormCache, NormKind, SpectralState};

pub use adam::{adam_step, AdamConfig, AdamState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

/// Topology of a [`DenseNetwork`]: hidden layers use ReLU, the output layer
/// is linear. `side_input` extra columns are concatenated onto the input of
/// the output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    /// Normalizer for each hidden layer, by index. Missing entries mean none.
    pub hidden_norms: Vec<NormKind>,
    pub side_input: usize,
}

impl NetworkSpec {
    pub fn mlp(input: usize, hidden: &[usize], output: usize) -> Self {
        Self {
            input,
            hidden: hidden.to_vec(),
            output,
            hidden_norms: Vec::new(),
            side_input: 0,
        }
    }

    pub fn with_norm(mut self, hidden_layer: usize, kind: NormKind) -> Self {
        if self.hidden_norms.len() <= hidden_layer {
            self.hidden_norms.resize(hidden_layer + 1, NormKind::None);
        }
        self.hidden_norms[hidden_layer] = kind;
        self
    }

    pub fn with_side_input(mut self, width: usize) -> Self {
        self.side_input = width;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub norm: NormKind,
    pub ln_gain: Vec<f64>,
    pub ln_shift: Vec<f64>,
    pub spectral: Option<SpectralState>,
}

impl Layer {
    /// Plain affine layer from explicit parameters.
    pub fn affine(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Self {
        Self {
            weight,
            bias,
            activation,
            norm: NormKind::None,
            ln_gain: Vec::new(),
            ln_shift: Vec::new(),
            spectral: None,
        }
    }

    fn random(fan_in: usize, out: usize, activation: Activation, norm: NormKind, rng: &mut impl Rng) -> Self {
        let (weight, bias) = init_affine(fan_in, out, rng);
        let mut layer = Self::affine(weight, bias, activation);
        layer.set_norm(norm);
        layer
    }

    pub fn set_norm(&mut self, norm: NormKind) {
        self.norm = norm;
        let out = self.out_width();
        match norm {
            NormKind::LayerNorm => {
                self.ln_gain = vec![1.0; out];
                self.ln_shift = vec![0.0; out];
                self.spectral = None;
            }
            NormKind::Spectral => {
                self.ln_gain.clear();
                self.ln_shift.clear();
                self.spectral = Some(SpectralState::new(&self.weight));
            }
            NormKind::None => {
                self.ln_gain.clear();
                self.ln_shift.clear();
                self.spectral = None;
            }
        }
    }

    pub fn in_width(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_width(&self) -> usize {
        self.weight.cols()
    }

    fn block_count(&self) -> usize {
        if self.norm == NormKind::LayerNorm {
            4
        } else {
            2
        }
    }

    /// Weight actually used in the affine map (divided by σ when spectrally
    /// normalized) and σ itself.
    pub fn effective_weight(&self) -> (std::borrow::Cow<'_, Matrix>, Option<f64>) {
        match &self.spectral {
            Some(state) => {
                let sigma = state.sigma(&self.weight);
                if sigma > 0.0 {
                    (std::borrow::Cow::Owned(self.weight.map(|w| w / sigma)), Some(sigma))
                } else {
                    (std::borrow::Cow::Borrowed(&self.weight), None)
                }
            }
            None => (std::borrow::Cow::Borrowed(&self.weight), None),
        }
    }
}

/// Uniform fan-in initialization, `U(-1/√fan_in, 1/√fan_in)` for weights and biases.
pub fn init_affine(fan_in: usize, out: usize, rng: &mut impl Rng) -> (Matrix, Vec<f64>) {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let weight = Matrix::from_vec(fan_in, out, (0..fan_in * out).map(|_| dist.sample(rng)).collect());
    let bias = (0..out).map(|_| dist.sample(rng)).collect();
    (weight, bias)
}

/// What a parameter block holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Weight,
    Bias,
    NormGain,
    NormShift,
}

impl BlockKind {
    /// Normalization scale/shift are exempt from weight decay.
    pub fn decays(self) -> bool {
        matches!(self, BlockKind::Weight | BlockKind::Bias)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockInfo {
    pub layer: usize,
    pub kind: BlockKind,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNetwork {
    layers: Vec<Layer>,
    side_input: usize,
    init_snapshot: Vec<Vec<f64>>,
}

/// Gradient buffers laid out like [`DenseNetwork::blocks`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNetwork) -> Self {
        Self {
            blocks: net.blocks().iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for b in &mut self.blocks {
            b.iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            linalg::axpy(1.0, b, a);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.blocks.iter().flatten().copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().flatten().all(|g| g.is_finite())
    }
}

/// Everything a forward pass records for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    shapes: Vec<(usize, usize)>,
    /// `activations[0]` is the input, `activations[k + 1]` the output of layer `k`.
    activations: Vec<Matrix>,
    /// Input of the output layer when a side input was concatenated.
    last_input: Option<Matrix>,
    layer_norm: Vec<Option<LayerNormCache>>,
    sigma: Vec<Option<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("trace has an output")
    }

    pub fn into_output(mut self) -> Matrix {
        self.activations.pop().expect("trace has an output")
    }

    /// Post-activation outputs of every hidden layer, first to last.
    pub fn hidden_activations(&self) -> &[Matrix] {
        let n = self.activations.len();
        &self.activations[1..n - 1]
    }

    pub fn last_hidden(&self) -> &Matrix {
        let n = self.activations.len();
        &self.activations[n - 2]
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].rows()
    }
}

/// Result of a full backward pass.
#[derive(Debug, Clone)]
pub struct Backward {
    pub grads: Gradients,
    pub input: Matrix,
    pub side: Option<Matrix>,
}

/// Exact parameter count and global L2 norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamStats {
    pub count: usize,
    pub l2_norm: f64,
}

impl DenseNetwork {
    pub fn new(spec: &NetworkSpec, rng: &mut impl Rng) -> Result<Self> {
        if spec.input == 0 || spec.output == 0 || spec.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config(format!("layer widths must be positive: {spec:?}")));
        }
        if spec.hidden_norms.len() > spec.hidden.len() {
            return Err(Error::Config("normalizer listed for a non-existent hidden layer".into()));
        }
        let mut layers = Vec::with_capacity(spec.hidden.len() + 1);
        let mut width = spec.input;
        for (i, &h) in spec.hidden.iter().enumerate() {
            let norm = spec.hidden_norms.get(i).copied().unwrap_or(NormKind::None);
            layers.push(Layer::random(width, h, Activation::Relu, norm, rng));
            width = h;
        }
        layers.push(Layer::random(
            width + spec.side_input,
            spec.output,
            Activation::Identity,
            NormKind::None,
            rng,
        ));
        Self::from_layers(layers, spec.side_input)
    }

    /// Builds a network from explicit layers; the current parameters become
    /// the initialization snapshot.
    pub fn from_layers(layers: Vec<Layer>, side_input: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.out_width() {
                return Err(shape_err(format!("layer {k}: bias length {} != width {}", layer.bias.len(), layer.out_width())));
            }
            if k + 1 < layers.len() {
                let next_in = layers[k + 1].in_width();
                let expected = layer.out_width() + if k + 2 == layers.len() { side_input } else { 0 };
                if next_in != expected {
                    return Err(shape_err(format!("layer {k} emits {expected} columns but layer {} expects {next_in}", k + 1)));
                }
            }
        }
        if layers.len() == 1 && side_input > 0 && layers[0].in_width() <= side_input {
            return Err(shape_err("side input wider than the only layer"));
        }
        let mut net = Self {
            layers,
            side_input,
            init_snapshot: Vec::new(),
        };
        net.init_snapshot = net.blocks().iter().map(|b| b.to_vec()).collect();
        Ok(net)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        let first = self.layers[0].in_width();
        if self.layers.len() == 1 {
            first - self.side_input
        } else {
            first
        }
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_width)
    }

    pub fn side_input(&self) -> usize {
        self.side_input
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(Layer::out_width).collect()
    }

    pub fn init_snapshot(&self) -> &[Vec<f64>] {
        &self.init_snapshot
    }

    pub(crate) fn restore_init_snapshot(&mut self, snapshot: Vec<Vec<f64>>) {
        self.init_snapshot = snapshot;
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| l.weight.shape()).collect()
    }

    pub fn block_layout(&self) -> Vec<BlockInfo> {
        let mut out = Vec::new();
        for (k, l) in self.layers.iter().enumerate() {
            out.push(BlockInfo { layer: k, kind: BlockKind::Weight, len: l.weight.as_slice().len() });
            out.push(BlockInfo { layer: k, kind: BlockKind::Bias, len: l.bias.len() });
            if l.norm == NormKind::LayerNorm {
                out.push(BlockInfo { layer: k, kind: BlockKind::NormGain, len: l.ln_gain.len() });
                out.push(BlockInfo { layer: k, kind: BlockKind::NormShift, len: l.ln_shift.len() });
            }
        }
        out
    }

    /// Index of the first block belonging to `layer`.
    pub fn first_block_of(&self, layer: usize) -> usize {
        self.layers[..layer].iter().map(Layer::block_count).sum()
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weight.as_slice());
            out.push(l.bias.as_slice());
            if l.norm == NormKind::LayerNorm {
                out.push(l.ln_gain.as_slice());
                out.push(l.ln_shift.as_slice());
            }
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            let ln = l.norm == NormKind::LayerNorm;
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
            if ln {
                out.push(l.ln_gain.as_mut_slice());
                out.push(l.ln_shift.as_mut_slice());
            }
        }
        out
    }

    /// All trainable parameters in block order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.blocks().into_iter().flatten().copied().collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.blocks().iter().map(|b| b.len()).sum();
        if total != flat.len() {
            return Err(shape_err(format!("expected {total} parameters, got {}", flat.len())));
        }
        let mut offset = 0;
        for b in self.blocks_mut() {
            let n = b.len();
            b.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix) -> Result<ForwardTrace> {
        self.forward_with_side(x, None)
    }

    /// Forward pass; `side` is concatenated onto the input of the output
    /// layer and must be present exactly when the network has a side port.
    pub fn forward_with_side(&self, x: &Matrix, side: Option<&Matrix>) -> Result<ForwardTrace> {
        if x.cols() != self.input_width() {
            return Err(shape_err(format!("input has {} columns, network expects {}", x.cols(), self.input_width())));
        }
        match (self.side_input, side) {
            (0, None) => {}
            (w, Some(s)) if w == s.cols() && s.rows() == x.rows() => {}
            (w, s) => {
                return Err(shape_err(format!(
                    "side input of width {w} expected, got {:?}",
                    s.map(Matrix::shape)
                )))
            }
        }
        let n = self.layers.len();
        let mut activations = Vec::with_capacity(n + 1);
        activations.push(x.clone());
        let mut layer_norm = Vec::with_capacity(n);
        let mut sigma = Vec::with_capacity(n);
        let mut last_input = None;
        for (k, layer) in self.layers.iter().enumerate() {
            let input = if k + 1 == n {
                if let Some(s) = side {
                    last_input = Some(activations[k].hcat(s));
                }
                last_input.as_ref().unwrap_or(&activations[k])
            } else {
                &activations[k]
            };
            let (w, s) = layer.effective_weight();
            let mut z = Matrix::zeros(input.rows(), layer.out_width());
            for r in 0..z.rows() {
                z.row_mut(r).copy_from_slice(&layer.bias);
            }
            linalg::gemm_acc(input, &w, &mut z);
            sigma.push(s);
            let mut y = if layer.norm == NormKind::LayerNorm {
                let (y, cache) = norm::layer_norm_forward(&z, &layer.ln_gain, &layer.ln_shift);
                layer_norm.push(Some(cache));
                y
            } else {
                layer_norm.push(None);
                z
            };
            if layer.activation == Activation::Relu {
                y.as_mut_slice().iter_mut().for_each(|v| {
                    if *v < 0.0 {
                        *v = 0.0
                    }
                });
            }
            activations.push(y);
        }
        Ok(ForwardTrace {
            shapes: self.shapes(),
            activations,
            last_input,
            layer_norm,
            sigma,
        })
    }

    /// Output only, no trace kept beyond the call.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x)?.into_output())
    }

    /// Reverse-mode pass for `d loss / d output = grad_out`.
    pub fn backward(&self, trace: &ForwardTrace, grad_out: &Matrix) -> Result<Backward> {
        let (grads, input, side) = self.backward_impl(trace, grad_out, true)?;
        Ok(Backward {
            grads: grads.expect("parameter gradients requested"),
            input,
            side,
        })
    }

    /// Gradient with respect to the input only; parameter gradients are not formed.
    pub fn input_gradient(&self, trace: &ForwardTrace, grad_out: &Matrix) -> Result<Matrix> {
        Ok(self.backward_impl(trace, grad_out, false)?.1)
    }

    fn backward_impl(
        &self,
        trace: &ForwardTrace,
        grad_out: &Matrix,
        want_params: bool,
    ) -> Result<(Option<Gradients>, Matrix, Option<Matrix>)> {
        if trace.shapes != self.shapes() {
            return Err(Error::Usage("backward called with a trace recorded on a different network".into()));
        }
        let batch = trace.batch_size();
        if grad_out.shape() != (batch, self.output_width()) {
            return Err(Error::Usage(format!(
                "output gradient {:?} does not match recorded forward ({batch}, {})",
                grad_out.shape(),
                self.output_width()
            )));
        }
        let n = self.layers.len();
        let mut grads = want_params.then(|| Gradients::zeros_like(self));
        let mut g = grad_out.clone();
        let mut side_grad = None;
        for k in (0..n).rev() {
            let layer = &self.layers[k];
            if layer.activation == Activation::Relu {
                let post = &trace.activations[k + 1];
                for (gi, &p) in g.as_mut_slice().iter_mut().zip(post.as_slice()) {
                    if p <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            let base = self.first_block_of(k);
            if let Some(cache) = &trace.layer_norm[k] {
                let w = layer.out_width();
                let mut gg = vec![0.0; w];
                let mut gs = vec![0.0; w];
                g = norm::layer_norm_backward(&g, cache, &layer.ln_gain, &mut gg, &mut gs);
                if let Some(grads) = grads.as_mut() {
                    grads.blocks[base + 2] = gg;
                    grads.blocks[base + 3] = gs;
                }
            }
            let input = if k + 1 == n {
                trace.last_input.as_ref().unwrap_or(&trace.activations[k])
            } else {
                &trace.activations[k]
            };
            let (w_eff, _) = layer.effective_weight();
            if let Some(grads) = grads.as_mut() {
                let mut dw = Matrix::zeros(layer.in_width(), layer.out_width());
                linalg::gemm_acc(&input.transpose(), &g, &mut dw);
                if let (Some(state), Some(sigma)) = (&layer.spectral, trace.sigma[k]) {
                    dw = norm::spectral_backward(&dw, &layer.weight, state, sigma);
                }
                grads.blocks[base] = dw.into_vec();
                grads.blocks[base + 1] = g.column_sums();
            }
            let mut dx = Matrix::zeros(batch, layer.in_width());
            linalg::gemm_acc(&g, &w_eff.transpose(), &mut dx);
            if k + 1 == n && self.side_input > 0 {
                let main = dx.cols() - self.side_input;
                side_grad = Some(dx.columns(main, dx.cols()));
                dx = dx.columns(0, main);
            }
            g = dx;
        }
        Ok((grads, g, side_grad))
    }

    /// One power-iteration round for every spectrally normalized layer.
    pub fn refresh_spectral(&mut self, iterations: usize) {
        for layer in &mut self.layers {
            if let Some(state) = layer.spectral.as_mut() {
                state.iterate(&layer.weight, iterations);
            }
        }
    }

    pub fn parameter_stats(&self) -> ParamStats {
        let blocks = self.blocks();
        ParamStats {
            count: blocks.iter().map(|b| b.len()).sum(),
            l2_norm: blocks.iter().flat_map(|b| b.iter()).map(|x| x * x).sum::<f64>().sqrt(),
        }
    }

    /// Re-draws the output layer from the initialization distribution using
    /// `seed`. Hidden layers and the initialization snapshot are untouched.
    pub fn reset_output_layer(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = self.layers.last_mut().expect("network has layers");
        let (weight, bias) = init_affine(last.in_width(), last.out_width(), &mut rng);
        last.weight = weight;
        last.bias = bias;
        let norm = last.norm;
        last.set_norm(norm);
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    /// `self ← (1 − τ)·self + τ·source`, block by block.
    pub fn polyak_from(&mut self, source: &DenseNetwork, tau: f64) -> Result<()> {
        if self.shapes() != source.shapes() {
            return Err(shape_err("polyak update between networks of different topology"));
        }
        let src = source.blocks();
        for (dst, s) in self.blocks_mut().into_iter().zip(src) {
            for (d, &v) in dst.iter_mut().zip(s) {
                *d = (1.0 - tau) * *d + tau * v;
            }
        }
        for (dst, s) in self.layers.iter_mut().zip(&source.layers) {
            if let (Some(d), Some(s)) = (dst.spectral.as_mut(), s.spectral.as_ref()) {
                d.clone_from(s);
            }
        }
        Ok(())
    }
}

pub fn relu_inplace(m: &mut Matrix) {
    m.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
}
