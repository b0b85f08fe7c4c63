//! The fixed, seeded descriptor network `h(g(x))` and descriptor similarity.
//!
//! `g` is three 3x3 convolutions with ReLU (strides 2, 2, 1) applied to the
//! resampled image shifted by [`INPUT_CENTER`]; `h` is global average
//! pooling followed by l2 normalization. Weights are a pure function
//! of the seed, so attacker and defender can rebuild the same network.

use crate::numerics::{
    bilinear_resize, bilinear_resize_grad, conv2d_forward, conv2d_input_grad, global_avg_pool,
    global_avg_pool_grad, l2_norm, l2_normalize, l2_normalize_grad, relu, relu_grad, ConvLayer,
    NumericsError, SplitMix64, Tensor,
};
use thiserror::Error;

pub const DEFAULT_DIM: usize = 32;
pub const DEFAULT_RESOLUTION: usize = 32;
pub const DEFAULT_SEED: u64 = 42;
pub const MIN_RESOLUTION: usize = 8;
/// Subtracted from every pixel before the first convolution.
pub const INPUT_CENTER: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DescriptorError {
    #[error("expected a 3-channel image, got {0} channels")]
    ChannelMismatch(usize),
    #[error("resolution {0} is below the minimum of {MIN_RESOLUTION}")]
    ResolutionTooSmall(usize),
    #[error("degenerate descriptor: pooled activations have norm {0:e}")]
    Degenerate(f64),
    #[error("descriptor length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, DescriptorError>;

/// A unit-norm descriptor vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    values: Vec<f64>,
}

impl Descriptor {
    /// Wraps an already-normalized vector; fails if its norm is not 1 within 1e-9.
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(DescriptorError::Degenerate(norm));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Inner product of two descriptors.
pub fn similarity(a: &Descriptor, b: &Descriptor) -> Result<f64> {
    if a.len() != b.len() {
        return Err(DescriptorError::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorNetwork {
    seed: u64,
    dim: usize,
    layers: Vec<ConvLayer>,
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    input_dims: (usize, usize, usize),
    /// Inputs to each convolution (the resized image first).
    conv_inputs: Vec<Tensor>,
    /// Pre-activation outputs of each convolution.
    pre_activations: Vec<Tensor>,
    activations: Tensor,
    pooled: Tensor,
}

impl Forward {
    /// The pre-pool activation tensor `g`.
    pub fn activations(&self) -> &Tensor {
        &self.activations
    }

    pub fn pooled(&self) -> &Tensor {
        &self.pooled
    }

    pub fn descriptor(&self) -> Result<Descriptor> {
        let norm = l2_norm(&self.pooled);
        if !(norm > 1e-12) {
            return Err(DescriptorError::Degenerate(norm));
        }
        Ok(Descriptor {
            values: l2_normalize(&self.pooled)?.into_vec(),
        })
    }
}

impl Default for DescriptorNetwork {
    fn default() -> Self {
        Self::new(DEFAULT_SEED, DEFAULT_DIM)
    }
}

impl DescriptorNetwork {
    /// Builds the network with Glorot-uniform kernels drawn from a SplitMix64
    /// stream seeded by `seed`. Biases start at zero, so the network is
    /// positively homogeneous in the centered input.
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim >= 1, "descriptor dimension must be >= 1");
        let mut rng = SplitMix64::new(seed);
        let shapes = [(16, 3, 2), (32, 16, 2), (dim, 32, 1)];
        let layers = shapes
            .iter()
            .map(|&(out_ch, in_ch, stride)| glorot_layer(&mut rng, out_ch, in_ch, 3, stride, 1))
            .collect();
        Self { seed, dim, layers }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    fn check_input(&self, image: &Tensor, s: usize) -> Result<()> {
        if image.channels() != 3 {
            return Err(DescriptorError::ChannelMismatch(image.channels()));
        }
        if s < MIN_RESOLUTION {
            return Err(DescriptorError::ResolutionTooSmall(s));
        }
        Ok(())
    }

    /// Resizes `image` to `s x s` and runs every conv/ReLU stage, keeping the
    /// intermediates needed for backpropagation.
    pub fn forward(&self, image: &Tensor, s: usize) -> Result<Forward> {
        self.check_input(image, s)?;
        let mut x = bilinear_resize(image, s, s);
        x.data_mut().iter_mut().for_each(|v| *v -= INPUT_CENTER);
        let mut conv_inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let z = conv2d_forward(&x, layer)?;
            conv_inputs.push(x);
            x = relu(&z);
            pre_activations.push(z);
        }
        let pooled = global_avg_pool(&x);
        Ok(Forward {
            input_dims: image.dims(),
            conv_inputs,
            pre_activations,
            activations: x,
            pooled,
        })
    }

    pub fn extract_activations(&self, image: &Tensor, s: usize) -> Result<Tensor> {
        Ok(self.forward(image, s)?.activations)
    }

    pub fn extract_descriptor(&self, image: &Tensor, s: usize) -> Result<Descriptor> {
        self.forward(image, s)?.descriptor()
    }

    /// Pulls a gradient on the activation tensor back to the original image.
    pub fn backward_from_activations(&self, fwd: &Forward, grad_act: &Tensor) -> Result<Tensor> {
        let mut g = grad_act.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            g = relu_grad(&fwd.pre_activations[i], &g)?;
            g = conv2d_input_grad(&fwd.conv_inputs[i], layer, &g)?;
        }
        let (w, h, c) = fwd.input_dims;
        let original = Tensor::zeros(w, h, c);
        Ok(bilinear_resize_grad(&original, &g)?)
    }

    /// Pulls a gradient on the unit descriptor back to the original image.
    pub fn backward_from_descriptor(&self, fwd: &Forward, grad_desc: &[f64]) -> Result<Tensor> {
        if grad_desc.len() != self.dim {
            return Err(DescriptorError::LengthMismatch(grad_desc.len(), self.dim));
        }
        let up = Tensor::from_vec(1, 1, self.dim, grad_desc.to_vec())?;
        let g_pooled = l2_normalize_grad(&fwd.pooled, &up).map_err(|e| match e {
            NumericsError::DegenerateNorm { norm } => DescriptorError::Degenerate(norm),
            other => other.into(),
        })?;
        let g_act = global_avg_pool_grad(&fwd.activations, &g_pooled)?;
        self.backward_from_activations(fwd, &g_act)
    }
}

fn glorot_layer(
    rng: &mut SplitMix64,
    out_ch: usize,
    in_ch: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> ConvLayer {
    let fan_in = (in_ch * k * k) as f64;
    let fan_out = (out_ch * k * k) as f64;
    let a = (6.0 / (fan_in + fan_out)).sqrt();
    let kernels = (0..out_ch * in_ch * k * k).map(|_| rng.uniform(-a, a)).collect();
    let bias = vec![0.0; out_ch];
    ConvLayer::new(out_ch, in_ch, k, stride, padding, kernels, bias).expect("static layer shapes are valid")
}
