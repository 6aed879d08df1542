//! Dense MLP parameters: layer specs, weight/bias storage, and Kaiming init.
//!
//! A model is an ordered list of dense layers with a `base_cut` marking how
//! many leading layers form the shared "base" segment; the remaining layers
//! are the personalized head. Weights are row-major `(out_dim, in_dim)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    /// Softmax folded into the cross-entropy loss; permitted only on the
    /// final layer, whose forward output stays pre-softmax logits.
    SoftmaxCrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }
}

/// Build the stack used throughout: ReLU hidden layers sized `hidden`,
/// then a softmax/cross-entropy output layer.
pub fn mlp_spec(in_dim: usize, hidden: &[usize], num_classes: usize) -> Vec<LayerSpec> {
    let mut spec = Vec::with_capacity(hidden.len() + 1);
    let mut prev = in_dim;
    for &h in hidden {
        spec.push(LayerSpec::new(prev, h, Activation::Relu));
        prev = h;
    }
    spec.push(LayerSpec::new(prev, num_classes, Activation::SoftmaxCrossEntropy));
    spec
}

fn validate_spec(spec: &[LayerSpec]) -> Result<()> {
    if spec.is_empty() {
        return Err(CoreError::Empty("layer spec".into()));
    }
    for (i, layer) in spec.iter().enumerate() {
        if layer.in_dim == 0 || layer.out_dim == 0 {
            return Err(CoreError::InvalidConfig(format!(
                "layer {i}: dims must be >= 1, got {}x{}",
                layer.out_dim, layer.in_dim
            )));
        }
        if layer.activation == Activation::SoftmaxCrossEntropy && i + 1 != spec.len() {
            return Err(CoreError::InvalidConfig(format!(
                "layer {i}: softmax activation is only permitted on the final layer"
            )));
        }
    }
    for w in spec.windows(2) {
        if w[0].out_dim != w[1].in_dim {
            return Err(CoreError::DimMismatch(format!(
                "layer chain broken: out_dim {} feeds in_dim {}",
                w[0].out_dim, w[1].in_dim
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    /// Row-major `(out_dim, in_dim)`.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weights: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
            in_dim,
            out_dim,
        }
    }

    #[inline]
    pub fn weight_row(&self, o: usize) -> &[T] {
        &self.weights[o * self.in_dim..(o + 1) * self.in_dim]
    }
}

/// Full parameter set of the MLP. Also reused as the container for
/// gradients and optimizer moments, which share the same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub layers: Vec<DenseLayer<T>>,
    /// Number of leading layers in the shared base segment.
    pub base_cut: usize,
}

impl<T: Scalar> ModelParams<T> {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(CoreError::Empty("model has no layers".into()));
        }
        if self.base_cut == 0 || self.base_cut >= self.layers.len() {
            return Err(CoreError::InvalidConfig(format!(
                "base_cut {} out of range for {} layers (need 1 <= cut < layers)",
                self.base_cut,
                self.layers.len()
            )));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.weights.len() != layer.in_dim * layer.out_dim
                || layer.bias.len() != layer.out_dim
            {
                return Err(CoreError::DimMismatch(format!(
                    "layer {i}: storage does not match {}x{}",
                    layer.out_dim, layer.in_dim
                )));
            }
        }
        for w in self.layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(CoreError::DimMismatch(
                    "adjacent layer dimensions do not chain".into(),
                ));
            }
        }
        if !self.is_finite() {
            return Err(CoreError::NonFinite("model parameters".into()));
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    /// Output width of the last base layer (the representation the L2R
    /// penalty acts on).
    pub fn base_repr_dim(&self) -> usize {
        self.layers[self.base_cut - 1].out_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.in_dim, l.out_dim))
                .collect(),
            base_cut: self.base_cut,
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.in_dim == b.in_dim && a.out_dim == b.out_dim)
    }

    /// Base segments shape-compatible (used by the cross-group aggregation,
    /// where heads may differ in class count).
    pub fn same_base_shape(&self, other: &Self, cut: usize) -> bool {
        cut <= self.layers.len()
            && cut <= other.layers.len()
            && self.layers[..cut]
                .iter()
                .zip(&other.layers[..cut])
                .all(|(a, b)| a.in_dim == b.in_dim && a.out_dim == b.out_dim)
    }

    pub fn is_finite(&self) -> bool {
        self.iter_params().all(|v| v.is_finite())
    }

    pub fn iter_params(&self) -> impl Iterator<Item = T> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }

    pub fn iter_params_mut(&mut self) -> impl Iterator<Item = &mut T> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    /// `self += scale * other`, elementwise over every parameter.
    pub fn scaled_add(&mut self, other: &Self, scale: T) {
        debug_assert!(self.same_shape(other));
        for (dst, src) in self.iter_params_mut().zip(other.iter_params()) {
            *dst = *dst + scale * src;
        }
    }

    /// Squared L2 distance over all parameters; the proximal term is
    /// `mu/2` times this.
    pub fn l2_distance_sq(&self, other: &Self) -> T {
        let mut acc = T::zero();
        for (a, b) in self.iter_params().zip(other.iter_params()) {
            let d = a - b;
            acc = acc + d * d;
        }
        acc
    }

    /// Exact bit-level equality (distinguishes -0.0 from 0.0).
    pub fn bits_eq(&self, other: &Self) -> bool {
        self.same_shape(other)
            && self.base_cut == other.base_cut
            && self
                .iter_params()
                .zip(other.iter_params())
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }

    /// Bit-level equality of the first `cut` layers only.
    pub fn base_bits_eq(&self, other: &Self, cut: usize) -> bool {
        self.same_base_shape(other, cut)
            && self.layers[..cut]
                .iter()
                .zip(&other.layers[..cut])
                .all(|(a, b)| {
                    a.weights
                        .iter()
                        .chain(a.bias.iter())
                        .zip(b.weights.iter().chain(b.bias.iter()))
                        .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
                })
    }
}

/// Box-Muller standard normal source over an arbitrary RNG.
struct NormalSource<R> {
    rng: R,
    spare: Option<f64>,
}

impl<R: Rng> NormalSource<R> {
    fn new(rng: R) -> Self {
        Self { rng, spare: None }
    }

    fn next(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - u in [0,1) gives (0,1], keeping ln away from zero.
        let u1: f64 = 1.0 - self.rng.gen::<f64>();
        let u2: f64 = self.rng.gen::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// Kaiming-normal initialization: weights drawn from
/// `Normal(0, sqrt(2 / fan_in))`, biases zero. Deterministic per seed.
pub fn init_kaiming<T: Scalar>(
    spec: &[LayerSpec],
    base_cut: usize,
    seed: u64,
) -> Result<ModelParams<T>> {
    validate_spec(spec)?;
    let mut normals = NormalSource::new(ChaCha8Rng::seed_from_u64(seed));
    let layers = spec
        .iter()
        .map(|s| {
            let std = (2.0 / s.in_dim as f64).sqrt();
            let weights = (0..s.in_dim * s.out_dim)
                .map(|_| T::from_f64(normals.next() * std))
                .collect();
            DenseLayer {
                weights,
                bias: vec![T::zero(); s.out_dim],
                in_dim: s.in_dim,
                out_dim: s.out_dim,
            }
        })
        .collect();
    let params = ModelParams { layers, base_cut };
    params.validate()?;
    Ok(params)
}

/// One minibatch of rows (row-major `batch x in_dim`) and class labels.
#[derive(Debug, Clone)]
pub struct Minibatch<T> {
    pub inputs: Vec<T>,
    pub labels: Vec<usize>,
    pub in_dim: usize,
}

impl<T: Scalar> Minibatch<T> {
    pub fn new(inputs: Vec<T>, labels: Vec<usize>, in_dim: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(CoreError::Empty("minibatch".into()));
        }
        if inputs.len() != labels.len() * in_dim {
            return Err(CoreError::DimMismatch(format!(
                "minibatch storage {} != {} rows x {} features",
                inputs.len(),
                labels.len(),
                in_dim
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("minibatch inputs".into()));
        }
        Ok(Self {
            inputs,
            labels,
            in_dim,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn row(&self, n: usize) -> &[T] {
        &self.inputs[n * self.in_dim..(n + 1) * self.in_dim]
    }
}
