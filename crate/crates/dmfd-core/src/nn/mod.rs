//! A small feed-forward network engine with hand-written reverse-mode
//! gradients.
//!
//! Design constraints, in order: correctness that can be checked against
//! finite differences, bit-for-bit determinism, and enough speed to train
//! desk-scale policies on one CPU core. Everything is `f64`; there is no
//! implicit parallelism and no hidden global state. Parameters live in a
//! [`ParamSet`] (a named map of tensors with per-tensor Adam moments), so a
//! network is just a spec plus a parameter set.

pub mod adam;
pub mod conv;
pub mod mlp;
pub mod policy;
pub mod serialize;

use std::collections::BTreeMap;

use rand::Rng as _;
use thiserror::Error;

use crate::rng::Rng;
use crate::tensor::Tensor;

/// Errors surfaced by the network engine.
#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite gradient for parameter {param}")]
    NonFiniteGradient { param: String },
    #[error("gradient provided for unknown parameter {param}")]
    UnknownParameter { param: String },
    #[error("parameter document malformed: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    /// Leaky rectifier with slope [`LEAKY_SLOPE`] for negative inputs.
    LeakyRelu,
}

/// Negative-side slope of [`Activation::LeakyRelu`].
pub const LEAKY_SLOPE: f64 = 0.01;

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
        }
    }

    /// Derivative expressed in terms of the activation *output*.
    ///
    /// Both supported activations admit this (tanh' = 1 - y^2; the leaky
    /// rectifier preserves sign, so the branch can be recovered from y),
    /// which lets caches store only post-activation values.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::LeakyRelu => {
                if y > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
        }
    }
}

/// Output head of an MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    /// Raw affine output of width `layer_widths.last()`.
    Linear,
    /// Squashed-Gaussian policy head: the final affine layer emits
    /// `2 * action_dim` values (mean followed by raw log-std), where
    /// `action_dim = layer_widths.last()`.
    GaussianPolicy,
}

/// Architecture of a dense network.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MlpSpec {
    /// Layer widths including the input width; the last entry is the output
    /// width (the action dimension for a gaussian head).
    pub layer_widths: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_head: OutputHead,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, hidden_activation: Activation, head: OutputHead) -> Self {
        assert!(
            layer_widths.len() >= 2,
            "an MLP needs at least input and output widths"
        );
        assert!(
            layer_widths.iter().all(|&w| w > 0),
            "layer widths must be positive"
        );
        MlpSpec {
            layer_widths,
            hidden_activation,
            output_head: head,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    /// Width of the forward output vector.
    pub fn output_dim(&self) -> usize {
        let last = *self.layer_widths.last().unwrap();
        match self.output_head {
            OutputHead::Linear => last,
            OutputHead::GaussianPolicy => 2 * last,
        }
    }

    /// Number of affine layers.
    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    /// Output rows of affine layer `i` (the gaussian head doubles the last).
    pub fn layer_out(&self, i: usize) -> usize {
        let nominal = self.layer_widths[i + 1];
        if i + 1 == self.layer_widths.len() - 1 {
            match self.output_head {
                OutputHead::Linear => nominal,
                OutputHead::GaussianPolicy => 2 * nominal,
            }
        } else {
            nominal
        }
    }

    pub fn weight_name(i: usize) -> String {
        format!("w{i}")
    }

    pub fn bias_name(i: usize) -> String {
        format!("b{i}")
    }
}

/// Architecture of the convolutional image encoder: a stack of identical
/// square convolutions followed by dense layers. Every layer (conv and
/// dense) is followed by the activation, so the feature vector itself is
/// post-activation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConvEncoderSpec {
    /// Input image side (images are square) in pixels.
    pub image_side: usize,
    /// Input channels (3 for RGB).
    pub in_channels: usize,
    pub n_conv_layers: usize,
    /// Output channels of every conv layer.
    pub channels: usize,
    /// Square kernel side.
    pub kernel: usize,
    pub stride: usize,
    /// Widths of the dense layers applied to the flattened conv output; the
    /// last entry is the feature length.
    pub dense_widths: Vec<usize>,
    pub activation: Activation,
}

impl ConvEncoderSpec {
    /// Side length of the feature map after `n` conv layers, using zero
    /// "same" padding: `out = ceil(in / stride)`.
    pub fn side_after(&self, n: usize) -> usize {
        let mut side = self.image_side;
        for _ in 0..n {
            side = side.div_ceil(self.stride);
        }
        side
    }

    /// Flattened length of the final conv output.
    pub fn flat_len(&self) -> usize {
        let side = self.side_after(self.n_conv_layers);
        side * side * self.channels
    }

    /// Length of the produced feature vector.
    pub fn feature_len(&self) -> usize {
        *self
            .dense_widths
            .last()
            .expect("encoder needs at least one dense layer")
    }

    pub fn validate(&self) {
        assert!(self.n_conv_layers > 0, "encoder needs conv layers");
        assert!(self.kernel % 2 == 1, "kernel side must be odd");
        assert!(self.stride > 0, "stride must be positive");
        assert!(
            !self.dense_widths.is_empty(),
            "encoder needs at least one dense layer"
        );
    }

    pub fn conv_weight_name(i: usize) -> String {
        format!("conv{i}.w")
    }

    pub fn conv_bias_name(i: usize) -> String {
        format!("conv{i}.b")
    }

    pub fn dense_weight_name(i: usize) -> String {
        format!("dense{i}.w")
    }

    pub fn dense_bias_name(i: usize) -> String {
        format!("dense{i}.b")
    }
}

/// Named map of parameter tensors with per-tensor Adam moment buffers and a
/// shared step count. The three maps always hold the same keys and shapes;
/// `step_count` is only advanced by [`adam::adam_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<String, Tensor>,
    adam_m: BTreeMap<String, Tensor>,
    adam_v: BTreeMap<String, Tensor>,
    step_count: u64,
}

/// Gradients keyed like the [`ParamSet`] they were computed for.
pub type GradMap = BTreeMap<String, Tensor>;

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            entries: BTreeMap::new(),
            adam_m: BTreeMap::new(),
            adam_v: BTreeMap::new(),
            step_count: 0,
        }
    }

    /// Registers a parameter, installing zeroed moment buffers.
    pub fn insert(&mut self, name: &str, value: Tensor) {
        let zeros = Tensor::zeros(value.shape());
        self.adam_m.insert(name.to_string(), zeros.clone());
        self.adam_v.insert(name.to_string(), zeros);
        self.entries.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn entries(&self) -> &BTreeMap<String, Tensor> {
        &self.entries
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn n_scalars(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    /// Sets every parameter value to zero (moments untouched). Mostly useful
    /// in tests that need the all-zero network.
    pub fn zero_values(&mut self) {
        for t in self.entries.values_mut() {
            t.data_mut().fill(0.0);
        }
    }

    /// A zeroed gradient map matching this set's keys and shapes.
    pub fn zero_grads(&self) -> GradMap {
        self.entries
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
            .collect()
    }

    /// Polyak blend `self = tau * source + (1 - tau) * self`, used for
    /// target networks. Key sets must match exactly.
    pub fn soft_update_from(&mut self, source: &ParamSet, tau: f64) {
        assert_eq!(
            self.entries.len(),
            source.entries.len(),
            "soft update across different parameter sets"
        );
        for (name, target) in self.entries.iter_mut() {
            let src = source.get(name);
            let t = target.data_mut();
            let s = src.data();
            assert_eq!(t.len(), s.len(), "soft update shape mismatch for {name}");
            for (ti, si) in t.iter_mut().zip(s.iter()) {
                *ti = tau * si + (1.0 - tau) * *ti;
            }
        }
    }

    pub(crate) fn moments_mut(
        &mut self,
    ) -> (
        &mut BTreeMap<String, Tensor>,
        &mut BTreeMap<String, Tensor>,
        &mut BTreeMap<String, Tensor>,
        &mut u64,
    ) {
        (
            &mut self.entries,
            &mut self.adam_m,
            &mut self.adam_v,
            &mut self.step_count,
        )
    }

    pub(crate) fn moments(&self) -> (&BTreeMap<String, Tensor>, &BTreeMap<String, Tensor>) {
        (&self.adam_m, &self.adam_v)
    }

    pub(crate) fn restore_raw(
        entries: BTreeMap<String, Tensor>,
        adam_m: BTreeMap<String, Tensor>,
        adam_v: BTreeMap<String, Tensor>,
        step_count: u64,
    ) -> Self {
        ParamSet {
            entries,
            adam_m,
            adam_v,
            step_count,
        }
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

/// Draws a weight matrix with entries uniform in `±1/sqrt(fan_in)`.
fn uniform_fan_in(rng: &mut Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::from_vec(&[rows, cols], data)
}

/// Initializes parameters for a dense network: weights uniform in
/// `±1/sqrt(fan_in)`, biases zero.
pub fn init_mlp_params(spec: &MlpSpec, rng: &mut Rng) -> ParamSet {
    let mut params = ParamSet::new();
    for i in 0..spec.n_layers() {
        let fan_in = spec.layer_widths[i];
        let out = spec.layer_out(i);
        params.insert(&MlpSpec::weight_name(i), uniform_fan_in(rng, out, fan_in, fan_in));
        params.insert(&MlpSpec::bias_name(i), Tensor::zeros(&[out]));
    }
    params
}

/// Initializes parameters for a convolutional encoder with the same scheme
/// (conv fan-in counts the full receptive field).
pub fn init_conv_params(spec: &ConvEncoderSpec, rng: &mut Rng) -> ParamSet {
    spec.validate();
    let mut params = ParamSet::new();
    let k = spec.kernel;
    for i in 0..spec.n_conv_layers {
        let in_ch = if i == 0 { spec.in_channels } else { spec.channels };
        let fan_in = in_ch * k * k;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..spec.channels * in_ch * k * k)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        params.insert(
            &ConvEncoderSpec::conv_weight_name(i),
            Tensor::from_vec(&[spec.channels, in_ch, k, k], data),
        );
        params.insert(
            &ConvEncoderSpec::conv_bias_name(i),
            Tensor::zeros(&[spec.channels]),
        );
    }
    let mut in_w = spec.flat_len();
    for (i, &out_w) in spec.dense_widths.iter().enumerate() {
        params.insert(
            &ConvEncoderSpec::dense_weight_name(i),
            uniform_fan_in(rng, out_w, in_w, in_w),
        );
        params.insert(
            &ConvEncoderSpec::dense_bias_name(i),
            Tensor::zeros(&[out_w]),
        );
        in_w = out_w;
    }
    params
}

/// Merges gradient maps; tensors present in both are summed.
pub fn accumulate_grads(into: &mut GradMap, from: GradMap) {
    for (k, v) in from {
        match into.get_mut(&k) {
            Some(t) => t.axpy(1.0, &v),
            None => {
                into.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn init_biases_zero_and_weights_bounded() {
        let spec = MlpSpec::new(vec![4, 8, 2], Activation::Tanh, OutputHead::Linear);
        let params = init_mlp_params(&spec, &mut rng_from_seed(0));
        assert!(params.get("b0").data().iter().all(|&b| b == 0.0));
        assert!(params.get("b1").data().iter().all(|&b| b == 0.0));
        let bound = 1.0 / (4.0f64).sqrt();
        assert!(params.get("w0").data().iter().all(|&w| w.abs() < bound));
        assert_eq!(params.get("w0").shape(), &[8, 4]);
    }

    #[test]
    fn gaussian_head_doubles_last_layer() {
        let spec = MlpSpec::new(vec![3, 5, 2], Activation::Tanh, OutputHead::GaussianPolicy);
        assert_eq!(spec.output_dim(), 4);
        let params = init_mlp_params(&spec, &mut rng_from_seed(0));
        assert_eq!(params.get("w1").shape(), &[4, 5]);
    }

    #[test]
    fn init_is_deterministic() {
        let spec = MlpSpec::new(vec![4, 8, 2], Activation::Tanh, OutputHead::Linear);
        let a = init_mlp_params(&spec, &mut rng_from_seed(9));
        let b = init_mlp_params(&spec, &mut rng_from_seed(9));
        assert_eq!(a, b);
    }

    #[test]
    fn soft_update_endpoints() {
        let spec = MlpSpec::new(vec![2, 3], Activation::Tanh, OutputHead::Linear);
        let source = init_mlp_params(&spec, &mut rng_from_seed(1));
        let mut target = init_mlp_params(&spec, &mut rng_from_seed(2));
        let before = target.clone();
        target.soft_update_from(&source, 0.0);
        assert_eq!(target, before);
        target.soft_update_from(&source, 1.0);
        assert_eq!(target.entries(), source.entries());
    }

    #[test]
    fn encoder_shape_arithmetic() {
        let spec = ConvEncoderSpec {
            image_side: 32,
            in_channels: 3,
            n_conv_layers: 2,
            channels: 4,
            kernel: 3,
            stride: 2,
            dense_widths: vec![128],
            activation: Activation::LeakyRelu,
        };
        assert_eq!(spec.side_after(1), 16);
        assert_eq!(spec.side_after(2), 8);
        assert_eq!(spec.flat_len(), 8 * 8 * 4);
        // Stride 1 keeps the side fixed ("same" padding).
        let same = ConvEncoderSpec { stride: 1, ..spec };
        assert_eq!(same.side_after(2), 32);
    }
}
