//! Dense fully-connected regression networks.
//!
//! # Parameter layout
//!
//! Neurons are numbered globally and sequentially, inputs first: for
//! `[2, 4, 3, 1]` the inputs are 0-1, the first hidden layer 2-5, the second
//! 6-8 and the output 9.
//!
//! The flat [`WeightVector`] is laid out layer by layer, front to back. Each
//! layer contributes its weight matrix row-major (rows are destination
//! neurons in global order, columns are source neurons) followed by one bias
//! per destination neuron. Every view of the landscape is indexed by this
//! ordering; [`NetworkArch::label`] maps an index to its `w{src}-{dst}` /
//! `b{dst}` label.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::rng::{stream_rng, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and the
    /// activation `a = apply(z)`. ReLU uses 0 at `z == 0`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    #[default]
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Mse,
    Mae,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Mae => "mae",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "ArchRepr", into = "ArchRepr")]
pub struct NetworkArch {
    layer_sizes: Vec<usize>,
    hidden_activation: Activation,
    output_activation: OutputActivation,
    loss_kind: LossKind,
}

#[derive(Serialize, Deserialize)]
struct ArchRepr {
    layers: Vec<usize>,
    activation: Activation,
    #[serde(default)]
    output_activation: OutputActivation,
    #[serde(default)]
    loss: LossKind,
}

impl TryFrom<ArchRepr> for NetworkArch {
    type Error = Error;

    fn try_from(r: ArchRepr) -> Result<Self> {
        NetworkArch::new(r.layers, r.activation, r.loss)
    }
}

impl From<NetworkArch> for ArchRepr {
    fn from(a: NetworkArch) -> Self {
        ArchRepr {
            layers: a.layer_sizes,
            activation: a.hidden_activation,
            output_activation: a.output_activation,
            loss: a.loss_kind,
        }
    }
}

impl NetworkArch {
    pub fn new(
        layer_sizes: Vec<usize>,
        hidden_activation: Activation,
        loss_kind: LossKind,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::invalid(
                "layers",
                "a network needs at least 2 layers",
            ));
        }
        if let Some(pos) = layer_sizes.iter().position(|&n| n == 0) {
            return Err(Error::invalid("layers", format!("layer {pos} has size 0")));
        }
        Ok(Self {
            layer_sizes,
            hidden_activation,
            output_activation: OutputActivation::Linear,
            loss_kind,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss_kind
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Number of weight layers (connections between consecutive neuron layers).
    pub fn depth(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub fn bias_count(&self) -> usize {
        self.layer_sizes[1..].iter().sum()
    }

    pub fn weight_count(&self) -> usize {
        self.param_count() - self.bias_count()
    }

    pub fn neuron_count(&self) -> usize {
        self.layer_sizes.iter().sum()
    }

    /// Global index of the first neuron in neuron layer `layer`.
    pub fn first_neuron(&self, layer: usize) -> usize {
        self.layer_sizes[..layer].iter().sum()
    }

    /// Offset of weight layer `l` (connecting neuron layers `l` and `l + 1`)
    /// in the flat parameter vector.
    pub fn layer_param_offset(&self, l: usize) -> usize {
        self.layer_sizes[..=l]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// The weight layer a flat parameter belongs to, if in range.
    pub fn param_layer(&self, index: usize) -> Option<usize> {
        let mut offset = 0;
        for (l, w) in self.layer_sizes.windows(2).enumerate() {
            let size = w[0] * w[1] + w[1];
            if index < offset + size {
                return Some(l);
            }
            offset += size;
        }
        None
    }

    pub fn label(&self, index: usize) -> Option<ParamLabel> {
        let l = self.param_layer(index)?;
        let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let local = index - self.layer_param_offset(l);
        let src0 = self.first_neuron(l);
        let dst0 = self.first_neuron(l + 1);
        Some(if local < n_in * n_out {
            ParamLabel {
                kind: ParamKind::Weight,
                src: Some(src0 + local % n_in),
                dst: dst0 + local / n_in,
            }
        } else {
            ParamLabel {
                kind: ParamKind::Bias,
                src: None,
                dst: dst0 + (local - n_in * n_out),
            }
        })
    }

    pub fn index_of(&self, label: &ParamLabel) -> Option<usize> {
        // Destination neuron determines the weight layer.
        let dst_layer = (1..self.layer_sizes.len())
            .find(|&l| label.dst >= self.first_neuron(l) && label.dst < self.first_neuron(l + 1))?;
        let l = dst_layer - 1;
        let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let row = label.dst - self.first_neuron(dst_layer);
        let base = self.layer_param_offset(l);
        match (label.kind, label.src) {
            (ParamKind::Weight, Some(src)) => {
                let src0 = self.first_neuron(l);
                if src < src0 || src >= src0 + n_in {
                    return None;
                }
                Some(base + row * n_in + (src - src0))
            }
            (ParamKind::Bias, None) => Some(base + n_in * n_out + row),
            _ => None,
        }
    }

    pub fn labels(&self) -> Vec<ParamLabel> {
        (0..self.param_count())
            .map(|i| self.label(i).unwrap())
            .collect()
    }

    /// Short stable hash of the architecture. Two architectures share a
    /// fingerprint iff their layer sizes, activations and loss agree.
    pub fn fingerprint(&self) -> String {
        let canonical = self.to_string();
        let digest = Sha256::digest(canonical.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    fn check_regression(&self) -> Result<()> {
        if self.input_dim() != 2 {
            return Err(Error::Dimension {
                what: "network input (x, y)",
                expected: 2,
                actual: self.input_dim(),
            });
        }
        if self.output_dim() != 1 {
            return Err(Error::Dimension {
                what: "network output",
                expected: 1,
                actual: self.output_dim(),
            });
        }
        Ok(())
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Dimension {
                what: "weight vector",
                expected: self.param_count(),
                actual: params.len(),
            });
        }
        Ok(())
    }

    /// Network output for a general input vector.
    pub fn forward_vec(&self, weights: &WeightVector, input: &[f64]) -> Result<Vec<f64>> {
        self.check_params(weights.as_slice())?;
        if input.len() != self.input_dim() {
            return Err(Error::Dimension {
                what: "input vector",
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        let mut scratch = Scratch::new(self);
        scratch.forward(self, weights.as_slice(), input);
        Ok(scratch.output().to_vec())
    }

    /// Scalar output at `(x, y)`.
    pub fn forward(&self, weights: &WeightVector, x: f64, y: f64) -> Result<f64> {
        self.check_regression()?;
        Ok(self.forward_vec(weights, &[x, y])?[0])
    }

    /// Mean loss over the dataset.
    pub fn loss(&self, weights: &WeightVector, data: &Dataset) -> Result<f64> {
        self.loss_of(weights.as_slice(), data)
    }

    /// [`NetworkArch::loss`] on a raw parameter slice.
    pub fn loss_of(&self, params: &[f64], data: &Dataset) -> Result<f64> {
        self.check_regression()?;
        self.check_params(params)?;
        Ok(self.loss_unchecked(params, data))
    }

    /// Loss without shape checks; callers guarantee `params` matches the
    /// architecture and the architecture is a 2-in/1-out regressor.
    pub(crate) fn loss_unchecked(&self, params: &[f64], data: &Dataset) -> f64 {
        let mut scratch = Scratch::new(self);
        let mut sum = 0.0;
        for (input, &target) in data.inputs.iter().zip(&data.targets) {
            scratch.forward(self, params, input);
            let r = scratch.output()[0] - target;
            sum += match self.loss_kind {
                LossKind::Mse => r * r,
                LossKind::Mae => r.abs(),
            };
        }
        sum / data.len() as f64
    }

    /// Exact gradient of the mean loss, by backpropagation, in flat order.
    pub fn gradient(&self, weights: &WeightVector, data: &Dataset) -> Result<WeightVector> {
        let (_, g) = self.loss_and_gradient(weights.as_slice(), data, None)?;
        Ok(WeightVector(g))
    }

    /// Loss and gradient in one pass. With `subset`, only those samples are
    /// used (in the given order) and the mean is over the subset.
    pub fn loss_and_gradient(
        &self,
        params: &[f64],
        data: &Dataset,
        subset: Option<&[usize]>,
    ) -> Result<(f64, Vec<f64>)> {
        self.check_regression()?;
        self.check_params(params)?;
        if let Some(idx) = subset {
            if idx.is_empty() {
                return Err(Error::invalid("batch", "empty mini-batch"));
            }
            if let Some(&bad) = idx.iter().find(|&&i| i >= data.len()) {
                return Err(Error::invalid(
                    "batch",
                    format!("sample index {bad} out of range"),
                ));
            }
        }
        Ok(self.loss_and_gradient_unchecked(params, data, subset))
    }

    pub(crate) fn loss_and_gradient_unchecked(
        &self,
        params: &[f64],
        data: &Dataset,
        subset: Option<&[usize]>,
    ) -> (f64, Vec<f64>) {
        let mut scratch = Scratch::new(self);
        let mut grad = vec![0.0; params.len()];
        let n = subset.map_or(data.len(), <[usize]>::len);
        let inv_n = 1.0 / n as f64;
        let mut sum = 0.0;

        let mut accumulate = |i: usize, scratch: &mut Scratch| {
            let input = &data.inputs[i];
            scratch.forward(self, params, input);
            let r = scratch.output()[0] - data.targets[i];
            let d_out = match self.loss_kind {
                LossKind::Mse => {
                    sum += r * r;
                    2.0 * r * inv_n
                }
                LossKind::Mae => {
                    sum += r.abs();
                    if r > 0.0 {
                        inv_n
                    } else if r < 0.0 {
                        -inv_n
                    } else {
                        0.0
                    }
                }
            };
            scratch.backward(self, params, input, d_out, &mut grad);
        };
        match subset {
            Some(idx) => idx.iter().for_each(|&i| accumulate(i, &mut scratch)),
            None => (0..data.len()).for_each(|i| accumulate(i, &mut scratch)),
        }
        (sum / n as f64, grad)
    }
}

impl fmt::Display for NetworkArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let layers: Vec<String> = self.layer_sizes.iter().map(|n| n.to_string()).collect();
        write!(
            f,
            "[{}] {}/linear {}",
            layers.join(","),
            self.hidden_activation.name(),
            self.loss_kind.name()
        )
    }
}

/// Per-layer buffers for one forward/backward pass.
struct Scratch {
    /// Pre-activations per weight layer.
    z: Vec<Vec<f64>>,
    /// Activations per weight layer (the last entry is the output).
    a: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Scratch {
    fn new(arch: &NetworkArch) -> Self {
        let z: Vec<Vec<f64>> = arch.layer_sizes[1..]
            .iter()
            .map(|&n| vec![0.0; n])
            .collect();
        let widest = *arch.layer_sizes.iter().max().unwrap();
        Self {
            a: z.clone(),
            z,
            delta: Vec::with_capacity(widest),
            delta_prev: Vec::with_capacity(widest),
        }
    }

    fn output(&self) -> &[f64] {
        self.a.last().unwrap()
    }

    fn forward(&mut self, arch: &NetworkArch, params: &[f64], input: &[f64]) {
        let depth = arch.depth();
        let mut offset = 0;
        for l in 0..depth {
            let (n_in, n_out) = (arch.layer_sizes[l], arch.layer_sizes[l + 1]);
            let (w, rest) = params[offset..].split_at(n_in * n_out);
            let b = &rest[..n_out];
            offset += n_in * n_out + n_out;

            let (before, after) = self.a.split_at_mut(l);
            let src: &[f64] = if l == 0 { input } else { &before[l - 1] };
            let z = &mut self.z[l];
            let a = &mut after[0];
            let last = l + 1 == depth;
            for j in 0..n_out {
                let row = &w[j * n_in..(j + 1) * n_in];
                let mut s = b[j];
                for (wk, xk) in row.iter().zip(src) {
                    s += wk * xk;
                }
                z[j] = s;
                a[j] = if last {
                    s
                } else {
                    arch.hidden_activation.apply(s)
                };
            }
        }
    }

    /// Adds `d_out * ∂output/∂θ` into `grad`. Requires a preceding
    /// `forward` on the same input.
    fn backward(
        &mut self,
        arch: &NetworkArch,
        params: &[f64],
        input: &[f64],
        d_out: f64,
        grad: &mut [f64],
    ) {
        let depth = arch.depth();
        self.delta.clear();
        self.delta.push(d_out);
        for l in (0..depth).rev() {
            let (n_in, n_out) = (arch.layer_sizes[l], arch.layer_sizes[l + 1]);
            let offset = arch.layer_param_offset(l);
            let src: &[f64] = if l == 0 { input } else { &self.a[l - 1] };
            let (gw, gb) = grad[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for j in 0..n_out {
                let d = self.delta[j];
                gb[j] += d;
                for (g, x) in gw[j * n_in..(j + 1) * n_in].iter_mut().zip(src) {
                    *g += d * x;
                }
            }
            if l == 0 {
                break;
            }
            let w = &params[offset..offset + n_in * n_out];
            self.delta_prev.clear();
            for k in 0..n_in {
                let mut s = 0.0;
                for j in 0..n_out {
                    s += w[j * n_in + k] * self.delta[j];
                }
                let (z, a) = (self.z[l - 1][k], self.a[l - 1][k]);
                self.delta_prev
                    .push(s * arch.hidden_activation.derivative(z, a));
            }
            std::mem::swap(&mut self.delta, &mut self.delta_prev);
        }
    }
}

/// Flat parameter vector; the coordinate system of the landscape.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Fails if any entry is NaN or infinite.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "weights",
                format!("entry {i} is not finite"),
            ));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// Entries drawn i.i.d. uniform from `[-range, range]` on the init stream.
    pub fn random_uniform(len: usize, range: f64, seed: u64) -> Result<Self> {
        if !(range > 0.0 && range.is_finite()) {
            return Err(Error::invalid(
                "range",
                "initialization range must be positive",
            ));
        }
        let mut rng = stream_rng(seed, Stream::Init);
        Ok(Self(
            (0..len).map(|_| rng.random_range(-range..=range)).collect(),
        ))
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn l2_norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn matches(&self, arch: &NetworkArch) -> Result<()> {
        arch.check_params(&self.0)
    }
}

impl<'de> Deserialize<'de> for WeightVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        WeightVector::new(v).map_err(serde::de::Error::custom)
    }
}

impl std::ops::Index<usize> for WeightVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Names a parameter by the neurons it connects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamLabel {
    pub kind: ParamKind,
    /// Source neuron; `None` for biases.
    pub src: Option<usize>,
    pub dst: usize,
}

impl fmt::Display for ParamLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind, self.src) {
            (ParamKind::Weight, Some(src)) => write!(f, "w{}-{}", src, self.dst),
            _ => write!(f, "b{}", self.dst),
        }
    }
}

/// Training or test samples `((x, y), target)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    inputs: Vec<[f64; 2]>,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(inputs: Vec<[f64; 2]>, targets: Vec<f64>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::invalid(
                "data",
                "dataset must contain at least one sample",
            ));
        }
        if inputs.len() != targets.len() {
            return Err(Error::Dimension {
                what: "dataset targets",
                expected: inputs.len(),
                actual: targets.len(),
            });
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[[f64; 2]] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }
}
