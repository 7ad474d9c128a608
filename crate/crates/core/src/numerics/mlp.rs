//! Feedforward networks with exact reverse-mode gradients.
//!
//! Every forward call over a batch (one example per row) returns a [`Tape`]
//! holding the per-layer inputs, the output, and pre-activations where needed. The tape is immutable and
//! bound to the parameter version it was recorded against, so a backward pass
//! after an in-place parameter update is refused instead of silently producing
//! gradients for the wrong point.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::fastmath;
use super::matrix::{gemm_into, gemm_new, Matrix, Trans};
use super::params::Params;
use super::rng::Rng;
use crate::error::{Error, Result};

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NET_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    /// `x` for `x > 0`, `e^x − 1` otherwise (α = 1).
    Elu,
    Sin,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    fastmath::expm1(x)
                }
            }
            Activation::Sin => fastmath::sin(x),
        }
    }

    /// Derivative at pre-activation `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    fastmath::expm1(x) + 1.0
                }
            }
            Activation::Sin => fastmath::cos(x),
        }
    }

    /// [`apply`](Self::apply) over a slice, dispatching once.
    pub fn apply_slice(self, v: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Elu => fastmath::elu_in_place(v),
            _ => v.iter_mut().for_each(|x| *x = self.apply(*x)),
        }
    }

    /// Whether [`backward_from_output`](Self::backward_from_output) applies,
    /// i.e. `f′` is a function of `f(z)`.
    pub fn output_determines_derivative(self) -> bool {
        self != Activation::Sin
    }

    /// `g ← g · f′(z)` elementwise, from pre-activations.
    pub fn backward_slice(self, g: &mut [f64], z: &[f64]) {
        match self {
            Activation::Identity => {}
            _ => g.iter_mut().zip(z).for_each(|(g, z)| *g *= self.derivative(*z)),
        }
    }

    /// `g ← g · f′(z)` from the outputs `y = f(z)`; same bits as
    /// [`backward_slice`](Self::backward_slice). Not for `Sin`.
    pub fn backward_from_output(self, g: &mut [f64], y: &[f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => g.iter_mut().zip(y).for_each(|(g, &y)| *g *= if y > 0.0 { 1.0 } else { 0.0 }),
            Activation::Tanh => g.iter_mut().zip(y).for_each(|(g, &y)| *g *= 1.0 - y * y),
            Activation::Elu => fastmath::elu_backward_from_output(g, y),
            Activation::Sin => panic!("sin derivative needs the pre-activation"),
        }
    }
}

/// Affine map followed by an elementwise activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Multilayer perceptron.
#[derive(Debug)]
pub struct Mlp {
    layers: Vec<Layer>,
    id: u64,
    version: u64,
}

impl Clone for Mlp {
    fn clone(&self) -> Self {
        Self {
            layers: self.layers.clone(),
            id: fresh_id(),
            version: 0,
        }
    }
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Cached intermediate values from one batched forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    net_id: u64,
    version: u64,
    inputs: Vec<Matrix>,
    /// Pre-activations, kept only where the output does not determine the derivative.
    pre: Vec<Option<Matrix>>,
    output: Matrix,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.inputs[0].rows()
    }
}

/// Parameter gradients with the same layout as the network.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Mlp {
    /// Builds a network from explicit layers; consecutive dimensions must chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Contract("an Mlp needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::dim(format!("layer {i} bias"), l.out_dim(), l.bias.len()));
            }
            if !l.weight.is_finite() || l.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::Poison(format!("layer {i} parameters")));
            }
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::dim(
                    format!("layer {} -> {} chaining", i, i + 1),
                    w[0].out_dim(),
                    w[1].in_dim(),
                ));
            }
        }
        Ok(Self {
            layers,
            id: fresh_id(),
            version: 0,
        })
    }

    /// Uniform `±1/√fan_in` initialisation; `hidden` on every layer but the
    /// last, which uses `output`.
    pub fn new(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Contract(format!("invalid layer sizes {sizes:?}")));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weight = Matrix::from_fn(fan_out, fan_in, |_, _| rng.uniform_range(-bound, bound));
                let bias = (0..fan_out).map(|_| rng.uniform_range(-bound, bound)).collect();
                Layer {
                    weight,
                    bias,
                    activation: if i + 1 == n { output } else { hidden },
                }
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access to the layers. Invalidates outstanding tapes.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.version += 1;
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Batched forward pass; `input` holds one example per row.
    pub fn forward(&self, input: &Matrix) -> Result<(Matrix, Tape)> {
        if input.cols() != self.in_dim() {
            return Err(Error::dim("Mlp::forward input", self.in_dim(), input.cols()));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let mut y = affine(&x, layer);
            let act = layer.activation;
            pre.push((!act.output_determines_derivative()).then(|| y.clone()));
            act.apply_slice(y.data_mut());
            inputs.push(x);
            x = y;
        }
        let output = x.clone();
        Ok((
            x,
            Tape {
                net_id: self.id,
                version: self.version,
                inputs,
                pre,
                output,
            },
        ))
    }

    /// Forward pass without keeping a tape.
    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        if input.cols() != self.in_dim() {
            return Err(Error::dim("Mlp::predict input", self.in_dim(), input.cols()));
        }
        let mut x = affine(input, &self.layers[0]);
        apply_in_place(&mut x, self.layers[0].activation);
        for layer in &self.layers[1..] {
            x = affine(&x, layer);
            apply_in_place(&mut x, layer.activation);
        }
        Ok(x)
    }

    /// Single-example convenience wrapper.
    pub fn predict_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict(&Matrix::row_vector(input))?.into_vec())
    }

    /// Gradients of `Σ ⟨output_grad, output⟩` with respect to the parameters
    /// and the input.
    pub fn backward(&self, tape: &Tape, output_grad: &Matrix) -> Result<(MlpGrads, Matrix)> {
        let (grads, input_grad) = self.backward_impl(tape, output_grad, true)?;
        Ok((grads.expect("param grads requested"), input_grad))
    }

    /// Input gradient only; skips the weight-gradient products.
    pub fn backward_input(&self, tape: &Tape, output_grad: &Matrix) -> Result<Matrix> {
        Ok(self.backward_impl(tape, output_grad, false)?.1)
    }

    fn backward_impl(&self, tape: &Tape, output_grad: &Matrix, want_params: bool) -> Result<(Option<MlpGrads>, Matrix)> {
        if tape.net_id != self.id || tape.version != self.version || tape.pre.len() != self.layers.len() {
            return Err(Error::Contract(
                "tape was recorded against a different network or stale parameters".into(),
            ));
        }
        let batch = tape.batch();
        if output_grad.shape() != (batch, self.out_dim()) {
            return Err(Error::dim(
                "Mlp::backward output_grad",
                format!("{:?}", (batch, self.out_dim())),
                format!("{:?}", output_grad.shape()),
            ));
        }
        let n = self.layers.len();
        let mut weights = Vec::with_capacity(if want_params { n } else { 0 });
        let mut biases = Vec::with_capacity(if want_params { n } else { 0 });
        let mut g = output_grad.clone();
        for idx in (0..n).rev() {
            let layer = &self.layers[idx];
            match &tape.pre[idx] {
                Some(z) => layer.activation.backward_slice(g.data_mut(), z.data()),
                None => {
                    let y = if idx + 1 < n { &tape.inputs[idx + 1] } else { &tape.output };
                    layer.activation.backward_from_output(g.data_mut(), y.data());
                }
            }
            if want_params {
                let dw = gemm_new(&g, Trans::Yes, &tape.inputs[idx], Trans::No, layer.out_dim(), layer.in_dim());
                let mut db = vec![0.0; layer.out_dim()];
                for r in 0..batch {
                    for (d, v) in db.iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                weights.push(dw);
                biases.push(db);
            }
            g = gemm_new(&g, Trans::No, &layer.weight, Trans::No, batch, layer.in_dim());
        }
        let grads = want_params.then(|| {
            weights.reverse();
            biases.reverse();
            MlpGrads { weights, biases }
        });
        Ok((grads, g))
    }

    /// Zero-initialised gradient buffer shaped like this network.
    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            weights: self.layers.iter().map(|l| Matrix::zeros(l.out_dim(), l.in_dim())).collect(),
            biases: self.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        }
    }
}

fn affine(x: &Matrix, layer: &Layer) -> Matrix {
    let mut z = Matrix::zeros(x.rows(), layer.out_dim());
    for r in 0..x.rows() {
        z.row_mut(r).copy_from_slice(&layer.bias);
    }
    gemm_into(1.0, x, Trans::No, &layer.weight, Trans::Yes, 1.0, &mut z);
    z
}

fn apply_in_place(x: &mut Matrix, act: Activation) {
    act.apply_slice(x.data_mut());
}

impl MlpGrads {
    pub fn add_assign(&mut self, other: &MlpGrads) -> Result<()> {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.add_assign(b)?;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }
}

impl Params for Mlp {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.version += 1;
        self.layers
            .iter_mut()
            .flat_map(|l| {
                let Layer { weight, bias, .. } = l;
                [weight.data_mut(), bias.as_mut_slice()]
            })
            .collect()
    }

    fn tensor_specs(&self) -> Vec<(String, Vec<usize>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("layer{i}.weight"), vec![l.out_dim(), l.in_dim()]),
                    (format!("layer{i}.bias"), vec![l.out_dim()]),
                ]
            })
            .collect()
    }
}

impl Params for MlpGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.data(), b.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.data_mut(), b.as_mut_slice()])
            .collect()
    }

    fn tensor_specs(&self) -> Vec<(String, Vec<usize>)> {
        self.weights
            .iter()
            .zip(&self.biases)
            .enumerate()
            .flat_map(|(i, (w, b))| {
                [
                    (format!("layer{i}.weight"), vec![w.rows(), w.cols()]),
                    (format!("layer{i}.bias"), vec![b.len()]),
                ]
            })
            .collect()
    }
}
