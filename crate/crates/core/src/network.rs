//! Dense multilayer perceptrons with cached forward traces and exact
//! reverse-mode gradients.
//!
//! Layers are indexed from the input side starting at 0. The sub-network
//! feeding layer `i` is `h_i`: the composition of layers `0..i`, so `h_0` is
//! the identity map and `h_i(x)` is the activation vector of layer `i - 1`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{axpy, LinalgError, Matrix, Vector};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("layer {layer}: {message}")]
    Shape { layer: usize, message: String },
    #[error("input has dimension {got}, network expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("layer index {index} out of range for a {depth}-layer network")]
    LayerIndex { index: usize, depth: usize },
    #[error("output index {index} out of range for output dimension {output_dim}")]
    OutputIndex { index: usize, output_dim: usize },
    #[error("invalid network: {0}")]
    Invalid(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative at `z`. ReLU uses 0 at exactly 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        self.derivative_given(z, self.apply(z))
    }

    /// Derivative from the pre-activation and its already computed image.
    #[inline]
    fn derivative_given(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

/// `x ↦ activation(weight · x + bias)`
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vector,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: Matrix, bias: Vector, activation: Activation) -> Result<Self, NetworkError> {
        if bias.dim() != weight.rows() {
            return Err(NetworkError::Invalid(format!(
                "bias of length {} for weight with {} rows",
                bias.dim(),
                weight.rows()
            )));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn fan_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    input_dim: usize,
}

/// Cached intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Vector,
    /// `z_i = w_i h_i + b_i`
    pub pre_activations: Vec<Vector>,
    /// `a_i(z_i)`
    pub activations: Vec<Vector>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Vector {
        self.activations.last().expect("networks have at least one layer")
    }

    pub fn depth(&self) -> usize {
        self.activations.len()
    }

    /// Smallest `|z|` over every pre-activation; used to stay clear of
    /// ReLU kinks when comparing against finite differences.
    pub fn min_abs_pre_activation(&self) -> f64 {
        self.pre_activations
            .iter()
            .flat_map(|z| z.as_slice().iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

/// Which scalar output a gradient bundle refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputSelector {
    All,
    Index(usize),
}

/// Per-layer parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vector>,
}

impl ParamGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            weights: mlp
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.fan_out(), l.fan_in()))
                .collect(),
            biases: mlp.layers.iter().map(|l| Vector::zeros(l.fan_out())).collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for w in &mut self.weights {
            w.data_mut().fill(0.0);
        }
        for b in &mut self.biases {
            b.as_mut_slice().fill(0.0);
        }
    }

    /// Adds `scale · delta ⊗ h` to the weight gradient of `layer` and
    /// `scale · delta` to its bias gradient.
    fn accumulate(&mut self, layer: usize, delta: &[f64], h: &[f64], scale: f64) {
        let w = &mut self.weights[layer];
        let cols = w.cols();
        for (row, &d) in w.data_mut().chunks_exact_mut(cols).zip(delta) {
            if d != 0.0 {
                axpy(scale * d, h, row);
            }
        }
        axpy(scale, delta, self.biases[layer].as_mut_slice());
    }

    /// Σ_i ‖∇_{w_i}‖²_F + ‖∇_{b_i}‖², layer by layer.
    pub fn norm_sq(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.frobenius_norm_sq() + b.norm_sq())
            .sum()
    }

    /// Flattened in the canonical parameter order (see [`Mlp::params_flat`]).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b.as_slice());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite) && self.biases.iter().all(Vector::is_finite)
    }
}

/// Input Jacobian together with parameter gradients of one output component
/// (or of all components stacked, for the Jacobian only).
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianBundle {
    pub input_jacobian: Matrix,
    pub weight_grads: Vec<Matrix>,
    pub bias_grads: Vec<Vector>,
    pub output: OutputSelector,
}

impl JacobianBundle {
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weight_grads.iter().zip(&self.bias_grads) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b.as_slice());
        }
        out
    }
}

/// ‖∇_θ f‖² as the sum of per-layer weight and bias contributions.
pub fn param_grad_norm_sq(bundle: &JacobianBundle) -> f64 {
    bundle
        .weight_grads
        .iter()
        .zip(&bundle.bias_grads)
        .map(|(w, b)| w.frobenius_norm_sq() + b.norm_sq())
        .sum()
}

impl Mlp {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self, NetworkError> {
        if input_dim == 0 {
            return Err(NetworkError::Invalid("input_dim must be positive".into()));
        }
        if layers.is_empty() {
            return Err(NetworkError::Invalid("network needs at least one layer".into()));
        }
        let mut fan_in = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            if layer.fan_in() != fan_in {
                return Err(NetworkError::Shape {
                    layer: i,
                    message: format!("expects {} inputs, previous width is {fan_in}", layer.fan_in()),
                });
            }
            if layer.bias.dim() != layer.fan_out() {
                return Err(NetworkError::Shape {
                    layer: i,
                    message: format!(
                        "bias has length {}, weight has {} rows",
                        layer.bias.dim(),
                        layer.fan_out()
                    ),
                });
            }
            fan_in = layer.fan_out();
        }
        Ok(Self { layers, input_dim })
    }

    /// Random network with `sizes = [input, hidden.., output]`, weights drawn
    /// uniformly from `±sqrt(6 / (fan_in + fan_out))` and zero biases.
    pub fn glorot_uniform<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self, NetworkError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(NetworkError::Invalid(format!("bad layer sizes {sizes:?}")));
        }
        let depth = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, pair)| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect();
                Layer {
                    weight: Matrix::new(fan_out, fan_in, data).expect("finite by construction"),
                    bias: Vector::zeros(fan_out),
                    activation: if i + 1 == depth { output } else { hidden },
                }
            })
            .collect();
        Self::new(sizes[0], layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> Result<&Layer, NetworkError> {
        self.layers.get(i).ok_or(NetworkError::LayerIndex {
            index: i,
            depth: self.layers.len(),
        })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::fan_out)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.fan_out() * (l.fan_in() + 1)).sum()
    }

    /// Parameters flattened layer by layer: weight (row-major), then bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(l.bias.as_slice());
        }
        out
    }

    pub fn param_norm_sq(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.frobenius_norm_sq() + l.bias.norm_sq())
            .sum()
    }

    /// Mutable access to the parameter at a flat index.
    pub(crate) fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in &mut self.layers {
            let nw = l.weight.data().len();
            if index < nw {
                return &mut l.weight.data_mut()[index];
            }
            index -= nw;
            let nb = l.bias.dim();
            if index < nb {
                return &mut l.bias.as_mut_slice()[index];
            }
            index -= nb;
        }
        panic!("parameter index out of range");
    }

    /// `θ ← θ + step · grads`
    pub fn add_scaled(&mut self, grads: &ParamGrads, step: f64) {
        for ((l, gw), gb) in self.layers.iter_mut().zip(&grads.weights).zip(&grads.biases) {
            axpy(step, gw.data(), l.weight.data_mut());
            axpy(step, gb.as_slice(), l.bias.as_mut_slice());
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.is_finite())
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Multiplies every weight matrix of the output layer and its bias by `c`.
    pub fn scale_output(&mut self, c: f64) {
        let last = self.layers.last_mut().expect("non-empty");
        last.weight = last.weight.scaled(c);
        for b in last.bias.as_mut_slice() {
            *b *= c;
        }
    }

    pub fn forward(&self, x: &Vector) -> Result<ForwardTrace, NetworkError> {
        self.forward_slice(x.as_slice())
    }

    pub fn forward_slice(&self, x: &[f64]) -> Result<ForwardTrace, NetworkError> {
        if x.len() != self.input_dim {
            return Err(NetworkError::InputDim {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut activations: Vec<Vector> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let h = activations.last().map_or(x, Vector::as_slice);
            let mut z = layer.weight.matvec_unchecked(h);
            axpy(1.0, layer.bias.as_slice(), &mut z);
            let a: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre_activations.push(Vector::from_vec_unchecked(z));
            activations.push(Vector::from_vec_unchecked(a));
        }
        Ok(ForwardTrace {
            input: Vector::from_vec_unchecked(x.to_vec()),
            pre_activations,
            activations,
        })
    }

    /// Output only, without keeping the trace.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, NetworkError> {
        if x.len() != self.input_dim {
            return Err(NetworkError::InputDim {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let mut h = x.to_vec();
        for layer in &self.layers {
            let mut z = layer.weight.matvec_unchecked(&h);
            axpy(1.0, layer.bias.as_slice(), &mut z);
            for v in &mut z {
                *v = layer.activation.apply(*v);
            }
            h = z;
        }
        Ok(h)
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<(), NetworkError> {
        if trace.depth() != self.depth() || trace.input.dim() != self.input_dim {
            return Err(NetworkError::Invalid(
                "trace was not produced by this network".into(),
            ));
        }
        Ok(())
    }

    /// Reverse sweep seeded with `∂L/∂output`. Calls `visit(i, δ_i, h_i)`
    /// for every layer from the output down, where `δ_i = ∂L/∂z_i`, and
    /// returns `∂L/∂x`.
    pub(crate) fn backward<F>(&self, trace: &ForwardTrace, output_grad: &[f64], mut visit: F) -> Vec<f64>
    where
        F: FnMut(usize, &[f64], &[f64]),
    {
        let last = self.depth() - 1;
        let mut delta: Vec<f64> = output_grad
            .iter()
            .zip(trace.pre_activations[last].as_slice())
            .zip(trace.activations[last].as_slice())
            .map(|((g, &z), &a)| g * self.layers[last].activation.derivative_given(z, a))
            .collect();
        for i in (0..self.depth()).rev() {
            let h = if i == 0 {
                trace.input.as_slice()
            } else {
                trace.activations[i - 1].as_slice()
            };
            visit(i, &delta, h);
            let mut g = self.layers[i].weight.tr_matvec_unchecked(&delta);
            if i > 0 {
                let act = self.layers[i - 1].activation;
                for ((gj, &z), &a) in g
                    .iter_mut()
                    .zip(trace.pre_activations[i - 1].as_slice())
                    .zip(trace.activations[i - 1].as_slice())
                {
                    *gj *= act.derivative_given(z, a);
                }
            }
            delta = g;
        }
        delta
    }

    /// Backpropagates `∂L/∂output` and adds `scale · ∇_θ L` into `grads`.
    pub fn accumulate_param_grads(
        &self,
        trace: &ForwardTrace,
        output_grad: &[f64],
        scale: f64,
        grads: &mut ParamGrads,
    ) {
        self.backward(trace, output_grad, |i, delta, h| grads.accumulate(i, delta, h, scale));
    }
}

pub fn forward(mlp: &Mlp, x: &Vector) -> Result<ForwardTrace, NetworkError> {
    mlp.forward(x)
}

/// `h_i(x)`: the input of layer `i` (the raw input for `i = 0`).
pub fn subnetwork_value(trace: &ForwardTrace, i: usize) -> Result<&Vector, NetworkError> {
    match i {
        0 => Ok(&trace.input),
        _ if i < trace.depth() => Ok(&trace.activations[i - 1]),
        _ => Err(NetworkError::LayerIndex {
            index: i,
            depth: trace.depth(),
        }),
    }
}

/// Forward-mode Jacobians `h_i′(x)` for every layer `i`, each of shape
/// `fan_in(i) × input_dim`.
pub fn subnetwork_input_jacobians(mlp: &Mlp, trace: &ForwardTrace) -> Result<Vec<Matrix>, NetworkError> {
    mlp.check_trace(trace)?;
    let mut out = Vec::with_capacity(mlp.depth());
    let mut jac = Matrix::identity(mlp.input_dim());
    for (i, layer) in mlp.layers().iter().enumerate() {
        out.push(jac.clone());
        if i + 1 == mlp.depth() {
            break;
        }
        let mut next = layer.weight.matmul(&jac)?;
        let cols = next.cols();
        let z = trace.pre_activations[i].as_slice();
        let a = trace.activations[i].as_slice();
        for (r, row) in next.data_mut().chunks_exact_mut(cols).enumerate() {
            let d = layer.activation.derivative_given(z[r], a[r]);
            for v in row {
                *v *= d;
            }
        }
        jac = next;
    }
    Ok(out)
}

pub fn subnetwork_input_jacobian(mlp: &Mlp, trace: &ForwardTrace, i: usize) -> Result<Matrix, NetworkError> {
    if i >= mlp.depth() {
        return Err(NetworkError::LayerIndex {
            index: i,
            depth: mlp.depth(),
        });
    }
    let mut all = subnetwork_input_jacobians(mlp, trace)?;
    Ok(all.swap_remove(i))
}

/// Exact `∂f/∂x`, one reverse sweep per output component.
pub fn input_jacobian(mlp: &Mlp, trace: &ForwardTrace) -> Result<Matrix, NetworkError> {
    mlp.check_trace(trace)?;
    let k = mlp.output_dim();
    let mut data = Vec::with_capacity(k * mlp.input_dim());
    let mut seed = vec![0.0; k];
    for j in 0..k {
        seed[j] = 1.0;
        data.extend(mlp.backward(trace, &seed, |_, _, _| {}));
        seed[j] = 0.0;
    }
    Ok(Matrix::new(k, mlp.input_dim(), data)?)
}

/// Squared Frobenius norm of the input Jacobian at the traced point.
pub fn input_jacobian_norm_sq(mlp: &Mlp, trace: &ForwardTrace) -> Result<f64, NetworkError> {
    Ok(input_jacobian(mlp, trace)?.frobenius_norm_sq())
}

/// Gradients of output component `output_index` with respect to every
/// weight, bias and the input.
pub fn parameter_gradients(
    mlp: &Mlp,
    trace: &ForwardTrace,
    output_index: usize,
) -> Result<JacobianBundle, NetworkError> {
    mlp.check_trace(trace)?;
    let k = mlp.output_dim();
    if output_index >= k {
        return Err(NetworkError::OutputIndex {
            index: output_index,
            output_dim: k,
        });
    }
    let mut seed = vec![0.0; k];
    seed[output_index] = 1.0;
    let mut grads = ParamGrads::zeros_like(mlp);
    let dx = mlp.backward(trace, &seed, |i, delta, h| grads.accumulate(i, delta, h, 1.0));
    Ok(JacobianBundle {
        input_jacobian: Matrix::new(1, mlp.input_dim(), dx)?,
        weight_grads: grads.weights,
        bias_grads: grads.biases,
        output: OutputSelector::Index(output_index),
    })
}

fn check_step(step: f64) -> Result<(), NetworkError> {
    if step > 0.0 && step.is_finite() {
        Ok(())
    } else {
        Err(NetworkError::Invalid(format!("finite-difference step must be > 0, got {step}")))
    }
}

/// Central-difference input Jacobian.
pub fn fd_input_jacobian(mlp: &Mlp, x: &Vector, step: f64) -> Result<Matrix, NetworkError> {
    check_step(step)?;
    let d = mlp.input_dim();
    let k = mlp.output_dim();
    let mut jac = Matrix::zeros(k, d);
    let mut xp = x.as_slice().to_vec();
    for j in 0..d {
        let orig = xp[j];
        xp[j] = orig + step;
        let plus = mlp.eval(&xp)?;
        xp[j] = orig - step;
        let minus = mlp.eval(&xp)?;
        xp[j] = orig;
        for r in 0..k {
            jac.data_mut()[r * d + j] = (plus[r] - minus[r]) / (2.0 * step);
        }
    }
    Ok(jac)
}

/// Central-difference gradients of one output component with respect to
/// every parameter and the input.
pub fn fd_parameter_gradients(
    mlp: &Mlp,
    x: &Vector,
    output_index: usize,
    step: f64,
) -> Result<JacobianBundle, NetworkError> {
    check_step(step)?;
    if output_index >= mlp.output_dim() {
        return Err(NetworkError::OutputIndex {
            index: output_index,
            output_dim: mlp.output_dim(),
        });
    }
    let mut probe = mlp.clone();
    let mut grads = ParamGrads::zeros_like(mlp);
    let mut flat = Vec::with_capacity(mlp.param_count());
    for p in 0..mlp.param_count() {
        let orig = *probe.param_mut(p);
        *probe.param_mut(p) = orig + step;
        let plus = probe.eval(x.as_slice())?[output_index];
        *probe.param_mut(p) = orig - step;
        let minus = probe.eval(x.as_slice())?[output_index];
        *probe.param_mut(p) = orig;
        flat.push((plus - minus) / (2.0 * step));
    }
    let mut offset = 0;
    for (w, b) in grads.weights.iter_mut().zip(grads.biases.iter_mut()) {
        let nw = w.data().len();
        w.data_mut().copy_from_slice(&flat[offset..offset + nw]);
        offset += nw;
        let nb = b.dim();
        b.as_mut_slice().copy_from_slice(&flat[offset..offset + nb]);
        offset += nb;
    }
    let full = fd_input_jacobian(mlp, x, step)?;
    let row = full.row(output_index).to_vec();
    Ok(JacobianBundle {
        input_jacobian: Matrix::new(1, mlp.input_dim(), row)?,
        weight_grads: grads.weights,
        bias_grads: grads.biases,
        output: OutputSelector::Index(output_index),
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointLayer {
    rows: usize,
    cols: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    input_dim: usize,
    layers: Vec<CheckpointLayer>,
}

impl Mlp {
    /// Serializes to the JSON checkpoint format. Floats are written in the
    /// shortest decimal form that parses back to the identical bits.
    pub fn to_json(&self) -> String {
        let ck = Checkpoint {
            input_dim: self.input_dim,
            layers: self
                .layers
                .iter()
                .map(|l| CheckpointLayer {
                    rows: l.fan_out(),
                    cols: l.fan_in(),
                    weight: l.weight.data().to_vec(),
                    bias: l.bias.as_slice().to_vec(),
                    activation: l.activation,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&ck).expect("checkpoint serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, NetworkError> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        let layers = ck
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                let weight = Matrix::new(l.rows, l.cols, l.weight).map_err(|e| NetworkError::Shape {
                    layer: i,
                    message: e.to_string(),
                })?;
                let bias = Vector::new(l.bias).map_err(|e| NetworkError::Shape {
                    layer: i,
                    message: e.to_string(),
                })?;
                Ok(Layer {
                    weight,
                    bias,
                    activation: l.activation,
                })
            })
            .collect::<Result<Vec<_>, NetworkError>>()?;
        Self::new(ck.input_dim, layers)
    }
}
