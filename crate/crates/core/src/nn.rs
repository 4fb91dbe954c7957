//! Multi-layer perceptrons with named output heads, exact reverse-mode
//! gradients, and an Adam optimizer.
//!
//! A network is a stack of `tanh` hidden layers feeding any number of
//! independent affine heads, each followed by its own output activation.
//! Parameters live in one flat vector whose layout is fixed by the
//! [`NetworkSpec`]: for every layer (hidden layers first, then heads in
//! order) the row-major weight matrix `out x in` followed by the bias.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("checkpoint {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Softmax,
    Softplus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub name: String,
    pub dim: usize,
    pub activation: Activation,
}

impl HeadSpec {
    pub fn new(name: &str, dim: usize, activation: Activation) -> Self {
        Self {
            name: name.to_string(),
            dim,
            activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub heads: Vec<HeadSpec>,
}

/// Offsets of one affine layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct LayerSlot {
    inputs: usize,
    outputs: usize,
    weights: usize,
    bias: usize,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, heads: Vec<HeadSpec>) -> Result<Self, NnError> {
        let spec = Self {
            input_dim,
            hidden_dims,
            heads,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_dim == 0 {
            return Err(NnError::InvalidSpec("input_dim must be at least 1".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(NnError::InvalidSpec("hidden layers must be non-empty".into()));
        }
        if self.heads.is_empty() {
            return Err(NnError::InvalidSpec("at least one output head required".into()));
        }
        if let Some(h) = self.heads.iter().find(|h| h.dim == 0) {
            return Err(NnError::InvalidSpec(format!("head {} has zero width", h.name)));
        }
        Ok(())
    }

    fn trunk_width(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.input_dim)
    }

    fn slots(&self) -> (Vec<LayerSlot>, Vec<LayerSlot>) {
        let mut offset = 0;
        let mut slot = |inputs: usize, outputs: usize| {
            let s = LayerSlot {
                inputs,
                outputs,
                weights: offset,
                bias: offset + inputs * outputs,
            };
            offset += inputs * outputs + outputs;
            s
        };
        let mut width = self.input_dim;
        let mut hidden = Vec::with_capacity(self.hidden_dims.len());
        for &h in &self.hidden_dims {
            hidden.push(slot(width, h));
            width = h;
        }
        let heads = self.heads.iter().map(|h| slot(width, h.dim)).collect();
        (hidden, heads)
    }

    pub fn num_params(&self) -> usize {
        let mut width = self.input_dim;
        let mut total = 0;
        for &h in &self.hidden_dims {
            total += width * h + h;
            width = h;
        }
        total + self.heads.iter().map(|h| width * h.dim + h.dim).sum::<usize>()
    }

    pub fn head_index(&self, name: &str) -> Option<usize> {
        self.heads.iter().position(|h| h.name == name)
    }
}

/// Flat weights and biases of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterSet(pub Vec<f64>);

impl ParameterSet {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self(vec![0.0; spec.num_params()])
    }

    /// Orthogonal initialization with zero biases.
    ///
    /// Hidden layers use `hidden_gain`; head `i` uses `head_gains[i]`.
    pub fn orthogonal<R: Rng + ?Sized>(
        spec: &NetworkSpec,
        hidden_gain: f64,
        head_gains: &[f64],
        rng: &mut R,
    ) -> Self {
        let mut params = Self::zeros(spec);
        let (hidden, heads) = spec.slots();
        let layers = hidden
            .iter()
            .map(|s| (s, hidden_gain))
            .chain(heads.iter().zip(head_gains.iter().copied().chain(std::iter::repeat(1.0))));
        for (slot, gain) in layers {
            let w = orthogonal_matrix(slot.outputs, slot.inputs, rng);
            for (dst, src) in params.0[slot.weights..slot.bias].iter_mut().zip(w) {
                *dst = gain * src;
            }
        }
        params
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

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|w| w.is_finite())
    }
}

/// Row-major `rows x cols` matrix with orthonormal rows or columns,
/// whichever is fewer.
fn orthogonal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<f64> {
    // Gram-Schmidt on the shorter dimension's vectors.
    let (count, len) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = if rows <= cols { basis[r][c] } else { basis[c][r] };
        }
    }
    out
}

fn affine(params: &[f64], slot: LayerSlot, input: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let w = &params[slot.weights..slot.bias];
    let b = &params[slot.bias..slot.bias + slot.outputs];
    for (row, bias) in w.chunks_exact(slot.inputs).zip(b) {
        out.push(bias + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>());
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn activate(activation: Activation, z: &[f64]) -> Vec<f64> {
    match activation {
        Activation::Linear => z.to_vec(),
        Activation::Softplus => z.iter().map(|&x| softplus(x)).collect(),
        Activation::Softmax => {
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = z.iter().map(|&x| (x - max).exp()).collect();
            let sum: f64 = exp.iter().sum();
            exp.into_iter().map(|e| e / sum).collect()
        }
    }
}

/// Intermediate values of one forward pass, enough to run backward.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input followed by each hidden layer's post-activation output.
    layers: Vec<Vec<f64>>,
    head_pre: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

impl Trace {
    pub fn outputs(&self) -> &[Vec<f64>] {
        &self.outputs
    }

    pub fn into_outputs(self) -> Vec<Vec<f64>> {
        self.outputs
    }
}

fn check_params(spec: &NetworkSpec, params: &ParameterSet) -> Result<(), NnError> {
    if params.len() != spec.num_params() {
        return Err(NnError::Dimension {
            what: "parameters",
            expected: spec.num_params(),
            got: params.len(),
        });
    }
    Ok(())
}

pub fn forward_trace(spec: &NetworkSpec, params: &ParameterSet, input: &[f64]) -> Result<Trace, NnError> {
    check_params(spec, params)?;
    if input.len() != spec.input_dim {
        return Err(NnError::Dimension {
            what: "input",
            expected: spec.input_dim,
            got: input.len(),
        });
    }
    let (hidden, heads) = spec.slots();
    let mut layers = Vec::with_capacity(hidden.len() + 1);
    layers.push(input.to_vec());
    for slot in hidden {
        let mut z = Vec::with_capacity(slot.outputs);
        affine(&params.0, slot, layers.last().expect("input layer"), &mut z);
        z.iter_mut().for_each(|x| *x = x.tanh());
        layers.push(z);
    }
    let trunk = layers.last().expect("input layer");
    let mut head_pre = Vec::with_capacity(heads.len());
    let mut outputs = Vec::with_capacity(heads.len());
    for (slot, head) in heads.into_iter().zip(&spec.heads) {
        let mut z = Vec::with_capacity(slot.outputs);
        affine(&params.0, slot, trunk, &mut z);
        outputs.push(activate(head.activation, &z));
        head_pre.push(z);
    }
    Ok(Trace {
        layers,
        head_pre,
        outputs,
    })
}

/// Head outputs in spec order.
pub fn forward(spec: &NetworkSpec, params: &ParameterSet, input: &[f64]) -> Result<Vec<Vec<f64>>, NnError> {
    forward_trace(spec, params, input).map(Trace::into_outputs)
}

/// Adds the parameter gradient of `sum_h <upstream[h], output[h]>` to `grad`.
pub fn accumulate_gradient(
    spec: &NetworkSpec,
    params: &ParameterSet,
    trace: &Trace,
    upstream: &[Vec<f64>],
    grad: &mut [f64],
) -> Result<(), NnError> {
    check_params(spec, params)?;
    if grad.len() != params.len() {
        return Err(NnError::Dimension {
            what: "gradient buffer",
            expected: params.len(),
            got: grad.len(),
        });
    }
    if upstream.len() != spec.heads.len() {
        return Err(NnError::Dimension {
            what: "upstream heads",
            expected: spec.heads.len(),
            got: upstream.len(),
        });
    }
    let (hidden, heads) = spec.slots();
    let trunk = trace.layers.last().expect("input layer");
    let mut d_trunk = vec![0.0; spec.trunk_width()];

    for (h, (slot, head)) in heads.into_iter().zip(&spec.heads).enumerate() {
        let up = &upstream[h];
        if up.len() != head.dim {
            return Err(NnError::Dimension {
                what: "upstream head width",
                expected: head.dim,
                got: up.len(),
            });
        }
        let out = &trace.outputs[h];
        let dz: Vec<f64> = match head.activation {
            Activation::Linear => up.clone(),
            Activation::Softplus => up
                .iter()
                .zip(&trace.head_pre[h])
                .map(|(g, &z)| g * sigmoid(z))
                .collect(),
            Activation::Softmax => {
                let dot: f64 = up.iter().zip(out).map(|(g, p)| g * p).sum();
                up.iter().zip(out).map(|(g, p)| p * (g - dot)).collect()
            }
        };
        backprop_affine(&params.0, slot, trunk, &dz, grad, &mut d_trunk);
    }

    let mut d_out = d_trunk;
    for (i, slot) in hidden.iter().enumerate().rev() {
        let act = &trace.layers[i + 1];
        let dz: Vec<f64> = d_out.iter().zip(act).map(|(g, a)| g * (1.0 - a * a)).collect();
        let mut d_in = vec![0.0; slot.inputs];
        backprop_affine(&params.0, *slot, &trace.layers[i], &dz, grad, &mut d_in);
        d_out = d_in;
    }
    Ok(())
}

fn backprop_affine(
    params: &[f64],
    slot: LayerSlot,
    input: &[f64],
    dz: &[f64],
    grad: &mut [f64],
    d_input: &mut [f64],
) {
    for (o, &g) in dz.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = slot.weights + o * slot.inputs;
        for (i, &x) in input.iter().enumerate() {
            grad[row + i] += g * x;
            d_input[i] += g * params[row + i];
        }
        grad[slot.bias + o] += g;
    }
}

/// Gradient of `sum_h <upstream[h], output[h]>` with respect to the parameters.
pub fn backward(
    spec: &NetworkSpec,
    params: &ParameterSet,
    input: &[f64],
    upstream: &[Vec<f64>],
) -> Result<ParameterSet, NnError> {
    let trace = forward_trace(spec, params, input)?;
    let mut grad = vec![0.0; params.len()];
    accumulate_gradient(spec, params, &trace, upstream, &mut grad)?;
    Ok(ParameterSet(grad))
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

/// Adam moment estimates and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl OptimizerState {
    pub fn new(num_params: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
        }
    }

    /// One bias-corrected Adam descent step on `params`.
    pub fn apply(&mut self, params: &mut ParameterSet, grads: &[f64]) -> Result<(), NnError> {
        if grads.len() != params.len() || self.first_moment.len() != params.len() {
            return Err(NnError::Dimension {
                what: "optimizer state",
                expected: params.len(),
                got: grads.len().min(self.first_moment.len()),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((w, &g), m), v) in params
            .0
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// A network together with its weights and optimizer, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCheckpoint {
    pub spec: NetworkSpec,
    pub params: ParameterSet,
    pub optimizer: OptimizerState,
}

impl NetworkCheckpoint {
    pub fn validate(&self) -> Result<(), NnError> {
        self.spec.validate()?;
        check_params(&self.spec, &self.params)?;
        if self.optimizer.first_moment.len() != self.params.len()
            || self.optimizer.second_moment.len() != self.params.len()
        {
            return Err(NnError::Dimension {
                what: "optimizer moments",
                expected: self.params.len(),
                got: self.optimizer.first_moment.len(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        fs::write(path, self.to_json()).map_err(|source| NnError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let text = fs::read_to_string(path).map_err(|source| NnError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let ckpt = Self::from_json(&text).map_err(|source| NnError::Json {
            path: path.display().to_string(),
            source,
        })?;
        ckpt.validate()?;
        Ok(ckpt)
    }
}
