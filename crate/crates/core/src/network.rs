//! Feedforward networks `f(x) = σ_L(W_L σ_{L-1}(… σ_1(W_1 x) …))`, margins,
//! ramp losses, and reverse-mode gradients.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{spectral_norm_default, sub, Matrix};
use crate::rng::StreamKey;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
    Identity,
}

impl ActivationKind {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            ActivationKind::Relu => z.max(0.0),
            ActivationKind::LeakyRelu { slope } => {
                if z > 0.0 {
                    z
                } else {
                    slope * z
                }
            }
            ActivationKind::Tanh => z.tanh(),
            ActivationKind::Identity => z,
        }
    }

    /// Derivative; at a kink (z = 0) the non-positive branch is used, so
    /// ReLU′(0) = 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            ActivationKind::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::LeakyRelu { slope } => {
                if z > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            ActivationKind::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            ActivationKind::Identity => 1.0,
        }
    }

    /// Smallest valid Lipschitz constant for the kind.
    pub fn natural_lipschitz(self) -> f64 {
        match self {
            ActivationKind::LeakyRelu { slope } => slope.abs().max(1.0),
            _ => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::LeakyRelu { .. } => "leaky_relu",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Identity => "identity",
        }
    }
}

/// An activation together with the Lipschitz constant `ρ_i` the bounds use.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    pub kind: ActivationKind,
    pub lipschitz: f64,
}

impl Activation {
    pub fn new(kind: ActivationKind) -> Self {
        Activation {
            kind,
            lipschitz: kind.natural_lipschitz(),
        }
    }

    /// Declared constants below the kind's true constant are rejected.
    pub fn with_lipschitz(kind: ActivationKind, lipschitz: f64) -> Result<Self> {
        if let ActivationKind::LeakyRelu { slope } = kind {
            if !slope.is_finite() {
                return Err(Error::NonFinite("leaky_relu slope"));
            }
        }
        if !(lipschitz.is_finite() && lipschitz >= kind.natural_lipschitz()) {
            return Err(invalid(format!(
                "lipschitz constant {lipschitz} is below the {} constant {}",
                kind.name(),
                kind.natural_lipschitz()
            )));
        }
        Ok(Activation { kind, lipschitz })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub activation: Activation,
}

/// A feedforward network. `W_i` is `m_i × m_{i-1}`, `m_0 = d`, `m_L = k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("network needs at least one layer"));
        }
        for w in layers.windows(2) {
            if w[1].weights.cols() != w[0].weights.rows() {
                return Err(Error::DimensionMismatch {
                    context: "layer chaining",
                    expected: w[0].weights.rows(),
                    actual: w[1].weights.cols(),
                });
            }
        }
        Ok(Network { layers })
    }

    /// Random Gaussian weights with standard deviation `scale / √fan_in`.
    pub fn random(
        widths: &[usize],
        activations: &[ActivationKind],
        scale: f64,
        key: StreamKey,
    ) -> Result<Self> {
        if widths.len() < 2 || activations.len() != widths.len() - 1 {
            return Err(invalid(
                "need widths m_0..m_L and one activation per layer",
            ));
        }
        let layers = activations
            .iter()
            .enumerate()
            .map(|(i, &kind)| {
                let mut s = key.child("layer", i).stream();
                let sd = scale / (widths[i] as f64).sqrt();
                Layer {
                    weights: Matrix::from_fn(widths[i + 1], widths[i], |_, _| sd * s.next_gaussian()),
                    activation: Activation::new(kind),
                }
            })
            .collect();
        Network::new(layers)
    }

    /// Like [`Network::random`], but in every layer except the last the rows
    /// come in pairs `w, −w` (an odd last row stays unpaired). Without biases
    /// this keeps at least one unit of each pair active on every nonzero
    /// input, so no input region starts with an all-dead hidden layer.
    pub fn random_symmetric(
        widths: &[usize],
        activations: &[ActivationKind],
        scale: f64,
        key: StreamKey,
    ) -> Result<Self> {
        let net = Network::random(widths, activations, scale, key)?;
        let last = net.depth() - 1;
        let weights = net
            .weights()
            .into_iter()
            .enumerate()
            .map(|(l, mut w)| {
                if l < last {
                    let half = w.rows() / 2;
                    for i in 0..half {
                        for j in 0..w.cols() {
                            let v = -w.get(i, j);
                            w.set(half + i, j, v);
                        }
                    }
                }
                w
            })
            .collect();
        net.with_weights(weights)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.rows()
    }

    /// `[m_0, m_1, …, m_L]`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.weights.rows()))
            .collect()
    }

    pub fn weights(&self) -> Vec<Matrix> {
        self.layers.iter().map(|l| l.weights.clone()).collect()
    }

    /// Same architecture and activations with new weights.
    pub fn with_weights(&self, weights: Vec<Matrix>) -> Result<Network> {
        if weights.len() != self.layers.len() {
            return Err(Error::ArchitectureMismatch(format!(
                "expected {} weight matrices, got {}",
                self.layers.len(),
                weights.len()
            )));
        }
        for (l, w) in self.layers.iter().zip(&weights) {
            if l.weights.shape() != w.shape() {
                return Err(Error::ArchitectureMismatch(format!(
                    "weight shape {:?} does not match {:?}",
                    w.shape(),
                    l.weights.shape()
                )));
            }
        }
        Ok(Network {
            layers: self
                .layers
                .iter()
                .zip(weights)
                .map(|(l, weights)| Layer {
                    weights,
                    activation: l.activation,
                })
                .collect(),
        })
    }

    pub fn same_architecture(&self, other: &Network) -> bool {
        self.widths() == other.widths()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.activation == b.activation)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.layers.iter().fold(x.to_vec(), |a, l| {
            l.weights
                .mul_vec(&a)
                .into_iter()
                .map(|z| l.activation.kind.apply(z))
                .collect()
        }))
    }

    /// Outputs `X_1, …, X_L` of every layer; the last one equals `forward(x)`.
    pub fn layer_outputs(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let mut outs: Vec<Vec<f64>> = Vec::with_capacity(self.depth());
        for l in &self.layers {
            let prev = outs.last().map_or(x, |v| v.as_slice());
            let next = l
                .weights
                .mul_vec(prev)
                .into_iter()
                .map(|z| l.activation.kind.apply(z))
                .collect();
            outs.push(next);
        }
        Ok(outs)
    }

    /// Layer outputs for a batch whose columns are inputs: `[X_0, X_1, …, X_L]`.
    pub fn layer_outputs_batch(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        if x.rows() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "batch input rows",
                expected: self.input_dim(),
                actual: x.rows(),
            });
        }
        let mut outs = vec![x.clone()];
        for l in &self.layers {
            let mut z = l.weights.matmul(outs.last().expect("non-empty"))?;
            z.as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = l.activation.kind.apply(*v));
            outs.push(z);
        }
        Ok(outs)
    }

    /// Spectral norms `‖W_i‖_σ`.
    pub fn spectral_norms(&self) -> Result<Vec<f64>> {
        self.layers
            .iter()
            .map(|l| spectral_norm_default(&l.weights))
            .collect()
    }

    /// `Π ρ_i ‖W_i‖_σ`, an ℓ2 Lipschitz bound of `x ↦ f(x)`.
    pub fn lipschitz_upper_bound(&self) -> Result<f64> {
        Ok(self
            .spectral_norms()?
            .iter()
            .zip(&self.layers)
            .map(|(s, l)| s * l.activation.lipschitz)
            .product())
    }
}

/// `f(x)_y − max_{j≠y} f(x)_j`. Panics unless `k ≥ 2` and `y < k`.
pub fn margin(logits: &[f64], y: usize) -> f64 {
    let j = runner_up(logits, y);
    logits[y] - logits[j]
}

/// Index of the largest logit other than `y`; lowest index on ties.
fn runner_up(logits: &[f64], y: usize) -> usize {
    assert!(logits.len() >= 2, "margin needs at least two classes");
    assert!(y < logits.len(), "label {y} out of range");
    let mut best = usize::MAX;
    for (j, &v) in logits.iter().enumerate() {
        if j != y && (best == usize::MAX || v > logits[best]) {
            best = j;
        }
    }
    best
}

/// Gradient of [`margin`] with respect to the logits.
pub fn margin_grad(logits: &[f64], y: usize) -> Vec<f64> {
    let j = runner_up(logits, y);
    let mut g = vec![0.0; logits.len()];
    g[y] = 1.0;
    g[j] = -1.0;
    g
}

/// Ramp loss: 1 for t ≤ 0, 1 − t/γ on (0, γ), 0 for t ≥ γ.
pub fn ramp_loss(t: f64, gamma: f64) -> f64 {
    if t <= 0.0 {
        1.0
    } else if t < gamma {
        1.0 - t / gamma
    } else {
        0.0
    }
}

/// Derivative of [`ramp_loss`]; 0 at both kinks.
pub fn ramp_loss_derivative(t: f64, gamma: f64) -> f64 {
    if t > 0.0 && t < gamma {
        -1.0 / gamma
    } else {
        0.0
    }
}

/// A user-supplied loss on logits. Values are clamped to `[0, 1]`; the
/// declared Lipschitz constant is trusted (see [`probe_lipschitz`]).
pub trait LogitLoss: Send + Sync + fmt::Debug {
    fn value(&self, logits: &[f64], y: usize) -> f64;
    fn grad(&self, logits: &[f64], y: usize) -> Vec<f64>;
    /// ℓ2 Lipschitz constant with respect to the logits.
    fn lipschitz(&self) -> f64;
}

#[derive(Clone, Debug)]
pub enum LossSpec {
    RampMargin { gamma: f64 },
    Custom(Arc<dyn LogitLoss>),
}

/// Where the loss Lipschitz constant `ρ` comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LipschitzSource {
    /// Ramp composed with the margin: `2/γ`.
    RampMarginTwoOverGamma,
    /// Constant declared by a custom loss.
    Declared,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossLipschitz {
    pub value: f64,
    pub source: LipschitzSource,
}

impl LossSpec {
    pub fn ramp(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(invalid(format!("margin gamma must be positive, got {gamma}")));
        }
        Ok(LossSpec::RampMargin { gamma })
    }

    pub fn custom(loss: Arc<dyn LogitLoss>) -> Result<Self> {
        let rho = loss.lipschitz();
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(invalid("custom loss Lipschitz constant must be positive"));
        }
        Ok(LossSpec::Custom(loss))
    }

    pub fn gamma(&self) -> Option<f64> {
        match self {
            LossSpec::RampMargin { gamma } => Some(*gamma),
            LossSpec::Custom(_) => None,
        }
    }

    pub fn on_logits(&self, logits: &[f64], y: usize) -> f64 {
        match self {
            LossSpec::RampMargin { gamma } => ramp_loss(margin(logits, y), *gamma),
            LossSpec::Custom(l) => l.value(logits, y).clamp(0.0, 1.0),
        }
    }

    /// Loss value and its gradient with respect to the logits.
    pub fn value_and_grad(&self, logits: &[f64], y: usize) -> (f64, Vec<f64>) {
        match self {
            LossSpec::RampMargin { gamma } => {
                let t = margin(logits, y);
                let d = ramp_loss_derivative(t, *gamma);
                let g = margin_grad(logits, y).into_iter().map(|v| v * d).collect();
                (ramp_loss(t, *gamma), g)
            }
            LossSpec::Custom(l) => {
                let raw = l.value(logits, y);
                if (0.0..=1.0).contains(&raw) {
                    (raw, l.grad(logits, y))
                } else {
                    (raw.clamp(0.0, 1.0), vec![0.0; logits.len()])
                }
            }
        }
    }

    /// ℓ2 Lipschitz constant of the loss in the logits.
    pub fn lipschitz(&self) -> LossLipschitz {
        match self {
            LossSpec::RampMargin { gamma } => LossLipschitz {
                value: 2.0 / gamma,
                source: LipschitzSource::RampMarginTwoOverGamma,
            },
            LossSpec::Custom(l) => LossLipschitz {
                value: l.lipschitz(),
                source: LipschitzSource::Declared,
            },
        }
    }
}

/// Largest observed `|ℓ(u) − ℓ(v)| / ‖u − v‖_2` over random logit pairs.
pub fn probe_lipschitz(loss: &LossSpec, classes: usize, pairs: usize, key: StreamKey) -> f64 {
    let mut s = key.stream();
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let u = s.gaussian_vec(classes);
        let v: Vec<f64> = u.iter().map(|x| x + 0.1 * s.next_gaussian()).collect();
        let y = s.next_below(classes);
        let d = crate::linalg::norm2(&sub(&u, &v));
        if d > 0.0 {
            worst = worst.max((loss.on_logits(&u, y) - loss.on_logits(&v, y)).abs() / d);
        }
    }
    worst
}

fn check_label(net: &Network, y: usize) -> Result<()> {
    let k = net.output_dim();
    if k < 2 {
        return Err(invalid("margin losses need at least two outputs"));
    }
    if y >= k {
        return Err(invalid(format!("label {y} out of range for {k} outputs")));
    }
    Ok(())
}

/// `ℓ(f(x), y)`, always in `[0, 1]`.
pub fn loss_value(net: &Network, x: &[f64], y: usize, loss: &LossSpec) -> Result<f64> {
    check_label(net, y)?;
    Ok(loss.on_logits(&net.forward(x)?, y))
}

/// Gradient of [`loss_value`] with respect to `x`.
pub fn loss_grad_input(net: &Network, x: &[f64], y: usize, loss: &LossSpec) -> Result<Vec<f64>> {
    check_label(net, y)?;
    Ok(backprop(net, x, |logits| loss.value_and_grad(logits, y), false)?.input_grad)
}

/// Result of one reverse-mode pass.
#[derive(Clone, Debug)]
pub struct Backprop {
    /// Value of the head at the network output.
    pub value: f64,
    pub input_grad: Vec<f64>,
    /// `∂value/∂W_i`, present when requested.
    pub weight_grads: Option<Vec<Matrix>>,
}

/// Reverse-mode differentiation of `head(f(x))`, where `head` returns its
/// value and gradient at the logits.
pub fn backprop(
    net: &Network,
    x: &[f64],
    head: impl FnOnce(&[f64]) -> (f64, Vec<f64>),
    want_weights: bool,
) -> Result<Backprop> {
    net.check_input(x)?;
    let mut pre: Vec<Vec<f64>> = Vec::with_capacity(net.depth());
    let mut post: Vec<Vec<f64>> = Vec::with_capacity(net.depth() + 1);
    post.push(x.to_vec());
    for l in net.layers() {
        let z = l.weights.mul_vec(post.last().expect("non-empty"));
        post.push(z.iter().map(|&v| l.activation.kind.apply(v)).collect());
        pre.push(z);
    }
    let (value, mut delta) = head(post.last().expect("non-empty"));
    let mut weight_grads = want_weights.then(|| Vec::with_capacity(net.depth()));
    for (i, l) in net.layers().iter().enumerate().rev() {
        let dz: Vec<f64> = delta
            .iter()
            .zip(&pre[i])
            .map(|(d, &z)| d * l.activation.kind.derivative(z))
            .collect();
        if let Some(grads) = weight_grads.as_mut() {
            let a = &post[i];
            grads.push(Matrix::from_fn(dz.len(), a.len(), |r, c| dz[r] * a[c]));
        }
        delta = l.weights.tr_mul_vec(&dz);
    }
    if let Some(g) = weight_grads.as_mut() {
        g.reverse();
    }
    Ok(Backprop {
        value,
        input_grad: delta,
        weight_grads,
    })
}
