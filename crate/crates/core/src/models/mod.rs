//! Generator and critic networks: architecture description, flat parameter
//! vectors, initialization, the latent prior and EMA shadows.

mod checkpoint;

pub use checkpoint::{Checkpoint, NetworkRole, Section};

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Negative-side slope of the leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    Relu,
    LeakyRelu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Tanh,
}

/// Fully connected network description.
///
/// `hidden_layers == 0` is a single affine map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub output_dim: usize,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
}

impl NetworkSpec {
    /// ReLU generator from latent dim `latent` to data dim `data` with an
    /// identity output.
    pub fn generator(latent: usize, data: usize, hidden_layers: usize, hidden_units: usize) -> Self {
        NetworkSpec {
            input_dim: latent,
            hidden_layers,
            hidden_units,
            output_dim: data,
            hidden_activation: HiddenActivation::Relu,
            output_activation: OutputActivation::Identity,
        }
    }

    /// Leaky-ReLU critic with one raw output per row.
    pub fn critic(data: usize, hidden_layers: usize, hidden_units: usize) -> Self {
        NetworkSpec {
            input_dim: data,
            hidden_layers,
            hidden_units,
            output_dim: 1,
            hidden_activation: HiddenActivation::LeakyRelu,
            output_activation: OutputActivation::Identity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_units == 0 {
            return Err(Error::Config(format!("network dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let mut dims = vec![self.input_dim];
        dims.extend(std::iter::repeat_n(self.hidden_units, self.hidden_layers));
        dims.push(self.output_dim);
        dims.windows(2).map(|w| LayerShape { fan_in: w[0], fan_out: w[1] }).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(LayerShape::len).sum()
    }

    /// Short architecture tag, `MLP0`, `MLP1`, ...
    pub fn arch_name(&self) -> String {
        format!("MLP{}", self.hidden_layers)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
}

impl LayerShape {
    pub fn len(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameter vector: per layer a row-major `fan_in × fan_out` weight
/// block followed by a `fan_out` bias block.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<LayerShape>,
}

impl ParamVector {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        ParamVector { values: vec![0.0; spec.param_count()], layout: spec.layers() }
    }

    pub fn from_values(spec: &NetworkSpec, values: Vec<f64>) -> Result<Self> {
        let expected = spec.param_count();
        if values.len() != expected {
            return Err(Error::shape(
                "ParamVector::from_values",
                format!("{} has {expected} parameters, got {}", spec.arch_name(), values.len()),
            ));
        }
        Ok(ParamVector { values, layout: spec.layers() })
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::shape(
                "ParamVector::with_values",
                format!("{} vs {}", self.values.len(), values.len()),
            ));
        }
        Ok(ParamVector { values, layout: self.layout.clone() })
    }

    /// Per-layer `(weight [fan_in×fan_out], bias [1×fan_out])` tensors.
    pub fn unflatten(&self) -> Vec<(Tensor, Tensor)> {
        let mut out = Vec::with_capacity(self.layout.len());
        let mut at = 0;
        for l in &self.layout {
            let w = self.values[at..at + l.fan_in * l.fan_out].to_vec();
            at += l.fan_in * l.fan_out;
            let b = self.values[at..at + l.fan_out].to_vec();
            at += l.fan_out;
            out.push((
                Tensor::matrix(l.fan_in, l.fan_out, w).expect("layout sized"),
                Tensor::matrix(1, l.fan_out, b).expect("layout sized"),
            ));
        }
        out
    }

    pub fn flatten(layers: &[(Tensor, Tensor)]) -> Result<Self> {
        let mut values = Vec::new();
        let mut layout = Vec::with_capacity(layers.len());
        for (w, b) in layers {
            if w.rank() != 2 || b.len() != w.cols() {
                return Err(Error::shape(
                    "ParamVector::flatten",
                    format!("weight {:?} with bias {:?}", w.shape(), b.shape()),
                ));
            }
            layout.push(LayerShape { fan_in: w.rows(), fan_out: w.cols() });
            values.extend_from_slice(w.data());
            values.extend_from_slice(b.data());
        }
        Ok(ParamVector { values, layout })
    }

    /// Index ranges of every weight and bias block, in storage order.
    pub fn blocks(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::with_capacity(2 * self.layout.len());
        let mut at = 0;
        for l in &self.layout {
            out.push(at..at + l.fan_in * l.fan_out);
            at += l.fan_in * l.fan_out;
            out.push(at..at + l.fan_out);
            at += l.fan_out;
        }
        out
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &[LayerShape] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Standard normal prior `N(0, I)` over a `dim`-dimensional latent space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatentPrior {
    pub dim: usize,
}

pub fn sample_latent(prior: LatentPrior, n: usize, rng: &mut Rng) -> Tensor {
    standard_normal(n, prior.dim, rng)
}

pub(crate) fn standard_normal(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::matrix(rows, cols, data).expect("sized")
}

/// He-style initialization for (leaky) ReLU layers, `N(0, 1/fan_in)` for the
/// rest; zero biases.
pub fn init_params(spec: &NetworkSpec, rng: &mut Rng) -> ParamVector {
    let layers = spec.layers();
    let last = layers.len() - 1;
    let mut values = Vec::with_capacity(spec.param_count());
    for (i, l) in layers.iter().enumerate() {
        let rectifier = i < last
            && matches!(spec.hidden_activation, HiddenActivation::Relu | HiddenActivation::LeakyRelu);
        let gain = if rectifier { 2.0 } else { 1.0 };
        let std = (gain / l.fan_in as f64).sqrt();
        values.extend((0..l.fan_in * l.fan_out).map(|_| std * rng.sample::<f64, _>(StandardNormal)));
        values.extend(std::iter::repeat_n(0.0, l.fan_out));
    }
    ParamVector { values, layout: layers }
}

/// A network whose weights live on a tape, either as trainable parameters
/// or as constants.
#[derive(Clone, Debug)]
pub struct TapeNetwork {
    spec: NetworkSpec,
    layers: Vec<(NodeId, NodeId)>,
}

impl TapeNetwork {
    pub fn register(tape: &mut Tape, spec: &NetworkSpec, params: &ParamVector, trainable: bool) -> Result<Self> {
        if params.len() != spec.param_count() {
            return Err(Error::shape(
                "TapeNetwork::register",
                format!("{} needs {} parameters, got {}", spec.arch_name(), spec.param_count(), params.len()),
            ));
        }
        let layers = params
            .unflatten()
            .into_iter()
            .map(|(w, b)| {
                if trainable {
                    (tape.param(w), tape.param(b))
                } else {
                    (tape.constant(w), tape.constant(b))
                }
            })
            .collect();
        Ok(TapeNetwork { spec: spec.clone(), layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn apply(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let n = match tape.shape(x) {
            [n, d] if *d == self.spec.input_dim => *n,
            s => {
                return Err(Error::shape(
                    "network input",
                    format!("expected [n×{}], got {s:?}", self.spec.input_dim),
                ))
            }
        };
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let xw = tape.matmul(h, w)?;
            let bb = tape.broadcast_rows(b, n)?;
            h = tape.add(xw, bb)?;
            h = if i < last {
                match self.spec.hidden_activation {
                    HiddenActivation::Relu => tape.relu(h)?,
                    HiddenActivation::LeakyRelu => tape.leaky_relu(h, LEAKY_SLOPE)?,
                    HiddenActivation::Tanh => tape.tanh(h)?,
                }
            } else {
                match self.spec.output_activation {
                    OutputActivation::Identity => h,
                    OutputActivation::Tanh => tape.tanh(h)?,
                }
            };
        }
        Ok(h)
    }

    /// Collects this network's parameter gradients into layout order.
    pub fn flat_grad(&self, grads: &Gradients) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.spec.param_count());
        for &(w, b) in &self.layers {
            let gw = grads.get(w).ok_or_else(|| Error::usage("network weights are not trainable on this tape"))?;
            out.extend_from_slice(gw.data());
            out.extend_from_slice(grads.wrt(b).data());
        }
        Ok(out)
    }
}

/// Deterministic forward pass `f(z; ψ)`; no noise is added.
pub fn generate(spec: &NetworkSpec, params: &ParamVector, z: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let net = TapeNetwork::register(&mut tape, spec, params, false)?;
    let x = tape.constant(z.clone());
    let out = net.apply(&mut tape, x)?;
    Ok(tape.value(out).clone())
}

/// `decay·shadow + (1 − decay)·current`, elementwise.
pub fn ema_update(shadow: &ParamVector, current: &ParamVector, decay: f64) -> Result<ParamVector> {
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::usage(format!("EMA decay must lie in [0, 1], got {decay}")));
    }
    if shadow.layout != current.layout {
        return Err(Error::shape("ema_update", "shadow and current layouts differ"));
    }
    let values = shadow
        .values
        .iter()
        .zip(&current.values)
        .map(|(s, c)| decay * s + (1.0 - decay) * c)
        .collect();
    Ok(ParamVector { values, layout: current.layout.clone() })
}
