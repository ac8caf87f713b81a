//! Multilayer perceptrons with a single scalar readout.
//!
//! With widths `[d_0, d_1, …, d_L]` the network computes
//!
//! ```text
//! Z_l = W_lᵀ X_{l-1} + B_l        W_l: d_{l-1} × d_l
//! X_l = c_l · σ(Z_l)              c_l = 1/√d_l (NTK parameterization) or 1
//! f   = wᵀ X_L + b
//! ```
//!
//! where `X_0` is the input with one datapoint per column. The output `f` is
//! the raw logit; any readout sigmoid is applied by the caller.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::linalg::{dot, mul_at_b, Mat, Real};
use crate::rng::SeededRng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
    Sigmoid,
}

impl Activation {
    /// `(σ(z), σ′(z))`. The ReLU derivative at exactly zero is 0.
    #[inline]
    pub fn eval<T: Real>(self, z: T) -> (T, T) {
        let one = T::one();
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                (t, one - t * t)
            }
            Activation::Relu => {
                if z > T::zero() {
                    (z, one)
                } else {
                    (T::zero(), T::zero())
                }
            }
            Activation::Identity => (z, one),
            Activation::Sigmoid => {
                let s = sigmoid(z);
                (s, s * (one - s))
            }
        }
    }

    #[inline]
    pub fn value<T: Real>(self, z: T) -> T {
        self.eval(z).0
    }

    #[inline]
    pub fn derivative<T: Real>(self, z: T) -> T {
        self.eval(z).1
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

/// Logistic function, stable for large `|z|`.
#[inline]
pub fn sigmoid<T: Real>(z: T) -> T {
    let one = T::one();
    if z >= T::zero() {
        one / (one + (-z).exp())
    } else {
        let e = z.exp();
        e / (one + e)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::InvalidConfig(format!("unknown activation `{other}`"))),
        }
    }
}

/// How hidden and readout biases start out when the network has biases.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasInit {
    #[default]
    Zero,
    StandardNormal,
}

/// Architecture of a single-output MLP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    widths: Vec<usize>,
    activation: Activation,
    use_bias: bool,
    ntk_parameterization: bool,
    bias_init: BiasInit,
}

impl NetworkConfig {
    /// `widths` lists the input width followed by each hidden width; the
    /// one-neuron readout is implicit. Biases start disabled and the NTK
    /// parameterization enabled.
    pub fn new(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if widths.is_empty() {
            return Err(Error::InvalidConfig("widths must name at least the input width".into()));
        }
        if let Some(pos) = widths.iter().position(|&w| w == 0) {
            return Err(Error::InvalidConfig(format!("width at position {pos} is zero")));
        }
        Ok(Self {
            widths,
            activation,
            use_bias: false,
            ntk_parameterization: true,
            bias_init: BiasInit::Zero,
        })
    }

    /// Parses `"784,50,50,50"`.
    pub fn parse_widths(spec: &str) -> Result<Vec<usize>> {
        spec.split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::InvalidConfig(format!("bad width `{t}`: {e}")))
            })
            .collect()
    }

    pub fn with_bias(mut self, use_bias: bool) -> Self {
        self.use_bias = use_bias;
        self
    }

    pub fn with_ntk_parameterization(mut self, on: bool) -> Self {
        self.ntk_parameterization = on;
        self
    }

    pub fn with_bias_init(mut self, init: BiasInit) -> Self {
        self.bias_init = init;
        self
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn use_bias(&self) -> bool {
        self.use_bias
    }

    pub fn ntk_parameterization(&self) -> bool {
        self.ntk_parameterization
    }

    pub fn bias_init(&self) -> BiasInit {
        self.bias_init
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    /// Number of hidden layers `L`.
    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    /// Width of the last hidden layer (the input width when `L = 0`).
    pub fn readout_dim(&self) -> usize {
        *self.widths.last().expect("validated non-empty")
    }

    /// Post-activation scale `c_l` of hidden layer `l ≥ 1`.
    pub fn scale<T: Real>(&self, l: usize) -> T {
        debug_assert!(l >= 1 && l <= self.depth());
        if self.ntk_parameterization {
            T::one() / T::from(self.widths[l]).expect("width fits").sqrt()
        } else {
            T::one()
        }
    }

    /// Parameter tensor names with element counts, in canonical order.
    pub fn param_counts(&self) -> IndexMap<String, usize> {
        let mut out = IndexMap::new();
        for l in 1..=self.depth() {
            out.insert(weight_name(l), self.widths[l - 1] * self.widths[l]);
            if self.use_bias {
                out.insert(bias_name(l), self.widths[l]);
            }
        }
        out.insert(READOUT_WEIGHT.to_string(), self.readout_dim());
        if self.use_bias {
            out.insert(READOUT_BIAS.to_string(), 1);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_counts().values().sum()
    }
}

pub const READOUT_WEIGHT: &str = "readout.weight";
pub const READOUT_BIAS: &str = "readout.bias";

pub fn weight_name(l: usize) -> String {
    format!("layer{l}.weight")
}

pub fn bias_name(l: usize) -> String {
    format!("layer{l}.bias")
}

pub fn is_bias_name(name: &str) -> bool {
    name.ends_with(".bias")
}

/// Parameters of an MLP described by a [`NetworkConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpState<T: Real = f64> {
    /// `W_l` for `l = 1..=L`, each `d_{l-1} × d_l`.
    pub weights: Vec<Mat<T>>,
    /// `B_l` for `l = 1..=L`.
    pub biases: Option<Vec<Vec<T>>>,
    pub readout_weight: Vec<T>,
    pub readout_bias: Option<T>,
}

impl<T: Real> MlpState<T> {
    pub fn check(&self, config: &NetworkConfig) -> Result<()> {
        let w = config.widths();
        if self.weights.len() != config.depth() {
            return Err(Error::shape(format!(
                "state has {} weight matrices, config has {} hidden layers",
                self.weights.len(),
                config.depth()
            )));
        }
        for (l, m) in self.weights.iter().enumerate() {
            if m.shape() != (w[l], w[l + 1]) {
                return Err(Error::shape(format!(
                    "{} is {}x{}, expected {}x{}",
                    weight_name(l + 1),
                    m.rows(),
                    m.cols(),
                    w[l],
                    w[l + 1]
                )));
            }
        }
        if self.readout_weight.len() != config.readout_dim() {
            return Err(Error::shape(format!(
                "readout weight has {} entries, expected {}",
                self.readout_weight.len(),
                config.readout_dim()
            )));
        }
        match (&self.biases, self.readout_bias, config.use_bias()) {
            (None, None, false) => Ok(()),
            (Some(bs), Some(_), true) => {
                if bs.len() != config.depth() || bs.iter().zip(&w[1..]).any(|(b, &d)| b.len() != d) {
                    Err(Error::shape("bias vector lengths do not match widths"))
                } else {
                    Ok(())
                }
            }
            _ => Err(Error::shape("bias presence does not match config")),
        }
    }

    /// Flattened view of a parameter tensor; weights are column-major.
    pub fn tensor(&self, name: &str) -> Result<&[T]> {
        match parse_tensor_name(name)? {
            TensorRef::Weight(l) => self.weights.get(l - 1).map(|m| m.data()),
            TensorRef::Bias(l) => self
                .biases
                .as_ref()
                .and_then(|b| b.get(l - 1))
                .map(|b| b.as_slice()),
            TensorRef::ReadoutWeight => Some(self.readout_weight.as_slice()),
            TensorRef::ReadoutBias => self.readout_bias.as_ref().map(std::slice::from_ref),
        }
        .ok_or_else(|| Error::UnknownTensor(name.to_string()))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut [T]> {
        match parse_tensor_name(name)? {
            TensorRef::Weight(l) => self.weights.get_mut(l - 1).map(|m| m.data_mut()),
            TensorRef::Bias(l) => self
                .biases
                .as_mut()
                .and_then(|b| b.get_mut(l - 1))
                .map(|b| b.as_mut_slice()),
            TensorRef::ReadoutWeight => Some(self.readout_weight.as_mut_slice()),
            TensorRef::ReadoutBias => self.readout_bias.as_mut().map(std::slice::from_mut),
        }
        .ok_or_else(|| Error::UnknownTensor(name.to_string()))
    }

    pub fn cast<U: Real>(&self) -> MlpState<U> {
        let c = |x: T| U::from(x).expect("finite cast");
        MlpState {
            weights: self.weights.iter().map(|m| m.cast()).collect(),
            biases: self
                .biases
                .as_ref()
                .map(|bs| bs.iter().map(|b| b.iter().map(|&x| c(x)).collect()).collect()),
            readout_weight: self.readout_weight.iter().map(|&x| c(x)).collect(),
            readout_bias: self.readout_bias.map(c),
        }
    }
}

enum TensorRef {
    Weight(usize),
    Bias(usize),
    ReadoutWeight,
    ReadoutBias,
}

fn parse_tensor_name(name: &str) -> Result<TensorRef> {
    let unknown = || Error::UnknownTensor(name.to_string());
    match name {
        READOUT_WEIGHT => return Ok(TensorRef::ReadoutWeight),
        READOUT_BIAS => return Ok(TensorRef::ReadoutBias),
        _ => {}
    }
    let rest = name.strip_prefix("layer").ok_or_else(unknown)?;
    let (idx, kind) = rest.split_once('.').ok_or_else(unknown)?;
    let l: usize = idx.parse().map_err(|_| unknown())?;
    if l == 0 {
        return Err(unknown());
    }
    match kind {
        "weight" => Ok(TensorRef::Weight(l)),
        "bias" => Ok(TensorRef::Bias(l)),
        _ => Err(unknown()),
    }
}

/// Standard-normal weights in a fixed order: `W_1`, …, `W_L`, `w`, then
/// biases if they are drawn at all. Zero-initialized biases consume no draws,
/// so the weights do not depend on the bias settings.
pub fn init_network(config: &NetworkConfig, seed: u64) -> MlpState<f64> {
    let mut rng = SeededRng::new(seed);
    let w = config.widths();
    let weights = (1..=config.depth())
        .map(|l| Mat::from_fn(w[l - 1], w[l], |_, _| rng.normal()))
        .collect();
    let readout_weight = (0..config.readout_dim()).map(|_| rng.normal()).collect();
    let (biases, readout_bias) = if config.use_bias() {
        match config.bias_init() {
            BiasInit::Zero => (Some(w[1..].iter().map(|&d| vec![0.0; d]).collect()), Some(0.0)),
            BiasInit::StandardNormal => {
                let bs = w[1..]
                    .iter()
                    .map(|&d| (0..d).map(|_| rng.normal()).collect())
                    .collect();
                (Some(bs), Some(rng.normal()))
            }
        }
    } else {
        (None, None)
    };
    MlpState {
        weights,
        biases,
        readout_weight,
        readout_bias,
    }
}

/// Pre- and post-activations of every layer for a whole dataset.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T: Real = f64> {
    /// `Z_l` for `l = 1..=L` (index `l - 1`).
    pub preacts: Vec<Mat<T>>,
    /// `X_l` for `l = 0..=L`; `acts[0]` is the input.
    pub acts: Vec<Mat<T>>,
    /// Readout logits, one per datapoint.
    pub output: Vec<T>,
}

impl<T: Real> ForwardTrace<T> {
    pub fn n(&self) -> usize {
        self.output.len()
    }
}

pub fn forward<T: Real>(state: &MlpState<T>, config: &NetworkConfig, x: &Mat<T>) -> Result<ForwardTrace<T>> {
    state.check(config)?;
    if x.rows() != config.input_dim() {
        return Err(Error::shape(format!(
            "input has {} rows, network expects {}",
            x.rows(),
            config.input_dim()
        )));
    }
    let act = config.activation();
    let mut preacts = Vec::with_capacity(config.depth());
    let mut acts = Vec::with_capacity(config.depth() + 1);
    acts.push(x.clone());
    for l in 1..=config.depth() {
        let mut z = mul_at_b(&state.weights[l - 1], &acts[l - 1])?;
        if let Some(bs) = &state.biases {
            let b = &bs[l - 1];
            for j in 0..z.cols() {
                for (zi, &bi) in z.col_mut(j).iter_mut().zip(b) {
                    *zi += bi;
                }
            }
        }
        let c: T = config.scale(l);
        let xl = z.map(|v| act.value(v) * c);
        preacts.push(z);
        acts.push(xl);
    }
    let top = &acts[config.depth()];
    let b = state.readout_bias.unwrap_or(T::zero());
    let output = (0..x.cols()).map(|a| dot(&state.readout_weight, top.col(a)) + b).collect();
    Ok(ForwardTrace {
        preacts,
        acts,
        output,
    })
}

/// Readout logits only.
pub fn predict<T: Real>(state: &MlpState<T>, config: &NetworkConfig, x: &Mat<T>) -> Result<Vec<T>> {
    Ok(forward(state, config, x)?.output)
}
