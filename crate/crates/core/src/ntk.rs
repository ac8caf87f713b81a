//! Explicit NTK of an MLP from one backward sweep over the whole dataset.
//!
//! `S_l` (`d_l × n`) holds `∂f/∂Z_l` for every datapoint:
//!
//! ```text
//! S_L = c_L · σ′(Z_L) ⊙ (w 1ᵀ)
//! S_l = c_l · σ′(Z_l) ⊙ (W_{l+1} S_{l+1})
//! ```
//!
//! and the kernel splits into one component per parameter tensor:
//!
//! ```text
//! layer{l}.weight  (S_lᵀS_l) ⊙ (X_{l-1}ᵀX_{l-1})
//! layer{l}.bias    S_lᵀS_l
//! readout.weight   X_Lᵀ X_L
//! readout.bias     1 1ᵀ
//! ```
//!
//! The readout bias gradient is the constant 1, so its component is the
//! all-ones matrix rather than a matrix filled with `d_L`.

use indexmap::IndexMap;

use crate::linalg::{gram, hadamard, mul, mul_at_b, Mat, Real};
use crate::mlp::{bias_name, forward, weight_name, ForwardTrace, MlpState, NetworkConfig, READOUT_BIAS, READOUT_WEIGHT};
use crate::{Error, Result};

/// Per-datapoint backward chains `S_l`, `l = 1..=L` (index `l - 1`).
#[derive(Debug, Clone)]
pub struct SMatrices<T: Real = f64> {
    pub s: Vec<Mat<T>>,
}

/// Kernel components keyed by parameter tensor name, in network order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NtkComponents<T: Real = f64> {
    map: IndexMap<String, Mat<T>>,
}

impl<T: Real> NtkComponents<T> {
    pub fn new() -> Self {
        Self { map: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, k: Mat<T>) {
        self.map.insert(name.into(), k);
    }

    pub fn get(&self, name: &str) -> Option<&Mat<T>> {
        self.map.get(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Mat<T>> {
        self.map.shift_remove(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat<T>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Keeps only components for which `keep(name)` holds.
    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.map.retain(|k, _| keep(k));
    }

    /// The full kernel: entrywise sum of all components.
    pub fn sum(&self) -> Result<Mat<T>> {
        let mut it = self.map.values();
        let mut total = it
            .next()
            .ok_or_else(|| Error::InvalidConfig("no kernel components to sum".into()))?
            .clone();
        for k in it {
            total.add_assign(k)?;
        }
        Ok(total)
    }
}

impl<T: Real> IntoIterator for NtkComponents<T> {
    type Item = (String, Mat<T>);
    type IntoIter = indexmap::map::IntoIter<String, Mat<T>>;

    fn into_iter(self) -> Self::IntoIter {
        self.map.into_iter()
    }
}

impl<T: Real> FromIterator<(String, Mat<T>)> for NtkComponents<T> {
    fn from_iter<I: IntoIterator<Item = (String, Mat<T>)>>(iter: I) -> Self {
        Self {
            map: iter.into_iter().collect(),
        }
    }
}

/// Entrywise sum of the components.
pub fn sum_components<T: Real>(c: &NtkComponents<T>) -> Result<Mat<T>> {
    c.sum()
}

/// Backward sweep producing every `S_l` at once.
pub fn compute_s<T: Real>(trace: &ForwardTrace<T>, state: &MlpState<T>, config: &NetworkConfig) -> Result<SMatrices<T>> {
    let depth = config.depth();
    if depth == 0 {
        return Err(Error::EmptyNetwork);
    }
    if trace.preacts.len() != depth {
        return Err(Error::shape("trace depth does not match network"));
    }
    let act = config.activation();
    let mut s = Vec::with_capacity(depth);

    let z_top = &trace.preacts[depth - 1];
    let c_top: T = config.scale(depth);
    let mut top = Mat::zeros(z_top.rows(), z_top.cols());
    for a in 0..z_top.cols() {
        for ((out, &z), &w) in top.col_mut(a).iter_mut().zip(z_top.col(a)).zip(&state.readout_weight) {
            *out = c_top * act.derivative(z) * w;
        }
    }
    s.push(top);

    for l in (1..depth).rev() {
        let upper = s.last().expect("pushed above");
        let mut sl = mul(&state.weights[l], upper)?;
        let c: T = config.scale(l);
        for (v, &z) in sl.data_mut().iter_mut().zip(trace.preacts[l - 1].data()) {
            *v *= c * act.derivative(z);
        }
        s.push(sl);
    }
    s.reverse();
    Ok(SMatrices { s })
}

/// All kernel components, bias terms included iff the network has biases.
pub fn explicit_ntk<T: Real>(trace: &ForwardTrace<T>, state: &MlpState<T>, config: &NetworkConfig) -> Result<NtkComponents<T>> {
    explicit_ntk_with(trace, state, config, config.use_bias())
}

/// Like [`explicit_ntk`], with bias components only when `include_bias`
/// (and the network has biases). Training with frozen biases drops them.
pub fn explicit_ntk_with<T: Real>(
    trace: &ForwardTrace<T>,
    state: &MlpState<T>,
    config: &NetworkConfig,
    include_bias: bool,
) -> Result<NtkComponents<T>> {
    let include_bias = include_bias && config.use_bias();
    let n = trace.n();
    let depth = config.depth();
    let mut out = NtkComponents::new();
    if depth > 0 {
        let sm = compute_s(trace, state, config)?;
        for l in 1..=depth {
            let ss = gram(&sm.s[l - 1]);
            let xx = gram(&trace.acts[l - 1]);
            out.insert(weight_name(l), hadamard(&ss, &xx)?);
            if include_bias {
                out.insert(bias_name(l), ss);
            }
        }
    }
    out.insert(READOUT_WEIGHT, gram(&trace.acts[depth]));
    if include_bias {
        out.insert(READOUT_BIAS, Mat::ones(n, n));
    }
    Ok(out)
}

/// Forward pass plus [`explicit_ntk`].
pub fn explicit_ntk_for(state: &MlpState<f64>, config: &NetworkConfig, x: &Mat<f64>) -> Result<NtkComponents<f64>> {
    let trace = forward(state, config, x)?;
    explicit_ntk(&trace, state, config)
}

/// Cross kernel `K(x_eval, x_train)` (`m × n`), per component.
///
/// Runs one forward pass and S sweep over the concatenated inputs and
/// combines the eval and train column blocks.
pub fn explicit_cross_ntk<T: Real>(
    state: &MlpState<T>,
    config: &NetworkConfig,
    x_eval: &Mat<T>,
    x_train: &Mat<T>,
    include_bias: bool,
) -> Result<NtkComponents<T>> {
    let include_bias = include_bias && config.use_bias();
    let (m, n) = (x_eval.cols(), x_train.cols());
    let joint = x_eval.hcat(x_train)?;
    let trace = forward(state, config, &joint)?;
    let split = |a: &Mat<T>| (a.select_cols(0..m), a.select_cols(m..m + n));
    let depth = config.depth();
    let mut out = NtkComponents::new();
    if depth > 0 {
        let sm = compute_s(&trace, state, config)?;
        for l in 1..=depth {
            let (se, st) = split(&sm.s[l - 1]);
            let (xe, xt) = split(&trace.acts[l - 1]);
            let ss = mul_at_b(&se, &st)?;
            let xx = mul_at_b(&xe, &xt)?;
            out.insert(weight_name(l), hadamard(&ss, &xx)?);
            if include_bias {
                out.insert(bias_name(l), ss);
            }
        }
    }
    let (xe, xt) = split(&trace.acts[depth]);
    out.insert(READOUT_WEIGHT, mul_at_b(&xe, &xt)?);
    if include_bias {
        out.insert(READOUT_BIAS, Mat::ones(m, n));
    }
    Ok(out)
}
