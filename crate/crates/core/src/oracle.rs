//! Ground-truth kernels from ordinary per-sample backpropagation.
//!
//! Each datapoint is pushed through its own vector forward pass and a
//! standard reverse sweep, producing `∂f(x_α)/∂θ` for every parameter. The
//! gradients are stacked into the Jacobian `J` (`P × n`, tensors in network
//! order), whose Gram matrix is the kernel. Nothing here reuses the S-matrix
//! recursion in [`crate::ntk`]; the two paths check each other.

use std::ops::Range;

use indexmap::IndexMap;
use rayon::prelude::*;

use crate::linalg::{dot, gram, gram_rows, mul_at_b, Mat, Real};
use crate::mlp::{bias_name, forward, sigmoid, weight_name, Activation, ForwardTrace, MlpState, NetworkConfig, READOUT_BIAS, READOUT_WEIGHT};
use crate::ntk::NtkComponents;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Param {
    Weight(usize),
    Bias(usize),
    ReadoutWeight,
    ReadoutBias,
}

/// Canonical tensor order with element counts; matches `param_counts`.
fn param_list(config: &NetworkConfig) -> Vec<(Param, String, usize)> {
    let w = config.widths();
    let mut out = Vec::new();
    for l in 1..=config.depth() {
        out.push((Param::Weight(l), weight_name(l), w[l - 1] * w[l]));
        if config.use_bias() {
            out.push((Param::Bias(l), bias_name(l), w[l]));
        }
    }
    out.push((Param::ReadoutWeight, READOUT_WEIGHT.to_string(), config.readout_dim()));
    if config.use_bias() {
        out.push((Param::ReadoutBias, READOUT_BIAS.to_string(), 1));
    }
    out
}

/// Where a sample's gradients go: the whole stacked column, or one block.
enum Target<'a, T> {
    All {
        col: &'a mut [T],
        offsets: &'a [(Param, Range<usize>)],
    },
    One {
        param: Param,
        col: &'a mut [T],
    },
}

impl<T> Target<'_, T> {
    fn slot(&mut self, p: Param) -> Option<&mut [T]> {
        match self {
            Target::All { col, offsets } => offsets
                .iter()
                .find(|(q, _)| *q == p)
                .map(move |(_, r)| &mut col[r.clone()]),
            Target::One { param, col } => (*param == p).then_some(&mut **col),
        }
    }

    /// Lowest layer whose gradients are still needed.
    fn lowest_layer(&self) -> usize {
        match self {
            Target::All { .. } => 1,
            Target::One { param, .. } => match *param {
                Param::Weight(l) | Param::Bias(l) => l,
                Param::ReadoutWeight | Param::ReadoutBias => usize::MAX,
            },
        }
    }
}

/// Reverse-mode gradient of `f(input)` for one datapoint.
fn backprop_sample<T: Real>(state: &MlpState<T>, config: &NetworkConfig, input: &[T], mut target: Target<'_, T>) {
    let act = config.activation();
    let depth = config.depth();

    // forward, keeping z_l and h_l for this sample only
    let mut zs: Vec<Vec<T>> = Vec::with_capacity(depth);
    let mut hs: Vec<Vec<T>> = Vec::with_capacity(depth + 1);
    hs.push(input.to_vec());
    for l in 1..=depth {
        let wl = &state.weights[l - 1];
        let prev = &hs[l - 1];
        let c: T = config.scale(l);
        let mut z = vec![T::zero(); wl.cols()];
        for (j, zj) in z.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (&wij, &hi) in wl.col(j).iter().zip(prev) {
                acc += wij * hi;
            }
            if let Some(bs) = &state.biases {
                acc += bs[l - 1][j];
            }
            *zj = acc;
        }
        let h = z.iter().map(|&v| c * act.value(v)).collect();
        zs.push(z);
        hs.push(h);
    }

    if let Some(slot) = target.slot(Param::ReadoutWeight) {
        slot.copy_from_slice(&hs[depth]);
    }
    if let Some(slot) = target.slot(Param::ReadoutBias) {
        slot[0] = T::one();
    }

    let lowest = target.lowest_layer();
    // df/dh_L = w
    let mut grad_h = state.readout_weight.clone();
    for l in (1..=depth).rev() {
        if l < lowest {
            break;
        }
        let c: T = config.scale(l);
        let delta: Vec<T> = grad_h
            .iter()
            .zip(&zs[l - 1])
            .map(|(&g, &z)| g * c * act.derivative(z))
            .collect();
        let prev = &hs[l - 1];
        if let Some(slot) = target.slot(Param::Weight(l)) {
            let rows = prev.len();
            for (j, &dj) in delta.iter().enumerate() {
                for (i, &hi) in prev.iter().enumerate() {
                    slot[i + j * rows] = hi * dj;
                }
            }
        }
        if let Some(slot) = target.slot(Param::Bias(l)) {
            slot.copy_from_slice(&delta);
        }
        if l > 1 && l > lowest {
            let wl = &state.weights[l - 1];
            grad_h = (0..wl.rows())
                .map(|i| {
                    let mut acc = T::zero();
                    for (j, &dj) in delta.iter().enumerate() {
                        acc += wl.get(i, j) * dj;
                    }
                    acc
                })
                .collect();
        }
    }
}

fn check_input<T: Real>(state: &MlpState<T>, config: &NetworkConfig, x: &Mat<T>) -> Result<()> {
    state.check(config)?;
    if x.rows() != config.input_dim() {
        return Err(Error::shape(format!(
            "input has {} rows, network expects {}",
            x.rows(),
            config.input_dim()
        )));
    }
    Ok(())
}

/// The stacked Jacobian with one row block per parameter tensor.
#[derive(Debug, Clone)]
pub struct PerSampleGradients<T: Real = f64> {
    /// `P × n`; column `α` is `∂f(x_α)/∂θ`.
    pub jacobian: Mat<T>,
    /// Row range of each tensor inside `jacobian`, in network order.
    pub blocks: IndexMap<String, Range<usize>>,
}

impl<T: Real> PerSampleGradients<T> {
    /// Copy of one tensor's gradient block (`p_t × n`).
    pub fn block(&self, name: &str) -> Option<Mat<T>> {
        let r = self.blocks.get(name)?;
        Some(self.jacobian.slice(r.clone(), 0..self.jacobian.cols()))
    }

    pub fn n(&self) -> usize {
        self.jacobian.cols()
    }
}

pub fn per_sample_gradients<T: Real>(state: &MlpState<T>, config: &NetworkConfig, x: &Mat<T>) -> Result<PerSampleGradients<T>> {
    check_input(state, config, x)?;
    let params = param_list(config);
    let mut offsets = Vec::with_capacity(params.len());
    let mut blocks = IndexMap::new();
    let mut at = 0;
    for (p, name, count) in &params {
        offsets.push((*p, at..at + count));
        blocks.insert(name.clone(), at..at + count);
        at += count;
    }
    let total = at;
    let mut jacobian = Mat::zeros(total, x.cols());
    jacobian
        .data_mut()
        .par_chunks_mut(total)
        .enumerate()
        .for_each(|(a, col)| {
            backprop_sample(state, config, x.col(a), Target::All { col, offsets: &offsets });
        });
    Ok(PerSampleGradients { jacobian, blocks })
}

/// `JᵀJ` of the full stacked Jacobian.
pub fn oracle_full_ntk<T: Real>(g: &PerSampleGradients<T>) -> Mat<T> {
    gram(&g.jacobian)
}

/// Gram matrix of every tensor's row block.
pub fn oracle_layerwise_ntk<T: Real>(g: &PerSampleGradients<T>) -> NtkComponents<T> {
    g.blocks
        .iter()
        .map(|(name, r)| (name.clone(), gram_rows(&g.jacobian, r.clone())))
        .collect()
}

/// Layerwise kernel without ever holding the full Jacobian.
///
/// Gradients are recomputed tensor by tensor, so at most one `p_t × n`
/// block is alive at a time, at the price of repeating the backward sweep.
pub fn oracle_layerwise_streaming<T: Real>(state: &MlpState<T>, config: &NetworkConfig, x: &Mat<T>) -> Result<NtkComponents<T>> {
    check_input(state, config, x)?;
    let mut out = NtkComponents::new();
    for (param, name, count) in param_list(config) {
        let mut block = Mat::zeros(count, x.cols());
        block
            .data_mut()
            .par_chunks_mut(count)
            .enumerate()
            .for_each(|(a, col)| backprop_sample(state, config, x.col(a), Target::One { param, col }));
        out.insert(name, gram(&block));
    }
    Ok(out)
}

/// Default central-difference step for a parameter value.
pub fn fd_step(theta: f64) -> f64 {
    1e-6 * theta.abs().max(1.0)
}

/// Central difference `(f(θ + h) − f(θ − h)) / 2h` for one parameter entry,
/// one value per datapoint.
///
/// Both offsets are propagated as differences from the unperturbed forward
/// pass, using cancellation-free identities for each activation, so the
/// quotient keeps full relative precision even where the gradient is many
/// orders of magnitude below the output.
pub fn finite_diff_gradient(
    state: &MlpState<f64>,
    config: &NetworkConfig,
    x: &Mat<f64>,
    tensor_name: &str,
    index: usize,
    h: f64,
) -> Result<Vec<f64>> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidConfig(format!("finite-difference step must be positive, got {h}")));
    }
    let len = state.tensor(tensor_name)?.len();
    if index >= len {
        return Err(Error::IndexOutOfRange {
            tensor: tensor_name.to_string(),
            index,
            len,
        });
    }
    let param = param_list(config)
        .into_iter()
        .find(|(_, name, _)| name == tensor_name)
        .map(|(p, _, _)| p)
        .ok_or_else(|| Error::UnknownTensor(tensor_name.to_string()))?;
    let trace = forward(state, config, x)?;
    let plus = output_shift(state, config, &trace, param, index, h)?;
    let minus = output_shift(state, config, &trace, param, index, -h)?;
    Ok(plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * h)).collect())
}

/// `σ(a + d) − σ(a)` without subtracting two nearly equal values.
fn activation_shift(act: Activation, a: f64, d: f64) -> f64 {
    match act {
        Activation::Identity => d,
        Activation::Relu => match (a >= 0.0, a + d >= 0.0) {
            (true, true) => d,
            (false, false) => 0.0,
            (false, true) => a + d,
            (true, false) => -a,
        },
        Activation::Tanh => d.tanh() * (1.0 - a.tanh() * (a + d).tanh()),
        Activation::Sigmoid => sigmoid(a + d) * (1.0 - sigmoid(a)) * -(-d).exp_m1(),
    }
}

/// `f(θ + δ·e_index) − f(θ)` per datapoint, propagated layer by layer.
fn output_shift(state: &MlpState<f64>, config: &NetworkConfig, trace: &ForwardTrace<f64>, param: Param, index: usize, delta: f64) -> Result<Vec<f64>> {
    let n = trace.n();
    let depth = config.depth();
    let top = &trace.acts[depth];
    let (first, mut dz) = match param {
        Param::ReadoutWeight => return Ok((0..n).map(|a| delta * top.get(index, a)).collect()),
        Param::ReadoutBias => return Ok(vec![delta; n]),
        Param::Weight(l) => {
            let rows = state.weights[l - 1].rows();
            let (i, j) = (index % rows, index / rows);
            let prev = &trace.acts[l - 1];
            let mut dz = Mat::zeros(config.widths()[l], n);
            for a in 0..n {
                dz.set(j, a, delta * prev.get(i, a));
            }
            (l, dz)
        }
        Param::Bias(l) => {
            let mut dz = Mat::zeros(config.widths()[l], n);
            for a in 0..n {
                dz.set(index, a, delta);
            }
            (l, dz)
        }
    };
    let act = config.activation();
    let mut dx;
    let mut l = first;
    loop {
        let c: f64 = config.scale(l);
        let z = &trace.preacts[l - 1];
        dx = Mat::from_fn(dz.rows(), n, |k, a| c * activation_shift(act, z.get(k, a), dz.get(k, a)));
        if l == depth {
            break;
        }
        l += 1;
        dz = mul_at_b(&state.weights[l - 1], &dx)?;
    }
    Ok((0..n).map(|a| dot(&state.readout_weight, dx.col(a))).collect())
}

/// Worst disagreement between backprop and central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub entries: usize,
}

/// Relative error with a small absolute floor for near-zero gradients.
pub fn grad_rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares every Jacobian entry against [`finite_diff_gradient`] with
/// the [`fd_step`] step size. Cost grows with the parameter count.
pub fn check_gradients(state: &MlpState<f64>, config: &NetworkConfig, x: &Mat<f64>) -> Result<GradCheck> {
    let g = per_sample_gradients(state, config, x)?;
    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        entries: 0,
    };
    for (name, r) in &g.blocks {
        for index in 0..r.len() {
            let h = fd_step(state.tensor(name)?[index]);
            let fd = finite_diff_gradient(state, config, x, name, index, h)?;
            for (a, &fa) in fd.iter().enumerate() {
                let bp = g.jacobian.get(r.start + index, a);
                let e = grad_rel_err(bp, fa);
                report.entries += 1;
                if e > report.max_rel_err {
                    report.max_rel_err = e;
                    report.worst_tensor = name.clone();
                    report.worst_index = index;
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{init_network, predict, Activation, BiasInit};
    use crate::rng::SeededRng;

    fn random_input(d: usize, n: usize, seed: u64) -> Mat {
        let mut rng = SeededRng::new(seed);
        Mat::from_fn(d, n, |_, _| rng.normal())
    }

    /// The textbook quotient: two full forward passes, then subtract.
    fn naive_central_difference(state: &MlpState, cfg: &NetworkConfig, x: &Mat, name: &str, index: usize, h: f64) -> Vec<f64> {
        let mut probe = state.clone();
        let theta = probe.tensor(name).unwrap()[index];
        probe.tensor_mut(name).unwrap()[index] = theta + h;
        let plus = predict(&probe, cfg, x).unwrap();
        probe.tensor_mut(name).unwrap()[index] = theta - h;
        let minus = predict(&probe, cfg, x).unwrap();
        plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * h)).collect()
    }

    #[test]
    fn shifted_quotient_agrees_with_naive_quotient() {
        for act in [Activation::Tanh, Activation::Sigmoid, Activation::Relu, Activation::Identity] {
            let cfg = NetworkConfig::new(vec![3, 4, 5], act)
                .unwrap()
                .with_bias(true)
                .with_bias_init(BiasInit::StandardNormal);
            let state = init_network(&cfg, 4);
            let x = random_input(3, 5, 6);
            for name in cfg.param_counts().keys() {
                for index in 0..state.tensor(name).unwrap().len() {
                    let h = fd_step(state.tensor(name).unwrap()[index]);
                    let a = finite_diff_gradient(&state, &cfg, &x, name, index, h).unwrap();
                    let b = naive_central_difference(&state, &cfg, &x, name, index, h);
                    for (u, v) in a.iter().zip(&b) {
                        // The naive quotient carries ~1e-10 of rounding noise.
                        assert!((u - v).abs() <= 1e-8, "{act:?} {name}[{index}]: {u} vs {v}");
                    }
                }
            }
        }
    }

    #[test]
    fn tiny_gradients_behind_a_bottleneck() {
        let cfg = NetworkConfig::new(vec![12, 2, 10, 13], Activation::Tanh).unwrap();
        let state = init_network(&cfg, 17);
        let x = random_input(12, 5, 18);
        let report = check_gradients(&state, &cfg, &x).unwrap();
        assert!(report.max_rel_err <= 1e-7, "{report:?}");
    }

    #[test]
    fn linear_model_gradients() {
        let cfg = NetworkConfig::new(vec![3], Activation::Tanh).unwrap().with_bias(true);
        let state = init_network(&cfg, 1);
        let x = random_input(3, 4, 2);
        let g = per_sample_gradients(&state, &cfg, &x).unwrap();
        assert_eq!(g.block("readout.weight").unwrap(), x);
        assert_eq!(g.block("readout.bias").unwrap(), Mat::ones(1, 4));
    }

    #[test]
    fn identity_blocks() {
        let g = PerSampleGradients {
            jacobian: Mat::<f64>::identity(2),
            blocks: [("a".to_string(), 0..2)].into_iter().collect(),
        };
        assert_eq!(oracle_full_ntk(&g), Mat::identity(2));

        let j = Mat::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let g = PerSampleGradients {
            jacobian: j,
            blocks: [("w".to_string(), 0..2), ("b".to_string(), 2..3)].into_iter().collect(),
        };
        let full = oracle_full_ntk(&g);
        assert_eq!(full, Mat::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap());
        assert_eq!(oracle_layerwise_ntk(&g).sum().unwrap(), full);
    }

    #[test]
    fn weight_gradient_is_outer_product() {
        let cfg = NetworkConfig::new(vec![3, 4], Activation::Tanh).unwrap();
        let state = init_network(&cfg, 5);
        let x = random_input(3, 2, 3);
        let g = per_sample_gradients(&state, &cfg, &x).unwrap();
        let c = 0.5; // 1/√4
        for a in 0..2 {
            let z: Vec<f64> = (0..4)
                .map(|j| (0..3).map(|i| state.weights[0].get(i, j) * x.get(i, a)).sum())
                .collect();
            for j in 0..4 {
                let s = c * Activation::Tanh.derivative(z[j]) * state.readout_weight[j];
                for i in 0..3 {
                    let got = g.jacobian.get(i + 3 * j, a);
                    assert!((got - x.get(i, a) * s).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn finite_difference_of_linear_model() {
        let cfg = NetworkConfig::new(vec![3], Activation::Identity).unwrap();
        let state = init_network(&cfg, 1);
        let x = Mat::identity(3);
        let d = finite_diff_gradient(&state, &cfg, &x, "readout.weight", 0, 1e-6).unwrap();
        for (got, want) in d.iter().zip([1.0, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-9);
        }
        assert!(matches!(
            finite_diff_gradient(&state, &cfg, &x, "readout.weight", 3, 1e-6),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(finite_diff_gradient(&state, &cfg, &x, "readout.weight", 0, 0.0).is_err());
    }

    #[test]
    fn finite_difference_exact_for_quadratic_paths() {
        // identity activations make f bilinear in any single parameter
        let cfg = NetworkConfig::new(vec![2, 3, 3], Activation::Identity).unwrap();
        let state = init_network(&cfg, 4);
        let x = random_input(2, 3, 1);
        let g = per_sample_gradients(&state, &cfg, &x).unwrap();
        for (name, r) in &g.blocks {
            for idx in 0..r.len() {
                let fd = finite_diff_gradient(&state, &cfg, &x, name, idx, 1e-6).unwrap();
                for (a, v) in fd.iter().enumerate() {
                    assert!((v - g.jacobian.get(r.start + idx, a)).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn backprop_matches_finite_differences() {
        for act in [Activation::Tanh, Activation::Sigmoid, Activation::Relu] {
            let cfg = NetworkConfig::new(vec![3, 5, 4], act).unwrap().with_bias(true);
            let state = init_network(&cfg, 7);
            let report = check_gradients(&state, &cfg, &random_input(3, 4, 8)).unwrap();
            assert!(report.max_rel_err <= 1e-6, "{act}: {report:?}");
        }
    }

    #[test]
    fn streaming_matches_stacked() {
        let cfg = NetworkConfig::new(vec![3, 6, 5, 4], Activation::Tanh).unwrap().with_bias(true);
        let state = init_network(&cfg, 2);
        let x = random_input(3, 7, 4);
        let stacked = oracle_layerwise_ntk(&per_sample_gradients(&state, &cfg, &x).unwrap());
        let streamed = oracle_layerwise_streaming(&state, &cfg, &x).unwrap();
        assert_eq!(stacked, streamed);
    }

    #[test]
    fn dead_relu_layer_zero_in_oracle() {
        let cfg = NetworkConfig::new(vec![3, 4], Activation::Relu).unwrap();
        let mut state = init_network(&cfg, 1);
        state.weights[0] = Mat::filled(3, 4, -1.0);
        let g = per_sample_gradients(&state, &cfg, &Mat::ones(3, 5)).unwrap();
        let comps = oracle_layerwise_ntk(&g);
        assert!(comps.get("layer1.weight").unwrap().data().iter().all(|&v| v == 0.0));
    }
}
