//! Full-batch gradient descent on a sigmoid readout, with kernel snapshots.
//!
//! The network output `f` is a logit; predictions are `sigmoid(f)` and the
//! kernel is always taken on `f` itself. Snapshots record the state after
//! `step` updates: step 0, every `snapshot_every` steps, and the final step.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::linalg::{mul_a_bt, Mat};
use crate::mlp::{forward, sigmoid, ForwardTrace, MlpState, NetworkConfig};
use crate::ntk::{compute_s, explicit_ntk_with, NtkComponents};
use crate::{Error, Result};

const BCE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    /// Binary cross-entropy of `sigmoid(f)`.
    #[default]
    Bce,
    /// Mean squared error of `sigmoid(f)`.
    Mse,
}

impl Loss {
    pub fn name(self) -> &'static str {
        match self {
            Loss::Bce => "bce",
            Loss::Mse => "mse",
        }
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bce" => Ok(Loss::Bce),
            "mse" => Ok(Loss::Mse),
            other => Err(Error::InvalidConfig(format!("unknown loss `{other}`"))),
        }
    }
}

/// What each snapshot keeps besides the step and loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnapshotContent {
    /// Every named kernel component.
    #[default]
    Components,
    /// Only the summed kernel.
    Full,
    /// No kernel at all.
    LossOnly,
}

impl FromStr for SnapshotContent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "components" => Ok(SnapshotContent::Components),
            "full" => Ok(SnapshotContent::Full),
            "loss" | "loss-only" | "lossonly" => Ok(SnapshotContent::LossOnly),
            other => Err(Error::InvalidConfig(format!("unknown snapshot content `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub loss: Loss,
    /// Keep biases fixed and leave them out of the recorded kernels.
    pub freeze_biases: bool,
    /// Snapshot cadence in steps; 0 records nothing.
    pub snapshot_every: usize,
    pub snapshot_content: SnapshotContent,
}

impl TrainConfig {
    /// BCE loss, frozen biases, and a snapshot every `steps / 100` steps.
    pub fn new(learning_rate: f64, steps: usize) -> Result<Self> {
        let tc = Self {
            learning_rate,
            steps,
            loss: Loss::Bce,
            freeze_biases: true,
            snapshot_every: (steps / 100).max(1),
            snapshot_content: SnapshotContent::Components,
        };
        tc.validate()?;
        Ok(tc)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SnapshotKernel {
    Components(NtkComponents),
    Full(Mat),
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRecord {
    pub step: usize,
    pub loss: f64,
    pub kernel: SnapshotKernel,
}

impl SnapshotRecord {
    /// The summed kernel, if one was recorded.
    pub fn full_kernel(&self) -> Option<Mat> {
        match &self.kernel {
            SnapshotKernel::Components(c) => c.sum().ok(),
            SnapshotKernel::Full(k) => Some(k.clone()),
            SnapshotKernel::None => None,
        }
    }
}

/// Receives snapshots as training produces them.
pub trait SnapshotSink {
    fn record(&mut self, rec: SnapshotRecord) -> Result<()>;
}

/// In-memory snapshot series with strictly increasing steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SnapshotSeries {
    records: Vec<SnapshotRecord>,
}

impl SnapshotSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, rec: SnapshotRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if rec.step <= last.step {
                return Err(Error::InvalidConfig(format!(
                    "snapshot step {} does not follow step {}",
                    rec.step, last.step
                )));
            }
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn records(&self) -> &[SnapshotRecord] {
        &self.records
    }

    pub fn first(&self) -> Option<&SnapshotRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&SnapshotRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl SnapshotSink for SnapshotSeries {
    fn record(&mut self, rec: SnapshotRecord) -> Result<()> {
        self.push(rec)
    }
}

/// Mean loss and its gradient with respect to each logit.
pub fn loss_and_grad(logits: &[f64], labels: &[f64], loss: Loss) -> (f64, Vec<f64>) {
    assert_eq!(logits.len(), labels.len(), "logits and labels differ in length");
    let n = logits.len() as f64;
    let mut total = 0.0;
    let grad = logits
        .iter()
        .zip(labels)
        .map(|(&f, &y)| {
            let s = sigmoid(f);
            match loss {
                Loss::Bce => {
                    let p = s.clamp(BCE_EPS, 1.0 - BCE_EPS);
                    total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
                    (s - y) / n
                }
                Loss::Mse => {
                    total += (s - y) * (s - y);
                    2.0 * (s - y) * s * (1.0 - s) / n
                }
            }
        })
        .collect();
    (total / n, grad)
}

/// Fraction of points where `f > 0` agrees with a `{0, 1}` label.
pub fn accuracy_from_logits(logits: &[f64], labels: &[u8]) -> f64 {
    let hits = logits
        .iter()
        .zip(labels)
        .filter(|(&f, &y)| (f > 0.0) == (y == 1))
        .count();
    hits as f64 / labels.len() as f64
}

pub fn network_accuracy(state: &MlpState, config: &NetworkConfig, x: &Mat, labels: &[u8]) -> Result<f64> {
    let out = forward(state, config, x)?.output;
    if out.len() != labels.len() {
        return Err(Error::shape("labels and datapoints differ in count"));
    }
    Ok(accuracy_from_logits(&out, labels))
}

fn snapshot_kernel(trace: &ForwardTrace, state: &MlpState, config: &NetworkConfig, tc: &TrainConfig) -> Result<SnapshotKernel> {
    Ok(match tc.snapshot_content {
        SnapshotContent::LossOnly => SnapshotKernel::None,
        content => {
            let comps = explicit_ntk_with(trace, state, config, !tc.freeze_biases)?;
            if content == SnapshotContent::Full {
                SnapshotKernel::Full(comps.sum()?)
            } else {
                SnapshotKernel::Components(comps)
            }
        }
    })
}

/// One gradient step: `θ ← θ − lr · ∇θ loss`, using `∂loss/∂Z_l = S_l · diag(g)`.
fn descend(state: &mut MlpState, config: &NetworkConfig, trace: &ForwardTrace, g: &[f64], lr: f64, freeze_biases: bool) -> Result<()> {
    let depth = config.depth();
    let top = &trace.acts[depth];
    let mut dw = vec![0.0; top.rows()];
    for (a, &ga) in g.iter().enumerate() {
        for (d, &x) in dw.iter_mut().zip(top.col(a)) {
            *d += ga * x;
        }
    }
    let db: f64 = g.iter().sum();

    let mut layer_grads = Vec::with_capacity(depth);
    if depth > 0 {
        let sm = compute_s(trace, state, config)?;
        for (l, s) in sm.s.into_iter().enumerate() {
            let mut delta = s;
            for (a, &ga) in g.iter().enumerate() {
                delta.col_mut(a).iter_mut().for_each(|v| *v *= ga);
            }
            let grad_w = mul_a_bt(&trace.acts[l], &delta)?;
            let grad_b: Vec<f64> = (0..delta.rows())
                .map(|i| (0..delta.cols()).map(|a| delta.get(i, a)).sum())
                .collect();
            layer_grads.push((grad_w, grad_b));
        }
    }

    for (l, (grad_w, grad_b)) in layer_grads.into_iter().enumerate() {
        for (w, &d) in state.weights[l].data_mut().iter_mut().zip(grad_w.data()) {
            *w -= lr * d;
        }
        if !freeze_biases {
            if let Some(bs) = state.biases.as_mut() {
                for (b, d) in bs[l].iter_mut().zip(grad_b) {
                    *b -= lr * d;
                }
            }
        }
    }
    for (w, d) in state.readout_weight.iter_mut().zip(dw) {
        *w -= lr * d;
    }
    if !freeze_biases {
        if let Some(b) = state.readout_bias.as_mut() {
            *b -= lr * db;
        }
    }
    Ok(())
}

/// Trains and streams snapshots into `sink`; returns the final state.
pub fn train_with_sink(
    state: &MlpState,
    config: &NetworkConfig,
    tc: &TrainConfig,
    x: &Mat,
    labels: &[u8],
    sink: &mut dyn SnapshotSink,
) -> Result<MlpState> {
    tc.validate()?;
    if labels.len() != x.cols() {
        return Err(Error::shape(format!(
            "{} labels for {} datapoints",
            labels.len(),
            x.cols()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::InvalidLabel(bad as f64));
    }
    let targets: Vec<f64> = labels.iter().map(|&y| y as f64).collect();
    let mut state = state.clone();
    let every = tc.snapshot_every;

    for step in 0..=tc.steps {
        let trace = forward(&state, config, x)?;
        let (loss, grad) = loss_and_grad(&trace.output, &targets, tc.loss);
        if !loss.is_finite() {
            return Err(Error::NonfiniteLoss { step, loss });
        }
        if every > 0 && (step % every == 0 || step == tc.steps) {
            let kernel = snapshot_kernel(&trace, &state, config, tc)?;
            sink.record(SnapshotRecord { step, loss, kernel })?;
        }
        if step == tc.steps {
            break;
        }
        descend(&mut state, config, &trace, &grad, tc.learning_rate, tc.freeze_biases)?;
    }
    Ok(state)
}

pub fn train(state: &MlpState, config: &NetworkConfig, tc: &TrainConfig, x: &Mat, labels: &[u8]) -> Result<(MlpState, SnapshotSeries)> {
    let mut series = SnapshotSeries::new();
    let out = train_with_sink(state, config, tc, x, labels, &mut series)?;
    Ok((out, series))
}

/// Mean within-class kernel value minus mean cross-class value.
pub fn class_block_gap(k: &Mat, labels: &[u8]) -> f64 {
    let (mut within, mut nw, mut cross, mut nc) = (0.0, 0usize, 0.0, 0usize);
    for j in 0..k.cols() {
        for i in 0..k.rows() {
            if labels[i] == labels[j] {
                within += k.get(i, j);
                nw += 1;
            } else {
                cross += k.get(i, j);
                nc += 1;
            }
        }
    }
    within / nw.max(1) as f64 - cross / nc.max(1) as f64
}
