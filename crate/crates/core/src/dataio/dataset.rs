use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::idx::IdxTensor;
use crate::linalg::Mat;
use crate::rng::{stream, SeededRng};
use crate::{Error, Result};

/// Binary-labelled dataset with one datapoint per column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Mat,
    /// `0` or `1` per column.
    pub labels: Vec<u8>,
    /// All class-0 columns precede the class-1 columns.
    pub sorted_by_class: bool,
    pub normalization: Option<Normalization>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.features.cols()
    }

    pub fn dim(&self) -> usize {
        self.features.rows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.n() {
            return Err(Error::shape(format!("{} labels for {} datapoints", self.labels.len(), self.n())));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y > 1) {
            return Err(Error::InvalidLabel(bad as f64));
        }
        if self.features.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite feature value".into()));
        }
        if self.sorted_by_class && self.labels.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidConfig("dataset marked sorted but classes interleave".into()));
        }
        Ok(())
    }

    /// SHA-256 over the little-endian feature bytes, shape, and labels.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim() as u64).to_le_bytes());
        h.update((self.n() as u64).to_le_bytes());
        for v in self.features.data() {
            h.update(v.to_le_bytes());
        }
        h.update(&self.labels);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Per-feature mean subtraction followed by division by one global std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: f64,
}

impl Normalization {
    pub const SCHEME: &'static str = "scale-1/255,per-feature-mean,global-std";

    /// Fits on `x`: `std` is the RMS of the mean-centred values.
    pub fn fit(x: &Mat) -> Self {
        let (d, n) = x.shape();
        let mut mean = vec![0.0; d];
        for a in 0..n {
            for (m, &v) in mean.iter_mut().zip(x.col(a)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut ss = 0.0;
        for a in 0..n {
            for (m, &v) in mean.iter().zip(x.col(a)) {
                ss += (v - m) * (v - m);
            }
        }
        let std = (ss / (d * n) as f64).sqrt();
        Self {
            mean,
            std: if std > 0.0 { std } else { 1.0 },
        }
    }

    pub fn apply(&self, x: &mut Mat) -> Result<()> {
        if x.rows() != self.mean.len() {
            return Err(Error::shape(format!(
                "normalization fitted on {} features, data has {}",
                self.mean.len(),
                x.rows()
            )));
        }
        for a in 0..x.cols() {
            for (v, m) in x.col_mut(a).iter_mut().zip(&self.mean) {
                *v = (*v - m) / self.std;
            }
        }
        Ok(())
    }
}

/// Picks `per_class` items of `class` from a content-sorted pool.
///
/// Sorting the pool by pixel bytes makes the selection independent of the
/// order of the source file.
fn sample_class(images: &IdxTensor, labels: &IdxTensor, class: u8, per_class: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
    let mut pool: Vec<usize> = (0..labels.len()).filter(|&i| labels.data[i] == class).collect();
    if pool.len() < per_class {
        return Err(Error::InsufficientSamples {
            class,
            needed: per_class,
            found: pool.len(),
        });
    }
    pool.sort_by(|&a, &b| images.item(a).cmp(images.item(b)));
    let mut positions: Vec<usize> = (0..pool.len()).collect();
    for k in 0..per_class {
        let j = k + rng.below(positions.len() - k);
        positions.swap(k, j);
    }
    let mut chosen = positions[..per_class].to_vec();
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|p| pool[p]).collect())
}

fn select_mnist2(images: &IdxTensor, labels: &IdxTensor, class_a: u8, class_b: u8, per_class: usize, seed: u64) -> Result<Dataset> {
    if images.dims.len() != 3 || labels.dims.len() != 1 {
        return Err(Error::shape("expected 3-D images and 1-D labels"));
    }
    if images.len() != labels.len() {
        return Err(Error::shape(format!("{} images but {} labels", images.len(), labels.len())));
    }
    if class_a == class_b {
        return Err(Error::InvalidConfig("the two classes must differ".into()));
    }
    if per_class == 0 {
        return Err(Error::InvalidConfig("per_class must be at least 1".into()));
    }
    let mut rng = SeededRng::stream(seed, stream::SUBSAMPLE);
    let a = sample_class(images, labels, class_a, per_class, &mut rng)?;
    let b = sample_class(images, labels, class_b, per_class, &mut rng)?;
    let d = images.dims[1] * images.dims[2];
    let order: Vec<usize> = a.into_iter().chain(b).collect();
    let features = Mat::from_fn(d, order.len(), |i, j| images.item(order[j])[i] as f64 / 255.0);
    let labels = (0..order.len()).map(|j| u8::from(j >= per_class)).collect();
    Ok(Dataset {
        features,
        labels,
        sorted_by_class: true,
        normalization: None,
    })
}

/// Two-digit subset: flattened, scaled to `[0, 1]`, normalized with
/// statistics fitted on the subset itself, `class_a` first (label 0).
pub fn prepare_mnist2(images: &IdxTensor, labels: &IdxTensor, class_a: u8, class_b: u8, per_class: usize, seed: u64) -> Result<Dataset> {
    let mut ds = select_mnist2(images, labels, class_a, class_b, per_class, seed)?;
    let norm = Normalization::fit(&ds.features);
    norm.apply(&mut ds.features)?;
    ds.normalization = Some(norm);
    Ok(ds)
}

/// Like [`prepare_mnist2`] but normalized with given (training) statistics.
pub fn prepare_mnist2_with(
    images: &IdxTensor,
    labels: &IdxTensor,
    class_a: u8,
    class_b: u8,
    per_class: usize,
    seed: u64,
    norm: &Normalization,
) -> Result<Dataset> {
    let mut ds = select_mnist2(images, labels, class_a, class_b, per_class, seed)?;
    norm.apply(&mut ds.features)?;
    ds.normalization = Some(norm.clone());
    Ok(ds)
}

fn two_gaussians(d: usize, n_per_class: usize, separation: f64, rng: &mut SeededRng) -> Result<Dataset> {
    if d == 0 || n_per_class == 0 {
        return Err(Error::InvalidConfig("two-Gaussian data needs d >= 1 and n >= 1".into()));
    }
    let half = separation / 2.0;
    let n = 2 * n_per_class;
    let mut features = Mat::zeros(d, n);
    for j in 0..n {
        let shift = if j < n_per_class { -half } else { half };
        for (i, v) in features.col_mut(j).iter_mut().enumerate() {
            *v = rng.normal() + if i == 0 { shift } else { 0.0 };
        }
    }
    let labels = (0..n).map(|j| u8::from(j >= n_per_class)).collect();
    Ok(Dataset {
        features,
        labels,
        sorted_by_class: true,
        normalization: None,
    })
}

/// Class 0 ~ N(−μ, I), class 1 ~ N(+μ, I) with `μ = separation/2 · e_1`.
pub fn synth_two_gaussians(d: usize, n_per_class: usize, separation: f64, seed: u64) -> Result<Dataset> {
    two_gaussians(d, n_per_class, separation, &mut SeededRng::stream(seed, stream::DATA))
}

/// Held-out draw from the same distribution as [`synth_two_gaussians`].
pub fn synth_holdout(d: usize, n_per_class: usize, separation: f64, seed: u64) -> Result<Dataset> {
    two_gaussians(d, n_per_class, separation, &mut SeededRng::stream(seed, stream::HOLDOUT))
}
