//! Fisher information spectra from kernel spectra.
//!
//! For a gradient block `J_t` (`p_t × n`) the kernel component `J_tᵀJ_t`
//! and the Fisher matrix `F_t = J_t J_tᵀ` share their nonzero eigenvalues,
//! so the `n × n` kernel gives the whole `p_t × p_t` Fisher spectrum: the
//! same nonzero values padded with `p_t − rank` zeros.
//!
//! The MSE Hessian relates to `F` through a second-derivative correction
//! that vanishes at zero training loss; that term is not computed here.

use indexmap::IndexMap;
use serde::Serialize;

use crate::linalg::{sym_eigvals, Mat};
use crate::ntk::NtkComponents;
use crate::{Error, Result};

/// Relative zero threshold used when none is given.
pub const DEFAULT_RELATIVE_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    /// Eigenvalues above `threshold`, descending.
    pub nonzero_eigs: Vec<f64>,
    /// `n − |nonzero_eigs|`: zero eigenvalues of the kernel.
    pub zero_count: usize,
    /// `p − |nonzero_eigs|` when the parameter count is known.
    pub fim_zero_count: Option<usize>,
    pub param_count: Option<usize>,
    pub datapoint_count: usize,
    pub threshold: f64,
}

impl SpectrumReport {
    pub fn rank(&self) -> usize {
        self.nonzero_eigs.len()
    }

    /// `λ_max − mean(λ)` over the full Fisher spectrum including zeros.
    pub fn fim_sharpness_gap(&self) -> Option<f64> {
        let p = self.param_count?;
        let max = self.nonzero_eigs.first().copied().unwrap_or(0.0);
        let mean = self.nonzero_eigs.iter().sum::<f64>() / p as f64;
        Some(max - mean)
    }
}

/// Symmetry tolerance for kernel inputs, relative to the largest entry.
fn symmetry_tol(k: &Mat) -> f64 {
    1e-12 * k.max_abs().max(f64::MIN_POSITIVE)
}

/// Spectrum of a kernel matrix.
///
/// `threshold` is absolute; `None` uses `1e-10 × λ_max`. With `param_count`
/// the report also counts the Fisher matrix's zero eigenvalues.
pub fn ntk_spectrum(k: &Mat, threshold: Option<f64>, param_count: Option<usize>) -> Result<SpectrumReport> {
    let eigs = sym_eigvals(k, symmetry_tol(k))?;
    let threshold = threshold.unwrap_or_else(|| DEFAULT_RELATIVE_THRESHOLD * eigs[0].max(0.0));
    let nonzero_eigs: Vec<f64> = eigs.into_iter().filter(|&v| v > threshold).collect();
    let rank = nonzero_eigs.len();
    Ok(SpectrumReport {
        zero_count: k.rows() - rank,
        fim_zero_count: param_count.map(|p| p.saturating_sub(rank)),
        param_count,
        datapoint_count: k.rows(),
        threshold,
        nonzero_eigs,
    })
}

/// [`ntk_spectrum`] of every component with its tensor's parameter count.
pub fn layerwise_fim_spectra(
    components: &NtkComponents,
    param_counts: &IndexMap<String, usize>,
    threshold: Option<f64>,
) -> Result<IndexMap<String, SpectrumReport>> {
    components
        .iter()
        .map(|(name, k)| {
            let p = *param_counts
                .get(name)
                .ok_or_else(|| Error::MissingParamCount(name.to_string()))?;
            Ok((name.to_string(), ntk_spectrum(k, threshold, Some(p))?))
        })
        .collect()
}

/// Spectrum of the summed kernel against the network's total parameter count.
pub fn total_fim_spectrum(components: &NtkComponents, param_counts: &IndexMap<String, usize>, threshold: Option<f64>) -> Result<SpectrumReport> {
    let p = components
        .names()
        .map(|name| param_counts.get(name).copied().ok_or_else(|| Error::MissingParamCount(name.to_string())))
        .sum::<Result<usize>>()?;
    ntk_spectrum(&components.sum()?, threshold, Some(p))
}
