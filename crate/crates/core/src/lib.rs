//! Empirical neural tangent kernels for multilayer perceptrons.
//!
//! The kernel of a network `f` over a dataset is `K = JᵀJ`, where `J` holds
//! the gradient of the scalar output with respect to every parameter, one
//! column per datapoint. `K` splits additively into one component per
//! parameter tensor, and this crate keeps those components separate:
//!
//! - [`ntk`] builds the components from a single backward sweep over the
//!   whole dataset (the fast path).
//! - [`oracle`] builds them from ordinary per-sample backprop and checks the
//!   gradients against finite differences (the ground truth).
//! - [`fim`] reads Fisher information spectra off the kernel spectra.
//! - [`kernel_machine`] scores kernels as unit-weight sign classifiers.
//! - [`training`] runs full-batch gradient descent and records kernels.
//! - [`dataio`] parses MNIST IDX files and persists matrices and snapshots.
//! - [`bench`] times the fast path against the oracle and tracks allocation.
//!
//! Matrices are column-major with one column per datapoint; see [`Mat`].

pub mod bench;
pub mod dataio;
pub mod error;
pub mod fim;
pub mod kernel_machine;
pub mod linalg;
pub mod mlp;
pub mod ntk;
pub mod oracle;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
pub use linalg::{Mat, Real};
pub use mlp::{Activation, BiasInit, ForwardTrace, MlpState, NetworkConfig};
pub use ntk::NtkComponents;
