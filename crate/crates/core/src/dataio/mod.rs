//! Datasets in, matrices and snapshots out.

mod dataset;
pub mod idx;
pub mod matfile;
pub mod snapshot;

pub use dataset::{prepare_mnist2, prepare_mnist2_with, synth_holdout, synth_two_gaussians, Dataset, Normalization};
pub use idx::{parse_idx, read_idx, IdxTensor};
pub use matfile::{read_labels, read_matrix, write_labels, write_matrix, MatFormat};
pub use snapshot::{read_snapshot_series, write_snapshot_series, DiskSnapshotSink, Metadata};

/// Version string of this build (`git describe`, or "unknown").
pub fn build_describe() -> &'static str {
    env!("NTK_GIT_DESCRIBE")
}
