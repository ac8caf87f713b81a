//! Process-wide byte counter for [`Mat`](super::Mat) storage.
//!
//! Every matrix adds its buffer size on construction and subtracts it on
//! drop, so the high-water mark measures the peak matrix footprint of a
//! computation independently of the system allocator. The counters are
//! global: measurements are only meaningful while no other thread is
//! creating matrices.

use std::sync::atomic::{AtomicU64, Ordering};

static CURRENT: AtomicU64 = AtomicU64::new(0);
static PEAK: AtomicU64 = AtomicU64::new(0);

pub(crate) fn track_alloc(bytes: u64) {
    let now = CURRENT.fetch_add(bytes, Ordering::Relaxed) + bytes;
    PEAK.fetch_max(now, Ordering::Relaxed);
}

pub(crate) fn track_free(bytes: u64) {
    CURRENT.fetch_sub(bytes, Ordering::Relaxed);
}

/// Bytes currently held by live matrices.
pub fn current_bytes() -> u64 {
    CURRENT.load(Ordering::Relaxed)
}

/// High-water mark since the last [`reset_peak`].
pub fn peak_bytes() -> u64 {
    PEAK.load(Ordering::Relaxed)
}

/// Lower the high-water mark to the current footprint.
pub fn reset_peak() {
    PEAK.store(CURRENT.load(Ordering::Relaxed), Ordering::Relaxed);
}

/// Measures the peak footprint added on top of what was live at `start`.
#[derive(Debug)]
pub struct PeakScope {
    baseline: u64,
}

impl PeakScope {
    pub fn start() -> Self {
        reset_peak();
        Self {
            baseline: current_bytes(),
        }
    }

    pub fn peak_delta(&self) -> u64 {
        peak_bytes().saturating_sub(self.baseline)
    }
}
