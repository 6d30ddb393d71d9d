//! Resource telemetry around fit and scoring runs.

use std::time::Instant;

use serde::{Deserialize, Serialize};

/// One run's resource record. Optional fields stay absent when a phase
/// was not measured or the platform readout is unavailable.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Telemetry {
    /// Peak resident set size in bytes, process-wide and monotone.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ram_max_bytes: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_fit_s: Option<f64>,
    /// Milliseconds per image, `1000 * t_infer / n_test`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_infer_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_test: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub traversals: Option<u32>,
    /// Logical peak retained-row counter exposed by fit.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak_rows: Option<usize>,
}

/// Wall clock and peak-RSS wrapper for a measured closure.
#[derive(Debug)]
pub struct Measured<T> {
    pub value: T,
    pub seconds: f64,
    pub ram_max_bytes: Option<u64>,
}

pub fn measure<T>(run: impl FnOnce() -> T) -> Measured<T> {
    let start = Instant::now();
    let value = run();
    let seconds = start.elapsed().as_secs_f64();
    Measured {
        value,
        seconds,
        ram_max_bytes: peak_rss_bytes(),
    }
}

/// Per-image latency from a scoring wall clock.
pub fn infer_latency_ms(t_infer_s: f64, n_test: usize) -> Option<f64> {
    if n_test == 0 {
        return None;
    }
    Some(1000.0 * t_infer_s / n_test as f64)
}

/// Platform peak resident set size, when the OS exposes one.
#[cfg(unix)]
pub fn peak_rss_bytes() -> Option<u64> {
    let mut usage = std::mem::MaybeUninit::<libc::rusage>::uninit();
    let rc = unsafe { libc::getrusage(libc::RUSAGE_SELF, usage.as_mut_ptr()) };
    if rc != 0 {
        return None;
    }
    let usage = unsafe { usage.assume_init() };
    // ru_maxrss is kilobytes on Linux
    u64::try_from(usage.ru_maxrss).ok().map(|kb| kb * 1024)
}

#[cfg(not(unix))]
pub fn peak_rss_bytes() -> Option<u64> {
    None
}
