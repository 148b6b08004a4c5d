//! Three-level evaluation: open-loop dynamics accuracy against held-out
//! logs, closed-loop tracking in the distilled environment, and zero-shot
//! transfer back into the reference simulator, plus wall-clock benchmarks.
//!
//! Every aggregate here is a plain mean (scenarios and runs weighted
//! equally), every error metric is non-negative by construction, and each
//! metric implementation is covered by an independent brute-force oracle in
//! its module's tests.

#[cfg(feature = "std")]
pub mod bench;
pub mod closed_loop;
pub mod open_loop;
pub mod transfer;

#[cfg(feature = "std")]
pub use bench::{
    latency_benchmark, refsim_control_rate, throughput_benchmark, LatencyStats, ThroughputPoint,
    ThroughputReport,
};
pub use closed_loop::{
    closed_loop_eval, trace_metrics, ClosedLoopReport, EpisodeTrace, ScenarioResult,
};
pub use open_loop::{open_loop_eval, OpenLoopReport, ROLLOUT_STEPS};
pub use transfer::{
    distance_fraction, loss_of_control, reference_lap, steer_d1, transfer_eval, transfer_track,
    LapConfig, LocConfig, MeanStd, ReferenceLap, TransferConfig, TransferReport, TransferRun,
    TRANSFER_CORNERS, TRANSFER_ICE_PATCHES, TRANSFER_TRACK_LEN,
};

/// Monotonic time source for latency accounting inside otherwise pure
/// evaluation loops. The core crate stays `no_std`-clean by injecting this;
/// use [`WallClock`] where `std` is available and [`NullClock`] to disable
/// timing (latencies report as zero).
pub trait Clock {
    /// Seconds since an arbitrary fixed origin; must be monotone.
    fn now(&self) -> f64;
}

/// Reports a frozen time; latency fields computed against it are zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullClock;

impl Clock for NullClock {
    fn now(&self) -> f64 {
        0.0
    }
}

/// Wall clock backed by [`std::time::Instant`].
#[cfg(feature = "std")]
#[derive(Debug, Clone, Copy)]
pub struct WallClock {
    origin: std::time::Instant,
}

#[cfg(feature = "std")]
impl WallClock {
    pub fn new() -> Self {
        Self { origin: std::time::Instant::now() }
    }
}

#[cfg(feature = "std")]
impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(feature = "std")]
impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }
}
