//! Clock-drift and timestamping-uncertainty simulation with two
//! synchronization engines: a lightweight scalar Kalman filter on the
//! frequency offset and a sliding-window regression baseline.
//!
//! The crate models a perfect root clock against a noisy node clock whose
//! uncertainty decomposes into drift wander, interrupt-generation jitter,
//! timer-capture quantization, propagation-delay jitter, and OS read
//! jitter, each independently configurable and independently seeded.

pub mod capture;
pub mod clock;
pub mod error;
pub mod estimation;
pub mod sim;
pub mod sync;

pub use capture::{CaptureChannel, CaptureConfig, CaptureMode, ExtendedCounter};
pub use clock::{ClockParams, NodeClock, NoiseKind, NoiseSpec, NoiseStreams, TimestampPair};
pub use error::{Error, Result};
pub use estimation::SlopeStats;
pub use sim::{
    Engine, EngineSelect, ExperimentConfig, HistogramSummary, SyncErrorRecord, Topology,
};
pub use sync::{KalmanState, LwKalman, MeasurementModel, RegressionTable};
