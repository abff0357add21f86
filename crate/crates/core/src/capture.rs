//! Interrupt generation and timer-capture hardware model.
//!
//! Capture latches on the first capture-clock edge at or after the event
//! (next-edge rule), so the quantization error is in `[0, one tick)`. The
//! stateful [`CaptureChannel`] additionally models the relationship between
//! the interrupt-generating clock and the capturing clock: synchronous
//! capture shares the oscillator, the asynchronous modes add relative phase
//! wander and, for an external clock, an independent drift realization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::clock::NoiseStreams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaptureMode {
    /// Timer and interrupt source driven by the same crystal.
    Synchronous,
    /// Different crystal of the same type: relative phase wanders slowly.
    AsynchronousSharedType,
    /// External clock source: phase wander plus its own drift realization.
    AsynchronousExternal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaptureConfig {
    /// Timer clock driving the capture unit, Hz.
    pub capture_freq_hz: f64,
    /// Clock driving interrupt generation, Hz.
    pub gen_freq_hz: f64,
    pub mode: CaptureMode,
    /// Timestamp on both edges of the capture clock (doubles the rate).
    pub double_sampling: bool,
    /// Initial phase of the capture clock, seconds in `[0, 1/capture_freq)`.
    pub phase_offset: f64,
}

impl CaptureConfig {
    pub fn new(capture_freq_hz: f64, gen_freq_hz: f64, mode: CaptureMode) -> Self {
        CaptureConfig { capture_freq_hz, gen_freq_hz, mode, double_sampling: false, phase_offset: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.capture_freq_hz.is_finite() && self.capture_freq_hz > 0.0) {
            return Err(Error::Config(format!(
                "capture_freq_hz must be > 0, got {}",
                self.capture_freq_hz
            )));
        }
        if !(self.gen_freq_hz.is_finite() && self.gen_freq_hz > 0.0) {
            return Err(Error::Config(format!("gen_freq_hz must be > 0, got {}", self.gen_freq_hz)));
        }
        let tick = 1.0 / self.capture_freq_hz;
        if !(0.0..tick).contains(&self.phase_offset) {
            return Err(Error::Config(format!(
                "phase_offset must lie in [0, {tick}), got {}",
                self.phase_offset
            )));
        }
        Ok(())
    }

    pub fn tick(&self) -> f64 {
        1.0 / self.capture_freq_hz
    }
}

/// Events this close to an edge (relative to the tick index magnitude) count
/// as on the edge. Absorbs float rounding in `time * freq` products without
/// distorting interior events: 16 ulps is sub-femtosecond at MHz rates over
/// hour-long runs.
const EDGE_SNAP_ULPS: f64 = 16.0;

fn snap_ceil(x: f64) -> f64 {
    let nearest = x.round();
    let eps = EDGE_SNAP_ULPS * f64::EPSILON * x.abs().max(1.0);
    if (x - nearest).abs() <= eps {
        nearest
    } else {
        x.ceil()
    }
}

fn quantize_at(event_time: f64, freq_hz: f64, phase: f64) -> (u64, f64) {
    let x = (event_time - phase) * freq_hz;
    let tick = snap_ceil(x).max(0.0);
    (tick as u64, phase + tick / freq_hz)
}

/// First capture-clock edge at or after `event_time`.
///
/// Returns `(tick, captured_time)` with `captured_time - event_time` in
/// `[0, 1/capture_freq)`. The counter starts at zero, so an event before
/// the first edge latches tick 0.
pub fn quantize_capture(event_time: f64, config: &CaptureConfig) -> (u64, f64) {
    quantize_at(event_time, config.capture_freq_hz, config.phase_offset)
}

/// Capture on both clock edges: effectively the next-edge rule at twice the
/// capture rate, halving the worst-case quantization error.
pub fn double_sample(event_time: f64, config: &CaptureConfig) -> Result<f64> {
    if !config.double_sampling {
        return Err(Error::Config("double_sample requires double_sampling enabled".into()));
    }
    let (_, captured) = quantize_at(event_time, 2.0 * config.capture_freq_hz, config.phase_offset);
    Ok(captured)
}

/// Default per-event phase random-walk step for `AsynchronousSharedType`,
/// as a fraction of one capture tick.
const SHARED_WANDER_TICKS: f64 = 0.15;
/// External-clock drift magnitude range (dimensionless) for
/// `AsynchronousExternal`: drawn uniformly from ±[min, max].
const EXTERNAL_DRIFT_MIN: f64 = 2e-6;
const EXTERNAL_DRIFT_MAX: f64 = 1e-5;

/// Stateful capture path for one node.
///
/// An incoming event is first aligned to the interrupt-generation clock
/// (interrupts fire on generation-clock edges), then captured by the timer
/// according to the configured mode.
#[derive(Debug, Clone)]
pub struct CaptureChannel {
    config: CaptureConfig,
    rng: ChaCha8Rng,
    /// Wandering phase of the capture grid relative to the generation grid,
    /// seconds (asynchronous modes only).
    rel_phase: f64,
    /// Drift of the external capture clock relative to the generation clock.
    ext_drift: f64,
    /// True time of the previous event, for the external phase slide.
    last_event: f64,
}

impl CaptureChannel {
    pub fn new(config: CaptureConfig, seed: u64, node: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = NoiseStreams::capture_stream(seed, node);
        let ext_drift = match config.mode {
            CaptureMode::AsynchronousExternal => {
                let mag = rng.random_range(EXTERNAL_DRIFT_MIN..EXTERNAL_DRIFT_MAX);
                if rng.random_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            }
            _ => 0.0,
        };
        Ok(CaptureChannel { config, rng, rel_phase: 0.0, ext_drift, last_event: 0.0 })
    }

    pub fn config(&self) -> &CaptureConfig {
        &self.config
    }

    fn effective_capture_freq(&self) -> f64 {
        if self.config.double_sampling {
            2.0 * self.config.capture_freq_hz
        } else {
            self.config.capture_freq_hz
        }
    }

    /// Timestamps one event through generation alignment and timer capture.
    pub fn capture(&mut self, event_time: f64) -> f64 {
        let gen_cfg =
            CaptureConfig::new(self.config.gen_freq_hz, self.config.gen_freq_hz, CaptureMode::Synchronous);
        let (gen_tick, gen_time) = quantize_capture(event_time, &gen_cfg);
        let f_cap = self.effective_capture_freq();

        match self.config.mode {
            CaptureMode::Synchronous => {
                // Same oscillator: the capture grid is a prescale of the
                // generation grid, so the edge index follows from integer
                // arithmetic when the ratio is integral.
                let ratio = self.config.gen_freq_hz / f_cap;
                if ratio.fract() == 0.0 && ratio >= 1.0 {
                    let m = ratio as u64;
                    let cap_tick = gen_tick.div_ceil(m);
                    cap_tick as f64 / f_cap
                } else {
                    let (_, captured) = quantize_at(gen_time, f_cap, self.config.phase_offset);
                    captured
                }
            }
            CaptureMode::AsynchronousSharedType => {
                let tick = 1.0 / f_cap;
                let step = SHARED_WANDER_TICKS * tick;
                self.rel_phase = wrap_phase(self.rel_phase + gauss_step(&mut self.rng, step), tick);
                let (_, captured) = quantize_at(gen_time, f_cap, self.rel_phase);
                captured
            }
            CaptureMode::AsynchronousExternal => {
                let tick = 1.0 / f_cap;
                let step = SHARED_WANDER_TICKS * tick;
                let slide = self.ext_drift * (event_time - self.last_event);
                self.last_event = event_time;
                self.rel_phase = wrap_phase(self.rel_phase + gauss_step(&mut self.rng, step) + slide, tick);
                // The external clock also mis-scales the captured value by
                // its own drift: counts convert to time at the nominal rate.
                let (_, captured) = quantize_at(gen_time * (1.0 + self.ext_drift), f_cap, self.rel_phase);
                captured
            }
        }
    }
}

fn gauss_step(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    let z: f64 = StandardNormal.sample(rng);
    z * sigma
}

fn wrap_phase(phase: f64, tick: f64) -> f64 {
    let w = phase.rem_euclid(tick);
    if w.is_finite() {
        w
    } else {
        0.0
    }
}

/// 16-bit hardware counter extended by a 16-bit software overflow count.
///
/// The hardware counter wraps every 2^16 ticks and raises an overflow flag;
/// software services the flag (possibly late) by incrementing the overflow
/// count. A capture that lands just after the wrap but before the service
/// races the software count; `read_extended` corrects that case.
#[derive(Debug, Clone)]
pub struct ExtendedCounter {
    hw: u16,
    sw_overflows: u16,
    overflow_pending: bool,
    last_read: u32,
}

impl Default for ExtendedCounter {
    fn default() -> Self {
        Self::new()
    }
}

impl ExtendedCounter {
    pub fn new() -> Self {
        ExtendedCounter { hw: 0, sw_overflows: 0, overflow_pending: false, last_read: 0 }
    }

    /// Advances the hardware counter one tick, flagging a wrap.
    pub fn tick(&mut self) {
        self.hw = self.hw.wrapping_add(1);
        if self.hw == 0 {
            // The model requires the overflow interrupt to be serviced
            // within one wrap period; a second wrap would lose a count,
            // exactly the hazard the service deadline exists to avoid.
            debug_assert!(!self.overflow_pending, "unserviced overflow lost");
            self.overflow_pending = true;
        }
    }

    /// Software overflow interrupt handler.
    pub fn service_overflow(&mut self) {
        if self.overflow_pending {
            self.sw_overflows = self.sw_overflows.wrapping_add(1);
            self.overflow_pending = false;
        }
    }

    /// Hardware latch at a capture instant: raw counter plus pending flag.
    pub fn latch(&self) -> (u16, bool) {
        (self.hw, self.overflow_pending)
    }

    pub fn sw_overflows(&self) -> u16 {
        self.sw_overflows
    }

    /// Composes the 32-bit timestamp from a latched raw value.
    ///
    /// When an overflow is pending and the raw value is below half range the
    /// capture raced past the wrap, so one extra 2^16 is added. The result
    /// never moves backwards.
    pub fn read_extended(&mut self, raw_hw: u16, overflow_flag: bool) -> u32 {
        let mut value = ((self.sw_overflows as u32) << 16) | raw_hw as u32;
        if overflow_flag && raw_hw < 0x8000 {
            value = value.wrapping_add(1 << 16);
        }
        if value < self.last_read {
            value = self.last_read;
        }
        self.last_read = value;
        value
    }
}
