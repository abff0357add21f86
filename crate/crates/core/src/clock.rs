//! Virtual root and node clocks.
//!
//! The root timestamps events perfectly; every uncertainty source lives on
//! the node side as a configurable noise term. A node timestamp is the sum
//! of the true event time, a constant relative drift, a constant offset, the
//! mean propagation delay, and one fresh draw per stochastic source.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Triangular};

use crate::error::{Error, Result};

/// Distribution family of one uncertainty source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    None,
    Constant,
    Uniform,
    Triangular,
    Gaussian,
}

/// One uncertainty source: a distribution plus its known mean.
///
/// `mean_shift` records the analytic mean of the source so that
/// `sample - mean_shift` is zero-mean. The constructors keep it consistent;
/// only a gaussian source accepts an explicit bias.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Uniform/triangular: lower support bound. Gaussian: standard deviation.
    /// Constant: the value itself.
    pub param_a: f64,
    /// Uniform/triangular: upper support bound. Unused otherwise.
    pub param_b: f64,
    /// Known mean of the source, in seconds.
    pub mean_shift: f64,
}

impl NoiseSpec {
    /// The degenerate source: always 0.
    pub fn none() -> Self {
        NoiseSpec { kind: NoiseKind::None, param_a: 0.0, param_b: 0.0, mean_shift: 0.0 }
    }

    /// A source that always returns `value` (a pure known bias).
    pub fn constant(value: f64) -> Self {
        NoiseSpec { kind: NoiseKind::Constant, param_a: value, param_b: 0.0, mean_shift: value }
    }

    /// Uniform over `[a, b)`.
    pub fn uniform(a: f64, b: f64) -> Self {
        NoiseSpec { kind: NoiseKind::Uniform, param_a: a, param_b: b, mean_shift: 0.5 * (a + b) }
    }

    /// Symmetric triangular over `[a, b]`, mode at the midpoint.
    pub fn triangular(a: f64, b: f64) -> Self {
        NoiseSpec { kind: NoiseKind::Triangular, param_a: a, param_b: b, mean_shift: 0.5 * (a + b) }
    }

    /// Zero-mean gaussian with standard deviation `sigma`.
    pub fn gaussian(sigma: f64) -> Self {
        NoiseSpec { kind: NoiseKind::Gaussian, param_a: sigma, param_b: 0.0, mean_shift: 0.0 }
    }

    /// Gaussian with standard deviation `sigma` around a known bias `mean`.
    pub fn gaussian_biased(mean: f64, sigma: f64) -> Self {
        NoiseSpec { kind: NoiseKind::Gaussian, param_a: sigma, param_b: 0.0, mean_shift: mean }
    }

    pub fn is_none(&self) -> bool {
        self.kind == NoiseKind::None
    }

    /// Checks the per-kind invariants.
    pub fn validate(&self) -> Result<()> {
        let finite = self.param_a.is_finite() && self.param_b.is_finite() && self.mean_shift.is_finite();
        if !finite {
            return Err(Error::Config("noise spec parameters must be finite".into()));
        }
        match self.kind {
            NoiseKind::None | NoiseKind::Constant => Ok(()),
            NoiseKind::Uniform | NoiseKind::Triangular => {
                if self.param_a < self.param_b {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "noise support must satisfy param_a < param_b, got [{}, {}]",
                        self.param_a, self.param_b
                    )))
                }
            }
            NoiseKind::Gaussian => {
                if self.param_a >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "gaussian standard deviation must be >= 0, got {}",
                        self.param_a
                    )))
                }
            }
        }
    }

    /// One draw from the configured distribution.
    pub fn sample(&self, rng: &mut impl Rng) -> Result<f64> {
        self.validate()?;
        Ok(match self.kind {
            NoiseKind::None => 0.0,
            NoiseKind::Constant => self.param_a,
            NoiseKind::Uniform => rng.random_range(self.param_a..self.param_b),
            NoiseKind::Triangular => {
                let mode = 0.5 * (self.param_a + self.param_b);
                Triangular::new(self.param_a, self.param_b, mode)
                    .map_err(|e| Error::Config(format!("triangular spec: {e}")))?
                    .sample(rng)
            }
            NoiseKind::Gaussian => Normal::new(self.mean_shift, self.param_a)
                .map_err(|e| Error::Config(format!("gaussian spec: {e}")))?
                .sample(rng),
        })
    }

    /// Analytic mean of the source.
    pub fn mean(&self) -> f64 {
        match self.kind {
            NoiseKind::None => 0.0,
            NoiseKind::Constant => self.param_a,
            NoiseKind::Uniform | NoiseKind::Triangular => 0.5 * (self.param_a + self.param_b),
            NoiseKind::Gaussian => self.mean_shift,
        }
    }

    /// Analytic variance of the source.
    pub fn variance(&self) -> f64 {
        let width = self.param_b - self.param_a;
        match self.kind {
            NoiseKind::None | NoiseKind::Constant => 0.0,
            NoiseKind::Uniform => width * width / 12.0,
            NoiseKind::Triangular => width * width / 24.0,
            NoiseKind::Gaussian => self.param_a * self.param_a,
        }
    }
}

/// One draw from `spec`, after checking that the spec is well-formed.
pub fn sample_noise(spec: &NoiseSpec, rng: &mut impl Rng) -> Result<f64> {
    spec.sample(rng)
}

/// Drift, offsets, and per-source noise for one root-to-node pair.
///
/// All relative quantities (the `nr` subscripts of the underlying model)
/// are folded onto the node: the root is noiseless by assumption.
#[derive(Debug, Clone, PartialEq)]
pub struct ClockParams {
    /// Relative clock drift, dimensionless (e.g. 1.57e-6 for 1.57 ppm).
    pub phi: f64,
    /// Constant relative offset at k = 0, seconds.
    pub offset_nr: f64,
    /// Mean propagation delay, seconds.
    pub prop_delay_mean: f64,
    /// Wander around the drift term, one fresh draw per event.
    pub drift_noise: NoiseSpec,
    /// Propagation-delay jitter.
    pub prop_noise: NoiseSpec,
    /// Transceiver interrupt-generation jitter.
    pub gen_noise: NoiseSpec,
    /// Timestamp-capture jitter modeled in continuous seconds; tick
    /// quantization is a separate, independently toggled stage.
    pub cap_noise: NoiseSpec,
    /// OS read jitter, applied when the node reads its clock for a query.
    pub read_jitter: NoiseSpec,
    /// Random-walk step of the node's frequency offset, expressed as the
    /// per-sqrt-second standard deviation of the rate. The walk models
    /// oscillator instability between synchronization events; `none`
    /// keeps the rate fixed at `1 + phi`.
    pub rate_walk: NoiseSpec,
}

impl ClockParams {
    /// An ideal node: no drift, no offsets, no noise.
    pub fn ideal() -> Self {
        ClockParams {
            phi: 0.0,
            offset_nr: 0.0,
            prop_delay_mean: 0.0,
            drift_noise: NoiseSpec::none(),
            prop_noise: NoiseSpec::none(),
            gen_noise: NoiseSpec::none(),
            cap_noise: NoiseSpec::none(),
            read_jitter: NoiseSpec::none(),
            rate_walk: NoiseSpec::none(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.phi.is_finite() || self.phi.abs() >= 1e-3 {
            return Err(Error::Config(format!(
                "phi must be finite and ppm-scale (|phi| < 1e-3), got {}",
                self.phi
            )));
        }
        if !self.offset_nr.is_finite() {
            return Err(Error::Config("offset_nr must be finite".into()));
        }
        if !(self.prop_delay_mean.is_finite() && self.prop_delay_mean >= 0.0) {
            return Err(Error::Config(format!(
                "prop_delay_mean must be >= 0, got {}",
                self.prop_delay_mean
            )));
        }
        self.drift_noise.validate()?;
        self.prop_noise.validate()?;
        self.gen_noise.validate()?;
        self.cap_noise.validate()?;
        self.read_jitter.validate()?;
        self.rate_walk.validate()?;
        Ok(())
    }

    /// Sum of the per-event timestamp noise variances (excluding read jitter,
    /// which only touches query reads, and tick quantization, which the
    /// capture stage owns).
    pub fn timestamp_noise_variance(&self) -> f64 {
        self.drift_noise.variance()
            + self.prop_noise.variance()
            + self.gen_noise.variance()
            + self.cap_noise.variance()
    }
}

/// One synchronization event's timestamps on both clocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimestampPair {
    /// Event index, strictly increasing within a run.
    pub k: u64,
    /// Root timestamp, seconds.
    pub root_time: f64,
    /// Node timestamp, seconds.
    pub node_time: f64,
}

/// Independent random streams, one per uncertainty source, all derived from
/// one master seed. Toggling a source never perturbs another source's draws.
#[derive(Debug, Clone)]
pub struct NoiseStreams {
    pub drift: ChaCha8Rng,
    pub prop: ChaCha8Rng,
    pub gen: ChaCha8Rng,
    pub cap: ChaCha8Rng,
    pub read: ChaCha8Rng,
    pub walk: ChaCha8Rng,
}

/// Stream ids within a node's block; the block stride leaves room for
/// per-node auxiliary streams (e.g. capture-phase wander).
const STREAMS_PER_NODE: u64 = 8;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl NoiseStreams {
    /// Streams for the primary node.
    pub fn from_seed(seed: u64) -> Self {
        Self::for_node(seed, 0)
    }

    /// Streams for node `node` (0-based) under the same master seed.
    pub fn for_node(seed: u64, node: u64) -> Self {
        let base = node * STREAMS_PER_NODE;
        NoiseStreams {
            drift: stream(seed, base),
            prop: stream(seed, base + 1),
            gen: stream(seed, base + 2),
            cap: stream(seed, base + 3),
            read: stream(seed, base + 4),
            walk: stream(seed, base + 5),
        }
    }

    /// The auxiliary stream of a node's block, used by the capture channel.
    pub fn capture_stream(seed: u64, node: u64) -> ChaCha8Rng {
        stream(seed, node * STREAMS_PER_NODE + 6)
    }
}

/// Root timestamp of event `k`: the root is noiseless, so this is exactly
/// `k * event_spacing`.
pub fn root_timestamp(k: u64, event_spacing: f64) -> f64 {
    k as f64 * event_spacing
}

/// Node timestamp of event `k`: true time plus drift, constant offsets, and
/// one fresh draw from each stochastic source.
pub fn node_timestamp(
    k: u64,
    event_spacing: f64,
    params: &ClockParams,
    streams: &mut NoiseStreams,
) -> Result<f64> {
    let r = root_timestamp(k, event_spacing);
    Ok(r + params.phi * r
        + params.drift_noise.sample(&mut streams.drift)?
        + params.offset_nr
        + params.prop_delay_mean
        + params.prop_noise.sample(&mut streams.prop)?
        + params.gen_noise.sample(&mut streams.gen)?
        + params.cap_noise.sample(&mut streams.cap)?)
}

/// A stateful node clock for simulation runs.
///
/// Extends the per-event model with an integrated rate walk: the node's rate
/// is `1 + phi + w(t)` where `w` steps once per observed event with variance
/// proportional to the elapsed interval. With `rate_walk = none` this reduces
/// exactly to the stateless `node_timestamp` model.
#[derive(Debug, Clone)]
pub struct NodeClock {
    params: ClockParams,
    streams: NoiseStreams,
    /// Current wandering component of the rate (dimensionless).
    rate_offset: f64,
    /// Accumulated time error contributed by the rate walk, seconds.
    walk_time: f64,
    /// True time of the last advance, seconds.
    last_true_time: f64,
}

impl NodeClock {
    pub fn new(params: ClockParams, seed: u64, node: u64) -> Result<Self> {
        params.validate()?;
        Ok(NodeClock {
            params,
            streams: NoiseStreams::for_node(seed, node),
            rate_offset: 0.0,
            walk_time: 0.0,
            last_true_time: 0.0,
        })
    }

    pub fn params(&self) -> &ClockParams {
        &self.params
    }

    /// Integrates the rate walk up to `true_time` and steps the rate.
    fn advance(&mut self, true_time: f64) -> Result<()> {
        debug_assert!(true_time >= self.last_true_time, "simulation time went backwards");
        let dt = true_time - self.last_true_time;
        if dt > 0.0 {
            self.walk_time += self.rate_offset * dt;
            if !self.params.rate_walk.is_none() {
                let step = self.params.rate_walk.sample(&mut self.streams.walk)?;
                self.rate_offset += step * dt.sqrt();
            }
            self.last_true_time = true_time;
        }
        Ok(())
    }

    /// The node's noise-free local time at `true_time` (drift, offset, and
    /// integrated wander; no per-event jitter).
    fn local_base(&self, true_time: f64) -> f64 {
        true_time + self.params.phi * true_time + self.walk_time + self.params.offset_nr
    }

    /// Timestamp of a received event (sync broadcast) at true time `t`.
    pub fn timestamp_event(&mut self, true_time: f64) -> Result<f64> {
        self.advance(true_time)?;
        let p = &self.params;
        Ok(self.local_base(true_time)
            + p.drift_noise.sample(&mut self.streams.drift)?
            + p.prop_delay_mean
            + p.prop_noise.sample(&mut self.streams.prop)?
            + p.gen_noise.sample(&mut self.streams.gen)?
            + p.cap_noise.sample(&mut self.streams.cap)?)
    }

    /// Timestamp of a received query at true time `t`: same reception path as
    /// a sync event, plus OS read jitter.
    pub fn timestamp_query(&mut self, true_time: f64) -> Result<f64> {
        let stamped = self.timestamp_event(true_time)?;
        Ok(stamped + self.params.read_jitter.sample(&mut self.streams.read)?)
    }
}
