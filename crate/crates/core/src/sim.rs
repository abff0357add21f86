//! Discrete-event simulation of synchronization experiments.
//!
//! One run wires a perfect root clock, a noisy node clock, an optional
//! timer-capture stage, and the two synchronization engines. Sync broadcasts
//! fire every `sync_period`; query probes fire every `query_period` and
//! record the node's instantaneous estimation error. Event times live on an
//! integer-nanosecond grid so ordering is exact; at a shared instant the
//! query is evaluated before the sync is ingested.

use crate::capture::{double_sample, quantize_capture, CaptureChannel, CaptureConfig, CaptureMode};
use crate::clock::{ClockParams, NodeClock, NoiseSpec, TimestampPair};
use crate::error::{Error, Result};
use crate::estimation::{slope_series, slope_stats, SlopeStats};
use crate::sync::{sync_error, LwKalman, MeasurementModel, RegressionTable};

/// Which engines a run drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineSelect {
    LwKalman,
    Ftsp,
    Both,
}

/// Engine tag attached to each error record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Engine {
    LwKalman,
    Ftsp,
}

impl Engine {
    pub fn name(&self) -> &'static str {
        match self {
            Engine::LwKalman => "lw_kalman",
            Engine::Ftsp => "ftsp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    TxRxPair,
    OneTxTwoRx,
}

/// Full description of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub sync_period: f64,
    pub query_period: f64,
    pub duration: f64,
    pub topology: Topology,
    pub clock_params: ClockParams,
    /// Timer-capture stage; `None` timestamps in continuous time.
    pub capture: Option<CaptureConfig>,
    pub engine: EngineSelect,
    /// Model noise; `None` derives it from the configured noise profile.
    pub kalman_q: Option<f64>,
    /// Measurement noise; `None` derives it from the configured noise profile.
    pub kalman_r: Option<f64>,
    pub ftsp_window: usize,
    pub seed: u64,
}

/// Calibration defaults: drift 1.57 ppm, generation jitter uniform over
/// 1.031 us, drift wander 0.1 us, a touch of rate walk, 2 MHz synchronous
/// capture of a 16 MHz generation clock.
pub const DEFAULT_PHI: f64 = 1.57e-6;
pub const DEFAULT_GEN_JITTER: f64 = 1.031e-6;
pub const DEFAULT_DRIFT_SIGMA: f64 = 1e-7;
pub const DEFAULT_RATE_WALK_SIGMA: f64 = 1.5e-9;
pub const DEFAULT_CAPTURE_FREQ: f64 = 2e6;
pub const DEFAULT_GEN_FREQ: f64 = 16e6;
pub const DEFAULT_QUERY_PERIOD: f64 = 18.0;

impl ExperimentConfig {
    /// The paper-calibrated default experiment at a given sync period.
    pub fn calibrated(sync_period: f64, seed: u64) -> Self {
        let mut params = ClockParams::ideal();
        params.phi = DEFAULT_PHI;
        params.gen_noise = NoiseSpec::uniform(0.0, DEFAULT_GEN_JITTER);
        params.drift_noise = NoiseSpec::gaussian(DEFAULT_DRIFT_SIGMA);
        params.rate_walk = NoiseSpec::gaussian(DEFAULT_RATE_WALK_SIGMA);
        ExperimentConfig {
            sync_period,
            query_period: DEFAULT_QUERY_PERIOD,
            duration: 3600.0,
            topology: Topology::TxRxPair,
            clock_params: params,
            capture: Some(CaptureConfig::new(
                DEFAULT_CAPTURE_FREQ,
                DEFAULT_GEN_FREQ,
                CaptureMode::Synchronous,
            )),
            engine: EngineSelect::Both,
            kalman_q: None,
            kalman_r: None,
            ftsp_window: 8,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check_period = |name: &str, v: f64| -> Result<()> {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
            if v < 1e-9 {
                return Err(Error::Config(format!("{name} is below the 1 ns event grid: {v}")));
            }
            Ok(())
        };
        check_period("sync_period", self.sync_period)?;
        check_period("query_period", self.query_period)?;
        check_period("duration", self.duration)?;
        if self.sync_period > self.duration {
            return Err(Error::Config(format!(
                "sync_period {} exceeds duration {}",
                self.sync_period, self.duration
            )));
        }
        if self.ftsp_window == 0 {
            return Err(Error::Config("ftsp_window must be >= 1".into()));
        }
        if let Some(q) = self.kalman_q {
            if !(q.is_finite() && q >= 0.0) {
                return Err(Error::Config(format!("kalman_q must be >= 0, got {q}")));
            }
        }
        if let Some(r) = self.kalman_r {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::Config(format!("kalman_r must be > 0, got {r}")));
            }
        }
        self.clock_params.validate()?;
        if let Some(cap) = &self.capture {
            cap.validate()?;
        }
        Ok(())
    }

    /// Filter covariances: explicit values when given, otherwise derived
    /// from the noise profile.
    pub fn resolved_covariances(&self) -> (f64, f64) {
        let derived =
            MeasurementModel::from_noise_profile(&self.clock_params, self.capture.as_ref(), self.sync_period);
        let (dq, dr) = derived.noise_covariances();
        let q = self.kalman_q.unwrap_or(dq);
        let r = self.kalman_r.unwrap_or(dr).max(1e-30);
        (q, r)
    }
}

/// One query-message evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncErrorRecord {
    /// Root-clock time of the query.
    pub query_time: f64,
    pub engine: Engine,
    /// Signed error, seconds: true root time minus the node's estimate.
    pub error: f64,
    pub run_seed: u64,
}

const NS_PER_S: f64 = 1e9;

fn to_ns(seconds: f64) -> u64 {
    (seconds * NS_PER_S).round() as u64
}

fn ns_to_s(ns: u64) -> f64 {
    ns as f64 / NS_PER_S
}

/// One run's sync pair stream plus its query instants as
/// `(true_root_time, node_clock_reading)`, both in event order.
pub type EventStreams = (Vec<TimestampPair>, Vec<(f64, f64)>);

/// The raw material of one run, in event order: the sync pair stream and the
/// query instants as `(true_root_time, node_clock_reading)`.
///
/// Both engines consume exactly this stream, which is what makes an
/// `engine = both` comparison fair by construction.
pub fn simulate_streams(config: &ExperimentConfig) -> Result<EventStreams> {
    config.validate()?;
    let sync_ns = to_ns(config.sync_period);
    let query_ns = to_ns(config.query_period);
    let dur_ns = to_ns(config.duration);

    let mut node = NodeClock::new(config.clock_params.clone(), config.seed, 0)?;
    let mut channel = match &config.capture {
        Some(cap) => Some(CaptureChannel::new(*cap, config.seed, 0)?),
        None => None,
    };
    let delay = config.clock_params.prop_delay_mean;
    let stamp = |raw: f64, chan: &mut Option<CaptureChannel>| -> f64 {
        let captured = match chan {
            Some(c) => c.capture(raw),
            None => raw,
        };
        captured - delay
    };

    let mut pairs = Vec::new();
    let mut queries = Vec::new();
    let mut k_sync: u64 = 0;
    let mut k_query: u64 = 0;
    let mut t_sync: u64 = 0;
    let mut t_query: u64 = 0;
    while t_sync <= dur_ns || t_query <= dur_ns {
        // Queries win ties so a coincident sync never anchors ahead of the
        // query's own clock reading.
        if t_query <= dur_ns && (t_query <= t_sync || t_sync > dur_ns) {
            let t = ns_to_s(t_query);
            let raw = node.timestamp_query(t)?;
            queries.push((t, stamp(raw, &mut channel)));
            k_query += 1;
            t_query = k_query * query_ns;
        } else {
            let t = ns_to_s(t_sync);
            let raw = node.timestamp_event(t)?;
            pairs.push(TimestampPair { k: k_sync, root_time: t, node_time: stamp(raw, &mut channel) });
            k_sync += 1;
            t_sync = k_sync * sync_ns;
        }
    }
    Ok((pairs, queries))
}

/// The sync-only pair stream of a run (no query traffic), as used for
/// offline covariance training.
pub fn pair_trace(config: &ExperimentConfig) -> Result<Vec<TimestampPair>> {
    config.validate()?;
    let sync_ns = to_ns(config.sync_period);
    let dur_ns = to_ns(config.duration);
    let mut node = NodeClock::new(config.clock_params.clone(), config.seed, 0)?;
    let mut channel = match &config.capture {
        Some(cap) => Some(CaptureChannel::new(*cap, config.seed, 0)?),
        None => None,
    };
    let delay = config.clock_params.prop_delay_mean;
    let mut pairs = Vec::new();
    let mut k: u64 = 0;
    loop {
        let t_ns = k * sync_ns;
        if t_ns > dur_ns {
            break;
        }
        let t = ns_to_s(t_ns);
        let raw = node.timestamp_event(t)?;
        let captured = match &mut channel {
            Some(c) => c.capture(raw),
            None => raw,
        };
        pairs.push(TimestampPair { k, root_time: t, node_time: captured - delay });
        k += 1;
    }
    Ok(pairs)
}

/// Runs one experiment and returns the per-query error records.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<SyncErrorRecord>> {
    let (pairs, queries) = simulate_streams(config)?;
    let run_kalman = matches!(config.engine, EngineSelect::LwKalman | EngineSelect::Both);
    let run_ftsp = matches!(config.engine, EngineSelect::Ftsp | EngineSelect::Both);
    let (q, r) = config.resolved_covariances();
    let mut kalman = LwKalman::new(q, r)?;
    let mut ftsp = RegressionTable::new(config.ftsp_window)?;

    let mut records = Vec::new();
    let mut next_pair = 0usize;
    for &(t_true, node_now) in &queries {
        while next_pair < pairs.len() && pairs[next_pair].root_time < t_true {
            let pair = pairs[next_pair];
            if run_kalman {
                kalman.ingest_sync(pair)?;
            }
            if run_ftsp {
                ftsp.update(pair)?;
            }
            next_pair += 1;
        }
        // Queries are evaluated once an engine has a fitted model (two sync
        // exchanges); the single-pair pass-through exists for projection but
        // is not scored.
        if run_kalman && kalman.state().is_some() {
            let est = kalman.project(node_now)?;
            records.push(SyncErrorRecord {
                query_time: t_true,
                engine: Engine::LwKalman,
                error: sync_error(t_true, est),
                run_seed: config.seed,
            });
        }
        if run_ftsp && ftsp.len() >= 2 {
            let est = ftsp.project(node_now)?;
            records.push(SyncErrorRecord {
                query_time: t_true,
                engine: Engine::Ftsp,
                error: sync_error(t_true, est),
                run_seed: config.seed,
            });
        }
    }
    Ok(records)
}

/// Fixed-width histogram plus the summary moments of a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramSummary {
    pub n: usize,
    pub min: f64,
    pub max: f64,
    pub range: f64,
    pub mean: f64,
    /// Sample variance (n-1 denominator).
    pub variance: f64,
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

impl HistogramSummary {
    pub fn from_samples(samples: &[f64], bins: usize) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::VarianceUndefined(samples.len()));
        }
        if bins == 0 {
            return Err(Error::Config("histogram needs at least one bin".into()));
        }
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for &x in samples {
            min = min.min(x);
            max = max.max(x);
            sum += x;
        }
        let n = samples.len();
        let mean = sum / n as f64;
        let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
        let variance = ss / (n - 1) as f64;
        let range = max - min;
        let bin_width = range / bins as f64;
        let mut counts = vec![0u64; bins];
        for &x in samples {
            let idx = if bin_width > 0.0 {
                (((x - min) / bin_width) as usize).min(bins - 1)
            } else {
                0
            };
            counts[idx] += 1;
        }
        Ok(HistogramSummary { n, min, max, range, mean, variance, bin_width, counts })
    }
}

/// Per-event timestamp difference between two receivers of the same
/// broadcast, each with independent noise draws.
pub fn run_rx_rx_study(config: &ExperimentConfig, samples: usize, bins: usize) -> Result<HistogramSummary> {
    config.validate()?;
    if config.topology != Topology::OneTxTwoRx {
        return Err(Error::Config("rx-rx study requires topology one_tx_two_rx".into()));
    }
    if samples < 2 {
        return Err(Error::Config("rx-rx study needs at least 2 samples".into()));
    }
    let mut rx1 = NodeClock::new(config.clock_params.clone(), config.seed, 1)?;
    let mut rx2 = NodeClock::new(config.clock_params.clone(), config.seed, 2)?;
    let mut diffs = Vec::with_capacity(samples);
    for k in 0..samples {
        let t = k as f64 * config.sync_period;
        diffs.push(rx1.timestamp_event(t)? - rx2.timestamp_event(t)?);
    }
    HistogramSummary::from_samples(&diffs, bins)
}

/// Slope statistics of the captured timestamp stream at each capture
/// frequency, under paired seeds (the raw stream is identical across
/// frequencies; only the quantization grid changes).
pub fn run_capture_freq_study(
    base: &ExperimentConfig,
    freqs: &[f64],
) -> Result<Vec<(f64, SlopeStats)>> {
    base.validate()?;
    if freqs.is_empty() {
        return Err(Error::Config("capture study needs at least one frequency".into()));
    }
    let events = (base.duration / base.sync_period).floor() as u64 + 1;
    if events < 3 {
        return Err(Error::Config("capture study needs at least 3 events".into()));
    }
    let template = base
        .capture
        .unwrap_or_else(|| CaptureConfig::new(DEFAULT_CAPTURE_FREQ, DEFAULT_GEN_FREQ, CaptureMode::Synchronous));

    let mut out = Vec::with_capacity(freqs.len());
    for &freq in freqs {
        if !(freq.is_finite() && freq > 0.0) {
            return Err(Error::Config(format!("capture frequency must be > 0, got {freq}")));
        }
        let cfg = CaptureConfig { capture_freq_hz: freq, ..template };
        cfg.validate()?;
        let mut node = NodeClock::new(base.clock_params.clone(), base.seed, 0)?;
        let mut pairs = Vec::with_capacity(events as usize);
        for k in 0..events {
            let t = k as f64 * base.sync_period;
            let raw = node.timestamp_event(t)?;
            let captured = if cfg.double_sampling {
                double_sample(raw, &cfg)?
            } else {
                quantize_capture(raw, &cfg).1
            };
            pairs.push(TimestampPair { k, root_time: t, node_time: captured });
        }
        out.push((freq, slope_stats(&slope_series(&pairs)?)?));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

/// Slope statistics per capture mode at a fixed frequency, pooled over
/// `reps` paired-seed repetitions. Events are aligned to the generation
/// clock before capture, so a synchronous timer adds no quantization error
/// while the asynchronous modes do.
pub fn run_capture_mode_study(
    base: &ExperimentConfig,
    modes: &[CaptureMode],
    reps: u64,
) -> Result<Vec<(CaptureMode, SlopeStats)>> {
    base.validate()?;
    if modes.is_empty() || reps == 0 {
        return Err(Error::Config("mode study needs modes and at least one repetition".into()));
    }
    let events = (base.duration / base.sync_period).floor() as u64 + 1;
    if events < 3 {
        return Err(Error::Config("mode study needs at least 3 events".into()));
    }
    let template = base
        .capture
        .unwrap_or_else(|| CaptureConfig::new(DEFAULT_GEN_FREQ, DEFAULT_GEN_FREQ, CaptureMode::Synchronous));

    let mut out = Vec::with_capacity(modes.len());
    for &mode in modes {
        let cfg = CaptureConfig { mode, ..template };
        cfg.validate()?;
        let mut slopes = Vec::new();
        for rep in 0..reps {
            let seed = base.seed.wrapping_add(rep);
            let mut node = NodeClock::new(base.clock_params.clone(), seed, 0)?;
            let mut chan = CaptureChannel::new(cfg, seed, 0)?;
            let mut pairs = Vec::with_capacity(events as usize);
            for k in 0..events {
                let t = k as f64 * base.sync_period;
                let raw = node.timestamp_event(t)?;
                pairs.push(TimestampPair { k, root_time: t, node_time: chan.capture(raw) });
            }
            slopes.extend(slope_series(&pairs)?);
        }
        out.push((mode, slope_stats(&slopes)?));
    }
    Ok(out)
}

/// Distribution of consecutive-read differences when the clock is read in a
/// tight loop, each read perturbed by OS jitter.
pub fn run_os_jitter_probe(
    read_jitter: &NoiseSpec,
    window: f64,
    rate: f64,
    seed: u64,
    bins: usize,
) -> Result<HistogramSummary> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::Config(format!("read rate must be > 0, got {rate}")));
    }
    if !(window.is_finite() && window > 0.0) {
        return Err(Error::Config(format!("probe window must be > 0, got {window}")));
    }
    read_jitter.validate()?;
    let reads = (window * rate).floor() as usize;
    if reads < 3 {
        return Err(Error::Config("probe window too short for consecutive differences".into()));
    }
    let mut rng = crate::clock::NoiseStreams::for_node(seed, 0).read;
    let mut prev = read_jitter.sample(&mut rng)?;
    let mut diffs = Vec::with_capacity(reads - 1);
    let dt = 1.0 / rate;
    for i in 1..reads {
        let cur = i as f64 * dt + read_jitter.sample(&mut rng)?;
        diffs.push(cur - prev);
        prev = cur;
    }
    HistogramSummary::from_samples(&diffs, bins)
}
