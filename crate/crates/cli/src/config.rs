//! Flat key-value experiment configuration files.
//!
//! The grammar is line-oriented: `key = value`, `#` starts a comment, keys
//! use dotted section names (`clock.phi`, `capture.mode`). Noise sources are
//! written as `<kind> [params...]`:
//!
//! ```text
//! clock.gen_noise = uniform 0.0 1.031e-6
//! clock.drift_noise = gaussian 1e-7
//! clock.read_jitter = none
//! ```
//!
//! Every key has a documented default; a minimal file can set nothing but a
//! seed. `sync_periods` (a whitespace-separated list) expands into one run
//! per period. Unknown keys, duplicate keys, and invariant violations are
//! all reported together, each naming the offending key.

use std::collections::HashMap;
use std::path::Path;

use skewsim::capture::{CaptureConfig, CaptureMode};
use skewsim::clock::{ClockParams, NoiseKind, NoiseSpec};
use skewsim::sim::{self, EngineSelect, ExperimentConfig, Topology};

use crate::error::{CliError, Result};

/// A parsed configuration: the base experiment plus the sync-period sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct FileConfig {
    pub base: ExperimentConfig,
    pub sync_periods: Vec<f64>,
}

impl FileConfig {
    /// The experiment for one (period, seed) cell of the sweep.
    pub fn experiment(&self, sync_period: f64, seed: u64) -> ExperimentConfig {
        let mut cfg = self.base.clone();
        cfg.sync_period = sync_period;
        cfg.seed = seed;
        cfg
    }
}

const KNOWN_KEYS: &[&str] = &[
    "sync_period",
    "sync_periods",
    "query_period",
    "duration",
    "seed",
    "engine",
    "topology",
    "kalman.q",
    "kalman.r",
    "ftsp.window",
    "clock.phi",
    "clock.offset_nr",
    "clock.prop_delay_mean",
    "clock.drift_noise",
    "clock.prop_noise",
    "clock.gen_noise",
    "clock.cap_noise",
    "clock.read_jitter",
    "clock.rate_walk",
    "capture.enabled",
    "capture.freq_hz",
    "capture.gen_freq_hz",
    "capture.mode",
    "capture.double_sampling",
    "capture.phase_offset",
];

pub fn parse_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<FileConfig> {
    let mut issues: Vec<String> = Vec::new();
    let mut kv: HashMap<&str, &str> = HashMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            issues.push(format!("line {}: expected `key = value`, got `{line}`", idx + 1));
            continue;
        };
        let key = key.trim();
        let value = value.trim();
        if !KNOWN_KEYS.contains(&key) {
            issues.push(format!("{key}: unknown key"));
            continue;
        }
        if kv.insert(key, value).is_some() {
            issues.push(format!("{key}: duplicate key"));
        }
    }

    let config = build(&kv, &mut issues);
    match config {
        Some(cfg) if issues.is_empty() => Ok(cfg),
        _ => Err(CliError::validation(issues)),
    }
}

fn build(kv: &HashMap<&str, &str>, issues: &mut Vec<String>) -> Option<FileConfig> {
    let mut get_f64 = |key: &str, default: f64, pred: fn(f64) -> bool, what: &str| -> f64 {
        match kv.get(key) {
            None => default,
            Some(v) => match v.parse::<f64>() {
                Ok(x) if x.is_finite() && pred(x) => x,
                Ok(x) => {
                    issues.push(format!("{key}: {what}, got {x}"));
                    default
                }
                Err(_) => {
                    issues.push(format!("{key}: expected a number, got `{v}`"));
                    default
                }
            },
        }
    };

    let query_period = get_f64("query_period", sim::DEFAULT_QUERY_PERIOD, |x| x > 0.0, "must be > 0");
    let duration = get_f64("duration", 3600.0, |x| x > 0.0, "must be > 0");
    let phi = get_f64("clock.phi", sim::DEFAULT_PHI, |x| x.abs() < 1e-3, "must be ppm-scale (|phi| < 1e-3)");
    let offset_nr = get_f64("clock.offset_nr", 0.0, |_| true, "");
    let prop_delay_mean = get_f64("clock.prop_delay_mean", 0.0, |x| x >= 0.0, "must be >= 0");
    let capture_freq = get_f64("capture.freq_hz", sim::DEFAULT_CAPTURE_FREQ, |x| x > 0.0, "must be > 0");
    let gen_freq = get_f64("capture.gen_freq_hz", sim::DEFAULT_GEN_FREQ, |x| x > 0.0, "must be > 0");
    let phase_offset = get_f64("capture.phase_offset", 0.0, |x| x >= 0.0, "must be >= 0");

    let seed = match kv.get("seed") {
        None => 1,
        Some(v) => match v.parse::<u64>() {
            Ok(x) => x,
            Err(_) => {
                issues.push(format!("seed: expected an unsigned integer, got `{v}`"));
                1
            }
        },
    };

    let ftsp_window = match kv.get("ftsp.window") {
        None => 8,
        Some(v) => match v.parse::<usize>() {
            Ok(x) if x >= 1 => x,
            _ => {
                issues.push(format!("ftsp.window: expected an integer >= 1, got `{v}`"));
                8
            }
        },
    };

    let engine = match kv.get("engine").copied().unwrap_or("both") {
        "lw_kalman" => EngineSelect::LwKalman,
        "ftsp" => EngineSelect::Ftsp,
        "both" => EngineSelect::Both,
        other => {
            issues.push(format!("engine: expected lw_kalman | ftsp | both, got `{other}`"));
            EngineSelect::Both
        }
    };

    let topology = match kv.get("topology").copied().unwrap_or("tx_rx_pair") {
        "tx_rx_pair" => Topology::TxRxPair,
        "one_tx_two_rx" => Topology::OneTxTwoRx,
        other => {
            issues.push(format!("topology: expected tx_rx_pair | one_tx_two_rx, got `{other}`"));
            Topology::TxRxPair
        }
    };

    let mode = match kv.get("capture.mode").copied().unwrap_or("synchronous") {
        "synchronous" => CaptureMode::Synchronous,
        "asynchronous_shared_type" => CaptureMode::AsynchronousSharedType,
        "asynchronous_external" => CaptureMode::AsynchronousExternal,
        other => {
            issues.push(format!(
                "capture.mode: expected synchronous | asynchronous_shared_type | asynchronous_external, got `{other}`"
            ));
            CaptureMode::Synchronous
        }
    };

    let mut get_bool = |key: &str, default: bool| -> bool {
        match kv.get(key) {
            None => default,
            Some(&"true") => true,
            Some(&"false") => false,
            Some(v) => {
                issues.push(format!("{key}: expected true | false, got `{v}`"));
                default
            }
        }
    };
    let capture_enabled = get_bool("capture.enabled", true);
    let double_sampling = get_bool("capture.double_sampling", false);

    let mut get_auto = |key: &str, pred: fn(f64) -> bool, what: &str| -> Option<f64> {
        match kv.get(key) {
            None | Some(&"auto") => None,
            Some(v) => match v.parse::<f64>() {
                Ok(x) if x.is_finite() && pred(x) => Some(x),
                _ => {
                    issues.push(format!("{key}: expected `auto` or {what}, got `{v}`"));
                    None
                }
            },
        }
    };
    let kalman_q = get_auto("kalman.q", |x| x >= 0.0, "a number >= 0");
    let kalman_r = get_auto("kalman.r", |x| x > 0.0, "a number > 0");

    let defaults = ExperimentConfig::calibrated(30.0, seed);
    let mut noise = |key: &str, default: NoiseSpec| -> NoiseSpec {
        match kv.get(key) {
            None => default,
            Some(v) => match parse_noise(v) {
                Ok(spec) => spec,
                Err(msg) => {
                    issues.push(format!("{key}: {msg}"));
                    default
                }
            },
        }
    };
    let clock_params = ClockParams {
        phi,
        offset_nr,
        prop_delay_mean,
        drift_noise: noise("clock.drift_noise", defaults.clock_params.drift_noise),
        prop_noise: noise("clock.prop_noise", NoiseSpec::none()),
        gen_noise: noise("clock.gen_noise", defaults.clock_params.gen_noise),
        cap_noise: noise("clock.cap_noise", NoiseSpec::none()),
        read_jitter: noise("clock.read_jitter", NoiseSpec::none()),
        rate_walk: noise("clock.rate_walk", defaults.clock_params.rate_walk),
    };

    let sync_periods: Vec<f64> = match (kv.get("sync_period"), kv.get("sync_periods")) {
        (Some(_), Some(_)) => {
            issues.push("sync_period: set either sync_period or sync_periods, not both".into());
            vec![30.0]
        }
        (Some(v), None) => match v.parse::<f64>() {
            Ok(x) if x.is_finite() && x > 0.0 => vec![x],
            _ => {
                issues.push(format!("sync_period: expected a number > 0, got `{v}`"));
                vec![30.0]
            }
        },
        (None, Some(v)) => {
            let mut periods = Vec::new();
            for tok in v.split_whitespace() {
                match tok.parse::<f64>() {
                    Ok(x) if x.is_finite() && x > 0.0 => periods.push(x),
                    _ => issues.push(format!("sync_periods: expected numbers > 0, got `{tok}`")),
                }
            }
            if periods.is_empty() {
                issues.push("sync_periods: list is empty".into());
                periods.push(30.0);
            }
            periods
        }
        (None, None) => vec![30.0],
    };

    let capture = if capture_enabled {
        Some(CaptureConfig {
            capture_freq_hz: capture_freq,
            gen_freq_hz: gen_freq,
            mode,
            double_sampling,
            phase_offset,
        })
    } else {
        None
    };

    let base = ExperimentConfig {
        sync_period: sync_periods[0],
        query_period,
        duration,
        topology,
        clock_params,
        capture,
        engine,
        kalman_q,
        kalman_r,
        ftsp_window,
        seed,
    };

    // Cross-field invariants, reported alongside the per-key issues.
    if let Err(e) = base.validate() {
        issues.push(e.to_string());
    }
    for &p in &sync_periods {
        if p > duration {
            issues.push(format!("sync_period: period {p} exceeds duration {duration}"));
        }
    }

    Some(FileConfig { base, sync_periods })
}

fn parse_noise(value: &str) -> std::result::Result<NoiseSpec, String> {
    let tokens: Vec<&str> = value.split_whitespace().collect();
    let arg = |i: usize| -> std::result::Result<f64, String> {
        tokens
            .get(i)
            .ok_or_else(|| format!("missing parameter {i} in `{value}`"))?
            .parse::<f64>()
            .map_err(|_| format!("expected a number in `{value}`"))
    };
    let spec = match tokens.first().copied() {
        Some("none") => NoiseSpec::none(),
        Some("constant") => NoiseSpec::constant(arg(1)?),
        Some("uniform") => NoiseSpec::uniform(arg(1)?, arg(2)?),
        Some("triangular") => NoiseSpec::triangular(arg(1)?, arg(2)?),
        Some("gaussian") => match tokens.len() {
            2 => NoiseSpec::gaussian(arg(1)?),
            4 if tokens[2] == "bias" => NoiseSpec::gaussian_biased(arg(3)?, arg(1)?),
            _ => return Err(format!("expected `gaussian SIGMA [bias MU]`, got `{value}`")),
        },
        _ => return Err(format!("unknown noise kind in `{value}`")),
    };
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

fn noise_to_string(spec: &NoiseSpec) -> String {
    match spec.kind {
        NoiseKind::None => "none".into(),
        NoiseKind::Constant => format!("constant {:?}", spec.param_a),
        NoiseKind::Uniform => format!("uniform {:?} {:?}", spec.param_a, spec.param_b),
        NoiseKind::Triangular => format!("triangular {:?} {:?}", spec.param_a, spec.param_b),
        NoiseKind::Gaussian => {
            if spec.mean_shift == 0.0 {
                format!("gaussian {:?}", spec.param_a)
            } else {
                format!("gaussian {:?} bias {:?}", spec.param_a, spec.mean_shift)
            }
        }
    }
}

/// Renders a configuration in the file grammar. `parse_config_str` of the
/// output reproduces the input configuration exactly.
pub fn serialize_config(config: &FileConfig) -> String {
    let b = &config.base;
    let mut out = String::new();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    if config.sync_periods.len() == 1 {
        line(format!("sync_period = {:?}", config.sync_periods[0]));
    } else {
        let list: Vec<String> = config.sync_periods.iter().map(|p| format!("{p:?}")).collect();
        line(format!("sync_periods = {}", list.join(" ")));
    }
    line(format!("query_period = {:?}", b.query_period));
    line(format!("duration = {:?}", b.duration));
    line(format!("seed = {}", b.seed));
    line(format!(
        "engine = {}",
        match b.engine {
            EngineSelect::LwKalman => "lw_kalman",
            EngineSelect::Ftsp => "ftsp",
            EngineSelect::Both => "both",
        }
    ));
    line(format!(
        "topology = {}",
        match b.topology {
            Topology::TxRxPair => "tx_rx_pair",
            Topology::OneTxTwoRx => "one_tx_two_rx",
        }
    ));
    line(match b.kalman_q {
        Some(q) => format!("kalman.q = {q:?}"),
        None => "kalman.q = auto".into(),
    });
    line(match b.kalman_r {
        Some(r) => format!("kalman.r = {r:?}"),
        None => "kalman.r = auto".into(),
    });
    line(format!("ftsp.window = {}", b.ftsp_window));
    let c = &b.clock_params;
    line(format!("clock.phi = {:?}", c.phi));
    line(format!("clock.offset_nr = {:?}", c.offset_nr));
    line(format!("clock.prop_delay_mean = {:?}", c.prop_delay_mean));
    line(format!("clock.drift_noise = {}", noise_to_string(&c.drift_noise)));
    line(format!("clock.prop_noise = {}", noise_to_string(&c.prop_noise)));
    line(format!("clock.gen_noise = {}", noise_to_string(&c.gen_noise)));
    line(format!("clock.cap_noise = {}", noise_to_string(&c.cap_noise)));
    line(format!("clock.read_jitter = {}", noise_to_string(&c.read_jitter)));
    line(format!("clock.rate_walk = {}", noise_to_string(&c.rate_walk)));
    match &b.capture {
        None => line("capture.enabled = false".into()),
        Some(cap) => {
            line("capture.enabled = true".into());
            line(format!("capture.freq_hz = {:?}", cap.capture_freq_hz));
            line(format!("capture.gen_freq_hz = {:?}", cap.gen_freq_hz));
            line(format!(
                "capture.mode = {}",
                match cap.mode {
                    CaptureMode::Synchronous => "synchronous",
                    CaptureMode::AsynchronousSharedType => "asynchronous_shared_type",
                    CaptureMode::AsynchronousExternal => "asynchronous_external",
                }
            ));
            line(format!("capture.double_sampling = {}", cap.double_sampling));
            line(format!("capture.phase_offset = {:?}", cap.phase_offset));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config_str("sync_period = 30\nseed = 1\n").unwrap();
        assert_eq!(cfg.sync_periods, vec![30.0]);
        assert_eq!(cfg.base.query_period, 18.0);
        assert_eq!(cfg.base.duration, 3600.0);
        assert_eq!(cfg.base.ftsp_window, 8);
        assert_eq!(cfg.base.engine, EngineSelect::Both);
        assert_eq!(cfg.base.clock_params.phi, sim::DEFAULT_PHI);
        assert!(cfg.base.capture.is_some());
        assert_eq!(cfg.base.kalman_q, None);
    }

    #[test]
    fn zero_period_names_field() {
        let err = parse_config_str("sync_period = 0\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("sync_period"), "{msg}");
    }

    #[test]
    fn all_issues_reported_together() {
        let err = parse_config_str(
            "sync_period = 0\nftsp.window = 0\nbogus_key = 3\nengine = webpto\n",
        )
        .unwrap_err();
        let msg = err.to_string();
        for needle in ["sync_period", "ftsp.window", "bogus_key", "engine"] {
            assert!(msg.contains(needle), "missing `{needle}` in: {msg}");
        }
    }

    #[test]
    fn period_sweep_expands() {
        let cfg = parse_config_str("sync_periods = 30 60 180 360\nengine = both\n").unwrap();
        assert_eq!(cfg.sync_periods, vec![30.0, 60.0, 180.0, 360.0]);
        let e = cfg.experiment(60.0, 5);
        assert_eq!(e.sync_period, 60.0);
        assert_eq!(e.seed, 5);
    }

    #[test]
    fn noise_grammar() {
        let cfg = parse_config_str(
            "clock.gen_noise = uniform 0.0 1.031e-6\nclock.drift_noise = gaussian 1e-7\nclock.prop_noise = triangular -1e-6 1e-6\nclock.cap_noise = constant 2e-7\nclock.read_jitter = gaussian 1e-7 bias 3e-6\n",
        )
        .unwrap();
        let c = &cfg.base.clock_params;
        assert_eq!(c.gen_noise, NoiseSpec::uniform(0.0, 1.031e-6));
        assert_eq!(c.drift_noise, NoiseSpec::gaussian(1e-7));
        assert_eq!(c.prop_noise, NoiseSpec::triangular(-1e-6, 1e-6));
        assert_eq!(c.cap_noise, NoiseSpec::constant(2e-7));
        assert_eq!(c.read_jitter, NoiseSpec::gaussian_biased(3e-6, 1e-7));

        let err = parse_config_str("clock.gen_noise = uniform 2e-6 1e-6\n").unwrap_err();
        assert!(err.to_string().contains("clock.gen_noise"));
    }

    #[test]
    fn round_trip_identity() {
        let text = "sync_periods = 30 60\nquery_period = 18\nseed = 9\nkalman.q = 1e-17\ncapture.mode = asynchronous_external\ncapture.double_sampling = true\nclock.read_jitter = gaussian 2.5e-7\n";
        let cfg = parse_config_str(text).unwrap();
        let round = parse_config_str(&serialize_config(&cfg)).unwrap();
        assert_eq!(cfg, round);

        let cfg = parse_config_str("capture.enabled = false\n").unwrap();
        assert!(cfg.base.capture.is_none());
        let round = parse_config_str(&serialize_config(&cfg)).unwrap();
        assert_eq!(cfg, round);
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let cfg = parse_config_str("# a comment\n\nseed = 4 # trailing\n").unwrap();
        assert_eq!(cfg.base.seed, 4);
    }
}
