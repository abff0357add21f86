//! Slope-series statistics and transceiver-register drift estimation.

use crate::clock::TimestampPair;
use crate::error::{Error, Result};

/// Sample statistics of a slope series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeStats {
    /// Sample mean of the slopes.
    pub m_s: f64,
    /// Sample standard deviation (n-1 denominator).
    pub std_s: f64,
    /// Sample variance (n-1 denominator).
    pub var_s: f64,
    /// Number of slopes.
    pub n: usize,
}

/// Instantaneous rate of change between consecutive timestamp pairs:
/// `s(k) = (N(k) - N(k-1)) / (R(k) - R(k-1))`.
pub fn slope_series(pairs: &[TimestampPair]) -> Result<Vec<f64>> {
    if pairs.len() < 2 {
        return Err(Error::Config(format!(
            "slope series needs at least 2 pairs, got {}",
            pairs.len()
        )));
    }
    let mut slopes = Vec::with_capacity(pairs.len() - 1);
    for w in pairs.windows(2) {
        let dr = w[1].root_time - w[0].root_time;
        if dr <= 0.0 {
            return Err(Error::DegenerateInterval(format!(
                "root_time must strictly increase (k={} to k={})",
                w[0].k, w[1].k
            )));
        }
        slopes.push((w[1].node_time - w[0].node_time) / dr);
    }
    Ok(slopes)
}

/// Sample mean, standard deviation, and variance of a slope series.
pub fn slope_stats(slopes: &[f64]) -> Result<SlopeStats> {
    if slopes.len() < 2 {
        return Err(Error::VarianceUndefined(slopes.len()));
    }
    let n = slopes.len();
    let mean = slopes.iter().sum::<f64>() / n as f64;
    let ss = slopes.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>();
    let var = ss / (n - 1) as f64;
    Ok(SlopeStats { m_s: mean, std_s: var.sqrt(), var_s: var, n })
}

/// Converts a frequency-error register reading to crystal drift in ppm:
/// `fec * (5e5 / 128) / f_rf_mhz`.
pub fn fec_to_ppm(fec: i8, f_rf_mhz: f64) -> Result<f64> {
    if !(f_rf_mhz.is_finite() && f_rf_mhz > 0.0) {
        return Err(Error::Domain(format!("f_rf_mhz must be > 0, got {f_rf_mhz}")));
    }
    Ok(fec as f64 * (5e5 / 128.0) / f_rf_mhz)
}

/// Mean slope implied by a crystal drift in ppm: `1 + ppm / 1e6`.
pub fn ppm_to_slope_mean(f_crystal_ppm: f64) -> f64 {
    1.0 + f_crystal_ppm / 1e6
}

/// Decodes a raw 8-bit register value as a two's complement signed integer.
pub fn decode_twos_complement(raw: u8) -> i8 {
    raw as i8
}
