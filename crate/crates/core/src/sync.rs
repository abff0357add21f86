//! Synchronization engines: a scalar Kalman filter on the frequency offset
//! and a sliding-window linear-regression baseline, plus global-time
//! projection and sync-error computation.
//!
//! The Kalman filter tracks the dimensionless frequency offset
//! `f_o = (dR - dN) / dN` between consecutive sync exchanges, with state
//! transition and measurement scalars fixed at one and no control input.
//! Projection maps a node-clock instant onto the root clock from the most
//! recent exchange: `N_g(m) = R(k) + (N(m) - N(k)) * (f_o + 1)`.

use std::collections::VecDeque;

use crate::capture::CaptureConfig;
use crate::clock::{ClockParams, TimestampPair};
use crate::error::{Error, Result};

/// Scalar Kalman filter state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    /// Estimated frequency offset.
    pub x_hat: f64,
    /// Error covariance.
    pub p: f64,
    /// Model noise variance.
    pub q: f64,
    /// Measurement noise variance.
    pub r: f64,
    /// Anchor for global-time projection: the most recent exchange.
    pub last_pair: TimestampPair,
}

/// Frequency-offset measurement between two exchanges:
/// `z = (dR - dN) / dN`. This is approximately `-phi` for ppm-scale drift.
pub fn measure_fo(prev: &TimestampPair, cur: &TimestampPair) -> Result<f64> {
    if cur.k <= prev.k {
        return Err(Error::OutOfOrder(format!(
            "measurement needs cur.k > prev.k, got {} <= {}",
            cur.k, prev.k
        )));
    }
    let dr = cur.root_time - prev.root_time;
    let dn = cur.node_time - prev.node_time;
    if dn == 0.0 {
        return Err(Error::DegenerateInterval("node interval is zero".into()));
    }
    Ok((dr - dn) / dn)
}

/// Time update: project the state and error covariance ahead.
pub fn kalman_predict(state: &KalmanState) -> (f64, f64) {
    (state.x_hat, state.p + state.q)
}

/// Kalman gain for a prior covariance and measurement noise.
pub fn kalman_gain(p_prior: f64, r: f64) -> Result<f64> {
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::Config(format!("measurement noise r must be > 0, got {r}")));
    }
    if p_prior < 0.0 {
        return Err(Error::Config(format!("prior covariance must be >= 0, got {p_prior}")));
    }
    Ok(p_prior / (p_prior + r))
}

/// Measurement update: predict, compute the gain, and fold in `z`.
/// The anchor is left untouched; the caller advances it per exchange.
pub fn kalman_update(state: &KalmanState, z: f64) -> Result<KalmanState> {
    if !z.is_finite() {
        return Err(Error::Domain(format!("measurement must be finite, got {z}")));
    }
    let (x_prior, p_prior) = kalman_predict(state);
    let k = kalman_gain(p_prior, state.r)?;
    Ok(KalmanState {
        x_hat: x_prior + k * (z - x_prior),
        p: (1.0 - k) * p_prior,
        ..*state
    })
}

/// Projects a node-clock instant onto the root clock from `state`'s anchor.
pub fn project_global(state: &KalmanState, node_now: f64) -> Result<f64> {
    if node_now < state.last_pair.node_time {
        return Err(Error::OutOfOrder(format!(
            "node_now {} precedes anchor {}",
            node_now, state.last_pair.node_time
        )));
    }
    Ok(state.last_pair.root_time + (node_now - state.last_pair.node_time) * (state.x_hat + 1.0))
}

/// Signed synchronization error: true root time minus the node's estimate.
pub fn sync_error(true_root: f64, estimated: f64) -> f64 {
    true_root - estimated
}

/// Lifecycle wrapper around the scalar filter.
///
/// The first exchange only sets the anchor; the second initializes the state
/// from its measured offset with `p = r`; each later exchange runs a full
/// predict/update and re-anchors to the new pair.
#[derive(Debug, Clone)]
pub struct LwKalman {
    q: f64,
    r: f64,
    first: Option<TimestampPair>,
    state: Option<KalmanState>,
}

impl LwKalman {
    pub fn new(q: f64, r: f64) -> Result<Self> {
        if !(q.is_finite() && q >= 0.0) {
            return Err(Error::Config(format!("model noise q must be >= 0, got {q}")));
        }
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::Config(format!("measurement noise r must be > 0, got {r}")));
        }
        Ok(LwKalman { q, r, first: None, state: None })
    }

    pub fn state(&self) -> Option<&KalmanState> {
        self.state.as_ref()
    }

    /// Folds one synchronization exchange into the filter.
    pub fn ingest_sync(&mut self, pair: TimestampPair) -> Result<()> {
        match (&self.first, &mut self.state) {
            (None, None) => {
                self.first = Some(pair);
            }
            (Some(prev), None) => {
                let z = measure_fo(prev, &pair)?;
                self.state = Some(KalmanState {
                    x_hat: z,
                    p: self.r,
                    q: self.q,
                    r: self.r,
                    last_pair: pair,
                });
            }
            (_, Some(state)) => {
                let z = measure_fo(&state.last_pair, &pair)?;
                let mut next = kalman_update(state, z)?;
                next.last_pair = pair;
                *state = next;
            }
        }
        Ok(())
    }

    /// Estimated root time for a node-clock instant. Before the state is
    /// initialized the single anchored pair maps through at unit rate.
    pub fn project(&self, node_now: f64) -> Result<f64> {
        if let Some(state) = &self.state {
            return project_global(state, node_now);
        }
        if let Some(first) = &self.first {
            if node_now < first.node_time {
                return Err(Error::OutOfOrder(format!(
                    "node_now {} precedes anchor {}",
                    node_now, first.node_time
                )));
            }
            return Ok(first.root_time + (node_now - first.node_time));
        }
        Err(Error::NotInitialized("no synchronization message ingested".into()))
    }
}

/// Bounded sliding-window regression of root time on node time.
///
/// With one pair the mapping passes through at unit rate; with two or more
/// the window is refit by ordinary least squares. `fitted_skew` stores the
/// fitted slope minus one.
#[derive(Debug, Clone)]
pub struct RegressionTable {
    window: VecDeque<TimestampPair>,
    capacity: usize,
    fitted_skew: f64,
    fitted_offset: f64,
    /// Centered fit parameters for numerically stable projection.
    node_center: f64,
    root_center: f64,
}

impl RegressionTable {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("regression window capacity must be >= 1".into()));
        }
        Ok(RegressionTable {
            window: VecDeque::with_capacity(capacity),
            capacity,
            fitted_skew: 0.0,
            fitted_offset: 0.0,
            node_center: 0.0,
            root_center: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn fitted_skew(&self) -> f64 {
        self.fitted_skew
    }

    pub fn fitted_offset(&self) -> f64 {
        self.fitted_offset
    }

    /// Appends a pair (evicting the oldest at capacity) and refits.
    pub fn update(&mut self, pair: TimestampPair) -> Result<()> {
        if let Some(last) = self.window.back() {
            if pair.k <= last.k {
                return Err(Error::OutOfOrder(format!(
                    "window pairs must arrive in order, got k={} after k={}",
                    pair.k, last.k
                )));
            }
        }
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(pair);
        self.refit();
        Ok(())
    }

    fn refit(&mut self) {
        let n = self.window.len();
        if n == 1 {
            let p = self.window[0];
            self.fitted_skew = 0.0;
            self.node_center = p.node_time;
            self.root_center = p.root_time;
            self.fitted_offset = p.root_time - p.node_time;
            return;
        }
        // Center on the window means; the magnitudes of raw timestamps would
        // otherwise swamp the ppm-scale slope deviation.
        let base = self.window[0];
        let inv_n = 1.0 / n as f64;
        let mut mean_x = 0.0;
        let mut mean_y = 0.0;
        for p in &self.window {
            mean_x += (p.node_time - base.node_time) * inv_n;
            mean_y += (p.root_time - base.root_time) * inv_n;
        }
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for p in &self.window {
            let dx = (p.node_time - base.node_time) - mean_x;
            let dy = (p.root_time - base.root_time) - mean_y;
            sxx += dx * dx;
            sxy += dx * dy;
        }
        let beta = if sxx > 0.0 { sxy / sxx } else { 1.0 };
        self.node_center = base.node_time + mean_x;
        self.root_center = base.root_time + mean_y;
        self.fitted_skew = beta - 1.0;
        self.fitted_offset = self.root_center - beta * self.node_center;
    }

    /// Evaluates the fitted line at a node-clock instant.
    pub fn project(&self, node_now: f64) -> Result<f64> {
        if self.window.is_empty() {
            return Err(Error::NotInitialized("regression table is empty".into()));
        }
        Ok(self.root_center + (1.0 + self.fitted_skew) * (node_now - self.node_center))
    }
}

/// Noise statistics of the measurement and state-transition models: the
/// mean and variance of the timestamp-derived measurement error, and of the
/// per-period relative-drift step. The variances seed the filter's `r` and
/// `q`; the means default to zero because known biases are compensated
/// before pairs reach the filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementModel {
    pub mu_q: f64,
    pub e_q_var: f64,
    pub mu_rd: f64,
    pub e_rd_var: f64,
}

impl MeasurementModel {
    pub fn validate(&self) -> Result<()> {
        if self.e_q_var < 0.0 || self.e_rd_var < 0.0 {
            return Err(Error::Config("measurement model variances must be >= 0".into()));
        }
        Ok(())
    }

    /// Derives the model from a clock noise profile and sync period.
    ///
    /// The measurement variance follows from the per-event timestamp noise
    /// (two independent endpoints per interval), normalized by the node
    /// interval; capture quantization contributes one tick's uniform
    /// variance. The drift-step variance integrates the rate walk over one
    /// period.
    pub fn from_noise_profile(
        params: &ClockParams,
        capture: Option<&CaptureConfig>,
        sync_period: f64,
    ) -> Self {
        let mut ts_var = params.timestamp_noise_variance();
        if let Some(cap) = capture {
            let tick = if cap.double_sampling { 0.5 * cap.tick() } else { cap.tick() };
            ts_var += tick * tick / 12.0;
        }
        let dn = sync_period * (1.0 + params.phi);
        let e_q_var = 2.0 * ts_var / (dn * dn);
        let e_rd_var = params.rate_walk.variance() * sync_period;
        MeasurementModel { mu_q: 0.0, e_q_var, mu_rd: 0.0, e_rd_var }
    }

    /// `(q, r)` covariances implied by the model.
    pub fn noise_covariances(&self) -> (f64, f64) {
        (self.e_rd_var, self.e_q_var)
    }
}

/// Relative tolerance below which two candidate objectives count as tied.
const TRAIN_TIE_REL: f64 = 1e-9;

/// Selects the `(q, r)` candidate minimizing the mean absolute sync error
/// over held-out points: every pair past the filter's initialization is
/// first projected (a query the filter has not trained on), then ingested.
/// Ties go to the smaller `q`, then the smaller `r`.
pub fn train_covariances(
    traces: &[Vec<TimestampPair>],
    candidate_grid: &[(f64, f64)],
) -> Result<(f64, f64)> {
    if candidate_grid.is_empty() {
        return Err(Error::Config("candidate grid must be nonempty".into()));
    }
    if traces.is_empty() {
        return Err(Error::Config("training needs at least one trace".into()));
    }

    let mut best: Option<(f64, f64, f64)> = None; // (objective, q, r)
    for &(q, r) in candidate_grid {
        let mut total = 0.0;
        let mut count = 0usize;
        for trace in traces {
            let mut filter = LwKalman::new(q, r)?;
            for pair in trace {
                if filter.state().is_some() {
                    let est = filter.project(pair.node_time)?;
                    total += sync_error(pair.root_time, est).abs();
                    count += 1;
                }
                filter.ingest_sync(*pair)?;
            }
        }
        if count == 0 {
            return Err(Error::Config("traces too short to evaluate candidates".into()));
        }
        let objective = total / count as f64;
        best = Some(match best {
            None => (objective, q, r),
            Some((b_obj, b_q, b_r)) => {
                let tol = b_obj.abs().max(objective.abs()) * TRAIN_TIE_REL;
                if objective + tol < b_obj {
                    (objective, q, r)
                } else if objective <= b_obj + tol && (q, r) < (b_q, b_r) {
                    (b_obj.min(objective), q, r)
                } else {
                    (b_obj, b_q, b_r)
                }
            }
        });
    }
    let (_, q, r) = best.expect("grid is nonempty");
    Ok((q, r))
}

/// A logarithmic grid of `(q, r)` candidates, `n` points per axis.
pub fn log_grid(q_range: (f64, f64), r_range: (f64, f64), n: usize) -> Result<Vec<(f64, f64)>> {
    if n < 1 {
        return Err(Error::Config("grid needs at least one point per axis".into()));
    }
    for (lo, hi) in [q_range, r_range] {
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config(format!("grid range must satisfy 0 < lo <= hi, got ({lo}, {hi})")));
        }
    }
    let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
        if n == 1 {
            return vec![lo];
        }
        let step = (hi / lo).ln() / (n - 1) as f64;
        (0..n).map(|i| lo * (step * i as f64).exp()).collect()
    };
    let qs = axis(q_range);
    let rs = axis(r_range);
    let mut grid = Vec::with_capacity(n * n);
    for &q in &qs {
        for &r in &rs {
            grid.push((q, r));
        }
    }
    Ok(grid)
}
