//! Task allocation and adaptive thresholds over a replicated parameter store.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimate::{EstimateError, EstimatorConfig, LatencyEstimator, LognormalFit};

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("no edge devices to dispatch to")]
    NoDevices,
    #[error("unknown device {0}")]
    UnknownDevice(usize),
    #[error("invalid controller config: {0}")]
    Config(String),
    #[error("invalid edge state: {0}")]
    State(String),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
}

pub type Result<T> = std::result::Result<T, ScheduleError>;

pub const ALPHA_MIN: f64 = 0.5;
pub const ALPHA_MAX: f64 = 1.0;
/// Values this close to a clamp bound are snapped onto it so accumulated
/// rounding cannot leave alpha a few ulps off the bound.
const BOUND_SNAP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeState {
    pub device_id: usize,
    pub queue_len: u32,
    pub est_infer_time: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl EdgeState {
    pub fn new(device_id: usize, est_infer_time: f64, alpha: f64, beta: f64) -> Self {
        EdgeState {
            device_id,
            queue_len: 0,
            est_infer_time,
            alpha,
            beta,
        }
    }

    /// Expected wait for a new arrival: `Q * t`.
    pub fn load(&self) -> f64 {
        self.queue_len as f64 * self.est_infer_time
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.est_infer_time > 0.0 && self.est_infer_time.is_finite()) {
            return Err(ScheduleError::State(format!(
                "device {}: est_infer_time {} must be positive",
                self.device_id, self.est_infer_time
            )));
        }
        if !(ALPHA_MIN..=ALPHA_MAX).contains(&self.alpha) || !(0.0..=0.5).contains(&self.beta) {
            return Err(ScheduleError::State(format!(
                "device {}: thresholds alpha={} beta={} out of range",
                self.device_id, self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub gamma1: f64,
    pub gamma2: f64,
    pub sample_interval_s: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            gamma1: 0.01,
            gamma2: 0.5,
            sample_interval_s: 1.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma1 > 0.0 && self.gamma1 < 1.0) {
            return Err(ScheduleError::Config(format!("gamma1 {} outside (0, 1)", self.gamma1)));
        }
        if !(self.gamma2 > 0.0 && self.gamma2 < 1.0) {
            return Err(ScheduleError::Config(format!("gamma2 {} outside (0, 1)", self.gamma2)));
        }
        if !(self.sample_interval_s > 0.0) {
            return Err(ScheduleError::Config(format!(
                "sample_interval_s {} must be positive",
                self.sample_interval_s
            )));
        }
        Ok(())
    }
}

/// Index of the device with the smallest `Q * t`; ties go to the lowest index.
pub fn dispatch(states: &[EdgeState]) -> Result<usize> {
    let mut iter = states.iter().enumerate();
    let (mut best, first) = iter.next().ok_or(ScheduleError::NoDevices)?;
    let mut best_load = first.load();
    for (i, s) in iter {
        let load = s.load();
        if load < best_load {
            best = i;
            best_load = load;
        }
    }
    Ok(best)
}

/// Moves alpha against the excess of the dispatched device's backlog over
/// the sampling interval, clamped to `[0.5, 1]`.
pub fn update_alpha(alpha_old: f64, queue_len: u32, infer_time: f64, cfg: &ControllerConfig) -> f64 {
    let raw = alpha_old - cfg.gamma1 * (queue_len as f64 * infer_time - cfg.sample_interval_s);
    let a = raw.clamp(ALPHA_MIN, ALPHA_MAX);
    if a - ALPHA_MIN < BOUND_SNAP {
        ALPHA_MIN
    } else if ALPHA_MAX - a < BOUND_SNAP {
        ALPHA_MAX
    } else {
        a
    }
}

pub fn update_beta(alpha_new: f64, cfg: &ControllerConfig) -> f64 {
    cfg.gamma2 * (1.0 - alpha_new)
}

/// One controller step on a device's own state.
pub fn controller_step(state: &mut EdgeState, cfg: &ControllerConfig) {
    state.alpha = update_alpha(state.alpha, state.queue_len, state.est_infer_time, cfg);
    state.beta = update_beta(state.alpha, cfg);
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PendingWrite {
    visible_at: f64,
    replica: usize,
    state: EdgeState,
    version: (f64, u64),
}

/// Per-device replicas of every device's parameters.
///
/// Each device owns its own row and is the only writer for it, so
/// last-writer-wins on the whole row is equivalent to last-writer-wins per
/// field. A write is visible on the owner's replica immediately and on every
/// other replica after `propagation_delay` seconds.
#[derive(Debug, Clone)]
pub struct ParameterStore {
    propagation_delay: f64,
    replicas: Vec<Vec<EdgeState>>,
    versions: Vec<Vec<(f64, u64)>>,
    pending: VecDeque<PendingWrite>,
    estimators: Vec<LatencyEstimator>,
    seq: u64,
    now: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackOutcome {
    pub state: EdgeState,
    pub refit: Option<LognormalFit>,
}

impl ParameterStore {
    pub fn new(
        initial: Vec<EdgeState>,
        estimator: EstimatorConfig,
        propagation_delay: f64,
    ) -> Result<Self> {
        if initial.is_empty() {
            return Err(ScheduleError::NoDevices);
        }
        if !(propagation_delay >= 0.0 && propagation_delay.is_finite()) {
            return Err(ScheduleError::Config(format!(
                "propagation_delay {propagation_delay} must be >= 0"
            )));
        }
        for (i, s) in initial.iter().enumerate() {
            s.validate()?;
            if s.device_id != i {
                return Err(ScheduleError::State(format!(
                    "device_id {} at position {i}",
                    s.device_id
                )));
            }
        }
        let n = initial.len();
        let estimators = initial
            .iter()
            .map(|s| {
                LatencyEstimator::new(EstimatorConfig {
                    initial_t: s.est_infer_time,
                    ..estimator
                })
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(ParameterStore {
            propagation_delay,
            replicas: vec![initial; n],
            versions: vec![vec![(f64::NEG_INFINITY, 0); n]; n],
            pending: VecDeque::new(),
            estimators,
            seq: 0,
            now: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.replicas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replicas.is_empty()
    }

    pub fn propagation_delay(&self) -> f64 {
        self.propagation_delay
    }

    /// Applies every write that has become visible by time `t`.
    pub fn advance_to(&mut self, t: f64) {
        if t > self.now {
            self.now = t;
        }
        while let Some(w) = self.pending.front() {
            if w.visible_at > self.now {
                break;
            }
            let w = self.pending.pop_front().unwrap();
            self.apply(w.replica, w.state, w.version);
        }
    }

    fn apply(&mut self, replica: usize, state: EdgeState, version: (f64, u64)) {
        let slot = &mut self.versions[replica][state.device_id];
        if version.0 > slot.0 || (version.0 == slot.0 && version.1 > slot.1) {
            *slot = version;
            self.replicas[replica][state.device_id] = state;
        }
    }

    /// Replica held by device `replica`, as of the last `advance_to`.
    pub fn view(&self, replica: usize) -> Result<&[EdgeState]> {
        self.replicas
            .get(replica)
            .map(Vec::as_slice)
            .ok_or(ScheduleError::UnknownDevice(replica))
    }

    /// The owner's own, always up-to-date, record.
    pub fn owned(&self, device: usize) -> Result<&EdgeState> {
        self.replicas
            .get(device)
            .map(|r| &r[device])
            .ok_or(ScheduleError::UnknownDevice(device))
    }

    pub fn estimator(&self, device: usize) -> Result<&LatencyEstimator> {
        self.estimators
            .get(device)
            .ok_or(ScheduleError::UnknownDevice(device))
    }

    /// True when every replica agrees and no write is in flight.
    pub fn converged(&self) -> bool {
        self.pending.is_empty() && self.replicas.windows(2).all(|w| w[0] == w[1])
    }

    pub fn pending_writes(&self) -> usize {
        self.pending.len()
    }

    fn publish(&mut self, t: f64, state: EdgeState) {
        self.advance_to(t);
        self.seq += 1;
        let version = (t, self.seq);
        let owner = state.device_id;
        self.apply(owner, state, version);
        for replica in 0..self.replicas.len() {
            if replica == owner {
                continue;
            }
            let write = PendingWrite {
                visible_at: t + self.propagation_delay,
                replica,
                state,
                version,
            };
            if self.propagation_delay == 0.0 {
                self.apply(replica, state, version);
            } else {
                self.pending.push_back(write);
            }
        }
    }

    /// Inference feedback from `device`: folds the observed latency into the
    /// device's estimate, records its new queue length, then re-derives its
    /// thresholds from the updated `(Q, t)`.
    pub fn on_feedback(
        &mut self,
        t: f64,
        device: usize,
        observed_t: f64,
        new_queue_len: u32,
        cfg: &ControllerConfig,
    ) -> Result<FeedbackOutcome> {
        let mut state = *self.owned(device)?;
        let obs = self.estimators[device].observe(observed_t)?;
        state.est_infer_time = obs.estimate;
        state.queue_len = new_queue_len;
        controller_step(&mut state, cfg);
        self.publish(t, state);
        Ok(FeedbackOutcome {
            state,
            refit: obs.refit,
        })
    }

    /// Queue-length change without a latency observation (an enqueue). The
    /// thresholds are re-derived as for feedback.
    pub fn on_queue_change(
        &mut self,
        t: f64,
        device: usize,
        new_queue_len: u32,
        cfg: &ControllerConfig,
    ) -> Result<EdgeState> {
        let mut state = *self.owned(device)?;
        state.queue_len = new_queue_len;
        controller_step(&mut state, cfg);
        self.publish(t, state);
        Ok(state)
    }
}
