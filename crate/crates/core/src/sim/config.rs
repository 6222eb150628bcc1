//! Experiment configuration (TOML).
//!
//! ```toml
//! seed = 1
//! duration_s = 600.0
//! query_class = "moped"
//!
//! [topology]
//! cloud_infer_time_s = 0.12
//! cameras = [{ camera_id = 0, edge = 0 }]
//!
//! [[topology.edges]]
//! uplink_latency_s = 0.1
//! uplink_bandwidth_bps = 2.0e6
//! service = { gamma = 0.2, mu = -2.0, sigma = 0.3 }
//!
//! [workload]
//! positive_fraction = 0.2
//! arrivals = [{ camera_id = 0, period_s = 120.0, schedule = [[0.0, 3.0], [60.0, 0.5]] }]
//!
//! [scheme]
//! scheme = "surveiledge"
//! ```
//!
//! Every section except `topology` may be omitted and falls back to defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::classify::{check_thresholds, SyntheticClassifierSpec};
use crate::estimate::EstimatorConfig;
use crate::schedule::ControllerConfig;
use crate::vision::DetectionConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Surveiledge,
    SurveiledgeFixed,
    EdgeOnly,
    CloudOnly,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::Surveiledge,
        Scheme::SurveiledgeFixed,
        Scheme::EdgeOnly,
        Scheme::CloudOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Surveiledge => "surveiledge",
            Scheme::SurveiledgeFixed => "surveiledge_fixed",
            Scheme::EdgeOnly => "edge_only",
            Scheme::CloudOnly => "cloud_only",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| SimError::Config(format!("unknown scheme `{s}`")))
    }
}

/// Three-parameter lognormal service time of an edge device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceTime {
    pub gamma: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl ServiceTime {
    pub fn mean(&self) -> f64 {
        self.gamma + (self.mu + self.sigma * self.sigma / 2.0).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub uplink_latency_s: f64,
    pub uplink_bandwidth_bps: f64,
    pub service: ServiceTime,
    #[serde(default)]
    pub classifier: SyntheticClassifierSpec,
    /// Starting estimate of the inference time; defaults to the estimator's
    /// `initial_t`.
    #[serde(default)]
    pub initial_t: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub camera_id: u32,
    pub edge: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub edges: Vec<EdgeSpec>,
    pub cameras: Vec<CameraSpec>,
    pub cloud_infer_time_s: f64,
    #[serde(default = "one")]
    pub cloud_workers: usize,
    /// Offload transfer between edges; zero by default.
    #[serde(default)]
    pub edge_link_latency_s: f64,
    #[serde(default)]
    pub edge_link_bandwidth_bps: Option<f64>,
    #[serde(default)]
    pub propagation_delay_s: f64,
    #[serde(default = "default_detect_time")]
    pub detect_time_s: f64,
}

fn one() -> usize {
    1
}

fn default_detect_time() -> f64 {
    0.02
}

/// Periodic piecewise-constant arrival rate of one camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalSchedule {
    pub camera_id: u32,
    pub period_s: f64,
    #[serde(default)]
    pub phase_s: f64,
    /// `(offset within the period, objects per second)`, sorted by offset,
    /// first offset 0.
    pub schedule: Vec<(f64, f64)>,
}

impl ArrivalSchedule {
    pub fn rate_at(&self, t: f64) -> f64 {
        let pos = (t + self.phase_s).rem_euclid(self.period_s);
        self.schedule
            .iter()
            .rev()
            .find(|(start, _)| *start <= pos)
            .map(|(_, r)| *r)
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadMode {
    #[default]
    Synthetic,
    FrameReplay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    pub mode: WorkloadMode,
    pub arrivals: Vec<ArrivalSchedule>,
    pub positive_fraction: f64,
    pub byte_mean: f64,
    /// Half-width of the uniform jitter around `byte_mean`.
    pub byte_jitter: f64,
    pub negative_label: String,
    pub frames_dir: Option<PathBuf>,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            mode: WorkloadMode::Synthetic,
            arrivals: Vec::new(),
            positive_fraction: 0.2,
            byte_mean: 100_000.0,
            byte_jitter: 20_000.0,
            negative_label: "other".into(),
            frames_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    pub fixed_alpha: f64,
    pub fixed_beta: f64,
    /// Edge-only verdicts: confidence strictly above this is positive.
    pub edge_only_cutoff: f64,
    pub initial_alpha: f64,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            scheme: Scheme::Surveiledge,
            fixed_alpha: 0.8,
            fixed_beta: 0.1,
            edge_only_cutoff: 0.5,
            initial_alpha: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default = "default_query")]
    pub query_class: String,
    pub topology: Topology,
    #[serde(default)]
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub scheme: SchemeConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub detection: DetectionConfig,
}

fn default_query() -> String {
    "moped".into()
}

fn positive(name: &str, v: f64) -> Result<(), SimError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(SimError::Config(format!("{name} must be positive, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<(), SimError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(SimError::Config(format!("{name} must be >= 0, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // relative frame directories resolve against the config file
        if let (Some(dir), Some(base)) = (cfg.workload.frames_dir.as_mut(), path.parent()) {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        Ok(cfg)
    }

    pub fn sample_interval(&self) -> f64 {
        self.controller.sample_interval_s
    }

    pub fn detection_config(&self) -> DetectionConfig {
        DetectionConfig {
            sample_interval_s: self.sample_interval(),
            ..self.detection
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let cfgerr = |e: &dyn std::fmt::Display| SimError::Config(e.to_string());
        positive("duration_s", self.duration_s)?;
        self.controller.validate().map_err(|e| cfgerr(&e))?;
        self.estimator.validate().map_err(|e| cfgerr(&e))?;
        let t = &self.topology;
        if t.edges.is_empty() {
            return Err(SimError::Config("topology needs at least one edge".into()));
        }
        positive("cloud_infer_time_s", t.cloud_infer_time_s)?;
        if t.cloud_workers == 0 {
            return Err(SimError::Config("cloud_workers must be >= 1".into()));
        }
        non_negative("edge_link_latency_s", t.edge_link_latency_s)?;
        if let Some(bw) = t.edge_link_bandwidth_bps {
            positive("edge_link_bandwidth_bps", bw)?;
        }
        non_negative("propagation_delay_s", t.propagation_delay_s)?;
        non_negative("detect_time_s", t.detect_time_s)?;
        for (i, e) in t.edges.iter().enumerate() {
            positive(&format!("edges[{i}].uplink_latency_s"), e.uplink_latency_s)?;
            positive(&format!("edges[{i}].uplink_bandwidth_bps"), e.uplink_bandwidth_bps)?;
            non_negative(&format!("edges[{i}].service.gamma"), e.service.gamma)?;
            non_negative(&format!("edges[{i}].service.sigma"), e.service.sigma)?;
            if !e.service.mu.is_finite() {
                return Err(SimError::Config(format!("edges[{i}].service.mu not finite")));
            }
            e.classifier.validate().map_err(|x| cfgerr(&x))?;
            if let Some(t0) = e.initial_t {
                positive(&format!("edges[{i}].initial_t"), t0)?;
            }
        }
        let mut ids = std::collections::BTreeSet::new();
        for c in &t.cameras {
            if c.edge >= t.edges.len() {
                return Err(SimError::Config(format!(
                    "camera {} attached to unknown edge {}",
                    c.camera_id, c.edge
                )));
            }
            if !ids.insert(c.camera_id) {
                return Err(SimError::Config(format!(
                    "camera {} attached more than once",
                    c.camera_id
                )));
            }
        }
        let w = &self.workload;
        if !(0.0..=1.0).contains(&w.positive_fraction) {
            return Err(SimError::Config("positive_fraction outside [0, 1]".into()));
        }
        positive("byte_mean", w.byte_mean)?;
        non_negative("byte_jitter", w.byte_jitter)?;
        if w.byte_jitter >= w.byte_mean {
            return Err(SimError::Config("byte_jitter must be < byte_mean".into()));
        }
        if w.negative_label == self.query_class {
            return Err(SimError::Config("negative_label equals query_class".into()));
        }
        for a in &w.arrivals {
            if !ids.contains(&a.camera_id) {
                return Err(SimError::Config(format!(
                    "arrival schedule for unknown camera {}",
                    a.camera_id
                )));
            }
            positive("period_s", a.period_s)?;
            if a.schedule.first().map(|s| s.0) != Some(0.0) {
                return Err(SimError::Config(format!(
                    "camera {}: schedule must start at offset 0",
                    a.camera_id
                )));
            }
            if a.schedule.windows(2).any(|p| p[1].0 <= p[0].0) {
                return Err(SimError::Config(format!(
                    "camera {}: schedule offsets must increase",
                    a.camera_id
                )));
            }
            if a.schedule.iter().any(|&(_, r)| !(r >= 0.0 && r.is_finite())) {
                return Err(SimError::Config(format!(
                    "camera {}: rates must be >= 0",
                    a.camera_id
                )));
            }
        }
        if w.mode == WorkloadMode::FrameReplay {
            if w.frames_dir.is_none() {
                return Err(SimError::Config("frame_replay needs workload.frames_dir".into()));
            }
            self.detection_config().validate().map_err(|e| cfgerr(&e))?;
        }
        let s = &self.scheme;
        check_thresholds(s.fixed_alpha, s.fixed_beta).map_err(|e| cfgerr(&e))?;
        if !(0.5..=1.0).contains(&s.initial_alpha) {
            return Err(SimError::Config("initial_alpha outside [0.5, 1]".into()));
        }
        if !(0.0..=1.0).contains(&s.edge_only_cutoff) {
            return Err(SimError::Config("edge_only_cutoff outside [0, 1]".into()));
        }
        Ok(())
    }
}
