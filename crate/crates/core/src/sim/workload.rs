//! Package generation. The whole workload is realised before the event loop
//! starts, so every scheme sees the same packages for a given seed.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::config::{ExperimentConfig, WorkloadMode};
use super::SimError;
use crate::classify::ImagePackage;
use crate::vision::{detect, read_pnm, BoundingBox};

const WORKLOAD_WORD: u64 = 0x776f_726b;

/// A package plus where and when detection handed it over.
#[derive(Debug, Clone, PartialEq)]
pub struct Arrival {
    pub package: ImagePackage,
    pub origin: usize,
    pub detected_at: f64,
}

pub fn generate(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Arrival>, SimError> {
    match cfg.workload.mode {
        WorkloadMode::Synthetic => Ok(synthetic(cfg, seed)),
        WorkloadMode::FrameReplay => frame_replay(cfg),
    }
}

fn ticks(cfg: &ExperimentConfig) -> impl Iterator<Item = (u64, f64)> + '_ {
    let s = cfg.sample_interval();
    (0u64..)
        .map(move |k| (k, k as f64 * s))
        .take_while(move |&(_, t)| t < cfg.duration_s)
}

fn edge_of(cfg: &ExperimentConfig) -> HashMap<u32, usize> {
    cfg.topology
        .cameras
        .iter()
        .map(|c| (c.camera_id, c.edge))
        .collect()
}

fn synthetic(cfg: &ExperimentConfig, seed: u64) -> Vec<Arrival> {
    let w = &cfg.workload;
    let s = cfg.sample_interval();
    let edges = edge_of(cfg);
    let mut schedules: Vec<_> = w.arrivals.iter().collect();
    schedules.sort_by_key(|a| a.camera_id);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ WORKLOAD_WORD.rotate_left(32));
    let mut out = Vec::new();
    for (_, t) in ticks(cfg) {
        for a in &schedules {
            let lambda = a.rate_at(t) * s;
            if lambda <= 0.0 {
                continue;
            }
            let n = Poisson::new(lambda).expect("positive finite rate").sample(&mut rng) as u64;
            for _ in 0..n {
                let positive = rng.random_bool(w.positive_fraction);
                let jitter = if w.byte_jitter > 0.0 {
                    rng.random_range(-w.byte_jitter..=w.byte_jitter)
                } else {
                    0.0
                };
                let bytes = (w.byte_mean + jitter).round().max(1.0) as u64;
                let label = if positive { &cfg.query_class } else { &w.negative_label };
                out.push(Arrival {
                    package: ImagePackage {
                        package_id: out.len() as u64,
                        camera_id: a.camera_id,
                        capture_time: t,
                        bbox: BoundingBox { x: 0, y: 0, w: 0, h: 0 },
                        byte_size: bytes,
                        true_label: label.clone(),
                    },
                    origin: edges[&a.camera_id],
                    detected_at: t + cfg.topology.detect_time_s,
                });
            }
        }
    }
    out
}

fn frame_path(dir: &Path, tick: u64, idx: usize) -> Result<std::path::PathBuf, SimError> {
    for ext in ["pgm", "ppm"] {
        let p = dir.join(format!("{tick:06}_{idx}.{ext}"));
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(SimError::Config(format!(
        "missing frame {}",
        dir.join(format!("{tick:06}_{idx}.pgm|ppm")).display()
    )))
}

/// `tick,index,label` rows; boxes without a row get the negative label.
fn read_labels(path: &Path) -> Result<BTreeMap<(u64, usize), String>, SimError> {
    let mut out = BTreeMap::new();
    if !path.is_file() {
        return Ok(out);
    }
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
    for row in rdr.deserialize::<(u64, usize, String)>() {
        let (tick, idx, label) =
            row.map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        out.insert((tick, idx), label);
    }
    Ok(out)
}

/// Frames live under `frames_dir/<camera_id>/<tick>_<0|1|2>.pgm` (or `.ppm`):
/// the previous, current and next frame around each sample tick.
fn frame_replay(cfg: &ExperimentConfig) -> Result<Vec<Arrival>, SimError> {
    let root = cfg
        .workload
        .frames_dir
        .as_deref()
        .ok_or_else(|| SimError::Config("frame_replay needs workload.frames_dir".into()))?;
    let det = cfg.detection_config();
    let s = cfg.sample_interval();
    let mut cams = cfg.topology.cameras.clone();
    cams.sort_by_key(|c| c.camera_id);
    let labels = cams
        .iter()
        .map(|c| read_labels(&root.join(c.camera_id.to_string()).join("labels.csv")))
        .collect::<Result<Vec<_>, _>>()?;

    let mut out = Vec::new();
    for (tick, t) in ticks(cfg) {
        for (cam, labels) in cams.iter().zip(&labels) {
            let dir = root.join(cam.camera_id.to_string());
            let mut frames = Vec::with_capacity(3);
            for idx in 0..3 {
                frames.push(read_pnm(&frame_path(&dir, tick, idx)?)?);
            }
            let cur = &frames[1];
            for (i, b) in detect(&frames[0], cur, &frames[2], &det)?.into_iter().enumerate() {
                let label = labels
                    .get(&(tick, i))
                    .cloned()
                    .unwrap_or_else(|| cfg.workload.negative_label.clone());
                out.push(Arrival {
                    package: ImagePackage {
                        package_id: out.len() as u64,
                        camera_id: cam.camera_id,
                        capture_time: t,
                        bbox: b,
                        byte_size: (b.area() * cur.channels) as u64,
                        true_label: label,
                    },
                    origin: cam.edge,
                    // the next frame is needed before detection can finish
                    detected_at: t + s + cfg.topology.detect_time_s,
                });
            }
        }
    }
    Ok(out)
}
