//! Camera profiling and context clustering.
//!
//! Each camera is summarised by the relative frequency of the object classes
//! it observes. Cameras are grouped with Lloyd's K-Means over those
//! proportion vectors, and a cluster centroid (itself a proportion vector)
//! drives how negative training samples are drawn per class.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProfilingError {
    #[error("invalid k={k} for {n} profiles")]
    InvalidK { k: usize, n: usize },
    #[error("profile for camera {0} has no observations")]
    EmptyProfile(String),
    #[error("no non-query samples available")]
    EmptyPool,
    #[error("observations csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, ProfilingError>;

/// Class label -> fraction of observations.
pub type ProportionVector = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraProfile {
    pub camera_id: String,
    pub vector: ProportionVector,
    pub observation_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub centroids: Vec<ProportionVector>,
    pub membership: BTreeMap<String, usize>,
    /// Within-cluster sum of squares after each completed iteration.
    pub wcss_history: Vec<f64>,
    pub iterations: usize,
}

impl ClusterAssignment {
    pub fn wcss(&self) -> f64 {
        self.wcss_history.last().copied().unwrap_or(0.0)
    }
}

pub fn build_profile<S: AsRef<str>, L: AsRef<str>>(observations: &[(S, L)]) -> Vec<CameraProfile> {
    let mut counts: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    for (cam, label) in observations {
        *counts
            .entry(cam.as_ref())
            .or_default()
            .entry(label.as_ref())
            .or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(cam, per_label)| {
            let total: usize = per_label.values().sum();
            let vector = per_label
                .into_iter()
                .map(|(l, c)| (l.to_string(), c as f64 / total as f64))
                .collect();
            CameraProfile {
                camera_id: cam.to_string(),
                vector,
                observation_count: total,
            }
        })
        .collect()
}

/// Reads `camera_id,label` rows (header required).
pub fn read_observations<R: Read>(reader: R) -> Result<Vec<(String, String)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize::<(String, String)>() {
        out.push(row?);
    }
    Ok(out)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, sq_dist(p, &centroids[0]));
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn mean_of(points: &[Vec<f64>], members: &[usize], dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    for &i in members {
        for (acc, v) in m.iter_mut().zip(&points[i]) {
            *acc += v;
        }
    }
    let n = members.len() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// Sum of squared distances from each point to the centroid of its cluster.
pub fn wcss(points: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| sq_dist(p, &centroids[l]))
        .sum()
}

/// Dense view of a set of profiles over their shared, sorted vocabulary.
pub fn dense_vectors(profiles: &[CameraProfile]) -> (Vec<String>, Vec<Vec<f64>>) {
    let vocab: Vec<String> = profiles
        .iter()
        .flat_map(|p| p.vector.keys().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let points = profiles
        .iter()
        .map(|p| {
            vocab
                .iter()
                .map(|c| p.vector.get(c).copied().unwrap_or(0.0))
                .collect()
        })
        .collect();
    (vocab, points)
}

/// k-means++ seeding followed by Lloyd iterations.
///
/// Stops at an assignment fixed point or after `max_iters`. If a cluster
/// empties, its centroid is re-seeded with the point farthest from its own
/// centroid among clusters that still have at least two members; the donor
/// cluster's mean is then recomputed.
pub fn kmeans(
    profiles: &[CameraProfile],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<ClusterAssignment> {
    let n = profiles.len();
    if k == 0 || k > n {
        return Err(ProfilingError::InvalidK { k, n });
    }
    if let Some(p) = profiles.iter().find(|p| p.vector.is_empty()) {
        return Err(ProfilingError::EmptyProfile(p.camera_id.clone()));
    }
    let (vocab, points) = dense_vectors(profiles);
    let dim = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroids: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
    while centroids.len() < k {
        let d2: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = d2.iter().rposition(|&d| d > 0.0).unwrap_or(n - 1);
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && r < d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[pick].clone());
    }

    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        // update step
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &l) in labels.iter().enumerate() {
            members[l].push(i);
        }
        for j in 0..k {
            if !members[j].is_empty() {
                centroids[j] = mean_of(&points, &members[j], dim);
            }
        }
        while let Some(empty) = members.iter().position(|m| m.is_empty()) {
            let (donor, pos) = members
                .iter()
                .enumerate()
                .filter(|(_, m)| m.len() >= 2)
                .flat_map(|(c, m)| m.iter().enumerate().map(move |(pos, &i)| (c, pos, i)))
                .map(|(c, pos, i)| (c, pos, sq_dist(&points[i], &centroids[c])))
                .fold(None::<(usize, usize, f64)>, |best, cur| match best {
                    Some(b) if b.2 >= cur.2 => Some(b),
                    _ => Some(cur),
                })
                .map(|(c, pos, _)| (c, pos))
                .expect("k <= n leaves a cluster with two members");
            let point = members[donor].remove(pos);
            labels[point] = empty;
            members[empty].push(point);
            centroids[empty] = points[point].clone();
            centroids[donor] = mean_of(&points, &members[donor], dim);
        }
        iterations += 1;
        history.push(wcss(&points, &labels, &centroids));

        // assignment step; a point only moves on a strict improvement
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (best, d) = nearest(p, &centroids);
            if best != labels[i] && d < sq_dist(p, &centroids[labels[i]]) {
                labels[i] = best;
                changed = true;
            }
        }
        if !changed || iterations >= max_iters {
            break;
        }
    }

    let centroids = centroids
        .into_iter()
        .map(|c| vocab.iter().cloned().zip(c).collect())
        .collect();
    let membership = profiles
        .iter()
        .zip(&labels)
        .map(|(p, &l)| (p.camera_id.clone(), l))
        .collect();
    Ok(ClusterAssignment {
        k,
        centroids,
        membership,
        wcss_history: history,
        iterations,
    })
}

/// Largest-remainder apportionment of `n` items by `weights`.
/// Ties in the fractional part go to the earlier index.
///
/// Shares and remainders are snapped to a 1e-9 grid first, so weights whose
/// exact shares tie (or are whole) are not split apart by rounding noise.
pub fn largest_remainder(weights: &[f64], n: usize) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 || weights.is_empty() {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights
        .iter()
        .map(|w| {
            let e = w * n as f64 / total;
            if (e - e.round()).abs() <= 1e-9 * e.max(1.0) {
                e.round()
            } else {
                e
            }
        })
        .collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = quota.iter().sum();
    let key = |e: f64| ((e - e.floor()) * 1e9).round() as i64;
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| key(exact[b]).cmp(&key(exact[a])).then(a.cmp(&b)));
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        quota[i] += 1;
    }
    quota
}

/// Per-class quotas for negative-sample selection.
///
/// Weights are the cluster profile's entries over the non-query classes that
/// have samples in `pool`. A class whose quota exceeds its pool is capped and
/// the surplus is re-apportioned over the remaining classes. If every such
/// class has zero weight, classes are weighted uniformly.
pub fn negative_quotas(
    cluster_profile: &ProportionVector,
    query_class: &str,
    pool: &BTreeMap<String, Vec<String>>,
    n: usize,
) -> Result<BTreeMap<String, usize>> {
    let classes: Vec<&String> = pool
        .iter()
        .filter(|(c, ids)| c.as_str() != query_class && !ids.is_empty())
        .map(|(c, _)| c)
        .collect();
    if classes.is_empty() {
        return Err(ProfilingError::EmptyPool);
    }
    let available: usize = classes.iter().map(|c| pool[*c].len()).sum();
    if n >= available {
        return Ok(classes.iter().map(|c| ((*c).clone(), pool[*c].len())).collect());
    }
    let mut weights: Vec<f64> = classes
        .iter()
        .map(|c| cluster_profile.get(*c).copied().unwrap_or(0.0).max(0.0))
        .collect();
    if weights.iter().all(|&w| w == 0.0) {
        weights.iter_mut().for_each(|w| *w = 1.0);
    }

    let mut quota = vec![0usize; classes.len()];
    let mut open: Vec<bool> = vec![true; classes.len()];
    let mut remaining = n;
    while remaining > 0 {
        let w: Vec<f64> = weights
            .iter()
            .zip(&open)
            .map(|(&w, &o)| if o { w } else { 0.0 })
            .collect();
        if w.iter().all(|&x| x == 0.0) {
            // only zero-weight classes still have room
            for (i, o) in open.iter().enumerate() {
                if *o && weights[i] == 0.0 {
                    let take = remaining.min(pool[classes[i]].len() - quota[i]);
                    quota[i] += take;
                    remaining -= take;
                }
            }
            break;
        }
        let share = largest_remainder(&w, remaining);
        let mut overflow = 0;
        for i in 0..classes.len() {
            let cap = pool[classes[i]].len() - quota[i];
            let take = share[i].min(cap);
            quota[i] += take;
            overflow += share[i] - take;
            if quota[i] == pool[classes[i]].len() {
                open[i] = false;
            }
        }
        remaining = overflow;
    }
    Ok(classes
        .into_iter()
        .cloned()
        .zip(quota)
        .collect())
}

/// Draws negative samples class by class, uniformly without replacement
/// within each class. Output is grouped by class in label order.
pub fn select_negative_samples(
    cluster_profile: &ProportionVector,
    query_class: &str,
    pool: &BTreeMap<String, Vec<String>>,
    n: usize,
    seed: u64,
) -> Result<Vec<String>> {
    let quotas = negative_quotas(cluster_profile, query_class, pool, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for (class, q) in quotas {
        let ids = &pool[&class];
        let mut picks = index::sample(&mut rng, ids.len(), q).into_vec();
        picks.sort_unstable();
        out.extend(picks.into_iter().map(|i| ids[i].clone()));
    }
    Ok(out)
}
