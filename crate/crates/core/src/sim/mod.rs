//! Discrete-event simulation of cameras, edge devices, links and the cloud.
//!
//! Events are totally ordered by `(time, insertion sequence)`, so a run is a
//! pure function of its config and seed.

pub mod config;
pub mod metrics;
pub mod trace;
pub mod workload;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand_distr::{Distribution, StandardNormal};
use serde_json::json;
use thiserror::Error;

use crate::classify::{
    cloud_classify, decide, edge_classify, package_rng, ClassifyError, Decision,
    SyntheticClassifierSpec,
};
use crate::schedule::{dispatch, update_beta, EdgeState, ParameterStore, ScheduleError};
use crate::vision::VisionError;

pub use config::{ExperimentConfig, Scheme};
pub use metrics::{fscore, Confusion, FScore, FScoreParams, RunMetrics, SummaryRow};
pub use trace::{replay, EventKind, EventTrace, TraceRecord};
use workload::Arrival;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Vision(#[from] VisionError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error("trace: {0}")]
    Trace(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SimError {
    /// Errors caused by bad input files rather than by the run itself.
    pub fn is_config(&self) -> bool {
        matches!(self, SimError::Config(_) | SimError::Vision(_))
    }
}

const SERVICE_WORD: u64 = 0x7365_7276;

#[derive(Debug, Clone, Copy)]
enum Event {
    Detected(usize),
    Arrive { dev: usize, idx: usize },
    InferDone { dev: usize, idx: usize, service: f64 },
    UploadBegin { dev: usize, idx: usize },
    UploadEnd { idx: usize },
    CloudDone { idx: usize },
}

struct Scheduled {
    t: f64,
    seq: u64,
    ev: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .t
            .total_cmp(&self.t)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub trace: EventTrace,
    pub metrics: RunMetrics,
}

struct Edge {
    queue: VecDeque<usize>,
    busy: bool,
    uplink_free_at: f64,
}

impl Edge {
    fn load(&self) -> u32 {
        (self.queue.len() + self.busy as usize) as u32
    }
}

struct Sim<'a> {
    cfg: &'a ExperimentConfig,
    scheme: Scheme,
    seed: u64,
    arrivals: Vec<Arrival>,
    classifiers: Vec<SyntheticClassifierSpec>,
    heap: BinaryHeap<Scheduled>,
    seq: u64,
    now: f64,
    edges: Vec<Edge>,
    store: ParameterStore,
    cloud_queue: VecDeque<usize>,
    cloud_busy: usize,
    trace: EventTrace,
    metrics: RunMetrics,
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a ExperimentConfig, scheme: Scheme, seed: u64) -> Result<Self, SimError> {
        let arrivals = workload::generate(cfg, seed)?;
        let n = cfg.topology.edges.len();
        let a0 = cfg.scheme.initial_alpha;
        let initial = cfg
            .topology
            .edges
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let t0 = e.initial_t.unwrap_or(cfg.estimator.initial_t);
                EdgeState::new(i, t0, a0, update_beta(a0, &cfg.controller))
            })
            .collect();
        let store = ParameterStore::new(initial, cfg.estimator, cfg.topology.propagation_delay_s)?;
        // confidences depend on the run seed and the package only
        let classifiers = cfg
            .topology
            .edges
            .iter()
            .map(|e| SyntheticClassifierSpec {
                seed: e.classifier.seed.wrapping_add(seed),
                ..e.classifier
            })
            .collect();
        let mut sim = Sim {
            cfg,
            scheme,
            seed,
            classifiers,
            heap: BinaryHeap::new(),
            seq: 0,
            now: 0.0,
            edges: (0..n)
                .map(|_| Edge {
                    queue: VecDeque::new(),
                    busy: false,
                    uplink_free_at: 0.0,
                })
                .collect(),
            store,
            cloud_queue: VecDeque::new(),
            cloud_busy: 0,
            trace: EventTrace::default(),
            metrics: RunMetrics::new(n),
            arrivals: Vec::new(),
        };
        for (i, a) in arrivals.iter().enumerate() {
            sim.schedule(a.detected_at, Event::Detected(i));
        }
        sim.arrivals = arrivals;
        Ok(sim)
    }

    fn schedule(&mut self, t: f64, ev: Event) {
        self.seq += 1;
        self.heap.push(Scheduled { t, seq: self.seq, ev });
    }

    fn pkg_id(&self, idx: usize) -> u64 {
        self.arrivals[idx].package.package_id
    }

    fn record(&mut self, kind: EventKind, idx: usize, dev: Option<usize>, extra: serde_json::Value) {
        let pkg = self.pkg_id(idx);
        self.trace.push(self.now, kind, pkg, dev, extra);
    }

    fn run(mut self) -> Result<RunOutput, SimError> {
        while let Some(Scheduled { t, ev, .. }) = self.heap.pop() {
            self.now = t;
            match ev {
                Event::Detected(idx) => self.on_detected(idx)?,
                Event::Arrive { dev, idx } => self.on_arrive(dev, idx)?,
                Event::InferDone { dev, idx, service } => self.on_infer_done(dev, idx, service)?,
                Event::UploadBegin { dev, idx } => self.on_upload_begin(dev, idx),
                Event::UploadEnd { idx } => self.on_upload_end(idx),
                Event::CloudDone { idx } => self.on_cloud_done(idx),
            }
        }
        Ok(RunOutput {
            trace: self.trace,
            metrics: self.metrics,
        })
    }

    fn on_detected(&mut self, idx: usize) -> Result<(), SimError> {
        let a = &self.arrivals[idx];
        let origin = a.origin;
        let truth = a.package.true_label == self.cfg.query_class;
        let extra = json!({
            "camera": a.package.camera_id,
            "capture_time": a.package.capture_time,
            "bytes": a.package.byte_size,
            "truth": truth,
        });
        self.record(EventKind::Detect, idx, Some(origin), extra);

        let target = match self.scheme {
            Scheme::CloudOnly => {
                self.record(EventKind::Dispatch, idx, None, json!({ "origin": origin, "target": "cloud" }));
                self.start_upload(origin, idx);
                return Ok(());
            }
            Scheme::EdgeOnly | Scheme::SurveiledgeFixed => origin,
            Scheme::Surveiledge => {
                self.store.advance_to(self.now);
                dispatch(self.store.view(origin)?)?
            }
        };
        self.record(EventKind::Dispatch, idx, Some(target), json!({ "origin": origin, "target": target }));
        let transfer = self.edge_transfer_time(idx, origin, target);
        if transfer > 0.0 {
            self.schedule(self.now + transfer, Event::Arrive { dev: target, idx });
            Ok(())
        } else {
            self.on_arrive(target, idx)
        }
    }

    fn edge_transfer_time(&self, idx: usize, from: usize, to: usize) -> f64 {
        if from == to {
            return 0.0;
        }
        let topo = &self.cfg.topology;
        let tx = topo
            .edge_link_bandwidth_bps
            .map(|bw| self.arrivals[idx].package.byte_size as f64 / bw)
            .unwrap_or(0.0);
        topo.edge_link_latency_s + tx
    }

    fn on_arrive(&mut self, dev: usize, idx: usize) -> Result<(), SimError> {
        self.edges[dev].queue.push_back(idx);
        let q = self.edges[dev].load();
        self.record(EventKind::Enqueue, idx, Some(dev), json!({ "q": q }));
        self.metrics.queue_series[dev].push((self.now, q));
        if self.scheme == Scheme::Surveiledge {
            self.store
                .on_queue_change(self.now, dev, q, &self.cfg.controller)?;
        }
        if !self.edges[dev].busy {
            self.start_inference(dev);
        }
        Ok(())
    }

    fn start_inference(&mut self, dev: usize) {
        let Some(idx) = self.edges[dev].queue.pop_front() else {
            return;
        };
        self.edges[dev].busy = true;
        let svc = self.cfg.topology.edges[dev].service;
        let z: f64 = StandardNormal.sample(&mut package_rng(self.seed, self.pkg_id(idx), SERVICE_WORD));
        let service = svc.gamma + (svc.mu + svc.sigma * z).exp();
        self.record(EventKind::InferStart, idx, Some(dev), json!({ "service": service }));
        self.schedule(self.now + service, Event::InferDone { dev, idx, service });
    }

    fn on_infer_done(&mut self, dev: usize, idx: usize, service: f64) -> Result<(), SimError> {
        self.edges[dev].busy = false;
        let q = self.edges[dev].load();
        let f = edge_classify(&self.arrivals[idx].package, &self.cfg.query_class, &self.classifiers[dev])?;
        let sc = &self.cfg.scheme;
        let (alpha, beta) = match self.scheme {
            Scheme::Surveiledge => {
                let s = self.store.owned(dev)?;
                (s.alpha, s.beta)
            }
            Scheme::SurveiledgeFixed => (sc.fixed_alpha, sc.fixed_beta),
            Scheme::EdgeOnly => (sc.edge_only_cutoff, sc.edge_only_cutoff),
            Scheme::CloudOnly => unreachable!("cloud_only never infers on an edge"),
        };
        let decision = if self.scheme == Scheme::EdgeOnly {
            if f.value() > alpha {
                Decision::Positive
            } else {
                Decision::Negative
            }
        } else {
            decide(f, alpha, beta)?.decision
        };

        let mut extra = json!({
            "f": f.value(),
            "decision": decision.as_str(),
            "service": service,
            "q": q,
            "alpha": alpha,
            "beta": beta,
        });
        if self.scheme == Scheme::Surveiledge {
            let out = self
                .store
                .on_feedback(self.now, dev, service, q, &self.cfg.controller)?;
            extra["t_est"] = json!(out.state.est_infer_time);
            extra["next_alpha"] = json!(out.state.alpha);
            extra["next_beta"] = json!(out.state.beta);
            if let Some(fit) = out.refit {
                extra["refit"] = json!({
                    "gamma": fit.gamma,
                    "mu": fit.mu,
                    "sigma": fit.sigma,
                    "root_found": fit.root_found,
                });
            }
        }
        self.record(EventKind::InferEnd, idx, Some(dev), extra);
        self.metrics.queue_series[dev].push((self.now, q));

        match decision {
            Decision::Uncertain => self.start_upload(dev, idx),
            d => self.finalize(idx, Some(dev), d == Decision::Positive, "edge"),
        }
        self.start_inference(dev);
        Ok(())
    }

    /// FIFO uplink: transmission occupies the link, propagation does not.
    fn start_upload(&mut self, dev: usize, idx: usize) {
        let start = self.now.max(self.edges[dev].uplink_free_at);
        let tx = self.arrivals[idx].package.byte_size as f64 / self.cfg.topology.edges[dev].uplink_bandwidth_bps;
        self.edges[dev].uplink_free_at = start + tx;
        if start > self.now {
            self.schedule(start, Event::UploadBegin { dev, idx });
        } else {
            self.on_upload_begin(dev, idx);
        }
    }

    fn on_upload_begin(&mut self, dev: usize, idx: usize) {
        let link = &self.cfg.topology.edges[dev];
        let tx = self.arrivals[idx].package.byte_size as f64 / link.uplink_bandwidth_bps;
        let done = self.now + tx + link.uplink_latency_s;
        self.record(EventKind::UploadStart, idx, Some(dev), json!({}));
        self.schedule(done, Event::UploadEnd { idx });
    }

    fn on_upload_end(&mut self, idx: usize) {
        let bytes = self.arrivals[idx].package.byte_size;
        self.record(EventKind::UploadEnd, idx, None, json!({ "bytes": bytes }));
        self.metrics.upload_bytes += bytes;
        self.cloud_queue.push_back(idx);
        self.start_cloud();
    }

    fn start_cloud(&mut self) {
        while self.cloud_busy < self.cfg.topology.cloud_workers {
            let Some(idx) = self.cloud_queue.pop_front() else {
                return;
            };
            self.cloud_busy += 1;
            self.schedule(self.now + self.cfg.topology.cloud_infer_time_s, Event::CloudDone { idx });
        }
    }

    fn on_cloud_done(&mut self, idx: usize) {
        self.cloud_busy -= 1;
        let v = cloud_classify(&self.arrivals[idx].package, &self.cfg.query_class);
        self.finalize(idx, None, v.decision == Decision::Positive, "cloud");
        self.start_cloud();
    }

    fn finalize(&mut self, idx: usize, dev: Option<usize>, positive: bool, source: &str) {
        let a = &self.arrivals[idx];
        let truth = a.package.true_label == self.cfg.query_class;
        let latency = self.now - a.package.capture_time;
        let decision = if positive { "positive" } else { "negative" };
        self.record(EventKind::Verdict, idx, dev, json!({ "decision": decision, "source": source }));
        self.metrics.latencies.push(latency);
        self.metrics.confusion.record(positive, truth);
    }
}

/// Runs `cfg` under its configured scheme and seed.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, SimError> {
    run_with(cfg, cfg.scheme.scheme, cfg.seed)
}

pub fn run_with(cfg: &ExperimentConfig, scheme: Scheme, seed: u64) -> Result<RunOutput, SimError> {
    cfg.validate()?;
    Sim::new(cfg, scheme, seed)?.run()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    /// One row per scheme, in [`Scheme::ALL`] order.
    pub rows: Vec<SummaryRow>,
    pub metrics: Vec<RunMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// Aggregate over all seeds: latencies pooled, bytes averaged per seed,
    /// F-score on the summed confusion counts.
    pub rows: Vec<SummaryRow>,
    pub per_seed: Vec<SeedResult>,
}

/// Runs every scheme on every seed, with up to `jobs` runs in parallel.
pub fn compare_schemes(cfg: &ExperimentConfig, seeds: &[u64], jobs: usize) -> Result<Comparison, SimError> {
    if seeds.is_empty() {
        return Err(SimError::Config("compare needs at least one seed".into()));
    }
    cfg.validate()?;
    let tasks: Vec<(u64, Scheme)> = seeds
        .iter()
        .flat_map(|&s| Scheme::ALL.into_iter().map(move |sc| (s, sc)))
        .collect();
    let jobs = jobs.clamp(1, tasks.len());
    let mut results: Vec<Option<Result<RunMetrics, SimError>>> = (0..tasks.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunk = tasks.len().div_ceil(jobs);
        for (slots, work) in results.chunks_mut(chunk).zip(tasks.chunks(chunk)) {
            scope.spawn(move || {
                for (slot, &(seed, scheme)) in slots.iter_mut().zip(work) {
                    *slot = Some(run_with(cfg, scheme, seed).map(|o| o.metrics));
                }
            });
        }
    });
    let mut metrics = results.into_iter().map(|r| r.expect("every task ran"));

    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut ms = Vec::with_capacity(Scheme::ALL.len());
        for _ in Scheme::ALL {
            ms.push(metrics.next().expect("one result per task")?);
        }
        let rows = Scheme::ALL
            .iter()
            .zip(&ms)
            .map(|(sc, m)| SummaryRow::from_run(sc.as_str(), m))
            .collect();
        per_seed.push(SeedResult {
            seed,
            rows,
            metrics: ms,
        });
    }

    let rows = Scheme::ALL
        .iter()
        .enumerate()
        .map(|(i, sc)| {
            let mut pooled = RunMetrics::new(0);
            let mut bytes = 0.0;
            for r in &per_seed {
                pooled.latencies.extend_from_slice(&r.metrics[i].latencies);
                pooled.confusion.merge(&r.metrics[i].confusion);
                bytes += r.metrics[i].upload_bytes as f64;
            }
            SummaryRow {
                bandwidth_bytes: bytes / per_seed.len() as f64,
                ..SummaryRow::from_run(sc.as_str(), &pooled)
            }
        })
        .collect();
    Ok(Comparison { rows, per_seed })
}
