//! Run metrics, F-score and the summary CSV.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn record(&mut self, predicted_positive: bool, truly_positive: bool) {
        match (predicted_positive, truly_positive) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Capture-to-final-verdict latency, in verdict order.
    pub latencies: Vec<f64>,
    pub upload_bytes: u64,
    pub confusion: Confusion,
    /// Per device `(time, queue length)` after every change.
    pub queue_series: Vec<Vec<(f64, u32)>>,
}

impl RunMetrics {
    pub fn new(devices: usize) -> Self {
        RunMetrics {
            queue_series: vec![Vec::new(); devices],
            ..Default::default()
        }
    }

    pub fn finalized(&self) -> usize {
        self.latencies.len()
    }

    pub fn mean_latency(&self) -> Option<f64> {
        mean(&self.latencies)
    }

    /// Population variance of the per-package latency.
    pub fn latency_variance(&self) -> Option<f64> {
        variance(&self.latencies)
    }
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn variance(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    Some(xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FScoreParams {
    pub lambda: f64,
}

impl Default for FScoreParams {
    fn default() -> Self {
        FScoreParams { lambda: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FScore {
    pub value: f64,
    /// Set when precision or recall is undefined (or both are zero); the
    /// value is then reported as 0.
    pub degenerate: bool,
}

/// `F_lambda = (1 + lambda^2) p r / (lambda^2 p + r)`.
pub fn fscore_from(c: &Confusion, params: &FScoreParams) -> FScore {
    let zero = FScore {
        value: 0.0,
        degenerate: true,
    };
    if c.tp + c.fn_ == 0 || c.tp + c.fp == 0 {
        return zero;
    }
    let p = c.tp as f64 / (c.tp + c.fp) as f64;
    let r = c.tp as f64 / (c.tp + c.fn_) as f64;
    let l2 = params.lambda * params.lambda;
    let denom = l2 * p + r;
    if denom == 0.0 {
        return zero;
    }
    FScore {
        value: (1.0 + l2) * p * r / denom,
        degenerate: false,
    }
}

pub fn fscore(metrics: &RunMetrics, params: &FScoreParams) -> FScore {
    fscore_from(&metrics.confusion, params)
}

pub const SUMMARY_HEADER: &str = "scheme,mean_latency_s,var_latency_s2,bandwidth_bytes,f2";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheme: String,
    pub mean_latency_s: Option<f64>,
    pub var_latency_s2: Option<f64>,
    pub bandwidth_bytes: f64,
    pub f2: f64,
}

impl SummaryRow {
    pub fn from_run(scheme: &str, m: &RunMetrics) -> Self {
        SummaryRow {
            scheme: scheme.to_string(),
            mean_latency_s: m.mean_latency(),
            var_latency_s2: m.latency_variance(),
            bandwidth_bytes: m.upload_bytes as f64,
            f2: fscore(m, &FScoreParams::default()).value,
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Summary table; absent latencies are written as empty fields.
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.scheme,
            opt(r.mean_latency_s),
            opt(r.var_latency_s2),
            r.bandwidth_bytes,
            r.f2
        );
    }
    out
}
