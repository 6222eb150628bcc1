//! JSON-lines event trace and trace replay.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::metrics::RunMetrics;
use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Detect,
    Dispatch,
    Enqueue,
    InferStart,
    InferEnd,
    UploadStart,
    UploadEnd,
    Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub kind: EventKind,
    pub pkg: u64,
    /// Edge device index; `None` for events at the cloud.
    pub dev: Option<usize>,
    pub extra: Value,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventTrace {
    pub records: Vec<TraceRecord>,
}

impl EventTrace {
    pub fn push(&mut self, t: f64, kind: EventKind, pkg: u64, dev: Option<usize>, extra: Value) {
        self.records.push(TraceRecord {
            t,
            kind,
            pkg,
            dev,
            extra,
        });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(self.to_jsonl().as_bytes())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, SimError> {
        let mut records = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TraceRecord = serde_json::from_str(&line)
                .map_err(|e| SimError::Trace(format!("line {}: {e}", i + 1)))?;
            records.push(rec);
        }
        Ok(EventTrace { records })
    }
}

fn field<'a>(r: &'a TraceRecord, key: &str) -> Result<&'a Value, SimError> {
    r.extra.get(key).ok_or_else(|| {
        SimError::Trace(format!("{:?} record for package {} lacks `{key}`", r.kind, r.pkg))
    })
}

fn f64_field(r: &TraceRecord, key: &str) -> Result<f64, SimError> {
    field(r, key)?
        .as_f64()
        .ok_or_else(|| SimError::Trace(format!("`{key}` is not a number")))
}

fn u64_field(r: &TraceRecord, key: &str) -> Result<u64, SimError> {
    field(r, key)?
        .as_u64()
        .ok_or_else(|| SimError::Trace(format!("`{key}` is not an unsigned integer")))
}

fn bool_field(r: &TraceRecord, key: &str) -> Result<bool, SimError> {
    field(r, key)?
        .as_bool()
        .ok_or_else(|| SimError::Trace(format!("`{key}` is not a boolean")))
}

/// Rebuilds run metrics from a trace alone.
pub fn replay(trace: &EventTrace, devices: usize) -> Result<RunMetrics, SimError> {
    let mut metrics = RunMetrics::new(devices);
    let mut detected: std::collections::HashMap<u64, (f64, bool)> = Default::default();
    for r in &trace.records {
        match r.kind {
            EventKind::Detect => {
                detected.insert(
                    r.pkg,
                    (f64_field(r, "capture_time")?, bool_field(r, "truth")?),
                );
            }
            EventKind::UploadEnd => metrics.upload_bytes += u64_field(r, "bytes")?,
            EventKind::Enqueue | EventKind::InferEnd => {
                let dev = r
                    .dev
                    .ok_or_else(|| SimError::Trace(format!("{:?} without device", r.kind)))?;
                if dev >= metrics.queue_series.len() {
                    metrics.queue_series.resize(dev + 1, Vec::new());
                }
                metrics.queue_series[dev].push((r.t, u64_field(r, "q")? as u32));
            }
            EventKind::Verdict => {
                let (capture, truth) = *detected.get(&r.pkg).ok_or_else(|| {
                    SimError::Trace(format!("verdict for undetected package {}", r.pkg))
                })?;
                let positive = match field(r, "decision")?.as_str() {
                    Some("positive") => true,
                    Some("negative") => false,
                    other => {
                        return Err(SimError::Trace(format!("bad final decision {other:?}")))
                    }
                };
                metrics.latencies.push(r.t - capture);
                metrics.confusion.record(positive, truth);
            }
            _ => {}
        }
    }
    Ok(metrics)
}
