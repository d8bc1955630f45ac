//! Per-epoch records and their CSV form.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::engine::SampleResult;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    PcnTa,
    Pcn,
    Backprop,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::PcnTa => "pcn_ta",
            Method::Pcn => "pcn",
            Method::Backprop => "backprop",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pcn_ta" => Ok(Method::PcnTa),
            "pcn" => Ok(Method::Pcn),
            "backprop" => Ok(Method::Backprop),
            other => Err(Error::Config(format!(
                "unknown method {other:?} (expected pcn_ta, pcn or backprop)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub run_id: String,
    pub method: Method,
    pub epoch: usize,
    pub accuracy: f64,
    pub avg_nonzero_updates_per_frame: f64,
    pub avg_inference_iters: f64,
    pub mean_final_vfe: f64,
    pub wall_time_ms: f64,
}

/// Identifies the run an epoch belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMeta {
    pub run_id: String,
    pub method: Method,
    pub epoch: usize,
    pub wall_time_ms: f64,
}

/// Means over the epoch's frames. Backprop rows pass their per-frame loss as
/// `final_vfe` and zero iterations.
pub fn aggregate_epoch(results: &[SampleResult], accuracy: f64, meta: EpochMeta) -> Result<EpochRecord> {
    if results.is_empty() {
        return Err(Error::Empty("epoch results"));
    }
    let n = results.len() as f64;
    let mean = |f: &dyn Fn(&SampleResult) -> f64| results.iter().map(f).sum::<f64>() / n;
    Ok(EpochRecord {
        run_id: meta.run_id,
        method: meta.method,
        epoch: meta.epoch,
        accuracy,
        avg_nonzero_updates_per_frame: mean(&|r| r.nonzero_weight_updates as f64),
        avg_inference_iters: mean(&|r| r.iterations_used as f64),
        mean_final_vfe: mean(&|r| r.final_vfe),
        wall_time_ms: meta.wall_time_ms,
    })
}

pub const CSV_HEADER: &str = "run_id,method,epoch,accuracy,avg_nonzero_updates_per_frame,avg_inference_iters,mean_final_vfe,wall_time_ms";

/// 17 significant digits; parses back to the identical `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn to_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.run_id,
            r.method,
            r.epoch,
            format_float(r.accuracy),
            format_float(r.avg_nonzero_updates_per_frame),
            format_float(r.avg_inference_iters),
            format_float(r.mean_final_vfe),
            format_float(r.wall_time_ms),
        ));
    }
    out
}

pub fn write_csv(records: &[EpochRecord], path: &Path) -> Result<()> {
    fs::write(path, to_csv(records)).map_err(|e| Error::io(path, e))
}

pub fn parse_csv(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Config("metrics CSV header mismatch".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |what: &str| Error::Config(format!("metrics CSV line {}: bad {what}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad("field count"));
            }
            let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| bad(what));
            Ok(EpochRecord {
                run_id: f[0].to_string(),
                method: f[1].parse()?,
                epoch: f[2].parse().map_err(|_| bad("epoch"))?,
                accuracy: num(f[3], "accuracy")?,
                avg_nonzero_updates_per_frame: num(f[4], "avg_nonzero_updates_per_frame")?,
                avg_inference_iters: num(f[5], "avg_inference_iters")?,
                mean_final_vfe: num(f[6], "mean_final_vfe")?,
                wall_time_ms: num(f[7], "wall_time_ms")?,
            })
        })
        .collect()
}

pub fn read_csv(path: &Path) -> Result<Vec<EpochRecord>> {
    parse_csv(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// Concatenates runs in `(method, epoch, run_id)` order.
pub fn merge(runs: impl IntoIterator<Item = Vec<EpochRecord>>) -> Vec<EpochRecord> {
    let mut all: Vec<EpochRecord> = runs.into_iter().flatten().collect();
    all.sort_by(|a, b| {
        (a.method, a.epoch, &a.run_id).cmp(&(b.method, b.epoch, &b.run_id))
    });
    all
}

/// File name for one run's records.
pub fn csv_file_name(run_id: &str, method: Method) -> String {
    format!("{run_id}_{method}.csv")
}
