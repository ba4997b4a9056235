use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const METRIC_SCHEMA_VERSION: u32 = 1;

/// One evaluated configuration: metrics plus enough metadata to trace the
/// run that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub label: String,
    pub sampler: String,
    pub steps: usize,
    pub seed: u64,
    pub config_hash: String,
    pub checkpoint: String,
    /// CCDS on L2-normalized samples.
    pub ccds: f64,
    /// CCDS on classifier features.
    pub ccds_features: f64,
    pub recall: f64,
    pub coverage: f64,
    pub fd: f64,
    pub sw: f64,
    pub adherence: f64,
    pub wall_seconds_per_sample: f64,
    /// Generated samples file, relative to the run directory.
    pub samples: String,
}

impl MetricReport {
    pub fn values(&self) -> [(&'static str, f64); 8] {
        [
            ("ccds", self.ccds),
            ("ccds_features", self.ccds_features),
            ("recall", self.recall),
            ("coverage", self.coverage),
            ("fd", self.fd),
            ("sw", self.sw),
            ("adherence", self.adherence),
            ("wall_seconds_per_sample", self.wall_seconds_per_sample),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.values() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("metric {name}")));
            }
        }
        if self.config_hash.is_empty() || self.checkpoint.is_empty() {
            return Err(Error::InvalidArgument("metric report metadata is incomplete".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }

    pub fn write_json(reports: &[MetricReport], path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(reports).expect("plain struct serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn write_csv(reports: &[MetricReport], path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        if reports.is_empty() {
            w.write_record(CSV_HEADER)?;
        }
        for r in reports {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Vec<MetricReport>> {
        let mut r = csv::Reader::from_path(path)?;
        let mut out = Vec::new();
        for rec in r.deserialize() {
            out.push(rec?);
        }
        Ok(out)
    }
}

pub const CSV_HEADER: [&str; 16] = [
    "schema_version",
    "label",
    "sampler",
    "steps",
    "seed",
    "config_hash",
    "checkpoint",
    "ccds",
    "ccds_features",
    "recall",
    "coverage",
    "fd",
    "sw",
    "adherence",
    "wall_seconds_per_sample",
    "samples",
];

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median wall time per produced sample. `f` returns how many samples it
/// generated.
pub fn time_per_sample<F>(mut f: F, warmup: usize, runs: usize) -> Result<f64>
where
    F: FnMut() -> Result<usize>,
{
    if runs < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 timed runs, got {runs}")));
    }
    for _ in 0..warmup {
        f()?;
    }
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        let n = f()?;
        times.push(start.elapsed().as_secs_f64() / n.max(1) as f64);
    }
    Ok(median(times))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingReport {
    pub candidate_seconds_per_sample: f64,
    pub baseline_seconds_per_sample: f64,
    /// Baseline time over candidate time.
    pub speedup: f64,
}

/// Times both closures in alternation, so slow drift in machine load
/// affects them equally.
pub fn timing_report<C, B>(mut candidate: C, mut baseline: B, warmup: usize, runs: usize) -> Result<TimingReport>
where
    C: FnMut() -> Result<usize>,
    B: FnMut() -> Result<usize>,
{
    if runs < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 timed runs, got {runs}")));
    }
    for _ in 0..warmup {
        candidate()?;
        baseline()?;
    }
    let mut c = Vec::with_capacity(runs);
    let mut b = Vec::with_capacity(runs);
    for _ in 0..runs {
        c.push(time_per_sample(&mut candidate, 0, 3)?);
        b.push(time_per_sample(&mut baseline, 0, 3)?);
    }
    let cand = median(c);
    let base = median(b);
    Ok(TimingReport {
        candidate_seconds_per_sample: cand,
        baseline_seconds_per_sample: base,
        speedup: base / cand,
    })
}
