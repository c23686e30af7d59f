//! Timed benchmark runs and their CSV records.

use std::time::Instant;

use serde::Serialize;
use spectask::Runtime;

use crate::mc::{mc_core, remc, McConfig, McError, McSummary, Mode, RemcConfig};

/// Largest tolerated gap between the tracked and recomputed total energy.
pub const AUDIT_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub enum Workload {
    Mc { temperature: f64 },
    Remc { temperatures: Vec<f64>, exchange_every: usize },
}

impl Workload {
    pub fn replicas(&self) -> usize {
        match self {
            Workload::Mc { .. } => 1,
            Workload::Remc { temperatures, .. } => temperatures.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub mc: McConfig,
    pub workload: Workload,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRecord {
    pub mode: String,
    #[serde(rename = "T")]
    pub threads: usize,
    #[serde(rename = "S")]
    pub spec_depth: usize,
    pub domains: usize,
    pub particles: usize,
    pub replicas: usize,
    pub iterations: usize,
    pub seed: u64,
    pub mean_seconds: f64,
    pub accept_ratio: f64,
    pub speedup: Option<f64>,
}

/// Result of one timed run.
pub struct RunOutcome {
    pub seconds: f64,
    pub summaries: Vec<McSummary>,
    pub runtime: Runtime,
}

/// Runs the workload once and audits the energy of every replica.
pub fn run_once(cfg: &BenchConfig) -> Result<RunOutcome, McError> {
    let rt = cfg.mc.runtime();
    let start = Instant::now();
    let summaries = match &cfg.workload {
        Workload::Mc { temperature } => vec![mc_core(&rt, &cfg.mc, *temperature)?],
        Workload::Remc {
            temperatures,
            exchange_every,
        } => {
            let rc = RemcConfig {
                mc: cfg.mc.clone(),
                temperatures: temperatures.clone(),
                exchange_every: *exchange_every,
            };
            remc(&rt, &rc)?.replicas
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    for (i, s) in summaries.iter().enumerate() {
        let gap = s.audit()?;
        if gap.is_nan() || gap > AUDIT_TOLERANCE {
            return Err(McError::Audit { replica: i, gap });
        }
    }
    Ok(RunOutcome {
        seconds,
        summaries,
        runtime: rt,
    })
}

/// Mean wall time over `cfg.runs` runs. `baseline` is the task-mode mean
/// for the same thread count; the task mode is its own baseline.
pub fn run_benchmark(cfg: &BenchConfig, baseline: Option<f64>) -> Result<(BenchRecord, RunOutcome), McError> {
    if cfg.runs == 0 {
        return Err(McError::Config("need at least one run".into()));
    }
    let mut total = 0.0;
    let mut last = None;
    for _ in 0..cfg.runs {
        let out = run_once(cfg)?;
        total += out.seconds;
        last = Some(out);
    }
    let last = last.expect("at least one run");
    let mean = total / cfg.runs as f64;
    let steps: usize = last.summaries.iter().map(|s| s.accepted.len()).sum();
    let accepts: usize = last.summaries.iter().map(McSummary::accept_count).sum();
    let baseline = if cfg.mc.mode == Mode::Task { Some(mean) } else { baseline };
    let record = BenchRecord {
        mode: cfg.mc.mode.to_string(),
        threads: cfg.mc.threads,
        spec_depth: cfg.mc.spec_depth,
        domains: cfg.mc.domains,
        particles: cfg.mc.particles,
        replicas: cfg.workload.replicas(),
        iterations: cfg.mc.iterations,
        seed: cfg.mc.seed,
        mean_seconds: mean,
        accept_ratio: if steps == 0 { 0.0 } else { accepts as f64 / steps as f64 },
        speedup: baseline.map(|b| b / mean),
    };
    Ok((record, last))
}

pub fn write_csv<W: std::io::Write>(out: W, records: &[BenchRecord]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
