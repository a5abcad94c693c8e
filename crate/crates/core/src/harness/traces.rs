//! Trace CSV files and per-run metadata sidecars.
//!
//! Schema: `iteration,eval_count,f_observed,f_best,gap,region_lo_0,...,
//! region_hi_0,...` with region columns sized by the search dimension.
//! Floats are written in Rust's shortest round-trip form, so identical runs
//! produce byte-identical files. Wall-clock times never enter the CSV; they
//! live in `run.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::algorithms::RunTrace;

use super::HarnessError;

/// Per-run metadata written next to the trace files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub algorithm: String,
    pub objective: String,
    /// Ambient problem dimension `n_p`.
    pub dimension: usize,
    /// Dimension of the space the acquisition searched in.
    pub search_dim: usize,
    pub f_star: f64,
    pub budget: usize,
    pub repetitions: usize,
    pub base_seed: u64,
    pub per_seed: Vec<SeedMeta>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedMeta {
    pub seed: u64,
    pub trace_file: String,
    pub initial_count: usize,
    pub best_f: f64,
    pub wall_secs: f64,
}

pub fn write_trace_csv(path: &Path, trace: &RunTrace) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![
        "iteration".to_string(),
        "eval_count".to_string(),
        "f_observed".to_string(),
        "f_best".to_string(),
        "gap".to_string(),
    ];
    for i in 0..trace.search_dim {
        header.push(format!("region_lo_{i}"));
    }
    for i in 0..trace.search_dim {
        header.push(format!("region_hi_{i}"));
    }
    w.write_record(&header)?;
    for r in &trace.records {
        let mut row = vec![
            r.iteration.to_string(),
            r.eval_count.to_string(),
            fmt(r.f_observed),
            fmt(r.f_best),
            fmt(r.gap),
        ];
        row.extend(r.region_lo.iter().map(|&v| fmt(v)));
        row.extend(r.region_hi.iter().map(|&v| fmt(v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// The columns the aggregation and profiling stages consume.
#[derive(Debug, Clone)]
pub struct TraceColumns {
    pub iterations: Vec<usize>,
    pub f_best: Vec<f64>,
}

impl TraceColumns {
    /// Incumbent after the initial design (`f*_0`).
    pub fn initial_best(&self) -> Option<f64> {
        self.iterations
            .iter()
            .zip(&self.f_best)
            .filter(|(&it, _)| it == 0)
            .map(|(_, &f)| f)
            .last()
    }

    /// Best-so-far series over the loop evaluations.
    pub fn loop_history(&self) -> Vec<f64> {
        self.iterations
            .iter()
            .zip(&self.f_best)
            .filter(|(&it, _)| it > 0)
            .map(|(_, &f)| f)
            .collect()
    }

    /// Incumbent series including the post-initial point: index 0 is the
    /// initial best, then one entry per loop evaluation.
    pub fn incumbent_series(&self) -> Vec<f64> {
        let mut series = Vec::new();
        if let Some(f0) = self.initial_best() {
            series.push(f0);
        }
        series.extend(self.loop_history());
        series
    }
}

pub fn read_trace_csv(path: &Path) -> Result<TraceColumns, HarnessError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(it_col), Some(best_col)) = (col("iteration"), col("f_best")) else {
        return Err(HarnessError::Data(format!(
            "{}: missing iteration/f_best columns",
            path.display()
        )));
    };
    let mut out = TraceColumns {
        iterations: Vec::new(),
        f_best: Vec::new(),
    };
    for record in reader.records() {
        let record = record?;
        out.iterations.push(
            record
                .get(it_col)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| HarnessError::Data(format!("{}: bad iteration", path.display())))?,
        );
        out.f_best.push(
            record
                .get(best_col)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| HarnessError::Data(format!("{}: bad f_best", path.display())))?,
        );
    }
    Ok(out)
}

pub fn write_run_meta(path: &Path, meta: &RunMeta) -> Result<(), HarnessError> {
    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| HarnessError::Data(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn read_run_meta(path: &Path) -> Result<RunMeta, HarnessError> {
    serde_json::from_str(&std::fs::read_to_string(path)?)
        .map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))
}
