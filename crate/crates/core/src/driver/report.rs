//! Run summaries (JSON) and per-iteration tables (CSV).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::tgn::OuterRecord;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub outer: Vec<OuterRecord>,
    pub final_cost: Option<f64>,
    pub final_gradient_norm: Option<f64>,
    pub background_error: Option<f64>,
    pub analysis_error: Option<f64>,
    /// `background_error / analysis_error`.
    pub improvement_factor: Option<f64>,
    pub total_inner_iterations: usize,
    pub halted: Option<String>,
    pub seconds: f64,
    pub analysis: Vec<f64>,
}

impl RunSummary {
    /// A summary with no iterations.
    pub fn empty(config: ExperimentConfig) -> Self {
        RunSummary {
            config,
            outer: Vec::new(),
            final_cost: None,
            final_gradient_norm: None,
            background_error: None,
            analysis_error: None,
            improvement_factor: None,
            total_inner_iterations: 0,
            halted: None,
            seconds: 0.0,
            analysis: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub summary: PathBuf,
    pub inner: PathBuf,
}

#[derive(Serialize)]
struct InnerRow {
    outer_idx: usize,
    inner_idx: usize,
    residual_norm: f64,
    quadratic_cost: Option<f64>,
}

/// Writes `summary.json` and `inner.csv` into `dir`, creating it if needed.
/// The CSV has one row per recorded inner residual, i.e. iterations + 1 per
/// outer iteration.
pub fn emit_report(summary: &RunSummary, dir: &Path) -> Result<ReportPaths> {
    std::fs::create_dir_all(dir)?;
    let paths = ReportPaths {
        summary: dir.join("summary.json"),
        inner: dir.join("inner.csv"),
    };
    std::fs::write(&paths.summary, serde_json::to_string_pretty(summary)?)?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(&paths.inner)?;
    w.write_record(["outer_idx", "inner_idx", "residual_norm", "quadratic_cost"])?;
    for o in &summary.outer {
        for (j, &r) in o.inner.residual_norms.iter().enumerate() {
            w.serialize(InnerRow {
                outer_idx: o.index,
                inner_idx: j,
                residual_norm: r,
                quadratic_cost: o.inner.quadratic_costs.get(j).copied().flatten(),
            })?;
        }
    }
    w.flush()?;
    Ok(paths)
}

pub fn read_summary(path: &Path) -> Result<RunSummary> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
