use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{train, Architecture, ExperimentConfig, MetricsReport};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::par::{self, Execution};

pub const SUMMARY_HEADER: &str = "filter,stride,lr,arch,error_pct,diverged,seed";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub filter_size: usize,
    pub stride: usize,
    pub learning_rate: f64,
}

/// Filter size × stride × learning rate, in table order.
pub fn default_grid() -> Vec<SweepCell> {
    let mut grid = Vec::with_capacity(8);
    for filter_size in [3, 5] {
        for stride in [1, 2] {
            for learning_rate in [0.005, 0.5] {
                grid.push(SweepCell {
                    filter_size,
                    stride,
                    learning_rate,
                });
            }
        }
    }
    grid
}

/// Parse `default` or a `;`-separated list of `filter:stride:lr` cells.
pub fn parse_grid(text: &str) -> Result<Vec<SweepCell>> {
    if text.trim() == "default" {
        return Ok(default_grid());
    }
    let grid = text
        .split(';')
        .filter(|c| !c.trim().is_empty())
        .map(|cell| {
            let parts: Vec<&str> = cell.trim().split(':').collect();
            let bad = || Error::Parse(format!("grid cell `{cell}` is not filter:stride:lr"));
            if parts.len() != 3 {
                return Err(bad());
            }
            Ok(SweepCell {
                filter_size: parts[0].parse().map_err(|_| bad())?,
                stride: parts[1].parse().map_err(|_| bad())?,
                learning_rate: parts[2].parse().map_err(|_| bad())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    Ok(grid)
}

/// A run that could not produce a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRun {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunOutcome {
    Completed(MetricsReport),
    Failed(FailedRun),
}

impl RunOutcome {
    pub fn config(&self) -> &ExperimentConfig {
        match self {
            RunOutcome::Completed(r) => &r.config,
            RunOutcome::Failed(f) => &f.config,
        }
    }

    pub fn report(&self) -> Option<&MetricsReport> {
        match self {
            RunOutcome::Completed(r) => Some(r),
            RunOutcome::Failed(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub filter: usize,
    pub stride: usize,
    pub lr: f64,
    pub arch: Architecture,
    /// `None` for a failed run.
    pub error_pct: Option<f64>,
    pub diverged: bool,
    pub seed: u64,
}

impl SummaryRow {
    pub fn from_outcome(outcome: &RunOutcome) -> Self {
        let c = outcome.config();
        SummaryRow {
            filter: c.filter_size,
            stride: c.stride,
            lr: c.learning_rate,
            arch: c.architecture,
            error_pct: outcome.report().map(|r| r.error_pct),
            diverged: outcome.report().is_some_and(|r| r.diverged),
            seed: c.seed,
        }
    }

    fn sort_key(&self) -> (usize, usize, f64, Architecture, u64) {
        (self.filter, self.stride, self.lr, self.arch, self.seed)
    }
}

/// Rows ordered by filter, stride, learning rate, architecture and seed.
pub fn summarize(outcomes: &[RunOutcome]) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = outcomes.iter().map(SummaryRow::from_outcome).collect();
    rows.sort_by(|a, b| a.sort_key().partial_cmp(&b.sort_key()).expect("finite learning rates"));
    rows
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let error = r.error_pct.map(|e| format!("{e:.2}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{error},{},{}\n",
            r.filter, r.stride, r.lr, r.arch, r.diverged, r.seed
        ));
    }
    out
}

pub fn summary_json(rows: &[SummaryRow]) -> Result<String> {
    Ok(serde_json::to_string_pretty(rows)? + "\n")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub grid: Vec<SweepCell>,
    pub seeds: Vec<u64>,
    /// Everything except filter size, stride, learning rate and seed.
    pub base: ExperimentConfig,
    /// Worker threads; 0 uses the global pool.
    pub jobs: usize,
    pub exec: Execution,
}

impl SweepOptions {
    pub fn configs(&self) -> Vec<ExperimentConfig> {
        let mut out = Vec::with_capacity(self.grid.len() * self.seeds.len());
        for cell in &self.grid {
            for &seed in &self.seeds {
                out.push(ExperimentConfig {
                    filter_size: cell.filter_size,
                    stride: cell.stride,
                    learning_rate: cell.learning_rate,
                    seed,
                    ..self.base
                });
            }
        }
        out
    }
}

pub fn runs_dir(out: &Path) -> PathBuf {
    out.join("runs")
}

/// Train every grid cell for every seed. Each outcome is written to
/// `out/runs/<hash>.json` (and `<hash>.ckpt` on success) as soon as it
/// finishes; `out/summary.csv` is written last. A failing run becomes a
/// [`RunOutcome::Failed`] row.
pub fn sweep(data: &Dataset, opts: &SweepOptions, out: &Path) -> Result<Vec<RunOutcome>> {
    let configs = opts.configs();
    if configs.is_empty() {
        return Err(Error::Config("sweep needs at least one grid cell and one seed".into()));
    }
    let dir = runs_dir(out);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let run_one = |cfg: &ExperimentConfig| -> Result<RunOutcome> {
        let hash = cfg.hash();
        let outcome = match train(cfg, data, opts.exec) {
            Ok(run) => {
                run.checkpoint.save(&dir.join(format!("{hash}.ckpt")))?;
                RunOutcome::Completed(run.report)
            }
            Err(e) => RunOutcome::Failed(FailedRun {
                config: *cfg,
                config_hash: hash.clone(),
                seed: cfg.seed,
                error: e.to_string(),
            }),
        };
        let path = dir.join(format!("{hash}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&outcome)?).map_err(|e| Error::io(&path, e))?;
        Ok(outcome)
    };
    let outcomes = if opts.jobs == 0 {
        par::map(opts.exec, &configs, run_one)
    } else {
        par::with_workers(opts.jobs, || par::map(opts.exec, &configs, run_one))
    }
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let csv_path = out.join("summary.csv");
    std::fs::write(&csv_path, summary_csv(&summarize(&outcomes))).map_err(|e| Error::io(&csv_path, e))?;
    Ok(outcomes)
}

/// Every persisted outcome under `runs_dir`, in file-name order.
pub fn load_outcomes(runs_dir: &Path) -> Result<Vec<RunOutcome>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(runs_dir)
        .map_err(|e| Error::io(runs_dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(runs_dir, err)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!("no run reports in {}", runs_dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))
        })
        .collect()
}
