//! Grid sweeps over MILES `(tau, mu)` and seeds, and the baseline comparison.
//!
//! Cells run concurrently on a dedicated thread pool but only share the
//! read-only base configuration and dataset; results are ordered by cell
//! index, so the summaries do not depend on scheduling.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use miles_core::datagen::BimodalDataset;
use miles_core::SchedulerKind;

use crate::config::{RunConfig, SweepGrid};
use crate::error::HarnessError;
use crate::runlog;
use crate::runner::{run_on, RunLog, RunSummary};

type Result<T> = std::result::Result<T, HarnessError>;

/// Median of the finite values; mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Median summary over the successful seeds of one cell or method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MedianSummary {
    pub runs: usize,
    pub failed: usize,
    pub val_fused: Option<f64>,
    pub test_fused: Option<f64>,
    pub test_a: Option<f64>,
    pub test_b: Option<f64>,
    pub gap: Option<f64>,
    pub abs_gap: Option<f64>,
}

impl MedianSummary {
    pub fn of(outcomes: &[std::result::Result<RunSummary, String>]) -> Self {
        let ok: Vec<&RunSummary> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
        let m = |f: fn(&RunSummary) -> f64| median(&ok.iter().map(|s| f(s)).collect::<Vec<_>>());
        MedianSummary {
            runs: outcomes.len(),
            failed: outcomes.len() - ok.len(),
            val_fused: m(|s| s.val_fused),
            test_fused: m(|s| s.test.ab),
            test_a: m(|s| s.test.a),
            test_b: m(|s| s.test.b),
            gap: m(|s| s.gap),
            abs_gap: m(|s| s.gap.abs()),
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One `(tau, mu, seed)` run.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub tau: f64,
    pub mu: f64,
    pub seed: u64,
    pub outcome: std::result::Result<RunLog, String>,
}

impl SweepCell {
    pub fn summary(&self) -> std::result::Result<RunSummary, String> {
        match &self.outcome {
            Ok(log) => log.summary().ok_or_else(|| "empty run".to_string()),
            Err(e) => Err(e.clone()),
        }
    }

    pub fn file_name(&self) -> String {
        format!("tau{}_mu{}_seed{}.csv", self.tau, self.mu, self.seed)
    }
}

/// One `(tau, mu)` row of the sweep summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub tau: f64,
    pub mu: f64,
    pub summary: MedianSummary,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    /// Ordered by tau, then mu, then seed, as listed in the grid.
    pub cells: Vec<SweepCell>,
    /// Ordered by tau, then mu.
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_HEADER: &str = "tau,mu,runs,failed,val_fused,test_fused,test_A,test_B,gap";

impl SweepResult {
    /// Row with the highest median validation fused metric, earliest on ties.
    pub fn best(&self) -> Option<&SweepRow> {
        let mut best: Option<(&SweepRow, f64)> = None;
        for row in &self.rows {
            if let Some(v) = row.summary.val_fused {
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((row, v));
                }
            }
        }
        best.map(|(r, _)| r)
    }

    pub fn summary_csv(&self) -> String {
        let mut out = format!("{SWEEP_HEADER}\n");
        for r in &self.rows {
            let s = &r.summary;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.tau,
                r.mu,
                s.runs,
                s.failed,
                fmt_opt(s.val_fused),
                fmt_opt(s.test_fused),
                fmt_opt(s.test_a),
                fmt_opt(s.test_b),
                fmt_opt(s.gap)
            );
        }
        out
    }

    /// Writes `sweep_summary.csv` and one RunLog CSV per successful cell under `cells/`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let cells_dir = dir.join("cells");
        std::fs::create_dir_all(&cells_dir).map_err(|e| HarnessError::io(&cells_dir, e))?;
        for cell in &self.cells {
            if let Ok(log) = &cell.outcome {
                runlog::save(log, &cells_dir.join(cell.file_name()))?;
            }
        }
        let path = dir.join("sweep_summary.csv");
        std::fs::write(&path, self.summary_csv()).map_err(|e| HarnessError::io(&path, e))
    }
}

/// Runs `jobs` on a pool with `threads` workers (0 = available parallelism),
/// returning results in job order.
fn run_all<J, R>(jobs: &[J], threads: usize, f: impl Fn(&J) -> R + Sync + Send) -> Result<Vec<R>>
where
    J: Sync,
    R: Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HarnessError::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| jobs.par_iter().map(&f).collect()))
}

pub fn sweep(base: &RunConfig, grid: &SweepGrid, data: &BimodalDataset) -> Result<SweepResult> {
    if grid.taus.is_empty() || grid.mus.is_empty() || grid.seeds.is_empty() {
        return Err(HarnessError::Config("sweep grids must be nonempty".into()));
    }
    let jobs: Vec<(f64, f64, u64)> = grid
        .taus
        .iter()
        .flat_map(|&t| {
            grid.mus
                .iter()
                .flat_map(move |&m| grid.seeds.iter().map(move |&s| (t, m, s)))
        })
        .collect();
    let cells = run_all(&jobs, grid.threads, |&(tau, mu, seed)| SweepCell {
        tau,
        mu,
        seed,
        outcome: run_on(&base.with_miles(tau, mu).with_seed(seed), data).map_err(|e| e.to_string()),
    })?;
    let rows = cells
        .chunks(grid.seeds.len())
        .map(|group| SweepRow {
            tau: group[0].tau,
            mu: group[0].mu,
            summary: MedianSummary::of(&group.iter().map(SweepCell::summary).collect::<Vec<_>>()),
        })
        .collect();
    Ok(SweepResult { cells, rows })
}

/// One method of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub method: String,
    pub summary: MedianSummary,
    pub errors: Vec<String>,
}

pub const COMPARE_HEADER: &str = "method,M_fused,M_A,M_B,gap";

/// Runs every scheduler over `seeds` on one dataset. The row order follows `methods`.
pub fn compare(
    base: &RunConfig,
    methods: &[SchedulerKind],
    seeds: &[u64],
    data: &BimodalDataset,
    threads: usize,
) -> Result<Vec<CompareRow>> {
    if methods.is_empty() || seeds.is_empty() {
        return Err(HarnessError::Config(
            "compare needs at least one method and one seed".into(),
        ));
    }
    let jobs: Vec<(SchedulerKind, u64)> = methods
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let outcomes = run_all(&jobs, threads, |&(kind, seed)| {
        let mut cfg = base.with_seed(seed);
        cfg.scheduler = kind;
        run_on(&cfg, data)
            .map_err(|e| e.to_string())
            .and_then(|log| log.summary().ok_or_else(|| "empty run".to_string()))
    })?;
    Ok(outcomes
        .chunks(seeds.len())
        .zip(methods)
        .map(|(group, kind)| CompareRow {
            method: kind.name().to_string(),
            summary: MedianSummary::of(group),
            errors: group.iter().filter_map(|o| o.as_ref().err().cloned()).collect(),
        })
        .collect())
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = format!("{COMPARE_HEADER}\n");
    for r in rows {
        let s = &r.summary;
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.method,
            fmt_opt(s.test_fused),
            fmt_opt(s.test_a),
            fmt_opt(s.test_b),
            fmt_opt(s.gap)
        );
    }
    out
}
