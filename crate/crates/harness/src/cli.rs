//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use miles_core::datagen;

use crate::config::{compare_methods, compare_seeds, synthetic_spec, ConfigMap, RunConfig, SweepGrid};
use crate::error::HarnessError;
use crate::runner::{load_dataset, run_experiment, RunLog};
use crate::sweep::{compare, compare_csv, sweep};
use crate::{plot, runlog};

const DEFAULT_OUTPUT_DIR: &str = "runs";

#[derive(Debug, Parser)]
#[command(name = "miles", version, about = "Per-modality learning-rate scheduling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Overrides {
    /// Override a configuration key; may be repeated. Applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Args)]
struct RunArgs {
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    /// Output directory (same as `output.dir`).
    #[arg(long, short = 'o', value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset from the `data.*` keys of a config file.
    GenData {
        spec: PathBuf,
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train one model and write its RunLog CSV and config snapshot.
    Train(RunArgs),
    /// Run the MILES tau/mu/seed grid and write a summary CSV.
    Sweep(RunArgs),
    /// Draw the learning-dynamics figure of a RunLog CSV.
    Plot { runlog: PathBuf, out: PathBuf },
    /// Run vanilla, every baseline and MILES on one dataset; print the comparison CSV.
    Compare(RunArgs),
}

/// Parses `argv` (including the program name) and runs the command.
pub fn main_with(argv: impl IntoIterator<Item = OsString>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn load_map(path: &Path, overrides: &Overrides, out_dir: Option<&Path>) -> Result<ConfigMap, HarnessError> {
    let mut map = ConfigMap::load(path)?;
    if let Some(dir) = out_dir {
        map.set("output.dir", &dir.display().to_string())?;
    }
    map.apply_overrides(overrides.set.iter().map(String::as_str))?;
    Ok(map)
}

fn output_dir(cfg: &RunConfig) -> Result<PathBuf, HarnessError> {
    let dir = cfg
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    Ok(dir)
}

/// Writes `runlog.csv` and `config.txt` into `dir`.
pub fn save_run(log: &RunLog, dir: &Path) -> Result<(), HarnessError> {
    runlog::save(log, &dir.join("runlog.csv"))?;
    let path = dir.join("config.txt");
    std::fs::write(&path, log.config.to_map().render()).map_err(|e| HarnessError::io(&path, e))
}

fn execute(command: Command, out: &mut dyn Write) -> Result<(), HarnessError> {
    let stdout_err = |e: std::io::Error| HarnessError::io("<stdout>", e);
    match command {
        Command::GenData {
            spec,
            out: path,
            overrides,
        } => {
            let map = load_map(&spec, &overrides, None)?;
            let ds = datagen::generate(&synthetic_spec(&map)?)?;
            datagen::save(&ds, &path)?;
            writeln!(
                out,
                "wrote {} ({} classes, {}/{}/{} samples)",
                path.display(),
                ds.classes,
                ds.splits[0].len(),
                ds.splits[1].len(),
                ds.splits[2].len()
            )
            .map_err(stdout_err)?;
        }
        Command::Train(args) => {
            let map = load_map(&args.config, &args.overrides, args.out_dir.as_deref())?;
            let cfg = RunConfig::from_map(&map)?;
            let dir = output_dir(&cfg)?;
            let log = match run_experiment(&cfg) {
                Ok(log) => log,
                Err(HarnessError::Diverged { epoch, detail, partial }) => {
                    save_run(&partial, &dir)?;
                    return Err(HarnessError::Diverged { epoch, detail, partial });
                }
                Err(e) => return Err(e),
            };
            save_run(&log, &dir)?;
            if let Some(s) = log.summary() {
                writeln!(
                    out,
                    "best epoch {}: val fused {:.4}; test fused {:.4} A {:.4} B {:.4}; gap {:+.4}",
                    s.best_epoch, s.val_fused, s.test.ab, s.test.a, s.test.b, s.gap
                )
                .map_err(stdout_err)?;
            }
            writeln!(out, "wrote {}", dir.join("runlog.csv").display()).map_err(stdout_err)?;
        }
        Command::Sweep(args) => {
            let map = load_map(&args.config, &args.overrides, args.out_dir.as_deref())?;
            let cfg = RunConfig::from_map(&map)?;
            let grid = SweepGrid::from_map(&map)?;
            let data = load_dataset(&cfg.dataset)?;
            let result = sweep(&cfg, &grid, &data)?;
            let dir = output_dir(&cfg)?;
            result.save(&dir)?;
            write!(out, "{}", result.summary_csv()).map_err(stdout_err)?;
            for cell in result.cells.iter().filter(|c| c.outcome.is_err()) {
                if let Err(e) = &cell.outcome {
                    writeln!(
                        out,
                        "# cell tau={} mu={} seed={} failed: {e}",
                        cell.tau, cell.mu, cell.seed
                    )
                    .map_err(stdout_err)?;
                }
            }
            if let Some(best) = result.best() {
                writeln!(out, "# best cell: tau={} mu={}", best.tau, best.mu).map_err(stdout_err)?;
            }
        }
        Command::Plot { runlog: path, out: svg } => {
            let rows = runlog::load(&path)?;
            let metric = sibling_metric(&path).unwrap_or_else(|| "metric".to_string());
            plot::save(&rows, &metric, &svg)?;
            writeln!(out, "wrote {}", svg.display()).map_err(stdout_err)?;
        }
        Command::Compare(args) => {
            let map = load_map(&args.config, &args.overrides, args.out_dir.as_deref())?;
            let cfg = RunConfig::from_map(&map)?;
            let methods = compare_methods(&map)?;
            let seeds = compare_seeds(&map)?;
            let threads = SweepGrid::from_map(&map)?.threads;
            let data = load_dataset(&cfg.dataset)?;
            let rows = compare(&cfg, &methods, &seeds, &data, threads)?;
            let csv = compare_csv(&rows);
            write!(out, "{csv}").map_err(stdout_err)?;
            for r in &rows {
                for e in &r.errors {
                    writeln!(out, "# {} failed: {e}", r.method).map_err(stdout_err)?;
                }
            }
            if cfg.output_dir.is_some() {
                let dir = output_dir(&cfg)?;
                let path = dir.join("compare.csv");
                std::fs::write(&path, csv).map_err(|e| HarnessError::io(&path, e))?;
            }
        }
    }
    Ok(())
}

/// Metric name from a `config.txt` written next to the log, if there is one.
fn sibling_metric(runlog: &Path) -> Option<String> {
    let snapshot = runlog.parent()?.join("config.txt");
    let map = ConfigMap::load(&snapshot).ok()?;
    map.get("train.metric").map(str::to_string)
}
