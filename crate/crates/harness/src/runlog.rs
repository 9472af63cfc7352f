//! RunLog CSV serialization.
//!
//! Every epoch produces four rows, in this order:
//!
//! * `train`, `val`, `test`: the configured metric of the fused, A and B heads
//!   on that split, the utilization computed from those three numbers, the
//!   rates used during the epoch, an empty action, and the evaluation losses;
//! * `sched`: the metrics and utilization the scheduler observed (on the
//!   configured utilization split), the rates used during the epoch, the
//!   action decided for the next epoch, and the mean training losses.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a log
//! parses back to the exact values that were written.

use std::io::Write;
use std::path::Path;

use miles_core::{Action, Split, TripleMetric, UtilizationRecord};

use crate::error::HarnessError;
use crate::runner::RunLog;

type Result<T> = std::result::Result<T, HarnessError>;

pub const HEADER: [&str; 15] = [
    "epoch",
    "split",
    "metric_AB",
    "metric_A",
    "metric_B",
    "u_A",
    "u_B",
    "delta",
    "alpha_A",
    "alpha_B",
    "alpha_AB",
    "action",
    "loss_AB",
    "loss_A",
    "loss_B",
];

const SCHED: &str = "sched";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Split(Split),
    Scheduler,
}

impl RowKind {
    const ORDER: [RowKind; 4] = [
        RowKind::Split(Split::Train),
        RowKind::Split(Split::Validation),
        RowKind::Split(Split::Test),
        RowKind::Scheduler,
    ];

    fn label(self) -> String {
        match self {
            RowKind::Split(s) => s.to_string(),
            RowKind::Scheduler => SCHED.to_string(),
        }
    }
}

/// One CSV row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub kind: RowKind,
    pub metric: TripleMetric,
    pub u_a: f64,
    pub u_b: f64,
    pub delta: f64,
    pub alpha_a: f64,
    pub alpha_b: f64,
    pub alpha_ab: f64,
    /// Present on scheduler rows only.
    pub action: Option<Action>,
    /// `[loss_AB, loss_A, loss_B]`.
    pub loss: [f64; 3],
}

/// Flattens a run log into rows, four per epoch.
pub fn rows(log: &RunLog) -> Vec<LogRow> {
    let metric = log.config.metric;
    let mut out = Vec::with_capacity(4 * log.records.len());
    for r in &log.records {
        for split in Split::ALL {
            let eval = r.split(split);
            let m = eval.metric(metric);
            let u = UtilizationRecord::from_metrics(m.ab, m.a, m.b, split);
            out.push(LogRow {
                epoch: r.epoch,
                kind: RowKind::Split(split),
                metric: m,
                u_a: u.u_a,
                u_b: u.u_b,
                delta: u.delta,
                alpha_a: r.alpha_a,
                alpha_b: r.alpha_b,
                alpha_ab: r.alpha_ab,
                action: None,
                loss: [eval.loss.ab, eval.loss.a, eval.loss.b],
            });
        }
        out.push(LogRow {
            epoch: r.epoch,
            kind: RowKind::Scheduler,
            metric: r.split(r.utilization.split).metric(metric),
            u_a: r.utilization.u_a,
            u_b: r.utilization.u_b,
            delta: r.utilization.delta,
            alpha_a: r.alpha_a,
            alpha_b: r.alpha_b,
            alpha_ab: r.alpha_ab,
            action: Some(r.action),
            loss: [r.train_loss.ab, r.train_loss.a, r.train_loss.b],
        });
    }
    out
}

pub fn write_rows<W: Write>(rows: &[LogRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| HarnessError::RunLog(e.to_string());
    w.write_record(HEADER).map_err(csv_err)?;
    for r in rows {
        let f = |x: f64| x.to_string();
        w.write_record([
            r.epoch.to_string(),
            r.kind.label(),
            f(r.metric.ab),
            f(r.metric.a),
            f(r.metric.b),
            f(r.u_a),
            f(r.u_b),
            f(r.delta),
            f(r.alpha_a),
            f(r.alpha_b),
            f(r.alpha_ab),
            r.action.map(|a| a.to_string()).unwrap_or_default(),
            f(r.loss[0]),
            f(r.loss[1]),
            f(r.loss[2]),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| HarnessError::RunLog(e.to_string()))
}

/// The CSV text of a run log.
pub fn render(log: &RunLog) -> String {
    let mut buf = Vec::new();
    write_rows(&rows(log), &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("CSV output is ASCII")
}

pub fn save(log: &RunLog, path: &Path) -> Result<()> {
    std::fs::write(path, render(log)).map_err(|e| HarnessError::io(path, e))
}

/// Parses and validates RunLog CSV text: exact header, four rows per epoch
/// in `train, val, test, sched` order, epochs numbered 1, 2, ...
pub fn parse(text: &str) -> Result<Vec<LogRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| HarnessError::RunLog(e.to_string()))?;
    if header.iter().ne(HEADER) {
        return Err(HarnessError::RunLog(format!(
            "unexpected header `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| HarnessError::RunLog(format!("line {line}: {e}")))?;
        let err = |what: &str| HarnessError::RunLog(format!("line {line}: {what}"));
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .parse::<f64>()
                .map_err(|_| err(&format!("{} = `{}` is not a number", HEADER[k], &rec[k])))
        };
        let expected = RowKind::ORDER[i % 4];
        let epoch: usize = rec[0].parse().map_err(|_| err(&format!("bad epoch `{}`", &rec[0])))?;
        if epoch != i / 4 + 1 {
            return Err(err(&format!("expected epoch {}, found {epoch}", i / 4 + 1)));
        }
        if rec[1] != expected.label() {
            return Err(err(&format!(
                "expected split `{}`, found `{}`",
                expected.label(),
                &rec[1]
            )));
        }
        let action = match expected {
            RowKind::Scheduler => Some(rec[11].parse::<Action>().map_err(|e| err(&e.to_string()))?),
            RowKind::Split(_) if rec[11].is_empty() => None,
            RowKind::Split(_) => return Err(err("split rows carry no action")),
        };
        rows.push(LogRow {
            epoch,
            kind: expected,
            metric: TripleMetric {
                ab: num(2)?,
                a: num(3)?,
                b: num(4)?,
            },
            u_a: num(5)?,
            u_b: num(6)?,
            delta: num(7)?,
            alpha_a: num(8)?,
            alpha_b: num(9)?,
            alpha_ab: num(10)?,
            action,
            loss: [num(12)?, num(13)?, num(14)?],
        });
    }
    if rows.is_empty() {
        return Err(HarnessError::RunLog("log has no epochs".into()));
    }
    if rows.len() % 4 != 0 {
        return Err(HarnessError::RunLog(format!(
            "epoch {} is incomplete",
            rows.len() / 4 + 1
        )));
    }
    Ok(rows)
}

pub fn load(path: &Path) -> Result<Vec<LogRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse(&text)
}
