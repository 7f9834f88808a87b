//! Trend table over finished result directories. Reads `runs.csv` only, so
//! results from other tools in the same format compare just as well.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::output::{read_runs, RunRow};
use crate::Result;

/// Per-directory means of the run-level metrics. Metrics undefined in every
/// run are left empty.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrendRow {
    pub label: String,
    pub architecture: String,
    pub runs: usize,
    pub decoded_sessions: f64,
    pub admitted_sessions: f64,
    pub mos: Option<f64>,
    pub video_loss: Option<f64>,
    pub video_delay_ms: Option<f64>,
    pub utilization: f64,
    pub transmitted_video_packets: f64,
    pub video_rate_cv: Option<f64>,
    pub ftp_rate_cv: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn trend_row(label: &str, rows: &[RunRow]) -> TrendRow {
    let all = |f: fn(&RunRow) -> f64| mean(rows.iter().map(f)).unwrap_or(0.0);
    let some = |f: fn(&RunRow) -> Option<f64>| mean(rows.iter().filter_map(f));
    let mut archs: Vec<&str> = rows.iter().map(|r| r.architecture.as_str()).collect();
    archs.sort_unstable();
    archs.dedup();
    TrendRow {
        label: label.to_string(),
        architecture: archs.join("+"),
        runs: rows.len(),
        decoded_sessions: all(|r| r.sessions_decoded as f64),
        admitted_sessions: all(|r| r.sessions_admitted as f64),
        mos: some(|r| r.mean_mos),
        video_loss: some(|r| r.mean_video_loss),
        video_delay_ms: some(|r| r.mean_video_delay_ms),
        utilization: all(|r| r.utilization),
        transmitted_video_packets: all(|r| r.transmitted_video_packets as f64),
        video_rate_cv: some(|r| r.median_video_rate_cv),
        ftp_rate_cv: some(|r| r.median_ftp_rate_cv),
    }
}

pub fn compare_dirs(dirs: &[&Path]) -> Result<Vec<TrendRow>> {
    dirs.iter()
        .map(|d| {
            let rows = read_runs(&d.join("runs.csv"))?;
            Ok(trend_row(&d.display().to_string(), &rows))
        })
        .collect()
}

pub fn trend_csv(rows: &[TrendRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| crate::Error::Other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Fixed-width table for the terminal.
pub fn trend_table(rows: &[TrendRow]) -> String {
    let opt = |v: Option<f64>, prec: usize| match v {
        Some(v) => format!("{v:.prec$}"),
        None => "-".into(),
    };
    let mut s = format!(
        "{:<14} {:>4} {:>8} {:>8} {:>6} {:>8} {:>9} {:>6} {:>8} {:>8}\n",
        "architecture",
        "runs",
        "decoded",
        "admitted",
        "mos",
        "loss",
        "delay_ms",
        "util",
        "cv_video",
        "cv_ftp"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<14} {:>4} {:>8.2} {:>8.2} {:>6} {:>8} {:>9} {:>6.3} {:>8} {:>8}",
            r.architecture,
            r.runs,
            r.decoded_sessions,
            r.admitted_sessions,
            opt(r.mos, 3),
            opt(r.video_loss, 4),
            opt(r.video_delay_ms, 2),
            r.utilization,
            opt(r.video_rate_cv, 3),
            opt(r.ftp_rate_cv, 3),
        );
    }
    s
}
