//! CSV and JSON emission of benchmark metrics with a stable column order.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use anyhow::{Context, Result};

use crate::runner::RunMetrics;

pub const CSV_HEADER: &str = "family,i,backend,seed,t_prep_ms,t_rec_ms,rounds,messages,bytes,\
                              Q,I,K,node_visits,disk_bytes,transcript_hash";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown format {other:?} (expected csv or json)")),
        }
    }
}

fn csv_row(m: &RunMetrics) -> String {
    let disk = m.disk_bytes.map_or(String::new(), |d| d.to_string());
    format!(
        "{},{},{},{},{:.3},{:.3},{},{},{},{},{},{},{},{},{}",
        m.family,
        m.index,
        m.backend,
        m.seed,
        m.t_prep_ms,
        m.t_rec_ms,
        m.rounds,
        m.messages,
        m.bytes,
        m.queried,
        m.splits,
        m.listed_items,
        m.node_visits,
        disk,
        m.transcript_hash
    )
}

pub fn to_csv(metrics: &[RunMetrics]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for m in metrics {
        out.push_str(&csv_row(m));
        out.push('\n');
    }
    out
}

pub fn to_json(metrics: &[RunMetrics]) -> Result<String> {
    Ok(serde_json::to_string_pretty(metrics)?)
}

/// Writes the report to `out`, or to stdout when no path is given.
pub fn emit(metrics: &[RunMetrics], format: ReportFormat, out: Option<&Path>) -> Result<()> {
    let body = match format {
        ReportFormat::Csv => to_csv(metrics),
        ReportFormat::Json => to_json(metrics)?,
    };
    match out {
        Some(path) => std::fs::write(path, body)
            .with_context(|| format!("writing report to {}", path.display()))?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(body.as_bytes())?;
        }
    }
    Ok(())
}
