//! CSV outputs: the long-format sweep report, bandwidth time series,
//! switch traces and congestion-window logs.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::congestion::WindowChange;
use crate::error::SimError;
use crate::fabric::TraceRecord;

/// Header of the sweep report. `params` holds the swept settings as
/// `key=value` pairs joined by `;`.
pub const REPORT_HEADER: [&str; 12] = [
    "cell", "params", "t_i_ns", "t_c_ns", "c", "median_ns", "p95_ns", "p99_ns", "ci_rel",
    "iterations", "unstable", "error",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub cell: usize,
    pub params: Vec<(String, String)>,
    pub t_i_ns: f64,
    pub t_c_ns: f64,
    pub c: f64,
    /// Percentiles of the contended run.
    pub median_ns: u64,
    pub p95_ns: u64,
    pub p99_ns: u64,
    pub ci_rel: f64,
    pub iterations: usize,
    pub unstable: bool,
    /// Why the cell failed; numeric fields are then zero.
    pub error: Option<String>,
}

fn encode_params(p: &[(String, String)]) -> String {
    p.iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

fn decode_params(s: &str) -> Result<Vec<(String, String)>, String> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| format!("parameter `{kv}` lacks `=`"))
        })
        .collect()
}

/// Float formatting that parses back to the same value.
fn float(x: f64) -> String {
    format!("{x:?}")
}

pub fn write_report<W: Write>(rows: &[ReportRow], out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| SimError::Report(e.to_string());
    w.write_record(REPORT_HEADER).map_err(err)?;
    for r in rows {
        w.write_record([
            r.cell.to_string(),
            encode_params(&r.params),
            float(r.t_i_ns),
            float(r.t_c_ns),
            float(r.c),
            r.median_ns.to_string(),
            r.p95_ns.to_string(),
            r.p99_ns.to_string(),
            float(r.ci_rel),
            r.iterations.to_string(),
            r.unstable.to_string(),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn report_to_string(rows: &[ReportRow]) -> String {
    let mut buf = Vec::new();
    write_report(rows, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}

/// Parses a report produced by [`write_report`].
pub fn parse_report(text: &str) -> Result<Vec<ReportRow>, SimError> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let bad = |line: usize, m: String| SimError::Report(format!("row {line}: {m}"));
    let header = rd
        .headers()
        .map_err(|e| SimError::Report(e.to_string()))?
        .clone();
    if header.iter().ne(REPORT_HEADER.iter().copied()) {
        return Err(SimError::Report("unexpected report header".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| bad(line, e.to_string()))?;
        if rec.len() != REPORT_HEADER.len() {
            return Err(bad(line, format!("expected {} fields", REPORT_HEADER.len())));
        }
        fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, String> {
            s.parse().map_err(|_| format!("bad {what} `{s}`"))
        }
        let parsed = (|| -> Result<ReportRow, String> {
            Ok(ReportRow {
                cell: num(&rec[0], "cell")?,
                params: decode_params(&rec[1])?,
                t_i_ns: num(&rec[2], "t_i_ns")?,
                t_c_ns: num(&rec[3], "t_c_ns")?,
                c: num(&rec[4], "c")?,
                median_ns: num(&rec[5], "median_ns")?,
                p95_ns: num(&rec[6], "p95_ns")?,
                p99_ns: num(&rec[7], "p99_ns")?,
                ci_rel: num(&rec[8], "ci_rel")?,
                iterations: num(&rec[9], "iterations")?,
                unstable: num(&rec[10], "unstable")?,
                error: (!rec[11].is_empty()).then(|| rec[11].to_string()),
            })
        })();
        rows.push(parsed.map_err(|m| bad(line, m))?);
    }
    Ok(rows)
}

/// One sample of a job's delivered bandwidth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub time_ns: u64,
    pub job: usize,
    pub gbps: f64,
}

/// Converts per-window payload byte counts into Gb/s samples stamped with
/// the window start.
pub fn series_points(series: &[Vec<u64>], window_ns: u64, until_ns: u64) -> Vec<SeriesPoint> {
    let bins = until_ns.div_ceil(window_ns) as usize;
    let mut out = Vec::with_capacity(bins * series.len());
    for bin in 0..bins {
        for (job, s) in series.iter().enumerate() {
            let bytes = s.get(bin).copied().unwrap_or(0);
            out.push(SeriesPoint {
                time_ns: bin as u64 * window_ns,
                job,
                gbps: bytes as f64 * 8.0 / window_ns as f64,
            });
        }
    }
    out
}

pub fn write_series<W: Write>(points: &[SeriesPoint], out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| SimError::Report(e.to_string());
    w.write_record(["time_ns", "job", "gbps"]).map_err(err)?;
    for p in points {
        w.write_record([p.time_ns.to_string(), p.job.to_string(), float(p.gbps)])
            .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace<W: Write>(records: &[TraceRecord], out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| SimError::Report(e.to_string());
    w.write_record(["time_ns", "switch", "kind", "in_port", "out_port", "packet"])
        .map_err(err)?;
    for r in records {
        w.write_record([
            r.time_ns.to_string(),
            r.switch.to_string(),
            r.kind.to_string(),
            r.in_port.to_string(),
            r.out_port.to_string(),
            r.packet.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_window_log<W: Write>(log: &[WindowChange], out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| SimError::Report(e.to_string());
    w.write_record(["time_ns", "src", "dst", "old_bytes", "new_bytes"])
        .map_err(err)?;
    for c in log {
        w.write_record([
            c.time_ns.to_string(),
            c.src.to_string(),
            c.dst.to_string(),
            c.old.to_string(),
            c.new.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}
