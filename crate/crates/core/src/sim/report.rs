//! Trace, summary and plot-data files.
//!
//! Trace file (comma-separated, one row per request):
//!
//! ```text
//! # cachenet-trace v1
//! # config-hash=<hex> tool-version=<semver>      (optional)
//! id,timestamp_s,true_class,base_prediction,served_prediction,hit_layer,latency_ms
//! 0,0,3,3,3,-,32
//! 1,1,4,4,4,3,13.05
//! ```
//!
//! `hit_layer` is `-` for a miss. The summary is a TOML document with the
//! fields of [`Summary`] behind a `# cachenet-summary v1` header.

use std::fmt::Write as _;

use super::{RequestTrace, Summary, TimelineRow};
use crate::textfmt::{self, Provenance};
use crate::{Error, Result};

const TRACE_FORMAT: &str = "trace";
const TRACE_COLUMNS: &str = "id,timestamp_s,true_class,base_prediction,served_prediction,hit_layer,latency_ms";

pub fn write_trace(traces: &[RequestTrace], prov: Option<&Provenance>) -> String {
    let mut out = String::with_capacity(traces.len() * 32);
    textfmt::write_header(&mut out, "trace", 1, prov);
    out.push_str(TRACE_COLUMNS);
    out.push('\n');
    for t in traces {
        let hit = t.hit_layer.map_or("-".to_owned(), |l| l.to_string());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            t.id, t.timestamp_s, t.true_class, t.base_prediction, t.served_prediction, hit, t.latency_ms
        );
    }
    out
}

pub fn parse_trace(text: &str) -> Result<Vec<RequestTrace>> {
    let mut lines = textfmt::numbered(text);
    textfmt::read_header(&mut lines, TRACE_FORMAT, "trace", 1)?;
    match lines.next() {
        Some((_, l)) if l.trim_end() == TRACE_COLUMNS => {}
        Some((n, _)) => return Err(Error::parse(TRACE_FORMAT, n, "missing column header")),
        None => return Err(Error::parse(TRACE_FORMAT, 1, "missing column header")),
    }
    let mut out = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 7 {
            return Err(Error::parse(TRACE_FORMAT, n, format!("expected 7 columns, found {}", f.len())));
        }
        let int = |i: usize, name: &str| textfmt::parse_usize(f[i], TRACE_FORMAT, n, name);
        let hit_layer = match f[5] {
            "-" => None,
            s => Some(textfmt::parse_usize(s, TRACE_FORMAT, n, "hit_layer")?),
        };
        let t = RequestTrace {
            id: int(0, "id")?,
            timestamp_s: textfmt::parse_f64(f[1], TRACE_FORMAT, n, "timestamp_s")?,
            true_class: int(2, "true_class")?,
            base_prediction: int(3, "base_prediction")?,
            served_prediction: int(4, "served_prediction")?,
            hit_layer,
            latency_ms: textfmt::parse_f64(f[6], TRACE_FORMAT, n, "latency_ms")?,
        };
        if t.latency_ms < 0.0 || t.timestamp_s < 0.0 {
            return Err(Error::parse(TRACE_FORMAT, n, "negative latency or timestamp"));
        }
        if t.hit_layer == Some(0) {
            return Err(Error::parse(TRACE_FORMAT, n, "hit_layer is 1-based"));
        }
        if t.hit_layer.is_none() && t.served_prediction != t.base_prediction {
            return Err(Error::parse(TRACE_FORMAT, n, "a miss must serve the base prediction"));
        }
        out.push(t);
    }
    Ok(out)
}

pub fn write_summary(s: &Summary, prov: Option<&Provenance>) -> String {
    let mut out = String::new();
    textfmt::write_header(&mut out, "summary", 1, prov);
    out.push_str(&toml::to_string(s).expect("summaries serialize"));
    out
}

/// Empirical CDF: one row per distinct latency.
pub fn write_latency_cdf(traces: &[RequestTrace], prov: Option<&Provenance>) -> String {
    let mut lat: Vec<f64> = traces.iter().map(|t| t.latency_ms).collect();
    lat.sort_by(f64::total_cmp);
    let mut out = String::new();
    textfmt::write_header(&mut out, "latency-cdf", 1, prov);
    out.push_str("latency_ms,cumulative_fraction\n");
    let n = lat.len() as f64;
    for (i, &l) in lat.iter().enumerate() {
        if lat.get(i + 1) != Some(&l) {
            let _ = writeln!(out, "{l},{}", (i + 1) as f64 / n);
        }
    }
    out
}

pub fn write_timeline(rows: &[TimelineRow], prov: Option<&Provenance>) -> String {
    let mut out = String::new();
    textfmt::write_header(&mut out, "timeline", 1, prov);
    out.push_str("interval,start_min,requests,hits,hit_rate,agreement\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.interval, r.start_min, r.requests, r.hits, r.hit_rate, r.agreement
        );
    }
    out
}
