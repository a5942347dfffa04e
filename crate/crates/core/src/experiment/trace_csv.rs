//! Convergence trace as CSV, one row per iteration.
//!
//! Floats use the shortest representation that parses back to the same
//! bits; absent values are empty fields.

use crate::solver::ConvergenceTrace;
use std::fmt::Write as _;
use std::io::{self, Write};

pub const TRACE_HEADER: &str = "iter,iterate_change,objective,psnr,subgrad_norm";

/// One parsed CSV row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub iterate_change: f64,
    pub objective: Option<f64>,
    pub psnr: Option<f64>,
    pub subgrad_norm: Option<f64>,
}

fn push_float(line: &mut String, v: Option<f64>) {
    line.push(',');
    if let Some(v) = v {
        write!(line, "{v:e}").expect("writing to a String");
    }
}

pub fn trace_to_csv(trace: &ConvergenceTrace) -> String {
    let mut out = String::with_capacity(64 * (trace.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for e in &trace.entries {
        write!(out, "{}", e.iter).expect("writing to a String");
        push_float(&mut out, Some(e.iterate_change));
        push_float(&mut out, e.objective);
        push_float(&mut out, e.psnr);
        push_float(&mut out, e.subgrad_norm);
        out.push('\n');
    }
    out
}

pub fn write_trace_csv(trace: &ConvergenceTrace, mut w: impl Write) -> io::Result<()> {
    w.write_all(trace_to_csv(trace).as_bytes())?;
    w.flush()
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == TRACE_HEADER => {}
        other => return Err(format!("bad header {other:?}")),
    }
    let opt = |field: &str, line: usize| -> Result<Option<f64>, String> {
        if field.is_empty() {
            Ok(None)
        } else {
            field
                .parse()
                .map(Some)
                .map_err(|e| format!("line {line}: {field:?}: {e}"))
        }
    };
    lines
        .enumerate()
        .map(|(i, line)| {
            let lineno = i + 2;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(format!("line {lineno}: expected 5 fields, got {}", fields.len()));
            }
            Ok(TraceRow {
                iter: fields[0].parse().map_err(|e| format!("line {lineno}: iter: {e}"))?,
                iterate_change: opt(fields[1], lineno)?
                    .ok_or_else(|| format!("line {lineno}: iterate_change is required"))?,
                objective: opt(fields[2], lineno)?,
                psnr: opt(fields[3], lineno)?,
                subgrad_norm: opt(fields[4], lineno)?,
            })
        })
        .collect()
}
