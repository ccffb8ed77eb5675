//! CSV and JSON artifacts for runs and comparisons.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::compare::ComparisonReport;
use super::sim::{SimTrace, TraceSummary};
use crate::error::{Error, Result};
use crate::selection::messages_jsonl;

/// Rounds to six significant digits.
pub fn sig6(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

fn write(path: &Path, contents: &str) -> Result<PathBuf> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, &e))?;
    }
    fs::write(path, contents).map_err(|e| io_error(path, &e))?;
    Ok(path.to_path_buf())
}

fn io_error(path: &Path, e: &std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// `t,leader,metric,topology,u_r_1..u_r_d`, one row per step, 1-based ids.
/// Falls back to one row per tick when steps were not recorded.
pub fn trace_csv(trace: &SimTrace) -> String {
    let d = trace.config.dimension;
    let mut out = String::from("t,leader,metric,topology");
    for i in 1..=d {
        let _ = write!(out, ",u_r_{i}");
    }
    out.push('\n');
    let mut row = |t: f64, leader: usize, metric: f64, topology: usize| {
        let _ = write!(out, "{t},{},{metric},{}", leader + 1, topology + 1);
        for v in trace.reference.value_at(t) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    };
    if trace.config.record_steps {
        for s in &trace.steps {
            row(s.t, s.leader, s.metric, s.topology);
        }
    } else if trace.config.total_steps() > 0 {
        for k in &trace.ticks {
            row(k.t, k.leader, k.metric, k.topology);
        }
    }
    out
}

pub fn summary_json(summary: &TraceSummary) -> Value {
    let mut v = json!({
        "strategy": summary.strategy.name(),
        "avg_metric": sig6(summary.avg_metric),
        "avg_norm": sig6(summary.avg_norm),
        "final_metric": sig6(summary.final_metric),
        "switches_per_quarter": summary.switches_per_quarter,
        "total_switches": summary.total_switches,
    });
    if let Some(f) = summary.leader_match_fraction {
        v["leader_match_fraction"] = json!(sig6(f));
    }
    if let Some(errs) = summary.max_aggregate_error {
        v["max_aggregate_error"] = json!(errs.map(sig6));
    }
    v
}

fn trace_summary_json(trace: &SimTrace) -> Value {
    let mut v = summary_json(&trace.summary);
    v["seed"] = json!(trace.config.seed);
    v["gains"] = serde_json::to_value(trace.gains).unwrap_or(Value::Null);
    v["warnings"] = json!(trace.warnings);
    v["decentralized_divergences"] = json!(trace.divergences.len());
    v
}

/// Columns `t` and one `<prefix><strategy>` per trace, on the shared step grid.
fn aligned_csv(traces: &[&SimTrace], value: impl Fn(&SimTrace, usize) -> String) -> String {
    let mut out = String::from("t");
    for t in traces {
        let _ = write!(out, ",{}", t.summary.strategy.name());
    }
    out.push('\n');
    let rows = traces.iter().map(|t| t.steps.len()).min().unwrap_or(0);
    for i in 0..rows {
        let _ = write!(out, "{}", traces[0].steps[i].t);
        for t in traces {
            let _ = write!(out, ",{}", value(t, i));
        }
        out.push('\n');
    }
    out
}

pub fn leader_plot_csv(traces: &[&SimTrace]) -> String {
    aligned_csv(traces, |t, i| (t.steps[i].leader + 1).to_string())
}

pub fn metric_plot_csv(traces: &[&SimTrace]) -> String {
    aligned_csv(traces, |t, i| t.steps[i].metric.to_string())
}

/// `t,agent,estimate_kind,value`.
pub fn filter_csv(trace: &SimTrace) -> String {
    let mut out = String::from("t,agent,estimate_kind,value\n");
    for s in &trace.filter_samples {
        let _ = writeln!(out, "{},{},{},{}", s.t, s.agent, s.estimate_kind, s.value);
    }
    out
}

/// Writes the artifacts of a single run: `trace.csv`, `summary.json`,
/// `plot_leader.csv`, `plot_metric.csv`, plus the configured message log and
/// filter trace.
pub fn emit_run(trace: &SimTrace, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = vec![
        write(&dir.join("trace.csv"), &trace_csv(trace))?,
        write(
            &dir.join("summary.json"),
            &serde_json::to_string_pretty(&trace_summary_json(trace)).expect("plain json"),
        )?,
        write(&dir.join("plot_leader.csv"), &leader_plot_csv(&[trace]))?,
        write(&dir.join("plot_metric.csv"), &metric_plot_csv(&[trace]))?,
    ];
    written.extend(emit_side_channels(trace, "")?);
    Ok(written)
}

fn emit_side_channels(trace: &SimTrace, suffix: &str) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let outputs = &trace.config.outputs;
    if let Some(path) = &outputs.messages {
        written.push(write(&with_suffix(path, suffix), &messages_jsonl(&trace.messages))?);
    }
    if let Some(path) = &outputs.filter_trace {
        written.push(write(&with_suffix(path, suffix), &filter_csv(trace))?);
    }
    Ok(written)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    if suffix.is_empty() {
        return path.to_path_buf();
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let name = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_{suffix}.{ext}"),
        None => format!("{stem}_{suffix}"),
    };
    path.with_file_name(name)
}

/// Writes per-strategy traces and summaries, the aligned plot data and
/// `comparison.json`.
pub fn emit_comparison(traces: &[SimTrace], report: &ComparisonReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for t in traces {
        let name = t.summary.strategy.name();
        written.push(write(&dir.join(format!("trace_{name}.csv")), &trace_csv(t))?);
        written.push(write(
            &dir.join(format!("summary_{name}.json")),
            &serde_json::to_string_pretty(&trace_summary_json(t)).expect("plain json"),
        )?);
        written.extend(emit_side_channels(t, name)?);
    }
    let refs: Vec<&SimTrace> = traces.iter().collect();
    written.push(write(&dir.join("plot_leader.csv"), &leader_plot_csv(&refs))?);
    written.push(write(&dir.join("plot_metric.csv"), &metric_plot_csv(&refs))?);
    written.push(write(
        &dir.join("comparison.json"),
        &serde_json::to_string_pretty(&comparison_json(report)).expect("plain json"),
    )?);
    Ok(written)
}

pub fn comparison_json(report: &ComparisonReport) -> Value {
    json!({
        "seed": report.seed,
        "strategies": report.summaries.iter().map(summary_json).collect::<Vec<_>>(),
        "first_order_ordering": report.first_order_ordering(),
        "constant_is_worst": report.constant_is_worst(),
    })
}
