//! Coverage accounting and original-vs-replay timeline comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::ReplayPlan;
use crate::profile::{DurationTable, EventKind, ProfilerEvent};
use crate::sim::{union_len, OpSpan, SimTimeline};

pub const REPORT_VERSION: &str = "etreplay-report/1";

/// Op time used for coverage: CPU time plus kernel time.
pub const TIME_BASIS: &str = "cpu + kernel time per op";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("plan has no ops")]
    EmptyPlan,
    #[error("{side} timeline has node {node}, which is not in the plan")]
    NodeSpaceMismatch { side: &'static str, node: u64 },
    #[error("calibrated original time is zero")]
    ZeroBaseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Uncovered {
    pub name: String,
    pub count: usize,
    pub total_us: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub version: String,
    pub time_basis: String,
    pub total_ops: usize,
    pub covered_ops: usize,
    pub total_us: u64,
    pub covered_us: u64,
    pub count_pct: f64,
    pub time_pct: f64,
    /// Skipped ops grouped by name, most time first.
    pub uncovered: Vec<Uncovered>,
}

fn op_time(op: &crate::plan::ReplayOp) -> u64 {
    op.cpu_us.unwrap_or(0) + op.kernel_time_us()
}

pub fn coverage(plan: &ReplayPlan) -> Result<CoverageReport, MetricsError> {
    if plan.ops.is_empty() {
        return Err(MetricsError::EmptyPlan);
    }
    let total_ops = plan.ops.len();
    let covered_ops = plan.ops.iter().filter(|o| !o.skip).count();
    let total_us: u64 = plan.ops.iter().map(op_time).sum();
    let covered_us: u64 = plan.ops.iter().filter(|o| !o.skip).map(op_time).sum();
    let mut by_name: BTreeMap<&str, (usize, u64)> = BTreeMap::new();
    for op in plan.ops.iter().filter(|o| o.skip) {
        let e = by_name.entry(&op.name).or_default();
        e.0 += 1;
        e.1 += op_time(op);
    }
    let mut uncovered: Vec<Uncovered> = by_name
        .into_iter()
        .map(|(name, (count, total_us))| Uncovered { name: name.to_string(), count, total_us })
        .collect();
    uncovered.sort_by(|a, b| b.total_us.cmp(&a.total_us).then_with(|| a.name.cmp(&b.name)));
    let time_pct = if total_us == 0 {
        if covered_ops == total_ops {
            1.0
        } else {
            0.0
        }
    } else {
        covered_us as f64 / total_us as f64
    };
    Ok(CoverageReport {
        version: REPORT_VERSION.into(),
        time_basis: TIME_BASIS.into(),
        total_ops,
        covered_ops,
        total_us,
        covered_us,
        count_pct: covered_ops as f64 / total_ops as f64,
        time_pct,
        uncovered,
    })
}

/// Per-op spans of one rank plus its end-to-end time. Built from a
/// simulated timeline or from trace-event JSON whose events name their
/// trace node in `args.node_id`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpTimeline {
    pub makespan_us: u64,
    pub spans: BTreeMap<u64, OpSpan>,
}

impl From<&SimTimeline> for OpTimeline {
    fn from(t: &SimTimeline) -> Self {
        OpTimeline { makespan_us: t.makespan_us, spans: t.per_op.clone() }
    }
}

impl OpTimeline {
    /// Events of process `rank` (all processes when `None`). Events without
    /// a node id still count toward the end-to-end time.
    pub fn from_events(events: &[ProfilerEvent], rank: Option<i64>) -> OpTimeline {
        let mine: Vec<&ProfilerEvent> = events
            .iter()
            .filter(|e| rank.is_none_or(|r| e.pid == r))
            .filter(|e| e.kind != EventKind::Other || e.node_id.is_some())
            .collect();
        let origin = mine.iter().map(|e| e.start_us).min().unwrap_or(0);
        let makespan_us = mine.iter().map(|e| e.end_us()).max().map_or(0, |end| (end - origin) as u64);
        let mut spans: BTreeMap<u64, OpSpan> = BTreeMap::new();
        for e in &mine {
            let Some(node) = e.node_id else { continue };
            let (s, t) = ((e.start_us - origin) as u64, (e.end_us() - origin) as u64);
            let span = spans.entry(node).or_default();
            match e.kind {
                EventKind::CpuOp => {
                    span.name = e.name.clone();
                    span.cpu = Some(match span.cpu {
                        Some((a, b)) => (a.min(s), b.max(t)),
                        None => (s, t),
                    });
                }
                EventKind::Kernel => {
                    span.kernels.push((u32::try_from(e.stream.unwrap_or(0)).unwrap_or(0), s, t));
                }
                _ => {}
            }
        }
        for span in spans.values_mut() {
            span.kernels.sort_unstable();
        }
        OpTimeline { makespan_us, spans }
    }

    /// Spans from a profiler timeline correlated against its trace; kernels
    /// count toward the operator that launched them.
    pub fn from_correlated(table: &DurationTable, events: &[ProfilerEvent]) -> OpTimeline {
        let relevant = || events.iter().filter(|e| e.kind != EventKind::Other);
        let origin = relevant().map(|e| e.start_us).min().unwrap_or(0);
        let makespan_us = relevant().map(|e| e.end_us()).max().map_or(0, |end| (end - origin) as u64);
        let rel = |t: i64| (t - origin).max(0) as u64;
        let mut spans: BTreeMap<u64, OpSpan> = BTreeMap::new();
        for (&node, &(s, e)) in &table.cpu_span {
            spans.entry(node).or_default().cpu = Some((rel(s), rel(e)));
        }
        for (&node, ks) in &table.kernels {
            if ks.is_empty() {
                continue;
            }
            let span = spans.entry(node).or_default();
            span.kernels = ks.iter().map(|k| (k.stream, rel(k.start_us), rel(k.start_us + k.dur_us as i64))).collect();
            span.kernels.sort_unstable();
        }
        OpTimeline { makespan_us, spans }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpDelta {
    pub node_id: u64,
    pub name: String,
    pub original_us: u64,
    pub replay_us: u64,
    pub delta_us: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub version: String,
    pub e2e_original_us: u64,
    /// Original time with the footprint of skipped ops removed.
    pub e2e_calibrated_us: u64,
    pub e2e_replay_us: u64,
    /// Fraction: |replay - calibrated| / calibrated.
    pub e2e_error_pct: f64,
    /// Ops present in both timelines, largest absolute delta first.
    pub per_op_deltas: Vec<OpDelta>,
}

fn span_len(s: &OpSpan) -> u64 {
    s.extent().map_or(0, |(a, b)| b - a)
}

pub fn compare(
    original: &OpTimeline,
    replay: &OpTimeline,
    plan: &ReplayPlan,
) -> Result<ComparisonReport, MetricsError> {
    for (side, tl) in [("original", original), ("replay", replay)] {
        if let Some(&node) = tl.spans.keys().find(|n| plan.op(**n).is_none()) {
            return Err(MetricsError::NodeSpaceMismatch { side, node });
        }
    }
    let skipped: Vec<(u64, u64)> = plan
        .ops
        .iter()
        .filter(|o| o.skip)
        .filter_map(|o| original.spans.get(&o.node_id))
        .flat_map(|s| s.cpu.into_iter().chain(s.kernels.iter().map(|&(_, a, b)| (a, b))))
        .collect();
    let footprint = union_len(skipped);
    let calibrated = original.makespan_us.saturating_sub(footprint);
    if calibrated == 0 {
        return Err(MetricsError::ZeroBaseline);
    }
    let e2e_error_pct = (replay.makespan_us as f64 - calibrated as f64).abs() / calibrated as f64;

    let mut per_op_deltas: Vec<OpDelta> = original
        .spans
        .iter()
        .filter_map(|(&node, o)| {
            let r = replay.spans.get(&node)?;
            let (ou, ru) = (span_len(o), span_len(r));
            let name = plan.op(node).map(|op| op.name.clone()).unwrap_or_default();
            Some(OpDelta { node_id: node, name, original_us: ou, replay_us: ru, delta_us: ru as i64 - ou as i64 })
        })
        .collect();
    per_op_deltas
        .sort_by(|a, b| b.delta_us.unsigned_abs().cmp(&a.delta_us.unsigned_abs()).then(a.node_id.cmp(&b.node_id)));

    Ok(ComparisonReport {
        version: REPORT_VERSION.into(),
        e2e_original_us: original.makespan_us,
        e2e_calibrated_us: calibrated,
        e2e_replay_us: replay.makespan_us,
        e2e_error_pct,
        per_op_deltas,
    })
}

/// Pretty JSON with sorted keys and a trailing newline.
pub fn report_json<T: Serialize>(report: &T) -> String {
    let v = serde_json::to_value(report).expect("report serializes");
    let mut s = serde_json::to_string_pretty(&v).expect("value serializes");
    s.push('\n');
    s
}

fn pct(x: f64) -> String {
    format!("{:.1}%", x * 100.0)
}

pub fn render_coverage(r: &CoverageReport) -> String {
    let mut out = String::new();
    writeln!(out, "coverage ({})", r.time_basis).unwrap();
    writeln!(out, "  {:<8} {:>8} / {:<8} {:>7}", "count", r.covered_ops, r.total_ops, pct(r.count_pct)).unwrap();
    writeln!(out, "  {:<8} {:>8} / {:<8} {:>7}", "time_us", r.covered_us, r.total_us, pct(r.time_pct)).unwrap();
    if !r.uncovered.is_empty() {
        let w = r.uncovered.iter().map(|u| u.name.len()).max().unwrap_or(0).max(4);
        writeln!(out, "uncovered").unwrap();
        writeln!(out, "  {:<w$} {:>6} {:>12}", "name", "count", "total_us").unwrap();
        for u in &r.uncovered {
            writeln!(out, "  {:<w$} {:>6} {:>12}", u.name, u.count, u.total_us).unwrap();
        }
    }
    out
}

pub fn render_comparison(r: &ComparisonReport, max_rows: usize) -> String {
    let mut out = String::new();
    writeln!(out, "{:<16} {:>12}", "original_us", r.e2e_original_us).unwrap();
    writeln!(out, "{:<16} {:>12}", "calibrated_us", r.e2e_calibrated_us).unwrap();
    writeln!(out, "{:<16} {:>12}", "replay_us", r.e2e_replay_us).unwrap();
    writeln!(out, "{:<16} {:>12}", "error", format!("{:.2}%", r.e2e_error_pct * 100.0)).unwrap();
    let rows = &r.per_op_deltas[..r.per_op_deltas.len().min(max_rows)];
    if !rows.is_empty() {
        let w = rows.iter().map(|d| d.name.len()).max().unwrap_or(0).max(4);
        writeln!(out, "{:>8}  {:<w$} {:>12} {:>12} {:>10}", "node", "name", "original_us", "replay_us", "delta_us")
            .unwrap();
        for d in rows {
            writeln!(
                out,
                "{:>8}  {:<w$} {:>12} {:>12} {:>10}",
                d.node_id, d.name, d.original_us, d.replay_us, d.delta_us
            )
            .unwrap();
        }
    }
    out
}
