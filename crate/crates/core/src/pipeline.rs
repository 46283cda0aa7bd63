//! End-to-end stages shared by the command-line tool and the tests.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::graph::{breakdown, classify_tensors, select_replay_ops, Breakdown, OpCategory, OpTimings, Taxonomy};
use crate::metrics::OpTimeline;
use crate::plan::{
    build_plan, extract_subtrace, filter_by_category, BuildError, BuildInputs, PlanConfig, Registry, ReplayPlan,
    SubtraceError,
};
use crate::profile::{assign_streams, correlate, CorrelateOptions, ProfileError, ProfilerEvent};
use crate::trace::ExecutionTrace;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Subtrace(#[from] SubtraceError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Build(#[from] BuildError),
}

#[derive(Clone, Debug, Default)]
pub struct PlanOptions {
    /// Replay only the subtree under the node with this name.
    pub subtrace: Option<String>,
    /// Categories to keep; everything else is marked skipped.
    pub keep: Option<BTreeSet<OpCategory>>,
    pub registry: Registry,
    pub taxonomy: Taxonomy,
    pub config: PlanConfig,
    pub correlate: CorrelateOptions,
}

/// Selection, correlation, tensor classification and plan assembly.
///
/// Profiler events are always matched against the full trace, since CPU
/// events align by per-thread occurrence order; the subtrace only narrows
/// which operators end up in the plan.
pub fn plan_from_trace(
    trace: &ExecutionTrace,
    events: &[ProfilerEvent],
    opts: &PlanOptions,
) -> Result<ReplayPlan, PipelineError> {
    let sub;
    let scope = match &opts.subtrace {
        Some(label) => {
            sub = extract_subtrace(trace, label)?;
            &sub
        }
        None => trace,
    };
    let selection = select_replay_ops(scope, &opts.taxonomy);
    let durations = correlate(trace, &selection, events, opts.correlate)?;
    let streams = assign_streams(&durations);
    let classification = classify_tensors(scope, &selection);
    let plan = build_plan(&BuildInputs {
        trace: scope,
        selection: &selection,
        classification: &classification,
        durations: &durations,
        streams: &streams,
        registry: &opts.registry,
        taxonomy: &opts.taxonomy,
        config: &opts.config,
    })?;
    Ok(match &opts.keep {
        Some(keep) => filter_by_category(&plan, keep),
        None => plan,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Analysis {
    pub nodes: usize,
    pub selected: usize,
    pub intermediate_tensors: usize,
    pub external_tensors: usize,
    pub category_counts: BTreeMap<String, usize>,
    /// Present when there is at least one selected operator.
    pub breakdown: Option<Breakdown>,
    pub unmatched_kernels: usize,
}

/// Operator selection, tensor classification and the per-category breakdown.
/// Without profiler events only the count shares are meaningful.
pub fn analyze(
    trace: &ExecutionTrace,
    events: Option<&[ProfilerEvent]>,
    taxonomy: &Taxonomy,
    opts: CorrelateOptions,
) -> Result<Analysis, PipelineError> {
    let selection = select_replay_ops(trace, taxonomy);
    let cls = classify_tensors(trace, &selection);
    let (timings, unmatched_kernels) = match events {
        Some(ev) => {
            let table = correlate(trace, &selection, ev, opts)?;
            (table.timings(), table.unmatched_kernels.len())
        }
        None => (OpTimings::default(), 0),
    };
    let index = trace.index();
    let mut category_counts: BTreeMap<String, usize> = OpCategory::ALL.iter().map(|c| (c.to_string(), 0)).collect();
    for &id in &selection {
        if let Some(n) = index.node(id) {
            *category_counts.get_mut(&taxonomy.categorize(&n.name).to_string()).unwrap() += 1;
        }
    }
    Ok(Analysis {
        nodes: trace.nodes.len(),
        selected: selection.len(),
        intermediate_tensors: cls.intermediate.len(),
        external_tensors: cls.external.len(),
        category_counts,
        breakdown: breakdown(trace, &selection, taxonomy, &timings).ok(),
        unmatched_kernels,
    })
}

pub fn render_analysis(a: &Analysis) -> String {
    let mut out = String::new();
    writeln!(out, "{:<22} {:>8}", "nodes", a.nodes).unwrap();
    writeln!(out, "{:<22} {:>8}", "selected operators", a.selected).unwrap();
    writeln!(out, "{:<22} {:>8}", "intermediate tensors", a.intermediate_tensors).unwrap();
    writeln!(out, "{:<22} {:>8}", "external tensors", a.external_tensors).unwrap();
    if a.unmatched_kernels > 0 {
        writeln!(out, "{:<22} {:>8}", "unmatched kernels", a.unmatched_kernels).unwrap();
    }
    if let Some(b) = &a.breakdown {
        writeln!(out, "{:<14} {:>7} {:>8} {:>9} {:>11}", "category", "ops", "count", "cpu_time", "exposed_gpu")
            .unwrap();
        for c in OpCategory::ALL {
            writeln!(
                out,
                "{:<14} {:>7} {:>7.1}% {:>8.1}% {:>10.1}%",
                c.to_string(),
                a.category_counts[&c.to_string()],
                b.count.get(c) * 100.0,
                b.cpu_time.get(c) * 100.0,
                b.exposed_gpu_time.get(c) * 100.0
            )
            .unwrap();
        }
    }
    out
}

/// Per-op timeline of a recorded profile, attributed to the plan's operators.
pub fn recorded_timeline(
    trace: &ExecutionTrace,
    plan: &ReplayPlan,
    events: &[ProfilerEvent],
    opts: CorrelateOptions,
) -> Result<OpTimeline, PipelineError> {
    let selection: Vec<u64> = plan.ops.iter().map(|o| o.node_id).collect();
    let table = correlate(trace, &selection, events, opts)?;
    Ok(OpTimeline::from_correlated(&table, events))
}
