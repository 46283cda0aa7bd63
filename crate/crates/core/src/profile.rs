//! Profiler timelines: trace-event ingestion, kernel-to-operator correlation
//! and stream assignment.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::graph::OpTimings;
use crate::trace::ExecutionTrace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    CpuOp,
    Kernel,
    RuntimeApi,
    Other,
}

impl EventKind {
    fn from_category(cat: &str) -> EventKind {
        if cat.contains("cpu_op") {
            EventKind::CpuOp
        } else if cat.contains("kernel") {
            EventKind::Kernel
        } else if cat.contains("runtime") {
            EventKind::RuntimeApi
        } else {
            EventKind::Other
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfilerEvent {
    pub kind: EventKind,
    pub name: String,
    pub start_us: i64,
    pub dur_us: u64,
    pub pid: i64,
    pub thread: i64,
    pub stream: Option<i64>,
    pub correlation: Option<i64>,
    pub external_id: Option<i64>,
    /// Trace node id, when the producer of the timeline knows it.
    pub node_id: Option<u64>,
}

impl ProfilerEvent {
    pub fn end_us(&self) -> i64 {
        self.start_us + self.dur_us as i64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParsedProfile {
    pub events: Vec<ProfilerEvent>,
    /// Complete events dropped for a missing or negative duration.
    pub dropped: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("malformed profiler document: {0}")]
    MalformedDocument(String),
    #[error("only {matched} of {selected} selected operators aligned with the profile (need {threshold:.0}%)")]
    NoAlignment { matched: usize, selected: usize, threshold: f64 },
}

/// Rounds microseconds half-up to an integer.
pub fn round_us(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

fn int_field(v: Option<&Value>) -> Option<i64> {
    match v? {
        Value::Number(n) => n.as_i64().or_else(|| n.as_f64().map(|f| f as i64)),
        Value::String(s) => {
            let digits: String = s
                .chars()
                .rev()
                .skip_while(|c| !c.is_ascii_digit())
                .take_while(char::is_ascii_digit)
                .collect::<Vec<_>>()
                .into_iter()
                .rev()
                .collect();
            digits.parse().ok()
        }
        _ => None,
    }
}

/// Extracts complete (`ph == "X"`) events from a trace-event document.
pub fn parse_profiler_trace(bytes: &[u8]) -> Result<ParsedProfile, ProfileError> {
    let doc: Value = serde_json::from_slice(bytes).map_err(|e| ProfileError::MalformedDocument(e.to_string()))?;
    let events = match &doc {
        Value::Object(m) => m
            .get("traceEvents")
            .and_then(Value::as_array)
            .ok_or_else(|| ProfileError::MalformedDocument("missing `traceEvents` array".into()))?,
        Value::Array(a) => a,
        _ => return Err(ProfileError::MalformedDocument("expected an object or array".into())),
    };
    let mut out = ParsedProfile::default();
    for ev in events {
        let Some(obj) = ev.as_object() else {
            return Err(ProfileError::MalformedDocument(format!("event is not an object: {ev}")));
        };
        if obj.get("ph").and_then(Value::as_str) != Some("X") {
            continue;
        }
        let dur = obj.get("dur").and_then(Value::as_f64);
        let Some(dur) = dur.filter(|d| *d >= 0.0) else {
            out.dropped += 1;
            continue;
        };
        let ts = obj
            .get("ts")
            .and_then(Value::as_f64)
            .ok_or_else(|| ProfileError::MalformedDocument(format!("event without numeric `ts`: {ev}")))?;
        let cat = obj.get("cat").and_then(Value::as_str).unwrap_or("");
        let args = obj.get("args");
        let arg = |k: &str| int_field(args.and_then(|a| a.get(k)));
        out.events.push(ProfilerEvent {
            kind: EventKind::from_category(cat),
            name: obj.get("name").and_then(Value::as_str).unwrap_or("").to_string(),
            start_us: round_us(ts),
            dur_us: round_us(dur) as u64,
            pid: int_field(obj.get("pid")).unwrap_or(0),
            thread: int_field(obj.get("tid")).unwrap_or(0),
            stream: arg("stream"),
            correlation: arg("correlation"),
            external_id: arg("External id"),
            node_id: arg("node_id").and_then(|n| u64::try_from(n).ok()),
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelRecord {
    pub op_node: u64,
    pub name: String,
    pub stream: u32,
    pub start_us: i64,
    pub dur_us: u64,
    /// Position of this kernel in its stream's issue order.
    pub issue_index: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DurationTable {
    pub cpu_us: BTreeMap<u64, u64>,
    /// (start, end) of each matched operator's CPU event.
    pub cpu_span: BTreeMap<u64, (i64, i64)>,
    pub kernels: BTreeMap<u64, Vec<KernelRecord>>,
    pub unmatched_kernels: Vec<ProfilerEvent>,
    /// Selected operators with no matching CPU event.
    pub unmatched_ops: Vec<u64>,
}

impl DurationTable {
    pub fn kernel_time_us(&self) -> u64 {
        self.kernels.values().flatten().map(|k| k.dur_us).sum()
    }

    pub fn timings(&self) -> OpTimings {
        OpTimings { cpu_us: self.cpu_us.clone(), exposed_gpu_us: exposed_gpu_us(self) }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CorrelateOptions {
    /// Minimum fraction of selected operators that must align.
    pub min_aligned: f64,
}

impl Default for CorrelateOptions {
    fn default() -> Self {
        CorrelateOptions { min_aligned: 0.9 }
    }
}

fn kernel_stream(ev: &ProfilerEvent) -> u32 {
    u32::try_from(ev.stream.unwrap_or(ev.thread)).unwrap_or(0)
}

/// Maps profiler threads onto trace thread labels. Identity when every
/// profiler thread already is a trace label, otherwise by order of first
/// appearance on each side.
fn thread_map(trace: &ExecutionTrace, cpu_ops: &[&ProfilerEvent]) -> HashMap<i64, u32> {
    let mut trace_first: BTreeMap<u32, u64> = BTreeMap::new();
    for n in &trace.nodes {
        let e = trace_first.entry(n.tid).or_insert(n.id);
        *e = (*e).min(n.id);
    }
    let mut prof_first: HashMap<i64, i64> = HashMap::new();
    for ev in cpu_ops {
        let e = prof_first.entry(ev.thread).or_insert(ev.start_us);
        *e = (*e).min(ev.start_us);
    }
    if prof_first.keys().all(|t| u32::try_from(*t).is_ok_and(|t| trace_first.contains_key(&t))) {
        return prof_first.keys().map(|&t| (t, t as u32)).collect();
    }
    let mut trace_order: Vec<(u64, u32)> = trace_first.iter().map(|(&t, &id)| (id, t)).collect();
    trace_order.sort_unstable();
    let mut prof_order: Vec<(i64, i64)> = prof_first.iter().map(|(&t, &s)| (s, t)).collect();
    prof_order.sort_unstable();
    prof_order.into_iter().zip(trace_order).map(|((_, pt), (_, tt))| (pt, tt)).collect()
}

/// Attributes kernels to selected operators and collects per-op CPU time.
///
/// CPU events align with trace nodes by (thread, per-thread occurrence of
/// the name). A kernel finds its CPU event by correlation id, then through a
/// runtime-API event's external id, then by its own external id.
pub fn correlate(
    trace: &ExecutionTrace,
    selected: &[u64],
    events: &[ProfilerEvent],
    opts: CorrelateOptions,
) -> Result<DurationTable, ProfileError> {
    let cpu_idx: Vec<usize> = (0..events.len()).filter(|&i| events[i].kind == EventKind::CpuOp).collect();
    let cpu_refs: Vec<&ProfilerEvent> = cpu_idx.iter().map(|&i| &events[i]).collect();
    let tmap = thread_map(trace, &cpu_refs);

    // trace side: (thread, name) -> node ids in execution order
    let mut by_name: HashMap<(u32, &str), Vec<u64>> = HashMap::new();
    let mut nodes: Vec<_> = trace.nodes.iter().collect();
    nodes.sort_by_key(|n| n.id);
    for n in &nodes {
        by_name.entry((n.tid, n.name.as_str())).or_default().push(n.id);
    }

    let mut ordered = cpu_idx.clone();
    ordered.sort_by_key(|&i| (events[i].start_us, std::cmp::Reverse(events[i].dur_us), i));
    let mut seen: HashMap<(u32, &str), usize> = HashMap::new();
    let mut event_node: HashMap<usize, u64> = HashMap::new();
    for i in ordered {
        let ev = &events[i];
        let Some(&t) = tmap.get(&ev.thread) else { continue };
        let key = (t, ev.name.as_str());
        let k = seen.entry(key).or_insert(0);
        if let Some(&node) = by_name.get(&key).and_then(|ids| ids.get(*k)) {
            event_node.insert(i, node);
        }
        *k += 1;
    }

    // owner: the selected ancestor-or-self of each node
    let sel: BTreeSet<u64> = selected.iter().copied().collect();
    let mut owner: HashMap<u64, u64> = HashMap::new();
    for n in &nodes {
        if sel.contains(&n.id) {
            owner.insert(n.id, n.id);
        } else if let Some(o) = n.parent.and_then(|p| owner.get(&p).copied()) {
            owner.insert(n.id, o);
        }
    }

    let mut table = DurationTable::default();
    for (&i, &node) in &event_node {
        if sel.contains(&node) {
            table.cpu_us.insert(node, events[i].dur_us);
            table.cpu_span.insert(node, (events[i].start_us, events[i].end_us()));
        }
    }
    table.unmatched_ops = selected.iter().copied().filter(|id| !table.cpu_us.contains_key(id)).collect();
    let matched = selected.len() - table.unmatched_ops.len();
    if !selected.is_empty() && (matched as f64) < opts.min_aligned * selected.len() as f64 {
        return Err(ProfileError::NoAlignment {
            matched,
            selected: selected.len(),
            threshold: opts.min_aligned * 100.0,
        });
    }

    let mut cpu_by_corr: HashMap<i64, usize> = HashMap::new();
    let mut cpu_by_ext: HashMap<i64, usize> = HashMap::new();
    let mut rt_by_corr: HashMap<i64, usize> = HashMap::new();
    for (i, ev) in events.iter().enumerate() {
        match ev.kind {
            EventKind::CpuOp => {
                if let Some(c) = ev.correlation {
                    cpu_by_corr.entry(c).or_insert(i);
                }
                if let Some(x) = ev.external_id {
                    cpu_by_ext.entry(x).or_insert(i);
                }
            }
            EventKind::RuntimeApi => {
                if let Some(c) = ev.correlation {
                    rt_by_corr.entry(c).or_insert(i);
                }
            }
            _ => {}
        }
    }
    let launcher = |k: &ProfilerEvent| -> Option<usize> {
        if let Some(c) = k.correlation {
            if let Some(&i) = cpu_by_corr.get(&c) {
                return Some(i);
            }
            if let Some(&r) = rt_by_corr.get(&c) {
                if let Some(i) = events[r].external_id.and_then(|x| cpu_by_ext.get(&x)) {
                    return Some(*i);
                }
            }
        }
        k.external_id.and_then(|x| cpu_by_ext.get(&x).copied())
    };

    let mut kernel_idx: Vec<usize> = (0..events.len()).filter(|&i| events[i].kind == EventKind::Kernel).collect();
    kernel_idx.sort_by_key(|&i| (kernel_stream(&events[i]), events[i].start_us, i));
    let mut next_issue: HashMap<u32, u64> = HashMap::new();
    for &id in selected {
        table.kernels.insert(id, Vec::new());
    }
    for i in kernel_idx {
        let ev = &events[i];
        let stream = kernel_stream(ev);
        let slot = next_issue.entry(stream).or_insert(0);
        let issue_index = *slot;
        *slot += 1;
        let op = launcher(ev).and_then(|c| event_node.get(&c)).and_then(|n| owner.get(n)).copied();
        match op {
            Some(op_node) => table.kernels.entry(op_node).or_default().push(KernelRecord {
                op_node,
                name: ev.name.clone(),
                stream,
                start_us: ev.start_us,
                dur_us: ev.dur_us,
                issue_index,
            }),
            None => table.unmatched_kernels.push(ev.clone()),
        }
    }
    for ks in table.kernels.values_mut() {
        ks.sort_by_key(|k| (k.start_us, k.stream, k.issue_index));
    }
    Ok(table)
}

/// Primary stream per operator: the stream carrying most of its kernel time
/// (lowest id on ties); kernel-less operators map to stream 0.
pub fn assign_streams(table: &DurationTable) -> BTreeMap<u64, u32> {
    let mut ids: BTreeSet<u64> = table.kernels.keys().copied().collect();
    ids.extend(table.cpu_us.keys().copied());
    ids.into_iter()
        .map(|id| {
            let mut per: BTreeMap<u32, u64> = BTreeMap::new();
            for k in table.kernels.get(&id).into_iter().flatten() {
                *per.entry(k.stream).or_insert(0) += k.dur_us;
            }
            let best = per.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(&s, _)| s).unwrap_or(0);
            (id, best)
        })
        .collect()
}

/// Kernel time of each operator during which no other operator's kernel runs.
pub fn exposed_gpu_us(table: &DurationTable) -> BTreeMap<u64, u64> {
    let mut edges: Vec<(i64, bool, u64)> = Vec::new();
    for k in table.kernels.values().flatten() {
        if k.dur_us == 0 {
            continue;
        }
        edges.push((k.start_us, true, k.op_node));
        edges.push((k.start_us + k.dur_us as i64, false, k.op_node));
    }
    // ends before starts at equal timestamps
    edges.sort_by_key(|&(t, start, op)| (t, start, op));
    let mut active: BTreeMap<u64, u32> = BTreeMap::new();
    let mut out: BTreeMap<u64, u64> = table.kernels.keys().map(|&k| (k, 0)).collect();
    let mut last = None;
    for (t, start, op) in edges {
        if let Some(prev) = last {
            if t > prev && active.len() == 1 {
                let (&only, _) = active.iter().next().unwrap();
                *out.entry(only).or_insert(0) += (t - prev) as u64;
            }
        }
        last = Some(t);
        if start {
            *active.entry(op).or_insert(0) += 1;
        } else if let Some(c) = active.get_mut(&op) {
            *c -= 1;
            if *c == 0 {
                active.remove(&op);
            }
        }
    }
    out
}
