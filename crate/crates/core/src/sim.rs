//! Deterministic multi-rank discrete-event simulation of replay plans.
//!
//! Model:
//! - each CPU thread runs its ops in plan order, one at a time;
//! - an op's kernels are issued `launch_overhead_us` after its CPU time ends
//!   and run FIFO (by issue time) on their stream; streams overlap freely;
//! - a kernel waits for every kernel of the ops producing its bound inputs,
//!   and an op's CPU dispatch waits for those producers' CPU dispatch;
//! - a collective starts once every simulated member rank has it at the head
//!   of its stream, then occupies each member's stream for the same span;
//! - a blocking communication op holds its thread until the collective ends.
//!
//! Ties are broken by (time, rank, node id), so runs are bit-identical.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::plan::{AlphaBetaModel, CommCostModel, ReplayOp, ReplayPlan};

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub launch_overhead_us: u64,
    /// CPU time for ops whose profile had no matching event.
    pub default_cpu_us: u64,
    /// Overrides recorded collective durations when set.
    pub comm_model: Option<AlphaBetaModel>,
    /// Fill seed handed to replayers that materialize tensors; the
    /// simulation itself is deterministic and draws no random numbers.
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { launch_overhead_us: 5, default_cpu_us: 2, comm_model: None, seed: 0 }
    }
}

impl SimConfig {
    /// Keys: `launch_overhead_us`, `default_cpu_us`, `seed`, and an optional
    /// `[comm_model]` table in the cost-model format.
    pub fn from_toml(text: &str) -> Result<SimConfig, String> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
        let mut cfg = SimConfig::default();
        for (k, v) in &table {
            let int = || {
                v.as_integer()
                    .and_then(|i| u64::try_from(i).ok())
                    .ok_or_else(|| format!("`{k}` must be a non-negative integer"))
            };
            match k.as_str() {
                "launch_overhead_us" => cfg.launch_overhead_us = int()?,
                "default_cpu_us" => cfg.default_cpu_us = int()?,
                "seed" => cfg.seed = int()?,
                "comm_model" => {
                    let sub = v.as_table().ok_or("`comm_model` must be a table")?;
                    let text = toml::to_string(sub).map_err(|e| e.to_string())?;
                    cfg.comm_model = Some(AlphaBetaModel::from_toml(&text).map_err(|e| e.to_string())?);
                }
                other => return Err(format!("unknown key `{other}`")),
            }
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resource {
    CpuThread(u32),
    Stream(u32),
    Network(u32),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimEvent {
    pub rank: u32,
    pub resource: Resource,
    pub node_id: u64,
    pub start_us: u64,
    pub end_us: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpSpan {
    pub name: String,
    pub cpu: Option<(u64, u64)>,
    /// (stream, start, end) per kernel.
    pub kernels: Vec<(u32, u64, u64)>,
    pub comm: bool,
}

impl OpSpan {
    /// Earliest start and latest end over the op's CPU and kernel spans.
    pub fn extent(&self) -> Option<(u64, u64)> {
        let iter = self.cpu.into_iter().chain(self.kernels.iter().map(|&(_, s, e)| (s, e)));
        iter.fold(None, |acc, (s, e)| match acc {
            None => Some((s, e)),
            Some((a, b)) => Some((a.min(s), b.max(e))),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimTimeline {
    pub rank: u32,
    pub events: Vec<SimEvent>,
    pub makespan_us: u64,
    pub exposed_comm_gpu_us: u64,
    pub per_op: BTreeMap<u64, OpSpan>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockedOp {
    pub rank: u32,
    pub node_id: u64,
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("deadlock: {} op(s) blocked, first: rank {} node {} {} ({})", .0.len(), .0[0].rank, .0[0].node_id, .0[0].name, .0[0].reason)]
    Deadlock(Vec<BlockedOp>),
    #[error("internal error: time went backwards ({now} -> {next})")]
    NegativeTime { now: u64, next: u64 },
    #[error("duplicate plan for rank {0}")]
    DuplicateRank(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum CollKey {
    Group { group: u32, pos: usize },
    P2p { group: u32, src: u32, dst: u32, pos: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Channel {
    Group(u32),
    P2p { group: u32, src: u32, dst: u32 },
}

#[derive(Clone, Debug)]
struct Task {
    op: usize,
    issue: u64,
    kernel: usize,
    dur: u64,
    coll: Option<CollKey>,
}

impl Task {
    fn order_key(&self, node: u64) -> (u64, u64, usize) {
        (self.issue, node, self.kernel)
    }
}

#[derive(Default)]
struct StreamState {
    pending: VecDeque<Task>,
    running: bool,
}

#[derive(Default)]
struct ThreadState {
    queue: VecDeque<usize>,
    busy: bool,
}

#[derive(Default)]
struct OpState {
    producers: Vec<usize>,
    cpu_start: Option<u64>,
    cpu_end: Option<u64>,
    tasks_left: usize,
    done_at: Option<u64>,
    holds_thread: bool,
    channel: Option<Channel>,
    /// Assigned when the op issues: collectives pair up across ranks by
    /// their issue order on each channel.
    coll: Option<CollKey>,
}

struct RankSim<'a> {
    rank: u32,
    ops: Vec<&'a ReplayOp>,
    state: Vec<OpState>,
    threads: BTreeMap<u32, ThreadState>,
    streams: BTreeMap<u32, StreamState>,
    issued: HashMap<Channel, usize>,
    events: Vec<SimEvent>,
    per_op: BTreeMap<u64, OpSpan>,
}

struct CollState {
    expected: Vec<u32>,
    ready: BTreeMap<u32, (usize, u32)>,
    started: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    CpuDone { op: usize },
    TaskDone { stream: u32, op: usize },
    Wake,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Pending {
    time: u64,
    rank: u32,
    node: u64,
    seq: u64,
    rank_idx: usize,
    ev: Ev,
}

struct Engine<'a> {
    cfg: &'a SimConfig,
    world: u32,
    ranks: Vec<RankSim<'a>>,
    colls: BTreeMap<CollKey, CollState>,
    heap: BinaryHeap<Reverse<Pending>>,
    seq: u64,
}

impl<'a> RankSim<'a> {
    fn new(plan: &'a ReplayPlan) -> Self {
        let ops: Vec<&ReplayOp> = plan.ops.iter().filter(|o| !o.skip).collect();
        let mut latest: HashMap<&crate::trace::TensorId, usize> = HashMap::new();
        let mut state = Vec::with_capacity(ops.len());
        let mut threads: BTreeMap<u32, ThreadState> = BTreeMap::new();
        for (i, op) in ops.iter().enumerate() {
            let mut producers: Vec<usize> =
                op.bound_ids().into_iter().filter_map(|id| latest.get(id).copied()).collect();
            producers.sort_unstable();
            producers.dedup();
            let channel = op.comm.as_ref().map(|c| {
                if c.collective.is_p2p() {
                    let peer = c.peer.unwrap_or(plan.rank);
                    match c.collective {
                        crate::plan::Collective::Send => Channel::P2p { group: c.group_id, src: plan.rank, dst: peer },
                        _ => Channel::P2p { group: c.group_id, src: peer, dst: plan.rank },
                    }
                } else {
                    Channel::Group(c.group_id)
                }
            });
            let tasks = if channel.is_some() { 1 } else { op.kernels.len() };
            state.push(OpState { producers, tasks_left: tasks, channel, ..Default::default() });
            threads.entry(op.thread).or_default().queue.push_back(i);
            for t in &op.outputs {
                latest.insert(&t.id, i);
            }
        }
        RankSim {
            rank: plan.rank,
            ops,
            state,
            threads,
            streams: BTreeMap::new(),
            issued: HashMap::new(),
            events: Vec::new(),
            per_op: BTreeMap::new(),
        }
    }

    fn comm_stream(op: &ReplayOp) -> u32 {
        op.kernels.first().map(|k| k.stream).unwrap_or(op.stream)
    }

    fn deps_done(&self, op: usize, now: u64) -> bool {
        self.state[op].producers.iter().all(|&p| self.state[p].done_at.is_some_and(|t| t <= now))
    }

    fn insert_task(&mut self, stream: u32, task: Task) {
        let node = self.ops[task.op].node_id;
        let key = task.order_key(node);
        let ops = &self.ops;
        let q = &mut self.streams.entry(stream).or_default().pending;
        let at = q.partition_point(|t| t.order_key(ops[t.op].node_id) <= key);
        q.insert(at, task);
    }
}

impl<'a> Engine<'a> {
    fn push(&mut self, time: u64, rank_idx: usize, ev: Ev) {
        let r = &self.ranks[rank_idx];
        let node = match ev {
            Ev::CpuDone { op } | Ev::TaskDone { op, .. } => r.ops[op].node_id,
            Ev::Wake => 0,
        };
        self.seq += 1;
        self.heap.push(Reverse(Pending { time, rank: r.rank, node, seq: self.seq, rank_idx, ev }));
    }

    fn coll_members(&self, key: CollKey, present: &BTreeSet<u32>, plan_groups: &BTreeMap<u32, Vec<u32>>) -> Vec<u32> {
        let mut m: Vec<u32> = match key {
            CollKey::Group { group, .. } => {
                plan_groups.get(&group).cloned().unwrap_or_else(|| (0..self.world).collect())
            }
            CollKey::P2p { src, dst, .. } => vec![src, dst],
        };
        m.retain(|r| present.contains(r));
        m.sort_unstable();
        m.dedup();
        m
    }

    /// Starts everything that can start at `now`; returns whether anything did.
    fn progress(&mut self, now: u64, groups: &BTreeMap<u32, Vec<u32>>, present: &BTreeSet<u32>) -> bool {
        let mut changed = false;
        for ri in 0..self.ranks.len() {
            // CPU dispatch
            let thread_ids: Vec<u32> = self.ranks[ri].threads.keys().copied().collect();
            for tid in thread_ids {
                let r = &mut self.ranks[ri];
                let th = r.threads.get_mut(&tid).unwrap();
                if th.busy {
                    continue;
                }
                let Some(&op) = th.queue.front() else { continue };
                let ready = r.state[op].producers.iter().all(|&p| r.state[p].cpu_end.is_some_and(|t| t <= now));
                if !ready {
                    continue;
                }
                th.queue.pop_front();
                th.busy = true;
                let cpu = r.ops[op].cpu_us.unwrap_or(self.cfg.default_cpu_us);
                r.state[op].cpu_start = Some(now);
                self.push(now + cpu, ri, Ev::CpuDone { op });
                changed = true;
            }
            // stream heads
            let stream_ids: Vec<u32> = self.ranks[ri].streams.keys().copied().collect();
            for sid in stream_ids {
                let r = &mut self.ranks[ri];
                let st = &r.streams[&sid];
                if st.running {
                    continue;
                }
                let Some(head) = st.pending.front() else { continue };
                if head.issue > now || !r.deps_done(head.op, now) {
                    continue;
                }
                let (op, dur, coll) = (head.op, head.dur, head.coll);
                match coll {
                    None => {
                        let st = r.streams.get_mut(&sid).unwrap();
                        st.pending.pop_front();
                        st.running = true;
                        let node = r.ops[op].node_id;
                        r.events.push(SimEvent {
                            rank: r.rank,
                            resource: Resource::Stream(sid),
                            node_id: node,
                            start_us: now,
                            end_us: now + dur,
                        });
                        r.per_op.entry(node).or_default().kernels.push((sid, now, now + dur));
                        self.push(now + dur, ri, Ev::TaskDone { stream: sid, op });
                        changed = true;
                    }
                    Some(key) => {
                        let rank = r.rank;
                        let members = self.coll_members(key, present, groups);
                        let cs = self.colls.entry(key).or_insert_with(|| CollState {
                            expected: members,
                            ready: BTreeMap::new(),
                            started: false,
                        });
                        if cs.ready.contains_key(&rank) {
                            continue;
                        }
                        cs.ready.insert(rank, (op, sid));
                        changed = true;
                        if !cs.started && cs.expected.iter().all(|m| cs.ready.contains_key(m)) {
                            cs.started = true;
                            self.start_collective(key, now);
                        }
                    }
                }
            }
        }
        changed
    }

    fn start_collective(&mut self, key: CollKey, now: u64) {
        let ready: Vec<(u32, (usize, u32))> = self.colls[&key].ready.iter().map(|(&r, &v)| (r, v)).collect();
        let rank_idx: HashMap<u32, usize> = self.ranks.iter().enumerate().map(|(i, r)| (r.rank, i)).collect();
        let dur = match &self.cfg.comm_model {
            Some(m) => {
                let (r, (op, _)) = ready[0];
                let op = self.ranks[rank_idx[&r]].ops[op];
                let c = op.comm.as_ref().unwrap();
                m.duration_us(c, op.kernel_time_us(), self.world, self.world)
            }
            None => {
                ready.iter().map(|(r, (op, _))| self.ranks[rank_idx[r]].ops[*op].kernel_time_us()).max().unwrap_or(0)
            }
        };
        let group = match key {
            CollKey::Group { group, .. } | CollKey::P2p { group, .. } => group,
        };
        for (r, (op, sid)) in ready {
            let ri = rank_idx[&r];
            let rs = &mut self.ranks[ri];
            let st = rs.streams.get_mut(&sid).unwrap();
            st.pending.pop_front();
            st.running = true;
            let node = rs.ops[op].node_id;
            for resource in [Resource::Stream(sid), Resource::Network(group)] {
                rs.events.push(SimEvent { rank: r, resource, node_id: node, start_us: now, end_us: now + dur });
            }
            let span = rs.per_op.entry(node).or_default();
            span.kernels.push((sid, now, now + dur));
            span.comm = true;
            self.push(now + dur, ri, Ev::TaskDone { stream: sid, op });
        }
    }

    fn apply(&mut self, p: Pending) {
        let ri = p.rank_idx;
        let launch = self.cfg.launch_overhead_us;
        match p.ev {
            Ev::Wake => {}
            Ev::CpuDone { op } => {
                let r = &mut self.ranks[ri];
                r.state[op].cpu_end = Some(p.time);
                let o = r.ops[op];
                let issue = p.time + launch;
                let blocking = o.comm.as_ref().is_some_and(|c| c.blocking);
                if let Some(ch) = r.state[op].channel {
                    let pos = r.issued.entry(ch).or_insert(0);
                    *pos += 1;
                    let key = match ch {
                        Channel::Group(group) => CollKey::Group { group, pos: *pos - 1 },
                        Channel::P2p { group, src, dst } => CollKey::P2p { group, src, dst, pos: *pos - 1 },
                    };
                    r.state[op].coll = Some(key);
                    let stream = RankSim::comm_stream(o);
                    r.insert_task(stream, Task { op, issue, kernel: 0, dur: 0, coll: Some(key) });
                } else {
                    for (k, ks) in o.kernels.iter().enumerate() {
                        r.insert_task(ks.stream, Task { op, issue, kernel: k, dur: ks.dur_us, coll: None });
                    }
                }
                if r.state[op].tasks_left == 0 {
                    r.state[op].done_at = Some(p.time);
                }
                if blocking && r.state[op].tasks_left > 0 {
                    r.state[op].holds_thread = true;
                } else {
                    self.release_thread(ri, op, p.time);
                }
                if launch > 0 {
                    self.push(issue, ri, Ev::Wake);
                }
            }
            Ev::TaskDone { stream, op } => {
                let r = &mut self.ranks[ri];
                r.streams.get_mut(&stream).unwrap().running = false;
                let s = &mut r.state[op];
                s.tasks_left -= 1;
                if s.tasks_left == 0 {
                    s.done_at = Some(p.time);
                    if s.holds_thread {
                        s.holds_thread = false;
                        self.release_thread(ri, op, p.time);
                    }
                }
            }
        }
    }

    fn release_thread(&mut self, ri: usize, op: usize, now: u64) {
        let r = &mut self.ranks[ri];
        let o = r.ops[op];
        let start = r.state[op].cpu_start.unwrap_or(now);
        r.threads.get_mut(&o.thread).unwrap().busy = false;
        r.events.push(SimEvent {
            rank: r.rank,
            resource: Resource::CpuThread(o.thread),
            node_id: o.node_id,
            start_us: start,
            end_us: now,
        });
        let span = r.per_op.entry(o.node_id).or_default();
        span.cpu = Some((start, now));
    }

    fn blocked(&self) -> Vec<BlockedOp> {
        let mut out = Vec::new();
        for r in &self.ranks {
            for (i, s) in r.state.iter().enumerate() {
                if s.done_at.is_some() && !s.holds_thread {
                    continue;
                }
                let reason = match (s.cpu_start, s.coll) {
                    (None, _) => "waiting to dispatch".to_string(),
                    (Some(_), Some(key)) => {
                        let missing: Vec<u32> = self
                            .colls
                            .get(&key)
                            .map(|c| c.expected.iter().copied().filter(|m| !c.ready.contains_key(m)).collect())
                            .unwrap_or_default();
                        if missing.is_empty() {
                            "collective not reached on stream".to_string()
                        } else {
                            format!("collective waiting for rank(s) {missing:?}")
                        }
                    }
                    (Some(_), None) => "kernels waiting".to_string(),
                };
                out.push(BlockedOp { rank: r.rank, node_id: r.ops[i].node_id, name: r.ops[i].name.clone(), reason });
            }
        }
        // collectives first: they are the usual root cause
        out.sort_by_key(|b| (!b.reason.starts_with("collective waiting"), b.rank, b.node_id));
        out
    }
}

/// Measure of the union of intervals.
pub(crate) fn union_len(mut iv: Vec<(u64, u64)>) -> u64 {
    iv.retain(|(s, e)| e > s);
    iv.sort_unstable();
    let mut total = 0;
    let mut cur: Option<(u64, u64)> = None;
    for (s, e) in iv {
        match cur {
            Some((cs, ce)) if s <= ce => cur = Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                total += ce - cs;
                cur = Some((s, e));
            }
            None => cur = Some((s, e)),
        }
    }
    if let Some((cs, ce)) = cur {
        total += ce - cs;
    }
    total
}

/// Time during which some communication kernel runs and no compute kernel does.
pub fn exposed_comm_time(per_op: &BTreeMap<u64, OpSpan>) -> u64 {
    let comm: Vec<(u64, u64)> =
        per_op.values().filter(|s| s.comm).flat_map(|s| s.kernels.iter().map(|&(_, a, b)| (a, b))).collect();
    let compute: Vec<(u64, u64)> =
        per_op.values().filter(|s| !s.comm).flat_map(|s| s.kernels.iter().map(|&(_, a, b)| (a, b))).collect();
    let both: Vec<(u64, u64)> = comm.iter().chain(compute.iter()).copied().collect();
    union_len(both) - union_len(compute)
}

/// Simulates all ranks together. Returns one timeline per plan, in the order
/// the plans were given.
pub fn simulate(plans: &[ReplayPlan], cfg: &SimConfig) -> Result<Vec<SimTimeline>, SimError> {
    let mut present = BTreeSet::new();
    for p in plans {
        if !present.insert(p.rank) {
            return Err(SimError::DuplicateRank(p.rank));
        }
    }
    let world = plans.iter().map(|p| p.world_size).max().unwrap_or(1).max(1);
    let groups = plans.first().map(|p| p.process_groups.clone()).unwrap_or_default();
    let mut eng = Engine {
        cfg,
        world,
        ranks: plans.iter().map(RankSim::new).collect(),
        colls: BTreeMap::new(),
        heap: BinaryHeap::new(),
        seq: 0,
    };
    let mut now = 0u64;
    loop {
        while eng.progress(now, &groups, &present) {}
        let Some(Reverse(first)) = eng.heap.pop() else { break };
        if first.time < now {
            return Err(SimError::NegativeTime { now, next: first.time });
        }
        now = first.time;
        eng.apply(first);
        while eng.heap.peek().is_some_and(|Reverse(p)| p.time == now) {
            let Reverse(p) = eng.heap.pop().unwrap();
            eng.apply(p);
        }
    }
    let blocked = eng.blocked();
    if !blocked.is_empty() {
        return Err(SimError::Deadlock(blocked));
    }

    Ok(eng
        .ranks
        .into_iter()
        .map(|mut r| {
            r.events.sort_by_key(|e| (e.start_us, e.resource, e.node_id, e.end_us));
            let makespan_us = match (r.events.iter().map(|e| e.start_us).min(), r.events.iter().map(|e| e.end_us).max())
            {
                (Some(s), Some(e)) => e - s,
                _ => 0,
            };
            for op in &r.ops {
                let span = r.per_op.entry(op.node_id).or_default();
                span.name = op.name.clone();
                span.comm |= op.comm.is_some();
                span.kernels.sort_unstable();
            }
            let exposed_comm_gpu_us = exposed_comm_time(&r.per_op);
            SimTimeline { rank: r.rank, events: r.events, makespan_us, exposed_comm_gpu_us, per_op: r.per_op }
        })
        .collect())
}

/// Kernel time per stream over replayed ops, and the busiest stream's total.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StreamLoad {
    pub per_stream: BTreeMap<u32, u64>,
    pub max_us: u64,
}

pub fn serialized_lower_bound(plan: &ReplayPlan) -> StreamLoad {
    let mut per_stream: BTreeMap<u32, u64> = BTreeMap::new();
    for op in plan.ops.iter().filter(|o| !o.skip) {
        if op.comm.is_some() {
            *per_stream.entry(RankSim::comm_stream(op)).or_insert(0) += op.kernel_time_us();
        } else {
            for k in &op.kernels {
                *per_stream.entry(k.stream).or_insert(0) += k.dur_us;
            }
        }
    }
    let max_us = per_stream.values().copied().max().unwrap_or(0);
    StreamLoad { per_stream, max_us }
}

/// Trace-event JSON for simulated timelines: `pid` is the rank, CPU events
/// use the thread as `tid`, kernels the stream. Every event carries its
/// trace node id in `args.node_id` and `args["External id"]`.
pub fn timeline_to_trace_events(timelines: &[SimTimeline]) -> Value {
    let mut events = Vec::new();
    for tl in timelines {
        for e in &tl.events {
            let name = tl.per_op.get(&e.node_id).map(|s| s.name.as_str()).unwrap_or("");
            let (cat, tid, args) = match e.resource {
                Resource::CpuThread(t) => ("cpu_op", t, json!({"node_id": e.node_id, "External id": e.node_id})),
                Resource::Stream(s) => {
                    ("kernel", s, json!({"node_id": e.node_id, "External id": e.node_id, "stream": s}))
                }
                Resource::Network(g) => ("network", g, json!({"node_id": e.node_id, "group": g})),
            };
            events.push(json!({
                "ph": "X",
                "cat": cat,
                "name": name,
                "pid": e.rank,
                "tid": tid,
                "ts": e.start_us,
                "dur": e.end_us - e.start_us,
                "args": args,
            }));
        }
    }
    json!({ "traceEvents": events, "displayTimeUnit": "ms" })
}
