//! Property checks shared by the property tests and the acceptance run.
//! Each returns a description of the first violation.

use std::collections::{BTreeMap, BTreeSet};

use etreplay::graph::{classify_tensors, dependency_edges, select_replay_ops, Taxonomy};
use etreplay::plan::ReplayPlan;
use etreplay::sim::{serialized_lower_bound, simulate, Resource, SimConfig, SimTimeline};
use etreplay::trace::ExecutionTrace;

use super::{ancestors_in, oracle_classify, oracle_select, parents};

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

pub fn selection(trace: &ExecutionTrace) -> Result<(), String> {
    let tax = Taxonomy::default();
    let sel = select_replay_ops(trace, &tax);
    let expected = oracle_select(trace, &tax);
    ensure!(sel == expected, "selected {sel:?}, oracle {expected:?}");
    let set: BTreeSet<u64> = sel.iter().copied().collect();
    let parents = parents(trace);
    for &s in &sel {
        ensure!(ancestors_in(&parents, s).iter().all(|a| !set.contains(a)), "{s} has a selected ancestor");
    }
    for n in trace.nodes.iter().filter(|n| tax.is_operator(n)) {
        let mut chain = ancestors_in(&parents, n.id);
        chain.push(n.id);
        let hits = chain.iter().filter(|id| set.contains(id)).count();
        ensure!(hits == 1, "operator {} covered {hits} times", n.id);
    }
    Ok(())
}

pub fn partition(trace: &ExecutionTrace) -> Result<(), String> {
    let sel = select_replay_ops(trace, &Taxonomy::default());
    let cls = classify_tensors(trace, &sel);
    ensure!(cls == oracle_classify(trace, &sel), "classification differs from oracle");
    ensure!(cls.intermediate.is_disjoint(&cls.external), "intermediate and external overlap");
    let inputs: BTreeSet<_> = trace
        .nodes
        .iter()
        .filter(|n| sel.contains(&n.id))
        .flat_map(|n| n.input_tensors().into_iter().map(|t| t.id.clone()))
        .collect();
    let union: BTreeSet<_> = cls.intermediate.union(&cls.external).cloned().collect();
    ensure!(union == inputs, "partition does not cover the selected ops' inputs");
    for e in dependency_edges(trace, &sel, &cls) {
        ensure!(e.producer < e.consumer, "edge {} -> {} runs backwards", e.producer, e.consumer);
    }
    for (t, &p) in &cls.producer {
        let consumers =
            trace.nodes.iter().filter(|n| sel.contains(&n.id) && n.input_tensors().iter().any(|x| &x.id == t));
        for c in consumers {
            ensure!(p < c.id, "tensor {t:?} produced by {p} after consumer {}", c.id);
        }
    }
    Ok(())
}

pub fn sim1(plan: &ReplayPlan, cfg: &SimConfig) -> SimTimeline {
    simulate(std::slice::from_ref(plan), cfg).expect("single-rank plan simulates").remove(0)
}

/// First kernel start to last kernel end.
pub fn kernel_span(tl: &SimTimeline) -> u64 {
    let ks = tl.events.iter().filter(|e| matches!(e.resource, Resource::Stream(_)));
    let (mut lo, mut hi) = (u64::MAX, 0);
    for e in ks {
        lo = lo.min(e.start_us);
        hi = hi.max(e.end_us);
    }
    hi.saturating_sub(lo)
}

/// Per-stream kernel sums computed directly from the plan.
pub fn stream_sums(plan: &ReplayPlan) -> BTreeMap<u32, u64> {
    let mut sums: BTreeMap<u32, u64> = BTreeMap::new();
    for op in plan.ops.iter().filter(|o| !o.skip) {
        if op.comm.is_some() {
            *sums.entry(op.kernels.first().map_or(op.stream, |k| k.stream)).or_default() += op.kernel_time_us();
        } else {
            for k in &op.kernels {
                *sums.entry(k.stream).or_default() += k.dur_us;
            }
        }
    }
    sums
}

/// Lower bound, upper bound, determinism and exposed-communication bound for
/// one single-rank simulation.
pub fn sim_bounds(plan: &ReplayPlan, cfg: &SimConfig) -> Result<(), String> {
    let tl = sim1(plan, cfg);
    ensure!(tl == sim1(plan, cfg), "two runs differ");
    let sums = stream_sums(plan);
    let lb = serialized_lower_bound(plan);
    ensure!(lb.per_stream == sums, "per-stream sums {:?} != {sums:?}", lb.per_stream);
    ensure!(lb.max_us <= kernel_span(&tl), "lower bound {} > kernel span {}", lb.max_us, kernel_span(&tl));
    let live = || plan.ops.iter().filter(|o| !o.skip);
    let cpu: u64 = live().map(|o| o.cpu_us.unwrap_or(cfg.default_cpu_us)).sum();
    let gpu: u64 = live().map(|o| o.kernel_time_us()).sum();
    let launches = cfg.launch_overhead_us * live().filter(|o| !o.kernels.is_empty()).count() as u64;
    ensure!(tl.makespan_us <= cpu + gpu + launches, "makespan {} > {cpu} + {gpu} + {launches}", tl.makespan_us);
    let comm: u64 = live().filter(|o| o.comm.is_some()).map(|o| o.kernel_time_us()).sum();
    ensure!(tl.exposed_comm_gpu_us <= comm, "exposed {} > comm {comm}", tl.exposed_comm_gpu_us);
    Ok(())
}
