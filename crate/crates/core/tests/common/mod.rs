//! Shared generators, brute-force oracles and synthetic workloads for the
//! integration tests. Everything is driven by seeded ChaCha RNGs so failures
//! reproduce exactly.
#![allow(dead_code)]

pub mod checks;
pub mod comm;
pub mod schemas;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use etreplay::graph::{OpCategory, Taxonomy, TensorClassification};
use etreplay::plan::{
    Collective, CommDescriptor, FillPolicy, KernelSpec, OpTarget, ReplayOp, ReplayPlan, TensorDirective, PLAN_VERSION,
};
use etreplay::trace::{ArgValue, DType, ETNode, ExecutionTrace, Scalar, TensorId, TensorRef};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const ROOT_NAME: &str = "[pytorch|profiler|execution_trace|thread]";

pub fn tensor(k: i64, shape: Vec<u64>, dtype: DType) -> TensorRef {
    let numel: u64 = shape.iter().product();
    TensorRef { id: TensorId(vec![k, k, 0, numel as i64, dtype.size_bytes() as i64, 0]), shape, dtype }
}

/// (name, schema) pairs used for generated operator nodes.
pub const ATEN_OPS: [(&str, &str); 8] = [
    ("aten::linear", "aten::linear(Tensor input, Tensor weight, Tensor? bias=None) -> Tensor"),
    ("aten::t", "aten::t(Tensor(a) self) -> Tensor(a)"),
    ("aten::addmm", "aten::addmm(Tensor self, Tensor mat1, Tensor mat2, *, Scalar beta=1, Scalar alpha=1) -> Tensor"),
    ("aten::relu", "aten::relu(Tensor self) -> Tensor"),
    ("aten::add", "aten::add.Tensor(Tensor self, Tensor other, *, Scalar alpha=1) -> Tensor"),
    ("aten::mm", "aten::mm(Tensor self, Tensor mat2) -> Tensor"),
    ("aten::mul", "aten::mul.Tensor(Tensor self, Tensor other) -> Tensor"),
    ("aten::cat", "aten::cat(Tensor[] tensors, int dim=0) -> Tensor"),
];

// ---------------------------------------------------------------------------
// random execution traces

/// Random valid trace with `n` nodes (including the root). Node ids follow a
/// depth-first execution order, as a real recorder would assign them.
pub fn random_trace(r: &mut impl Rng, n: usize) -> ExecutionTrace {
    let mut nodes = vec![ETNode::bare(1, ROOT_NAME, None)];
    let mut stack: Vec<u64> = vec![1];
    let mut pool: Vec<TensorRef> = Vec::new();
    let mut next_tensor = 1i64;
    fn fresh(r: &mut impl Rng, next: &mut i64) -> TensorRef {
        let dims = (0..r.gen_range(1..=3)).map(|_| r.gen_range(1..=8u64)).collect();
        let dtype = *[DType::F32, DType::F16, DType::I64].choose(r).unwrap();
        *next += 1;
        tensor(*next - 1, dims, dtype)
    }
    for id in 2..=n as u64 {
        while stack.len() > 1 && r.gen_bool(0.35) {
            stack.pop();
        }
        let parent = *stack.last().unwrap();
        let roll = r.gen_range(0..100);
        let mut node = match roll {
            0..=9 => ETNode::bare(id, format!("## region{} ##", r.gen_range(0..5)), Some(parent)),
            10..=14 => ETNode::bare(id, "autograd::engine::evaluate_function: AddmmBackward0", Some(parent)),
            15..=19 => ETNode::bare(id, "Optimizer.step", Some(parent)),
            20..=24 => {
                let mut n = ETNode::bare(id, "nccl:all_reduce", Some(parent));
                n.op_schema = String::new();
                n
            }
            25..=29 => ETNode::bare(id, "prim::CudaFusionGroup", Some(parent)),
            30..=34 => {
                let mut n = ETNode::bare(id, "fbgemm::jagged_to_padded_dense", Some(parent));
                n.op_schema = "fbgemm::jagged_to_padded_dense(Tensor values, Tensor[] offsets, SymInt[] max_lengths, float padding_value=0) -> Tensor".into();
                n
            }
            _ => {
                let (name, schema) = ATEN_OPS.choose(r).unwrap();
                let mut n = ETNode::bare(id, *name, Some(parent));
                if r.gen_bool(0.8) {
                    n.op_schema = schema.to_string();
                }
                n
            }
        };
        if !node.name.starts_with("##") && node.name != "Optimizer.step" && !node.name.starts_with("autograd::") {
            for _ in 0..r.gen_range(0..=3) {
                let t = if !pool.is_empty() && r.gen_bool(0.6) {
                    pool.choose(r).unwrap().clone()
                } else {
                    fresh(r, &mut next_tensor)
                };
                node.push_input(ArgValue::Tensor(t));
            }
            if node.name.starts_with("nccl:") {
                // group id of the world group
                node.push_input(ArgValue::Scalar(Scalar::Int(0)));
            } else if r.gen_bool(0.3) {
                node.push_input(ArgValue::Scalar(Scalar::Int(r.gen_range(0..4))));
            }
            for _ in 0..r.gen_range(0..=2) {
                let t = if r.gen_bool(0.1) && !node.input_tensors().is_empty() {
                    node.input_tensors()[0].clone()
                } else {
                    fresh(r, &mut next_tensor)
                };
                pool.push(t.clone());
                node.push_output(ArgValue::Tensor(t));
            }
        }
        nodes.push(node);
        stack.push(id);
    }
    ExecutionTrace::new(nodes)
}

// ---------------------------------------------------------------------------
// brute-force oracles

pub type Parents = HashMap<u64, Option<u64>>;

pub fn parents(trace: &ExecutionTrace) -> Parents {
    trace.nodes.iter().map(|n| (n.id, n.parent)).collect()
}

/// Walks parent links up to the root.
pub fn ancestors_in(parents: &Parents, id: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut cur = parents[&id];
    while let Some(p) = cur {
        out.push(p);
        cur = parents[&p];
    }
    out
}

pub fn ancestors(trace: &ExecutionTrace, id: u64) -> Vec<u64> {
    ancestors_in(&parents(trace), id)
}

/// Keep a node iff it is an operator and no proper ancestor is one.
pub fn oracle_select(trace: &ExecutionTrace, tax: &Taxonomy) -> Vec<u64> {
    let by_id: HashMap<u64, &ETNode> = trace.nodes.iter().map(|n| (n.id, n)).collect();
    let parents = parents(trace);
    let mut out: Vec<u64> = trace
        .nodes
        .iter()
        .filter(|n| tax.is_operator(n))
        .filter(|n| ancestors_in(&parents, n.id).iter().all(|a| !tax.is_operator(by_id[a])))
        .map(|n| n.id)
        .collect();
    out.sort_unstable();
    out
}

/// Two passes over all (op, tensor) pairs: a consumed tensor is intermediate
/// iff its earliest selected producer precedes its earliest consumer.
pub fn oracle_classify(trace: &ExecutionTrace, selected: &[u64]) -> TensorClassification {
    let sel: BTreeSet<u64> = selected.iter().copied().collect();
    let mut first_prod: BTreeMap<TensorId, u64> = BTreeMap::new();
    let mut first_cons: BTreeMap<TensorId, u64> = BTreeMap::new();
    for n in trace.nodes.iter().filter(|n| sel.contains(&n.id)) {
        for t in n.output_tensors() {
            let e = first_prod.entry(t.id.clone()).or_insert(n.id);
            *e = (*e).min(n.id);
        }
        for t in n.input_tensors() {
            let e = first_cons.entry(t.id.clone()).or_insert(n.id);
            *e = (*e).min(n.id);
        }
    }
    let mut out = TensorClassification::default();
    for (id, c) in first_cons {
        match first_prod.get(&id) {
            Some(&p) if p < c => {
                out.intermediate.insert(id.clone());
                out.producer.insert(id, p);
            }
            _ => {
                out.external.insert(id);
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// random replay plans

#[derive(Clone, Copy, Debug)]
pub struct PlanShape {
    pub ops: usize,
    pub streams: u32,
    pub threads: u32,
    pub comm: bool,
}

/// A valid single-rank plan with random dependencies, CPU times and kernels.
pub fn random_plan(r: &mut impl Rng, shape: PlanShape) -> ReplayPlan {
    let mut ops = Vec::with_capacity(shape.ops);
    let mut produced: Vec<TensorRef> = Vec::new();
    for i in 0..shape.ops {
        let id = (i as u64 + 2) * 3;
        let is_comm = shape.comm && r.gen_bool(0.2);
        let mut inputs = Vec::new();
        for _ in 0..r.gen_range(0..=2) {
            if !produced.is_empty() && r.gen_bool(0.7) {
                let t = produced.choose(r).unwrap();
                inputs.push(TensorDirective::BindIntermediate { id: t.id.clone() });
            } else {
                let t = tensor(100_000 + r.gen_range(0..1000), vec![4, 4], DType::F32);
                inputs.push(TensorDirective::Instantiate {
                    id: t.id,
                    shape: t.shape,
                    dtype: t.dtype,
                    fill: FillPolicy::default(),
                });
            }
        }
        let out = tensor(i as i64 + 1, vec![4, 4], DType::F32);
        produced.push(out.clone());
        let stream = r.gen_range(0..shape.streams);
        let kernels: Vec<KernelSpec> = (0..r.gen_range(if is_comm { 1..=1 } else { 0..=3 }))
            .map(|_| KernelSpec {
                stream: if r.gen_bool(0.8) { stream } else { r.gen_range(0..shape.streams) },
                dur_us: r.gen_range(0..=50),
            })
            .collect();
        ops.push(ReplayOp {
            node_id: id,
            name: if is_comm { "nccl:all_reduce".into() } else { "aten::mm".into() },
            category: if is_comm { OpCategory::Communication } else { OpCategory::ATen },
            target: if is_comm { OpTarget::None } else { OpTarget::Registry("aten::mm".into()) },
            inputs,
            outputs: vec![out],
            stream,
            thread: r.gen_range(0..shape.threads),
            cpu_us: if r.gen_bool(0.9) { Some(r.gen_range(0..=30)) } else { None },
            kernels,
            comm: is_comm.then(|| CommDescriptor {
                group_id: 0,
                collective: Collective::AllReduce,
                dtype: DType::F32,
                message_bytes: r.gen_range(1..=1 << 22),
                blocking: r.gen_bool(0.5),
                peer: None,
            }),
            skip: false,
        });
    }
    ReplayPlan {
        version: PLAN_VERSION.into(),
        rank: 0,
        world_size: 1,
        process_groups: BTreeMap::from([(0, vec![0])]),
        group_map: BTreeMap::from([(0, 0)]),
        ops,
    }
}

/// Removes the op at `idx`, turning bindings to its outputs into fresh
/// instantiations.
pub fn remove_op(plan: &ReplayPlan, idx: usize) -> ReplayPlan {
    let mut out = plan.clone();
    let gone = out.ops.remove(idx);
    let dead: BTreeSet<TensorId> = gone.outputs.iter().map(|t| t.id.clone()).collect();
    for op in &mut out.ops {
        for d in &mut op.inputs {
            d.visit_mut(&mut |d: &mut TensorDirective| {
                let TensorDirective::BindIntermediate { id } = d else { return };
                if dead.contains(&*id) {
                    *d = TensorDirective::Instantiate {
                        id: id.clone(),
                        shape: vec![4, 4],
                        dtype: DType::F32,
                        fill: FillPolicy::default(),
                    };
                }
            });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// synthetic workloads: a trace plus the profiler timeline it would produce

/// Kernel a leaf operator launches: (stream, duration).
pub type Launch = (u32, u64);

pub struct Workload {
    pub trace: ExecutionTrace,
    /// CPU self time per node id.
    pub self_cpu: BTreeMap<u64, u64>,
    pub launches: BTreeMap<u64, Vec<Launch>>,
}

pub struct WorkloadBuilder {
    nodes: Vec<ETNode>,
    self_cpu: BTreeMap<u64, u64>,
    launches: BTreeMap<u64, Vec<Launch>>,
    stack: Vec<u64>,
    next_tensor: i64,
    tid: u32,
}

impl WorkloadBuilder {
    pub fn new() -> Self {
        WorkloadBuilder {
            nodes: vec![ETNode::bare(1, ROOT_NAME, None)],
            self_cpu: BTreeMap::new(),
            launches: BTreeMap::new(),
            stack: vec![1],
            next_tensor: 1,
            tid: 0,
        }
    }

    pub fn tensor(&mut self, shape: &[u64], dtype: DType) -> TensorRef {
        self.next_tensor += 1;
        tensor(self.next_tensor - 1, shape.to_vec(), dtype)
    }

    pub fn set_thread(&mut self, tid: u32) {
        self.tid = tid;
    }

    fn push(&mut self, name: &str, schema: &str, inputs: Vec<ArgValue>, outputs: Vec<ArgValue>, cpu: u64) -> u64 {
        let id = self.nodes.len() as u64 + 1;
        let mut n = ETNode::bare(id, name, Some(*self.stack.last().unwrap()));
        n.op_schema = schema.to_string();
        n.tid = self.tid;
        inputs.into_iter().for_each(|a| n.push_input(a));
        outputs.into_iter().for_each(|a| n.push_output(a));
        self.nodes.push(n);
        self.self_cpu.insert(id, cpu);
        id
    }

    /// Opens a node; children go under it until `close`.
    pub fn open(&mut self, name: &str, schema: &str, inputs: Vec<ArgValue>, outputs: Vec<ArgValue>, cpu: u64) -> u64 {
        let id = self.push(name, schema, inputs, outputs, cpu);
        self.stack.push(id);
        id
    }

    pub fn close(&mut self) {
        self.stack.pop();
    }

    pub fn leaf(
        &mut self,
        name: &str,
        schema: &str,
        inputs: Vec<ArgValue>,
        outputs: Vec<ArgValue>,
        cpu: u64,
        kernels: &[Launch],
    ) -> u64 {
        let id = self.push(name, schema, inputs, outputs, cpu);
        if !kernels.is_empty() {
            self.launches.insert(id, kernels.to_vec());
        }
        id
    }

    pub fn finish(self, rank: u32, world_size: u32) -> Workload {
        let mut trace = ExecutionTrace::new(self.nodes);
        trace.rank = rank;
        trace.world_size = world_size;
        Workload { trace, self_cpu: self.self_cpu, launches: self.launches }
    }
}

impl Default for WorkloadBuilder {
    fn default() -> Self {
        Self::new()
    }
}

const LAUNCH_API_US: u64 = 2;
const LAUNCH_LATENCY_US: u64 = 3;

/// The trace-event JSON a profiler would have written while running the
/// workload: nested `cpu_op` events per thread, a `cuda_runtime` launch per
/// kernel at the end of its operator's self time, and FIFO kernels per stream.
pub fn synth_profile(w: &Workload, pid: i64) -> Value {
    let children: BTreeMap<u64, Vec<u64>> = w.trace.nodes.iter().fold(BTreeMap::new(), |mut m, n| {
        if let Some(p) = n.parent {
            m.entry(p).or_insert_with(Vec::new).push(n.id);
        }
        m
    });
    let by_id: BTreeMap<u64, &ETNode> = w.trace.nodes.iter().map(|n| (n.id, n)).collect();
    let mut events = Vec::new();
    let mut launches: Vec<(u64, u64, u32, u64, i64)> = Vec::new(); // (time, node, stream, dur, corr)
    let mut corr = 1000i64;
    let mut clock = 10u64;

    #[allow(clippy::too_many_arguments)]
    fn walk(
        id: u64,
        start: u64,
        w: &Workload,
        by_id: &BTreeMap<u64, &ETNode>,
        children: &BTreeMap<u64, Vec<u64>>,
        pid: i64,
        events: &mut Vec<Value>,
        launches: &mut Vec<(u64, u64, u32, u64, i64)>,
        corr: &mut i64,
    ) -> u64 {
        let node = by_id[&id];
        let mut t = start + 1;
        for &c in children.get(&id).map(Vec::as_slice).unwrap_or(&[]) {
            t = walk(c, t, w, by_id, children, pid, events, launches, corr) + 1;
        }
        t += w.self_cpu.get(&id).copied().unwrap_or(1);
        for &(stream, dur) in w.launches.get(&id).map(Vec::as_slice).unwrap_or(&[]) {
            *corr += 1;
            events.push(json!({
                "ph": "X", "cat": "cuda_runtime", "name": "cudaLaunchKernel", "pid": pid, "tid": node.tid,
                "ts": t, "dur": LAUNCH_API_US, "args": {"correlation": *corr, "External id": id}
            }));
            launches.push((t + LAUNCH_API_US, id, stream, dur, *corr));
            t += LAUNCH_API_US;
        }
        events.push(json!({
            "ph": "X", "cat": "cpu_op", "name": node.name, "pid": pid, "tid": node.tid,
            "ts": start, "dur": t - start, "args": {"External id": id}
        }));
        t
    }

    for &top in children.get(&1).map(Vec::as_slice).unwrap_or(&[]) {
        clock = walk(top, clock, w, &by_id, &children, pid, &mut events, &mut launches, &mut corr) + 2;
    }

    launches.sort_unstable();
    let mut free: BTreeMap<u32, u64> = BTreeMap::new();
    for (t, node, stream, dur, c) in launches {
        let f = free.entry(stream).or_insert(0);
        let start = (*f).max(t + LAUNCH_LATENCY_US);
        *f = start + dur;
        events.push(json!({
            "ph": "X", "cat": "kernel", "name": format!("{}_kernel", by_id[&node].name.replace("::", "_")),
            "pid": pid, "tid": 7 + stream, "ts": start, "dur": dur,
            "args": {"stream": stream + 7, "correlation": c, "External id": node}
        }));
    }
    events.sort_by_key(|e| (e["ts"].as_u64(), e["tid"].as_u64(), e["name"].as_str().map(str::to_owned)));
    json!({ "traceEvents": events, "displayTimeUnit": "ms" })
}

pub fn to_pretty(v: &Value) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).unwrap();
    b.push(b'\n');
    b
}

fn t(r: &TensorRef) -> ArgValue {
    ArgValue::Tensor(r.clone())
}

/// One `aten::linear` with its `t` and `addmm` children, then `relu`.
fn linear_relu(b: &mut WorkloadBuilder, x: &TensorRef, width: u64, batch: u64, gpu: u64) -> TensorRef {
    let w = b.tensor(&[width, width], DType::F32);
    let bias = b.tensor(&[width], DType::F32);
    let y = b.tensor(&[batch, width], DType::F32);
    let wt = b.tensor(&[width, width], DType::F32);
    b.open("aten::linear", ATEN_OPS[0].1, vec![t(x), t(&w), t(&bias)], vec![t(&y)], 4);
    b.leaf("aten::t", ATEN_OPS[1].1, vec![t(&w)], vec![t(&wt)], 3, &[]);
    b.leaf(
        "aten::addmm",
        ATEN_OPS[2].1,
        vec![t(&bias), t(x), t(&wt), ArgValue::Scalar(Scalar::Int(1)), ArgValue::Scalar(Scalar::Int(1))],
        vec![t(&y)],
        6,
        &[(0, gpu)],
    );
    b.close();
    let z = b.tensor(&[batch, width], DType::F32);
    b.leaf("aten::relu", ATEN_OPS[3].1, vec![t(&y)], vec![t(&z)], 5, &[(0, gpu / 4 + 1)]);
    z
}

/// A 20-layer linear network: every operator is a plain ATen op. Layers 8..12
/// sit inside a `## forward:z ##` region.
pub fn param_linear() -> Workload {
    let mut b = WorkloadBuilder::new();
    let x = b.tensor(&[64, 256], DType::F32);
    b.open("## forward ##", "", vec![], vec![], 1);
    let mut h = x;
    for layer in 0..20 {
        if layer == 8 {
            b.open("## forward:z ##", "", vec![], vec![], 1);
        }
        h = linear_relu(&mut b, &h, 256, 64, 9 + (layer as u64 % 3));
        if layer == 11 {
            b.close();
        }
    }
    let s = b.tensor(&[], DType::F32);
    b.leaf(
        "aten::sum",
        "aten::sum(Tensor self, *, ScalarType? dtype=None) -> Tensor",
        vec![t(&h)],
        vec![t(&s)],
        4,
        &[(0, 3)],
    );
    b.close();
    b.finish(0, 1)
}

/// A recommendation-model-style step on one rank of `world`: embedding
/// lookups through a custom op, a fused interaction, an MLP, and all_reduce /
/// all_to_all on a second stream.
pub fn rm_rank(rank: u32, world: u32) -> Workload {
    let mut b = WorkloadBuilder::new();
    let idx = b.tensor(&[4096], DType::I64);
    let off = b.tensor(&[129], DType::I64);
    let table = b.tensor(&[100_000, 64], DType::F32);
    b.open("## forward ##", "", vec![], vec![], 1);
    let emb = b.tensor(&[128, 64], DType::F32);
    b.leaf(
        "fbgemm::jagged_to_padded_dense",
        "fbgemm::jagged_to_padded_dense(Tensor values, Tensor[] offsets, SymInt[] max_lengths, float padding_value=0) -> Tensor",
        vec![t(&table), ArgValue::List(vec![t(&off)]), ArgValue::List(vec![ArgValue::Scalar(Scalar::Int(32))]), ArgValue::Scalar(Scalar::Float(0.0))],
        vec![t(&emb)],
        12,
        &[(0, 40)],
    );
    let emb2 = b.tensor(&[128, 64], DType::F32);
    b.leaf(
        "aten::embedding",
        "aten::embedding(Tensor weight, Tensor indices, SymInt padding_idx=-1, bool scale_grad_by_freq=False, bool sparse=False) -> Tensor",
        vec![t(&table), t(&idx), ArgValue::Scalar(Scalar::Int(-1)), ArgValue::Scalar(Scalar::Bool(false)), ArgValue::Scalar(Scalar::Bool(false))],
        vec![t(&emb2)],
        8,
        &[(0, 25)],
    );
    let a2a = b.tensor(&[128, 64], DType::F32);
    b.leaf(
        "nccl:all_to_all",
        "",
        vec![t(&emb2), ArgValue::Scalar(Scalar::Int(0)), ArgValue::Scalar(Scalar::Bool(false))],
        vec![t(&a2a)],
        5,
        &[(1, 60 + 5 * rank as u64)],
    );
    let inter = b.tensor(&[128, 128], DType::F32);
    b.leaf("prim::CudaFusionGroup", "", vec![t(&emb), t(&a2a)], vec![t(&inter)], 9, &[(0, 30)]);
    let mut h = inter;
    for _ in 0..3 {
        h = linear_relu(&mut b, &h, 128, 128, 20);
    }
    b.close();
    b.set_thread(1);
    b.open("## backward ##", "", vec![], vec![], 1);
    let g = b.tensor(&[128, 128], DType::F32);
    b.open("autograd::engine::evaluate_function: AddmmBackward0", "", vec![], vec![], 2);
    b.leaf("aten::mm", ATEN_OPS[5].1, vec![t(&h), t(&h)], vec![t(&g)], 7, &[(0, 35)]);
    b.close();
    let red = b.tensor(&[128, 128], DType::F32);
    b.leaf(
        "nccl:all_reduce",
        "",
        vec![t(&g), ArgValue::Scalar(Scalar::Int(0)), ArgValue::Scalar(Scalar::Bool(true))],
        vec![t(&red)],
        4,
        &[(1, 80)],
    );
    let upd = b.tensor(&[128, 128], DType::F32);
    b.leaf(
        "aten::add",
        ATEN_OPS[4].1,
        vec![t(&red), t(&g), ArgValue::Scalar(Scalar::Int(1))],
        vec![t(&upd)],
        5,
        &[(0, 12)],
    );
    b.close();
    b.finish(rank, world)
}

/// Registry file shipped with the RM fixture: the embedding lookup is
/// runnable, so only the fused op is skipped.
pub const RM_REGISTRY: &str = "fbgemm::jagged_to_padded_dense lookup table_size=100000\n";

/// Every fixture file, as (path relative to tests/fixtures, contents).
pub fn fixture_files() -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let lin = param_linear();
    out.push(("param_linear/trace.json".into(), etreplay::trace::serialize_trace(&lin.trace)));
    out.push(("param_linear/profile.json".into(), to_pretty(&synth_profile(&lin, 0))));
    for rank in 0..2 {
        let w = rm_rank(rank, 2);
        out.push((format!("rm/rank{rank}.trace.json"), etreplay::trace::serialize_trace(&w.trace)));
        out.push((format!("rm/rank{rank}.profile.json"), to_pretty(&synth_profile(&w, rank as i64))));
    }
    out.push(("rm/registry.txt".into(), RM_REGISTRY.as_bytes().to_vec()));
    out.push(("sim.toml".into(), b"launch_overhead_us = 5\ndefault_cpu_us = 2\n".to_vec()));
    out.push((
        "alpha_beta.toml".into(),
        b"alpha_us = 5.0\nbeta_us_per_kb = 0.01\n\n[all_to_all]\nalpha_us = 12.0\n".to_vec(),
    ));
    out
}

pub fn fixture_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}
