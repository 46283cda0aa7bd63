//! Operator selection, categorization, tensor classification and dependency
//! edges over a parsed trace.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{ETNode, ExecutionTrace, TensorId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpCategory {
    ATen,
    Communication,
    Fused,
    Custom,
}

impl OpCategory {
    pub const ALL: [OpCategory; 4] =
        [OpCategory::ATen, OpCategory::Communication, OpCategory::Fused, OpCategory::Custom];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for OpCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpCategory::ATen => "ATen",
            OpCategory::Communication => "Communication",
            OpCategory::Fused => "Fused",
            OpCategory::Custom => "Custom",
        })
    }
}

impl FromStr for OpCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "aten" => Ok(OpCategory::ATen),
            "communication" | "comm" => Ok(OpCategory::Communication),
            "fused" => Ok(OpCategory::Fused),
            "custom" => Ok(OpCategory::Custom),
            other => Err(format!("unknown operator category {other:?}")),
        }
    }
}

pub const COMM_PREFIXES: [&str; 2] = ["nccl:", "c10d::"];
pub const COMM_NAMES: [&str; 8] =
    ["all_reduce", "all_to_all", "all_gather", "reduce_scatter", "broadcast", "send", "recv", "barrier"];
pub const FUSION_MARKERS: [&str; 3] = ["fused", "CudaFusionGroup", "nvfuser"];
/// Name prefixes of framework bookkeeping nodes that wrap real operators.
pub const WRAPPER_PREFIXES: [&str; 2] = ["autograd::engine::evaluate_function", "[pytorch|profiler"];

#[derive(Clone, Debug, PartialEq, Eq)]
enum Pattern {
    Exact(String),
    Prefix(String),
}

impl Pattern {
    fn parse(s: &str) -> Pattern {
        match s.strip_suffix('*') {
            Some(p) => Pattern::Prefix(p.to_string()),
            None => Pattern::Exact(s.to_string()),
        }
    }

    fn matches(&self, name: &str) -> bool {
        match self {
            Pattern::Exact(e) => name == e,
            Pattern::Prefix(p) => name.starts_with(p.as_str()),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("category override line {line}: {message}")]
pub struct OverrideError {
    pub line: usize,
    pub message: String,
}

/// Name-based operator taxonomy. Overrides are checked first, in file order.
#[derive(Clone, Debug, Default)]
pub struct Taxonomy {
    overrides: Vec<(Pattern, OpCategory)>,
}

impl Taxonomy {
    /// Reads `pattern -> category` lines (`→` also accepted). A pattern ending
    /// in `*` is a prefix match; `#` starts a comment.
    pub fn parse_overrides(text: &str) -> Result<Taxonomy, OverrideError> {
        let mut overrides = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (pat, cat) = line
                .split_once("->")
                .or_else(|| line.split_once('→'))
                .ok_or_else(|| OverrideError { line: i + 1, message: "expected `pattern -> category`".into() })?;
            let pat = pat.trim();
            if pat.is_empty() {
                return Err(OverrideError { line: i + 1, message: "empty pattern".into() });
            }
            let cat = cat.parse().map_err(|message| OverrideError { line: i + 1, message })?;
            overrides.push((Pattern::parse(pat), cat));
        }
        Ok(Taxonomy { overrides })
    }

    pub fn categorize(&self, name: &str) -> OpCategory {
        if let Some((_, cat)) = self.overrides.iter().find(|(p, _)| p.matches(name)) {
            return *cat;
        }
        default_category(name)
    }

    fn is_overridden_comm(&self, name: &str) -> bool {
        self.overrides.iter().any(|(p, c)| *c == OpCategory::Communication && p.matches(name))
    }

    /// Whether `node` is a replayable operator rather than a structural wrapper.
    pub fn is_operator(&self, node: &ETNode) -> bool {
        if node.parent.is_none() || is_annotation(&node.name) {
            return false;
        }
        if WRAPPER_PREFIXES.iter().any(|p| node.name.starts_with(p)) {
            return false;
        }
        !node.op_schema.trim().is_empty()
            || node.name.contains("::")
            || is_comm_name(&node.name)
            || self.is_overridden_comm(&node.name)
    }
}

/// `record_function` annotation regions are written as `## label ##`.
pub fn is_annotation(name: &str) -> bool {
    let n = name.trim();
    n.len() >= 4 && n.starts_with("##") && n.ends_with("##")
}

pub fn is_comm_name(name: &str) -> bool {
    COMM_PREFIXES.iter().any(|p| name.starts_with(p)) || COMM_NAMES.contains(&name)
}

fn default_category(name: &str) -> OpCategory {
    if name.starts_with("aten::") {
        OpCategory::ATen
    } else if is_comm_name(name) {
        OpCategory::Communication
    } else if FUSION_MARKERS.iter().any(|m| name.contains(m)) {
        OpCategory::Fused
    } else {
        OpCategory::Custom
    }
}

/// Categorizes a node with the built-in name rules.
pub fn categorize_op(node: &ETNode) -> OpCategory {
    default_category(&node.name)
}

/// Keeps each operator met in execution order and skips its descendants.
/// Wrapper nodes are traversed but never selected.
pub fn select_replay_ops(trace: &ExecutionTrace, taxonomy: &Taxonomy) -> Vec<u64> {
    let mut nodes: Vec<&ETNode> = trace.nodes.iter().collect();
    nodes.sort_by_key(|n| n.id);
    // covered: node is selected or lies under a selected node
    let mut covered: HashSet<u64> = HashSet::new();
    let mut selected = Vec::new();
    for n in nodes {
        if n.parent.is_some_and(|p| covered.contains(&p)) {
            covered.insert(n.id);
        } else if taxonomy.is_operator(n) {
            covered.insert(n.id);
            selected.push(n.id);
        }
    }
    selected
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TensorClassification {
    pub intermediate: BTreeSet<TensorId>,
    pub external: BTreeSet<TensorId>,
    /// Earliest selected producer of each intermediate tensor.
    pub producer: BTreeMap<TensorId, u64>,
}

/// A tensor consumed by the selected operators is intermediate iff some
/// selected operator outputs it before its first consumer; otherwise it is
/// external and must be instantiated for replay.
pub fn classify_tensors(trace: &ExecutionTrace, selected: &[u64]) -> TensorClassification {
    let index = trace.index();
    let mut ops: Vec<&ETNode> = selected.iter().filter_map(|&id| index.node(id)).collect();
    ops.sort_by_key(|n| n.id);

    let mut produced: HashMap<&TensorId, u64> = HashMap::new();
    let mut consumed: HashSet<&TensorId> = HashSet::new();
    let mut out = TensorClassification::default();
    for op in ops {
        for t in op.input_tensors() {
            if !consumed.insert(&t.id) {
                continue;
            }
            match produced.get(&t.id) {
                Some(&p) => {
                    out.intermediate.insert(t.id.clone());
                    out.producer.insert(t.id.clone(), p);
                }
                None => {
                    out.external.insert(t.id.clone());
                }
            }
        }
        for t in op.output_tensors() {
            produced.entry(&t.id).or_insert(op.id);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DependencyEdge {
    pub producer: u64,
    pub consumer: u64,
    pub tensor: TensorId,
}

/// One edge per (consumer, intermediate input) from its earliest producer.
pub fn dependency_edges(trace: &ExecutionTrace, selected: &[u64], cls: &TensorClassification) -> Vec<DependencyEdge> {
    let index = trace.index();
    let mut edges = BTreeSet::new();
    for &id in selected {
        let Some(node) = index.node(id) else { continue };
        for t in node.input_tensors() {
            if let Some(&p) = cls.producer.get(&t.id) {
                if p < id {
                    edges.insert(DependencyEdge { producer: p, consumer: id, tensor: t.id.clone() });
                }
            }
        }
    }
    edges.into_iter().collect()
}

/// Fractions per category, indexed by [`OpCategory::index`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryShare(pub [f64; 4]);

impl CategoryShare {
    fn from_totals(totals: [u64; 4]) -> CategoryShare {
        let sum: u64 = totals.iter().sum();
        if sum == 0 {
            return CategoryShare::default();
        }
        CategoryShare(totals.map(|t| t as f64 / sum as f64))
    }

    pub fn get(&self, c: OpCategory) -> f64 {
        self.0[c.index()]
    }
}

#[derive(Clone, Debug, Default)]
pub struct OpTimings {
    pub cpu_us: BTreeMap<u64, u64>,
    pub exposed_gpu_us: BTreeMap<u64, u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub count: CategoryShare,
    pub cpu_time: CategoryShare,
    pub exposed_gpu_time: CategoryShare,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BreakdownError {
    #[error("no operators selected")]
    EmptySelection,
}

/// Share of operator count, CPU time and exposed GPU time per category.
/// Missing timing entries count as zero.
pub fn breakdown(
    trace: &ExecutionTrace,
    selected: &[u64],
    taxonomy: &Taxonomy,
    timings: &OpTimings,
) -> Result<Breakdown, BreakdownError> {
    if selected.is_empty() {
        return Err(BreakdownError::EmptySelection);
    }
    let index = trace.index();
    let (mut count, mut cpu, mut gpu) = ([0u64; 4], [0u64; 4], [0u64; 4]);
    for &id in selected {
        let Some(node) = index.node(id) else { continue };
        let c = taxonomy.categorize(&node.name).index();
        count[c] += 1;
        cpu[c] += timings.cpu_us.get(&id).copied().unwrap_or(0);
        gpu[c] += timings.exposed_gpu_us.get(&id).copied().unwrap_or(0);
    }
    Ok(Breakdown {
        count: CategoryShare::from_totals(count),
        cpu_time: CategoryShare::from_totals(cpu),
        exposed_gpu_time: CategoryShare::from_totals(gpu),
    })
}
