//! Portable replay plans.
//!
//! A plan is the hand-off artifact between the analyzer and every replayer:
//! the simulator in this crate and any external executor. Its JSON layout is
//! documented in `docs/FORMATS.md`.

mod build;
mod collectives;
mod cost;
mod registry;
mod transform;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::graph::OpCategory;
use crate::schema::OpSchema;
use crate::trace::{DType, Scalar, TensorId, TensorRef};

pub use build::{build_plan, BuildError, BuildInputs, PlanConfig};
pub use collectives::{match_collectives, DeadlockReport, MatchError, MatchOutcome, MatchedCollective, RankOp};
pub use cost::{scale_comm, AlphaBetaModel, CommCostModel, CostModelError, IdentityModel, ZeroModel};
pub use registry::{Registry, RegistryEntry, RegistryError};
pub use transform::{extract_subtrace, filter_by_category, SubtraceError};

pub const PLAN_VERSION: &str = "etreplay-plan/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FillPolicy {
    RandomUniform {
        lo: f64,
        hi: f64,
    },
    Zeros,
    /// Lookup indices drawn uniformly from `[0, table_size)`.
    IndexUniform {
        table_size: u64,
    },
}

impl Default for FillPolicy {
    fn default() -> Self {
        FillPolicy::RandomUniform { lo: 0.0, hi: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TensorDirective {
    /// Use the tensor an earlier replayed op produced.
    BindIntermediate {
        id: TensorId,
    },
    /// Materialize the tensor if it does not exist yet. Repeated directives
    /// for one id refer to the same tensor.
    Instantiate {
        id: TensorId,
        shape: Vec<u64>,
        dtype: DType,
        fill: FillPolicy,
    },
    ScalarLiteral {
        value: Option<Scalar>,
    },
    List {
        items: Vec<TensorDirective>,
    },
}

impl TensorDirective {
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a TensorDirective)) {
        f(self);
        if let TensorDirective::List { items } = self {
            items.iter().for_each(|d| d.visit(f));
        }
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut TensorDirective)) {
        f(self);
        if let TensorDirective::List { items } = self {
            items.iter_mut().for_each(|d| d.visit_mut(f));
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Collective {
    AllReduce,
    AllToAll,
    AllGather,
    ReduceScatter,
    Broadcast,
    Send,
    Recv,
    Barrier,
}

impl Collective {
    pub const ALL: [Collective; 8] = [
        Collective::AllReduce,
        Collective::AllToAll,
        Collective::AllGather,
        Collective::ReduceScatter,
        Collective::Broadcast,
        Collective::Send,
        Collective::Recv,
        Collective::Barrier,
    ];

    /// Recognizes collective names with or without `nccl:` / `c10d::` prefixes
    /// and the usual framework spellings.
    pub fn from_op_name(name: &str) -> Option<Collective> {
        let base =
            name.strip_prefix("nccl:").or_else(|| name.strip_prefix("c10d::")).unwrap_or(name).trim_end_matches('_');
        Some(match base {
            "all_reduce" | "allreduce" | "allreduce_coalesced" => Collective::AllReduce,
            "all_to_all" | "alltoall" | "alltoall_base" | "all_to_all_single" => Collective::AllToAll,
            "all_gather" | "allgather" | "_allgather_base" | "all_gather_into_tensor" => Collective::AllGather,
            "reduce_scatter" | "_reduce_scatter_base" | "reduce_scatter_tensor" => Collective::ReduceScatter,
            "broadcast" => Collective::Broadcast,
            "send" => Collective::Send,
            "recv" | "recv_any_source" => Collective::Recv,
            "barrier" => Collective::Barrier,
            _ => return None,
        })
    }

    pub fn is_p2p(self) -> bool {
        matches!(self, Collective::Send | Collective::Recv)
    }

    pub fn name(self) -> &'static str {
        match self {
            Collective::AllReduce => "all_reduce",
            Collective::AllToAll => "all_to_all",
            Collective::AllGather => "all_gather",
            Collective::ReduceScatter => "reduce_scatter",
            Collective::Broadcast => "broadcast",
            Collective::Send => "send",
            Collective::Recv => "recv",
            Collective::Barrier => "barrier",
        }
    }
}

impl fmt::Display for Collective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommDescriptor {
    pub group_id: u32,
    pub collective: Collective,
    pub dtype: DType,
    pub message_bytes: u64,
    pub blocking: bool,
    pub peer: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpTarget {
    Schema(OpSchema),
    Registry(String),
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub stream: u32,
    pub dur_us: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayOp {
    pub node_id: u64,
    pub name: String,
    pub category: OpCategory,
    pub target: OpTarget,
    pub inputs: Vec<TensorDirective>,
    /// Tensors this op produces, with their recorded shapes.
    pub outputs: Vec<TensorRef>,
    pub stream: u32,
    pub thread: u32,
    /// Recorded CPU time; `None` when the profile had no matching event.
    pub cpu_us: Option<u64>,
    pub kernels: Vec<KernelSpec>,
    pub comm: Option<CommDescriptor>,
    pub skip: bool,
}

impl ReplayOp {
    pub fn kernel_time_us(&self) -> u64 {
        self.kernels.iter().map(|k| k.dur_us).sum()
    }

    /// Ids bound from earlier ops' outputs.
    pub fn bound_ids(&self) -> Vec<&TensorId> {
        let mut out = Vec::new();
        for d in &self.inputs {
            d.visit(&mut |d| {
                if let TensorDirective::BindIntermediate { id } = d {
                    out.push(id);
                }
            });
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayPlan {
    pub version: String,
    pub rank: u32,
    pub world_size: u32,
    /// Dense group id to member ranks.
    pub process_groups: BTreeMap<u32, Vec<u32>>,
    /// Original trace group id to dense group id.
    pub group_map: BTreeMap<u32, u32>,
    pub ops: Vec<ReplayOp>,
}

impl ReplayPlan {
    pub fn op(&self, node_id: u64) -> Option<&ReplayOp> {
        self.ops.iter().find(|o| o.node_id == node_id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PlanViolation {
    BrokenDependency { node: u64, tensor: TensorId },
    UnknownGroup { node: u64, group: u32 },
    FusedNotSkipped { node: u64 },
    MissingTarget { node: u64 },
    IndexFillOnFloat { node: u64, tensor: TensorId },
    OutOfOrder { node: u64 },
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanViolation::BrokenDependency { node, tensor } => {
                write!(f, "node {node}: tensor {tensor} bound before any replayed op produced it")
            }
            PlanViolation::UnknownGroup { node, group } => write!(f, "node {node}: unknown process group {group}"),
            PlanViolation::FusedNotSkipped { node } => write!(f, "node {node}: fused op must be skipped"),
            PlanViolation::MissingTarget { node } => {
                write!(f, "node {node}: replayed op has no schema or registry key")
            }
            PlanViolation::IndexFillOnFloat { node, tensor } => {
                write!(f, "node {node}: index fill on non-integer tensor {tensor}")
            }
            PlanViolation::OutOfOrder { node } => write!(f, "node {node}: ops are not in execution order"),
        }
    }
}

/// Re-checks plan invariants. Every `build_plan` output passes.
pub fn validate_plan(plan: &ReplayPlan) -> Vec<PlanViolation> {
    let mut out = Vec::new();
    let mut live: HashMap<&TensorId, u64> = HashMap::new();
    let mut prev = None;
    for op in &plan.ops {
        let node = op.node_id;
        if prev.is_some_and(|p| p >= node) {
            out.push(PlanViolation::OutOfOrder { node });
        }
        prev = Some(node);
        if op.category == OpCategory::Fused && !op.skip {
            out.push(PlanViolation::FusedNotSkipped { node });
        }
        if op.skip {
            continue;
        }
        if op.target == OpTarget::None && op.comm.is_none() {
            out.push(PlanViolation::MissingTarget { node });
        }
        for id in op.bound_ids() {
            if !live.contains_key(id) {
                out.push(PlanViolation::BrokenDependency { node, tensor: id.clone() });
            }
        }
        for d in &op.inputs {
            d.visit(&mut |d| {
                if let TensorDirective::Instantiate { id, dtype, fill: FillPolicy::IndexUniform { .. }, .. } = d {
                    if !dtype.is_integer() {
                        out.push(PlanViolation::IndexFillOnFloat { node, tensor: id.clone() });
                    }
                }
            });
        }
        if let Some(c) = &op.comm {
            if !plan.process_groups.contains_key(&c.group_id) {
                out.push(PlanViolation::UnknownGroup { node, group: c.group_id });
            }
        }
        for t in &op.outputs {
            live.entry(&t.id).or_insert(node);
        }
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanIoError {
    #[error("malformed plan document: {0}")]
    MalformedDocument(String),
    #[error("plan version {found:?} is not supported (expected {PLAN_VERSION:?})")]
    VersionMismatch { found: String },
}

/// Canonical plan bytes: sorted keys, two-space indentation, trailing newline.
pub fn save_plan(plan: &ReplayPlan) -> Vec<u8> {
    let value = serde_json::to_value(plan).expect("plan is always serializable");
    let mut out = serde_json::to_vec_pretty(&value).expect("plan is always serializable");
    out.push(b'\n');
    out
}

pub fn load_plan(bytes: &[u8]) -> Result<ReplayPlan, PlanIoError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| PlanIoError::MalformedDocument(e.to_string()))?;
    let version = value
        .get("version")
        .and_then(Value::as_str)
        .ok_or_else(|| PlanIoError::MalformedDocument("missing `version`".into()))?;
    if version != PLAN_VERSION {
        return Err(PlanIoError::VersionMismatch { found: version.to_string() });
    }
    serde_json::from_value(value).map_err(|e| PlanIoError::MalformedDocument(e.to_string()))
}
