use std::collections::{BTreeMap, HashMap, HashSet};

use serde::Deserialize;
use thiserror::Error;

use super::{
    Collective, CommDescriptor, FillPolicy, KernelSpec, OpTarget, Registry, ReplayOp, ReplayPlan, TensorDirective,
    PLAN_VERSION,
};
use crate::graph::{OpCategory, Taxonomy, TensorClassification};
use crate::profile::DurationTable;
use crate::schema::{parse_node_schema, OpSchema};
use crate::trace::{ArgValue, DType, ETNode, ExecutionTrace, Scalar, TensorId, TensorRef};

/// Knobs for values the trace does not record.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    /// Default embedding-table size for lookup-index tensors.
    pub index_table_size: u64,
    pub fill_lo: f64,
    pub fill_hi: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig { index_table_size: 100_000, fill_lo: 0.0, fill_hi: 1.0 }
    }
}

impl PlanConfig {
    pub fn from_toml(text: &str) -> Result<PlanConfig, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }
}

pub struct BuildInputs<'a> {
    pub trace: &'a ExecutionTrace,
    pub selection: &'a [u64],
    pub classification: &'a TensorClassification,
    pub durations: &'a DurationTable,
    pub streams: &'a BTreeMap<u64, u32>,
    pub registry: &'a Registry,
    pub taxonomy: &'a Taxonomy,
    pub config: &'a PlanConfig,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BuildError {
    #[error("node {node}: tensor {tensor} is consumed before its producer {producer}")]
    BrokenDependency { node: u64, tensor: TensorId, producer: u64 },
    #[error("node {node}: process group {group} is not declared")]
    UnknownGroup { node: u64, group: u32 },
    #[error("node {node}: point-to-point op without a peer rank")]
    MissingPeer { node: u64 },
    #[error("selected node {0} is not in the trace")]
    UnknownNode(u64),
}

struct CommArgs {
    group: u32,
    peer: Option<u32>,
    async_op: bool,
}

fn int_of(a: &ArgValue) -> Option<i64> {
    match a {
        ArgValue::Scalar(Scalar::Int(i)) => Some(*i),
        _ => None,
    }
}

fn bool_of(a: &ArgValue) -> Option<bool> {
    match a {
        ArgValue::Scalar(Scalar::Bool(b)) => Some(*b),
        _ => None,
    }
}

/// Binds group / peer / async flags by parameter name when a schema is
/// available, positionally (first int = group, second int = peer, first bool
/// = async) otherwise.
fn comm_args(node: &ETNode, schema: Option<&OpSchema>) -> CommArgs {
    let mut args = CommArgs { group: 0, peer: None, async_op: false };
    if let Some(s) = schema {
        for (p, a) in s.params.iter().zip(&node.inputs) {
            match p.name.as_str() {
                "group" | "group_id" | "pg" => {
                    if let Some(g) = int_of(a) {
                        args.group = g.max(0) as u32;
                    }
                }
                "peer" | "dst" | "src" => args.peer = int_of(a).and_then(|v| u32::try_from(v).ok()),
                "async_op" => args.async_op = bool_of(a).unwrap_or(false),
                _ => {}
            }
        }
        return args;
    }
    let ints: Vec<i64> = node.inputs.iter().filter_map(int_of).collect();
    if let Some(&g) = ints.first() {
        args.group = g.max(0) as u32;
    }
    args.peer = ints.get(1).and_then(|&p| u32::try_from(p).ok());
    args.async_op = node.inputs.iter().find_map(bool_of).unwrap_or(false);
    args
}

fn message(node: &ETNode) -> (DType, u64) {
    let tensors = node.input_tensors();
    let dtype = tensors.first().map(|t| t.dtype).unwrap_or(DType::F32);
    let elems: u64 = tensors.iter().map(|t| t.numel()).sum();
    (dtype, elems * dtype.size_bytes())
}

struct Builder<'a> {
    inp: &'a BuildInputs<'a>,
    live: HashSet<TensorId>,
}

impl Builder<'_> {
    fn directive(&self, node: &ETNode, arg: &ArgValue, lookup: Option<u64>) -> Result<TensorDirective, BuildError> {
        Ok(match arg {
            ArgValue::Tensor(t) => self.tensor_directive(node, t, lookup)?,
            ArgValue::Scalar(s) => TensorDirective::ScalarLiteral { value: Some(s.clone()) },
            ArgValue::None => TensorDirective::ScalarLiteral { value: None },
            ArgValue::List(items) => TensorDirective::List {
                items: items.iter().map(|a| self.directive(node, a, lookup)).collect::<Result<_, _>>()?,
            },
        })
    }

    fn tensor_directive(
        &self,
        node: &ETNode,
        t: &TensorRef,
        lookup: Option<u64>,
    ) -> Result<TensorDirective, BuildError> {
        let cls = self.inp.classification;
        if cls.intermediate.contains(&t.id) {
            if self.live.contains(&t.id) {
                return Ok(TensorDirective::BindIntermediate { id: t.id.clone() });
            }
            let producer = cls.producer.get(&t.id).copied().unwrap_or(0);
            if producer >= node.id {
                return Err(BuildError::BrokenDependency { node: node.id, tensor: t.id.clone(), producer });
            }
            // produced by an op that is not replayed: synthesize it instead
        }
        let fill = match lookup {
            Some(table_size) if t.dtype.is_integer() => FillPolicy::IndexUniform { table_size },
            _ => FillPolicy::RandomUniform { lo: self.inp.config.fill_lo, hi: self.inp.config.fill_hi },
        };
        Ok(TensorDirective::Instantiate { id: t.id.clone(), shape: t.shape.clone(), dtype: t.dtype, fill })
    }
}

/// Assembles the replay plan for one rank.
///
/// Fused ops and ops with neither a usable schema nor a registry entry stay
/// in the plan with `skip = true` so coverage can account for them.
pub fn build_plan(inp: &BuildInputs<'_>) -> Result<ReplayPlan, BuildError> {
    let trace = inp.trace;
    let index = trace.index();
    let groups = trace.effective_process_groups();
    let group_map: BTreeMap<u32, u32> = groups.keys().enumerate().map(|(new, &old)| (old, new as u32)).collect();
    let process_groups: BTreeMap<u32, Vec<u32>> =
        groups.iter().map(|(old, members)| (group_map[old], members.clone())).collect();

    let mut selection = inp.selection.to_vec();
    selection.sort_unstable();
    let mut b = Builder { inp, live: HashSet::new() };
    let mut ops = Vec::with_capacity(selection.len());
    for id in selection {
        let node = index.node(id).ok_or(BuildError::UnknownNode(id))?;
        let category = inp.taxonomy.categorize(&node.name);
        let schema = parse_node_schema(&node.op_schema).ok().flatten();
        let mut keys = vec![node.name.as_str()];
        let full = schema.as_ref().map(OpSchema::full_name);
        if let Some(f) = &full {
            keys.push(f.as_str());
        }
        let entry = inp.registry.find(keys);

        let mut comm = None;
        let (target, skip) = match category {
            OpCategory::Fused => (schema.clone().map(OpTarget::Schema).unwrap_or(OpTarget::None), true),
            OpCategory::Communication => match Collective::from_op_name(&node.name) {
                Some(collective) => {
                    let args = comm_args(node, schema.as_ref());
                    let group_id =
                        *group_map.get(&args.group).ok_or(BuildError::UnknownGroup { node: id, group: args.group })?;
                    if collective.is_p2p() && args.peer.is_none() {
                        return Err(BuildError::MissingPeer { node: id });
                    }
                    let (dtype, message_bytes) = message(node);
                    comm = Some(CommDescriptor {
                        group_id,
                        collective,
                        dtype,
                        message_bytes,
                        blocking: !args.async_op,
                        peer: if collective.is_p2p() { args.peer } else { None },
                    });
                    (schema.clone().map(OpTarget::Schema).unwrap_or(OpTarget::None), false)
                }
                None => (OpTarget::None, true),
            },
            OpCategory::ATen | OpCategory::Custom => {
                let via_registry = entry.map(|e| OpTarget::Registry(e.key.clone()));
                match (category, schema.clone(), via_registry) {
                    (_, _, Some(r)) if category == OpCategory::Custom => (r, false),
                    (OpCategory::ATen, Some(s), _) => (OpTarget::Schema(s), false),
                    (OpCategory::ATen, None, Some(r)) => (r, false),
                    (_, s, _) => (s.map(OpTarget::Schema).unwrap_or(OpTarget::None), true),
                }
            }
        };

        let lookup = entry.filter(|e| e.lookup).map(|e| e.table_size.unwrap_or(inp.config.index_table_size));
        let inputs = node.inputs.iter().map(|a| b.directive(node, a, lookup)).collect::<Result<Vec<_>, _>>()?;
        let outputs: Vec<TensorRef> = node.output_tensors().into_iter().cloned().collect();
        let mut recs = inp.durations.kernels.get(&id).cloned().unwrap_or_default();
        recs.sort_by_key(|k| (k.start_us, k.stream, k.issue_index));
        let kernels = recs.iter().map(|k| KernelSpec { stream: k.stream, dur_us: k.dur_us }).collect();

        if !skip {
            b.live.extend(outputs.iter().map(|t| t.id.clone()));
        }
        ops.push(ReplayOp {
            node_id: id,
            name: node.name.clone(),
            category,
            target,
            inputs,
            outputs,
            stream: inp.streams.get(&id).copied().unwrap_or(0),
            thread: node.tid,
            cpu_us: inp.durations.cpu_us.get(&id).copied(),
            kernels,
            comm,
            skip,
        });
    }
    Ok(ReplayPlan {
        version: PLAN_VERSION.to_string(),
        rank: trace.rank,
        world_size: trace.world_size,
        process_groups,
        group_map,
        ops,
    })
}

/// Recorded shapes of every tensor an op in `plan` outputs, by id.
pub(super) fn output_specs(ops: &[ReplayOp]) -> HashMap<TensorId, TensorRef> {
    let mut out = HashMap::new();
    for op in ops {
        for t in &op.outputs {
            out.entry(t.id.clone()).or_insert_with(|| t.clone());
        }
    }
    out
}
