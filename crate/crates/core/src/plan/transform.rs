use std::collections::{BTreeSet, HashSet};

use thiserror::Error;

use super::build::output_specs;
use super::{FillPolicy, ReplayPlan, TensorDirective};
use crate::graph::OpCategory;
use crate::trace::{ExecutionTrace, TensorId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SubtraceError {
    #[error("no node is labeled {0:?}")]
    LabelNotFound(String),
    #[error("{count} nodes are labeled {label:?}")]
    AmbiguousLabel { label: String, count: usize },
}

/// The subtree under the node named `label`, re-rooted at that node.
/// Node ids are preserved.
pub fn extract_subtrace(trace: &ExecutionTrace, label: &str) -> Result<ExecutionTrace, SubtraceError> {
    let hits: Vec<u64> = trace.nodes.iter().filter(|n| n.name == label).map(|n| n.id).collect();
    let root = match hits.as_slice() {
        [] => return Err(SubtraceError::LabelNotFound(label.to_string())),
        [one] => *one,
        many => return Err(SubtraceError::AmbiguousLabel { label: label.to_string(), count: many.len() }),
    };
    let index = trace.index();
    let mut keep: HashSet<u64> = index.descendants(root).into_iter().collect();
    keep.insert(root);
    let nodes = trace
        .nodes
        .iter()
        .filter(|n| keep.contains(&n.id))
        .map(|n| {
            let mut n = n.clone();
            if n.id == root {
                n.parent = None;
            }
            n
        })
        .collect();
    Ok(ExecutionTrace { nodes, ..trace.clone() })
}

/// Marks ops outside `keep` as skipped. Inputs bound to a now-skipped
/// producer become `Instantiate` directives with the recorded shape.
pub fn filter_by_category(plan: &ReplayPlan, keep: &BTreeSet<OpCategory>) -> ReplayPlan {
    let mut out = plan.clone();
    for op in &mut out.ops {
        if !keep.contains(&op.category) {
            op.skip = true;
        }
    }
    let specs = output_specs(&plan.ops);
    let mut live: HashSet<TensorId> = HashSet::new();
    for op in &mut out.ops {
        if op.skip {
            continue;
        }
        for d in &mut op.inputs {
            d.visit_mut(&mut |d| {
                let TensorDirective::BindIntermediate { id } = d else { return };
                if live.contains(id) {
                    return;
                }
                let (shape, dtype) = specs
                    .get(id)
                    .map(|t| (t.shape.clone(), t.dtype))
                    .unwrap_or((Vec::new(), crate::trace::DType::Unknown));
                *d = TensorDirective::Instantiate { id: id.clone(), shape, dtype, fill: FillPolicy::default() };
            });
        }
        live.extend(op.outputs.iter().map(|t| t.id.clone()));
    }
    out
}
