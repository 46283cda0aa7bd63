//! Multi-rank collective programs and a brute-force divergence oracle.

use std::collections::BTreeMap;

use etreplay::graph::OpCategory;
use etreplay::plan::{Collective, CommDescriptor, KernelSpec, OpTarget, ReplayOp, ReplayPlan, PLAN_VERSION};
use etreplay::trace::DType;
use rand::seq::SliceRandom;
use rand::Rng;

const GROUP_KINDS: [Collective; 4] =
    [Collective::AllReduce, Collective::AllGather, Collective::AllToAll, Collective::ReduceScatter];
const DTYPES: [DType; 3] = [DType::F32, DType::F16, DType::I64];

pub fn comm(id: u64, group: u32, c: Collective, dtype: DType, peer: Option<u32>) -> ReplayOp {
    ReplayOp {
        node_id: id,
        name: format!("nccl:{}", c.name()),
        category: OpCategory::Communication,
        target: OpTarget::None,
        inputs: vec![],
        outputs: vec![],
        stream: 1,
        thread: 0,
        cpu_us: Some(2),
        kernels: vec![KernelSpec { stream: 1, dur_us: 10 }],
        comm: Some(CommDescriptor { group_id: group, collective: c, dtype, message_bytes: 256, blocking: false, peer }),
        skip: false,
    }
}

pub fn plan(rank: u32, world: u32, groups: &BTreeMap<u32, Vec<u32>>, ops: Vec<ReplayOp>) -> ReplayPlan {
    ReplayPlan {
        version: PLAN_VERSION.into(),
        rank,
        world_size: world,
        process_groups: groups.clone(),
        group_map: groups.keys().map(|&g| (g, g)).collect(),
        ops,
    }
}

/// Group 0 spans the world; group 1 holds the even ranks.
pub fn groups(world: u32) -> BTreeMap<u32, Vec<u32>> {
    BTreeMap::from([(0, (0..world).collect()), (1, (0..world).step_by(2).collect())])
}

/// Same interleaved collective program on every rank.
pub fn consistent(r: &mut impl Rng, world: u32, len: usize) -> Vec<ReplayPlan> {
    let gs = groups(world);
    let program: Vec<(u32, Collective, DType)> =
        (0..len).map(|_| (r.gen_range(0..2), *GROUP_KINDS.choose(r).unwrap(), *DTYPES.choose(r).unwrap())).collect();
    (0..world)
        .map(|rank| {
            let ops = program
                .iter()
                .enumerate()
                .filter(|(_, (g, _, _))| gs[g].contains(&rank))
                .map(|(i, &(g, c, d))| comm(10 + i as u64, g, c, d, None))
                .collect();
            plan(rank, world, &gs, ops)
        })
        .collect()
}

/// First (group, position) where members disagree, by direct comparison of
/// each rank's per-group sequence.
pub fn oracle(plans: &[ReplayPlan]) -> Option<(u32, usize)> {
    let gs = &plans[0].process_groups;
    for (&g, members) in gs {
        let seqs: Vec<Vec<(Collective, DType)>> = members
            .iter()
            .map(|&m| {
                plans[m as usize]
                    .ops
                    .iter()
                    .filter(|o| !o.skip)
                    .filter_map(|o| o.comm.as_ref())
                    .filter(|c| c.group_id == g)
                    .map(|c| (c.collective, c.dtype))
                    .collect()
            })
            .collect();
        let longest = seqs.iter().map(Vec::len).max().unwrap_or(0);
        for pos in 0..longest {
            let first = seqs[0].get(pos);
            if first.is_none() || seqs.iter().any(|s| s.get(pos) != first) {
                return Some((g, pos));
            }
        }
    }
    None
}

enum Mutation {
    Kind,
    DType,
    Drop,
    Skip,
}

/// Applies one random mutation to one rank; false if that rank has no ops.
pub fn diverge(r: &mut impl Rng, plans: &mut [ReplayPlan]) -> bool {
    let rank = r.gen_range(0..plans.len());
    let ops = &mut plans[rank].ops;
    if ops.is_empty() {
        return false;
    }
    let i = r.gen_range(0..ops.len());
    let m =
        [Mutation::Kind, Mutation::DType, Mutation::Drop, Mutation::Skip].into_iter().nth(r.gen_range(0..4)).unwrap();
    let c = ops[i].comm.as_mut().unwrap();
    match m {
        Mutation::Kind => {
            c.collective = if c.collective == Collective::Barrier { Collective::AllReduce } else { Collective::Barrier }
        }
        Mutation::DType => c.dtype = if c.dtype == DType::Bool { DType::F32 } else { DType::Bool },
        Mutation::Drop => {
            ops.remove(i);
        }
        Mutation::Skip => ops[i].skip = true,
    }
    true
}
