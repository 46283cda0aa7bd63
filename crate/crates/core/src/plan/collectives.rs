use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Collective, ReplayOp, ReplayPlan};
use crate::trace::DType;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankOp {
    pub rank: u32,
    pub node_id: u64,
    pub collective: Collective,
    pub dtype: DType,
    pub message_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedCollective {
    pub group: u32,
    pub position: usize,
    pub collective: Collective,
    pub dtype: DType,
    /// One entry per participating rank, ascending rank.
    pub ops: Vec<RankOp>,
}

/// First point where member ranks disagree. `per_rank` holds each member's
/// op at that position (`None` when the rank has run out of ops).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeadlockReport {
    pub group: u32,
    pub position: usize,
    /// `Some((src, dst))` when the divergence is on a point-to-point channel.
    pub channel: Option<(u32, u32)>,
    pub per_rank: Vec<(u32, Option<RankOp>)>,
}

impl fmt::Display for DeadlockReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DEADLOCK group {} position {}", self.group, self.position)?;
        if let Some((s, d)) = self.channel {
            write!(f, " channel {s}->{d}")?;
        }
        for (rank, op) in &self.per_rank {
            match op {
                Some(op) => write!(f, "\n  rank {rank}: node {} {} {}", op.node_id, op.collective, op.dtype)?,
                None => write!(f, "\n  rank {rank}: <none>")?,
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchOutcome {
    Matched(Vec<MatchedCollective>),
    Deadlock(DeadlockReport),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatchError {
    #[error("no plans given")]
    NoPlans,
    #[error("plans disagree on world size or process groups")]
    InconsistentPlans,
    #[error("expected one plan per rank 0..{world}, got ranks {ranks:?}")]
    RankSet { world: u32, ranks: Vec<u32> },
    #[error("rank {rank} issues node {node} on group {group} but is not a member")]
    NotAMember { rank: u32, node: u64, group: u32 },
    #[error("rank {rank} node {node}: peer {peer} is not in group {group}")]
    BadPeer { rank: u32, node: u64, peer: u32, group: u32 },
}

fn rank_op(rank: u32, op: &ReplayOp) -> RankOp {
    let c = op.comm.as_ref().expect("comm op");
    RankOp { rank, node_id: op.node_id, collective: c.collective, dtype: c.dtype, message_bytes: c.message_bytes }
}

fn comm_ops(plan: &ReplayPlan) -> impl Iterator<Item = &ReplayOp> {
    plan.ops.iter().filter(|o| !o.skip && o.comm.is_some())
}

/// Checks that every process group sees the same ordered sequence of
/// (collective, dtype) on all member ranks, and that point-to-point sends
/// pair with receives in order. Reports the first divergence.
pub fn match_collectives(plans: &[ReplayPlan]) -> Result<MatchOutcome, MatchError> {
    let first = plans.first().ok_or(MatchError::NoPlans)?;
    if plans.iter().any(|p| p.world_size != first.world_size || p.process_groups != first.process_groups) {
        return Err(MatchError::InconsistentPlans);
    }
    let by_rank: BTreeMap<u32, &ReplayPlan> = plans.iter().map(|p| (p.rank, p)).collect();
    let world = first.world_size.max(1);
    if by_rank.len() != plans.len() || by_rank.keys().copied().ne(0..world) {
        let mut ranks: Vec<u32> = plans.iter().map(|p| p.rank).collect();
        ranks.sort_unstable();
        return Err(MatchError::RankSet { world, ranks });
    }

    // (group) -> rank -> collective sequence; (group, src, dst) -> sends / recvs
    let mut seqs: BTreeMap<u32, BTreeMap<u32, Vec<RankOp>>> = BTreeMap::new();
    let mut sends: BTreeMap<(u32, u32, u32), Vec<RankOp>> = BTreeMap::new();
    let mut recvs: BTreeMap<(u32, u32, u32), Vec<RankOp>> = BTreeMap::new();
    for (g, members) in &first.process_groups {
        seqs.insert(*g, members.iter().map(|&r| (r, Vec::new())).collect());
    }
    for (&rank, plan) in &by_rank {
        for op in comm_ops(plan) {
            let c = op.comm.as_ref().unwrap();
            let members = first.process_groups.get(&c.group_id);
            if !members.is_some_and(|m| m.contains(&rank)) {
                return Err(MatchError::NotAMember { rank, node: op.node_id, group: c.group_id });
            }
            if c.collective.is_p2p() {
                let peer = c.peer.unwrap_or(u32::MAX);
                if !members.unwrap().contains(&peer) {
                    return Err(MatchError::BadPeer { rank, node: op.node_id, peer, group: c.group_id });
                }
                let (key, map) = match c.collective {
                    Collective::Send => ((c.group_id, rank, peer), &mut sends),
                    _ => ((c.group_id, peer, rank), &mut recvs),
                };
                map.entry(key).or_default().push(rank_op(rank, op));
            } else {
                seqs.get_mut(&c.group_id).unwrap().get_mut(&rank).unwrap().push(rank_op(rank, op));
            }
        }
    }

    let mut matched = Vec::new();
    for (&group, per_rank) in &seqs {
        let len = per_rank.values().map(Vec::len).max().unwrap_or(0);
        for position in 0..len {
            let at: Vec<(u32, Option<&RankOp>)> = per_rank.iter().map(|(&r, s)| (r, s.get(position))).collect();
            let head = at[0].1;
            let agree = at.iter().all(|(_, op)| match (op, head) {
                (Some(a), Some(h)) => a.collective == h.collective && a.dtype == h.dtype,
                _ => false,
            });
            if !agree {
                return Ok(MatchOutcome::Deadlock(DeadlockReport {
                    group,
                    position,
                    channel: None,
                    per_rank: at.into_iter().map(|(r, o)| (r, o.cloned())).collect(),
                }));
            }
            let head = head.unwrap();
            matched.push(MatchedCollective {
                group,
                position,
                collective: head.collective,
                dtype: head.dtype,
                ops: at.into_iter().map(|(_, o)| o.unwrap().clone()).collect(),
            });
        }
    }

    let mut channels: Vec<(u32, u32, u32)> = sends.keys().chain(recvs.keys()).copied().collect();
    channels.sort_unstable();
    channels.dedup();
    for key @ (group, src, dst) in channels {
        let s = sends.get(&key).map(Vec::as_slice).unwrap_or(&[]);
        let r = recvs.get(&key).map(Vec::as_slice).unwrap_or(&[]);
        for position in 0..s.len().max(r.len()) {
            let (so, ro) = (s.get(position), r.get(position));
            match (so, ro) {
                (Some(a), Some(b)) if a.dtype == b.dtype => matched.push(MatchedCollective {
                    group,
                    position,
                    collective: Collective::Send,
                    dtype: a.dtype,
                    ops: vec![a.clone(), b.clone()],
                }),
                _ => {
                    let mut per_rank = vec![(src, so.cloned()), (dst, ro.cloned())];
                    per_rank.sort_by_key(|(r, _)| *r);
                    return Ok(MatchOutcome::Deadlock(DeadlockReport {
                        group,
                        position,
                        channel: Some((src, dst)),
                        per_rank,
                    }));
                }
            }
        }
    }
    Ok(MatchOutcome::Matched(matched))
}
