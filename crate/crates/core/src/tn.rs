//! The triangular-tree gossip family: for every x >= 2 a tree on
//! n = x(x+1)/2 nodes — a hub `r` joined by pairwise edge-disjoint paths of
//! lengths 2..=x — whose 2-bit labels let a deterministic program solve
//! n-broadcast in 3x rounds. The distinct path lengths stagger the collect
//! waves so the hub never sees two simultaneous collect transmissions.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::message::{Action, MsgSet};
use crate::sim::{NodeProgram, Trace};
use serde::{Deserialize, Serialize};

/// The four 2-bit node roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TnLabel {
    /// 11: the hub that starts the init wave and the final spread
    Coordinator,
    /// 01: end of a path of non-maximal length
    MidLeaf,
    /// 10: end of the longest path; its collect wave carries the "last" flag
    LastLeaf,
    /// 00: interior path node, pure relay
    Internal,
}

impl TnLabel {
    pub fn bits(&self) -> &'static str {
        match self {
            TnLabel::Coordinator => "11",
            TnLabel::MidLeaf => "01",
            TnLabel::LastLeaf => "10",
            TnLabel::Internal => "00",
        }
    }

    pub fn bit_len(&self) -> u32 {
        2
    }
}

/// Structure of one family member.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TnSpec {
    pub x: u64,
    pub n: usize,
    pub r: NodeId,
    /// `paths[idx]` is the path of length `idx + 2`, listed from the hub's
    /// neighbour out to the leaf.
    pub paths: Vec<Vec<NodeId>>,
}

impl TnSpec {
    pub fn path_length(&self, idx: usize) -> u64 {
        idx as u64 + 2
    }
}

/// Builds the tree, its structure record and the 2-bit labels. With x = 2
/// there is a single path and its leaf takes the longest-path role.
pub fn build_tn(x: u64) -> Result<(Graph, TnSpec, Vec<TnLabel>)> {
    if x < 2 {
        return Err(Error::Precondition("family parameter must be >= 2".into()));
    }
    let n = (x * (x + 1) / 2) as usize;
    let r: NodeId = 0;
    let mut edges = Vec::with_capacity(n - 1);
    let mut labels = vec![TnLabel::Internal; n];
    labels[r as usize] = TnLabel::Coordinator;
    let mut paths = Vec::new();
    let mut next: NodeId = 1;
    for i in 2..=x {
        let mut path = Vec::with_capacity(i as usize);
        let mut prev = r;
        for _ in 0..i {
            edges.push((prev, next));
            path.push(next);
            prev = next;
            next += 1;
        }
        let leaf = *path.last().unwrap();
        labels[leaf as usize] = if i == x {
            TnLabel::LastLeaf
        } else {
            TnLabel::MidLeaf
        };
        paths.push(path);
    }
    let g = Graph::from_edges(n, &edges)?;
    debug_assert_eq!(g.degree(r), x as usize - 1);
    Ok((g, TnSpec { x, n, r, paths }, labels))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TnMsg {
    Init,
    Gather { last: bool, msgs: MsgSet },
    Spread { msgs: MsgSet },
}

/// The n-broadcast state machine for one labeled node. All behaviour after
/// round 1 is reception-driven: a node transmits only in the round right
/// after a qualifying first-time reception.
#[derive(Debug)]
pub struct TnProgram {
    label: TnLabel,
    known: MsgSet,
    pending: Option<TnMsg>,
    /// terminate right after sending the pending message
    done_after_send: bool,
    seen_init: bool,
    seen_gather: bool,
    seen_gather_last: bool,
    seen_spread: bool,
    started: bool,
    done: bool,
}

pub fn tn_program(label: TnLabel, id: NodeId) -> TnProgram {
    TnProgram {
        label,
        known: MsgSet::singleton(id),
        pending: None,
        done_after_send: false,
        seen_init: false,
        seen_gather: false,
        seen_gather_last: false,
        seen_spread: false,
        started: false,
        done: false,
    }
}

impl NodeProgram for TnProgram {
    type Msg = TnMsg;

    fn decide(&mut self, local: u64) -> Action<TnMsg> {
        if self.label == TnLabel::Coordinator && local == 1 {
            self.started = true;
            return Action::Transmit(TnMsg::Init);
        }
        if let Some(m) = self.pending.take() {
            if self.done_after_send {
                self.done = true;
            }
            return Action::Transmit(m);
        }
        Action::Listen
    }

    fn deliver(&mut self, _local: u64, msg: &TnMsg) {
        match (self.label, msg) {
            (TnLabel::Coordinator, TnMsg::Gather { last: false, msgs }) => {
                self.known.union_with(msgs);
            }
            (TnLabel::Coordinator, TnMsg::Gather { last: true, msgs }) => {
                if !self.seen_gather_last {
                    self.seen_gather_last = true;
                    self.known.union_with(msgs);
                    self.pending = Some(TnMsg::Spread {
                        msgs: self.known.clone(),
                    });
                    self.done_after_send = true;
                }
            }
            (TnLabel::Coordinator, _) => {}
            (TnLabel::MidLeaf | TnLabel::LastLeaf, TnMsg::Init) => {
                if !self.seen_init {
                    self.seen_init = true;
                    self.pending = Some(TnMsg::Gather {
                        last: self.label == TnLabel::LastLeaf,
                        msgs: self.known.clone(),
                    });
                }
            }
            (TnLabel::MidLeaf | TnLabel::LastLeaf, TnMsg::Spread { msgs }) => {
                if !self.seen_spread {
                    self.seen_spread = true;
                    self.known.union_with(msgs);
                    self.done = true;
                }
            }
            (TnLabel::MidLeaf | TnLabel::LastLeaf, _) => {}
            (TnLabel::Internal, TnMsg::Init) => {
                if !self.seen_init {
                    self.seen_init = true;
                    self.pending = Some(TnMsg::Init);
                }
            }
            (TnLabel::Internal, TnMsg::Gather { last, msgs }) => {
                let seen = if *last {
                    &mut self.seen_gather_last
                } else {
                    &mut self.seen_gather
                };
                if !*seen {
                    *seen = true;
                    self.known.union_with(msgs);
                    self.pending = Some(TnMsg::Gather {
                        last: *last,
                        msgs: self.known.clone(),
                    });
                }
            }
            (TnLabel::Internal, TnMsg::Spread { msgs }) => {
                if !self.seen_spread {
                    self.seen_spread = true;
                    self.known.union_with(msgs);
                    self.pending = Some(TnMsg::Spread {
                        msgs: self.known.clone(),
                    });
                    self.done_after_send = true;
                }
            }
        }
    }

    fn next_activity(&self, local: u64) -> Option<u64> {
        if self.pending.is_some() {
            Some(local + 1)
        } else if self.label == TnLabel::Coordinator && !self.started {
            Some(1.max(local + 1))
        } else {
            None
        }
    }

    fn terminated(&self) -> bool {
        self.done
    }

    fn knowledge(&self) -> Vec<u32> {
        self.known.iter().collect()
    }
}

/// Closed-form per-node event schedule, on the hub's clock.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TnSchedule {
    /// first reception of the init wave (every node except the hub)
    pub init_first: Vec<Option<u64>>,
    /// first reception of a collect message: `(round, carries_last,
    /// expected origins)` for interior path nodes
    pub gather_first: Vec<Option<(u64, bool, Vec<NodeId>)>>,
    /// the hub's collect receptions: `(round, carries_last, origins)`
    pub hub_gathers: Vec<(u64, bool, Vec<NodeId>)>,
    /// first reception of the spread wave (every node except the hub)
    pub spread_first: Vec<Option<u64>>,
    /// all nodes hold all n source messages and stop by this round
    pub completion: u64,
}

/// Evaluates the closed-form schedule: on the path of length i, the node at
/// distance j from the hub hears init in round j; the node at distance j
/// from the leaf hears the collect wave in round i+j; the hub's collect
/// receptions land in rounds 2i (the longest path's, flagged last, in round
/// 2x); the spread wave reaches distance j in round 2x+j; everything is done
/// by 3x.
pub fn tn_schedule_oracle(x: u64) -> Result<TnSchedule> {
    let (_, spec, _) = build_tn(x)?;
    let n = spec.n;
    let mut init_first = vec![None; n];
    let mut gather_first = vec![None; n];
    let mut spread_first = vec![None; n];
    let mut hub_gathers = Vec::new();
    for (idx, path) in spec.paths.iter().enumerate() {
        let i = spec.path_length(idx);
        let leaf_pos = path.len() - 1;
        for (pos, &v) in path.iter().enumerate() {
            let dist_r = pos as u64 + 1;
            init_first[v as usize] = Some(dist_r);
            spread_first[v as usize] = Some(2 * x + dist_r);
            let dist_leaf = (leaf_pos - pos) as u64;
            if dist_leaf >= 1 {
                // origins within distance (dist_leaf - 1) of the leaf
                let origins: Vec<NodeId> = path[path.len() - dist_leaf as usize..].to_vec();
                gather_first[v as usize] = Some((i + dist_leaf, i == x, origins));
            }
        }
        let mut origins = path.clone();
        origins.sort_unstable();
        hub_gathers.push((2 * i, i == x, origins));
    }
    Ok(TnSchedule {
        init_first,
        gather_first,
        hub_gathers,
        spread_first,
        completion: 3 * x,
    })
}

/// Checks a simulated trace against the oracle schedule: exact first-
/// reception rounds and message contents for every wave at every node, no
/// collision at any node in a round it is predicted to receive, at most one
/// transmitting hub neighbour in the hub's collect rounds, and termination
/// with full knowledge by the completion round.
pub fn verify_tn_trace(
    g: &Graph,
    spec: &TnSpec,
    schedule: &TnSchedule,
    trace: &Trace<TnMsg>,
) -> std::result::Result<(), String> {
    let n = spec.n;
    let mut first_init = vec![None; n];
    let mut first_gather: Vec<Option<(u64, bool, Vec<NodeId>)>> = vec![None; n];
    let mut first_spread = vec![None; n];
    let mut hub_gathers = Vec::new();
    for r in &trace.rounds {
        for (v, m) in &r.receptions {
            let v = *v as usize;
            match m {
                TnMsg::Init => {
                    first_init[v].get_or_insert(r.round);
                }
                TnMsg::Gather { last, msgs } => {
                    let entry = (r.round, *last, msgs.iter().collect::<Vec<_>>());
                    if v == spec.r as usize {
                        hub_gathers.push(entry);
                    } else if first_gather[v].is_none() {
                        first_gather[v] = Some(entry);
                    }
                }
                TnMsg::Spread { .. } => {
                    first_spread[v].get_or_insert(r.round);
                }
            }
        }
    }
    for v in 0..n {
        if v == spec.r as usize {
            continue;
        }
        if first_init[v] != schedule.init_first[v] {
            return Err(format!(
                "node {v}: init wave at {:?}, schedule says {:?}",
                first_init[v], schedule.init_first[v]
            ));
        }
        if first_spread[v] != schedule.spread_first[v] {
            return Err(format!(
                "node {v}: spread wave at {:?}, schedule says {:?}",
                first_spread[v], schedule.spread_first[v]
            ));
        }
        if let Some((round, last, origins)) = &schedule.gather_first[v] {
            let mut expect = origins.clone();
            expect.sort_unstable();
            match &first_gather[v] {
                Some((gr, gl, go)) if gr == round && gl == last && *go == expect => {}
                other => {
                    return Err(format!(
                        "node {v}: collect wave {other:?}, schedule says \
                         ({round}, {last}, {expect:?})"
                    ))
                }
            }
        }
    }
    hub_gathers.sort();
    let mut expect_hub = schedule.hub_gathers.clone();
    expect_hub.sort();
    if hub_gathers != expect_hub {
        return Err(format!(
            "hub collect receptions {hub_gathers:?} != schedule {expect_hub:?}"
        ));
    }
    // no collision where a reception is predicted; hub neighbours never
    // collide in the hub's collect rounds
    let hub_rounds: Vec<u64> = schedule.hub_gathers.iter().map(|(t, _, _)| *t).collect();
    for rec in &trace.rounds {
        for &v in &rec.collisions {
            let predicted = schedule.init_first[v as usize] == Some(rec.round)
                || schedule.spread_first[v as usize] == Some(rec.round)
                || schedule.gather_first[v as usize]
                    .as_ref()
                    .is_some_and(|(t, _, _)| *t == rec.round)
                || (v == spec.r && hub_rounds.contains(&rec.round));
            if predicted {
                return Err(format!(
                    "collision at node {v} in round {} where the schedule \
                     predicts a reception",
                    rec.round
                ));
            }
        }
        if hub_rounds.contains(&rec.round) {
            let hub_txn = rec
                .transmitters
                .iter()
                .filter(|(u, _)| g.has_edge(*u, spec.r))
                .count();
            if hub_txn != 1 {
                return Err(format!(
                    "round {}: {hub_txn} transmitting hub neighbours",
                    rec.round
                ));
            }
        }
    }
    if !trace.all_terminated || trace.last_round > schedule.completion {
        return Err(format!(
            "run not finished by round {} (last executed {}, all terminated: {})",
            schedule.completion, trace.last_round, trace.all_terminated
        ));
    }
    let all: Vec<u32> = (0..n as u32).collect();
    for v in 0..n {
        let mut k = trace.knowledge[v].clone();
        k.sort_unstable();
        if k != all {
            return Err(format!("node {v} ended with partial knowledge {k:?}"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run, RunConfig};

    fn run_tn(x: u64, fast: bool) -> (Graph, TnSpec, Trace<TnMsg>) {
        let (g, spec, labels) = build_tn(x).unwrap();
        let mut progs: Vec<TnProgram> = (0..spec.n)
            .map(|v| tn_program(labels[v], v as NodeId))
            .collect();
        let offsets = vec![0u64; spec.n];
        let cfg = if fast {
            RunConfig::new(10 * x)
        } else {
            RunConfig::naive(10 * x)
        };
        let trace = run(&g, &mut progs, &offsets, &cfg);
        (g, spec, trace)
    }

    #[test]
    fn build_smallest_family_member() {
        let (g, spec, labels) = build_tn(2).unwrap();
        assert_eq!(spec.n, 3);
        assert_eq!(g.degree(spec.r), 1);
        assert_eq!(labels[0], TnLabel::Coordinator);
        assert_eq!(labels[1], TnLabel::Internal);
        assert_eq!(labels[2], TnLabel::LastLeaf);
    }

    #[test]
    fn build_x3_and_x4_shapes() {
        let (g, spec, labels) = build_tn(3).unwrap();
        assert_eq!(spec.n, 6);
        assert_eq!(g.degree(spec.r), 2);
        assert_eq!(
            labels.iter().filter(|&&l| l == TnLabel::MidLeaf).count(),
            1
        );
        let (g4, spec4, _) = build_tn(4).unwrap();
        assert_eq!(spec4.n, 10);
        assert_eq!(g4.degree(spec4.r), 3);
    }

    #[test]
    fn rejects_x_below_two() {
        assert!(build_tn(1).is_err());
    }

    #[test]
    fn oracle_x3_pinned_rounds() {
        let s = tn_schedule_oracle(3).unwrap();
        let (_, spec, _) = build_tn(3).unwrap();
        // leaves hear init at rounds 2 and 3
        let l2 = spec.paths[0][1];
        let l3 = spec.paths[1][2];
        assert_eq!(s.init_first[l2 as usize], Some(2));
        assert_eq!(s.init_first[l3 as usize], Some(3));
        // node next to the long leaf hears the collect wave at 3+1=4
        let near_l3 = spec.paths[1][1];
        assert_eq!(s.gather_first[near_l3 as usize].as_ref().unwrap().0, 4);
        // hub receptions at 4 and 6, last flagged at 6 = 2x
        assert_eq!(s.hub_gathers[0].0, 4);
        assert_eq!(s.hub_gathers[1], (6, true, spec.paths[1].clone()));
        // spread reaches distance j at 6+j; done by 9
        assert_eq!(s.spread_first[l3 as usize], Some(9));
        assert_eq!(s.completion, 9);
    }

    #[test]
    fn oracle_x4_hub_rounds() {
        let s = tn_schedule_oracle(4).unwrap();
        let rounds: Vec<u64> = s.hub_gathers.iter().map(|(t, _, _)| *t).collect();
        assert_eq!(rounds, vec![4, 6, 8]);
        assert!(s.hub_gathers[2].1);
    }

    #[test]
    fn simulated_x2_matches_schedule() {
        let (g, spec, trace) = run_tn(2, true);
        let s = tn_schedule_oracle(2).unwrap();
        verify_tn_trace(&g, &spec, &s, &trace).unwrap();
    }

    #[test]
    fn simulated_x3_matches_schedule() {
        let (g, spec, trace) = run_tn(3, true);
        let s = tn_schedule_oracle(3).unwrap();
        verify_tn_trace(&g, &spec, &s, &trace).unwrap();
        assert_eq!(trace.last_round, 9);
    }

    #[test]
    fn simulated_x6_matches_schedule() {
        let (g, spec, trace) = run_tn(6, true);
        let s = tn_schedule_oracle(6).unwrap();
        verify_tn_trace(&g, &spec, &s, &trace).unwrap();
    }

    #[test]
    fn naive_and_event_driven_agree() {
        let (_, _, fast) = run_tn(5, true);
        let (_, _, naive) = run_tn(5, false);
        assert_eq!(fast, naive);
    }

    #[test]
    fn labels_are_two_bits() {
        let (_, _, labels) = build_tn(7).unwrap();
        assert!(labels.iter().all(|l| l.bit_len() == 2));
    }
}
