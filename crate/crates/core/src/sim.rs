//! The round-synchronous radio engine.
//!
//! In every round each node either transmits or listens. A listening node
//! receives a message iff exactly one of its neighbours transmits; two or
//! more simultaneous transmitting neighbours collide, and a collision is
//! indistinguishable from silence at the receiver. Nodes share the round
//! length but not the clock value: node `v` sees local round
//! `t + offset[v]` during global round `t`.
//!
//! The engine runs in two modes that must produce identical traces: a naive
//! mode that executes every round, and an event-driven mode that skips
//! stretches of rounds in which no node reports scheduled activity.

use crate::graph::{Graph, NodeId};
use crate::message::Action;
use serde::{Deserialize, Serialize};

/// A deterministic per-node state machine driven by its local clock.
///
/// Contract required for event-driven execution to match naive execution:
/// `decide` may mutate state only when it returns `Transmit` or when called
/// at a local round previously reported by `next_activity`; on any other
/// listen round with no delivery it must be a no-op. `next_activity` returns
/// the next local round (strictly later than the current one) at which the
/// node could transmit or needs to update state, assuming it receives
/// nothing in between; deliveries may reschedule it.
pub trait NodeProgram {
    type Msg: Clone;

    fn decide(&mut self, local: u64) -> Action<Self::Msg>;
    fn deliver(&mut self, local: u64, msg: &Self::Msg);
    fn next_activity(&self, local: u64) -> Option<u64>;
    fn terminated(&self) -> bool;
    /// Origin ids of the source messages this node currently knows.
    fn knowledge(&self) -> Vec<u32>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunConfig {
    pub horizon: u64,
    pub fast_forward: bool,
}

impl RunConfig {
    pub fn new(horizon: u64) -> RunConfig {
        RunConfig {
            horizon,
            fast_forward: true,
        }
    }

    pub fn naive(horizon: u64) -> RunConfig {
        RunConfig {
            horizon,
            fast_forward: false,
        }
    }
}

/// One global round in which at least one node transmitted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord<M> {
    pub round: u64,
    pub transmitters: Vec<(NodeId, M)>,
    pub receptions: Vec<(NodeId, M)>,
    /// listening nodes with two or more transmitting neighbours
    pub collisions: Vec<NodeId>,
}

/// Full deterministic record of a run. Only rounds with transmissions are
/// stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace<M> {
    pub rounds: Vec<RoundRecord<M>>,
    /// last global round that was actually executed
    pub last_round: u64,
    pub all_terminated: bool,
    /// global round at whose end each node first reported termination
    pub termination_round: Vec<Option<u64>>,
    pub knowledge: Vec<Vec<u32>>,
}

impl<M: Clone> Trace<M> {
    /// Reception history of one node: `(global round, message)` pairs; all
    /// other rounds were silence (or collisions) from its point of view.
    pub fn history(&self, v: NodeId) -> Vec<(u64, M)> {
        let mut out = Vec::new();
        for r in &self.rounds {
            for (u, m) in &r.receptions {
                if *u == v {
                    out.push((r.round, m.clone()));
                }
            }
        }
        out
    }

    pub fn transmissions_of(&self, v: NodeId) -> Vec<(u64, M)> {
        let mut out = Vec::new();
        for r in &self.rounds {
            for (u, m) in &r.transmitters {
                if *u == v {
                    out.push((r.round, m.clone()));
                }
            }
        }
        out
    }

    pub fn collision_count(&self) -> usize {
        self.rounds.iter().map(|r| r.collisions.len()).sum()
    }

    /// Per-round metric lines: `round,transmitters,receptions,collisions`.
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("round,transmitters,receptions,collisions\n");
        for r in &self.rounds {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.round,
                r.transmitters.len(),
                r.receptions.len(),
                r.collisions.len()
            ));
        }
        s
    }
}

/// Executes the programs on the graph until all terminate, activity dies
/// out, or the horizon is reached.
pub fn run<P: NodeProgram>(
    g: &Graph,
    programs: &mut [P],
    offsets: &[u64],
    cfg: &RunConfig,
) -> Trace<P::Msg> {
    let n = g.node_count();
    assert_eq!(programs.len(), n);
    assert_eq!(offsets.len(), n);
    let mut rounds = Vec::new();
    let mut termination_round: Vec<Option<u64>> = vec![None; n];
    let mut last_round = 0;
    let mut t: u64 = 1;
    while t <= cfg.horizon {
        if termination_round.iter().all(|r| r.is_some()) {
            break;
        }
        last_round = t;
        // 1. collect actions
        let mut transmitters: Vec<(NodeId, P::Msg)> = Vec::new();
        let mut transmitted = vec![false; n];
        for v in 0..n {
            if termination_round[v].is_some() {
                continue;
            }
            if let Action::Transmit(m) = programs[v].decide(t + offsets[v]) {
                transmitters.push((v as NodeId, m));
                transmitted[v] = true;
            }
        }
        // 2. resolve the channel
        if !transmitters.is_empty() {
            let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n];
            for (idx, (u, _)) in transmitters.iter().enumerate() {
                for &v in g.neighbors(*u) {
                    incoming[v as usize].push(idx);
                }
            }
            let mut receptions = Vec::new();
            let mut collisions = Vec::new();
            for v in 0..n {
                if termination_round[v].is_some() || transmitted[v] {
                    continue;
                }
                match incoming[v].len() {
                    0 => {}
                    1 => {
                        let m = transmitters[incoming[v][0]].1.clone();
                        programs[v].deliver(t + offsets[v], &m);
                        receptions.push((v as NodeId, m));
                    }
                    _ => collisions.push(v as NodeId),
                }
            }
            rounds.push(RoundRecord {
                round: t,
                transmitters,
                receptions,
                collisions,
            });
        }
        // 3. note fresh terminations
        for v in 0..n {
            if termination_round[v].is_none() && programs[v].terminated() {
                termination_round[v] = Some(t);
            }
        }
        // 4. advance the clock
        if cfg.fast_forward {
            let mut next: Option<u64> = None;
            for v in 0..n {
                if termination_round[v].is_some() {
                    continue;
                }
                if let Some(l) = programs[v].next_activity(t + offsets[v]) {
                    debug_assert!(l > t + offsets[v], "activity hint must be in the future");
                    let gl = l.saturating_sub(offsets[v]).max(t + 1);
                    next = Some(next.map_or(gl, |x: u64| x.min(gl)));
                }
            }
            match next {
                Some(nt) => t = nt,
                None => break, // idle forever
            }
        } else {
            t += 1;
        }
    }
    let all_terminated = termination_round.iter().all(|r| r.is_some());
    if !all_terminated {
        // whether rounds were iterated or skipped as silent, the network
        // was simulated through the horizon
        last_round = cfg.horizon;
    }
    Trace {
        rounds,
        last_round,
        all_terminated,
        termination_round,
        knowledge: programs.iter().map(|p| p.knowledge()).collect(),
    }
}
