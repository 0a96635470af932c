//! The k-broadcast labeling scheme and algorithm.
//!
//! Labeling: pick a coordinator `r`, attach acknowledged-broadcast bits, and
//! choose a strategy by comparing `k` with the maximum degree. When
//! `k <= Δ`, sources are numbered 1..k in `sched` (strat = 0); otherwise
//! every node's `sched` is its distance-two colour (strat = 1).
//!
//! Algorithm: three consecutive stages. Initialize is a bounded
//! acknowledged broadcast from `r` after which every node knows a round
//! bound `m` and shares `r`'s clock (rounds 1..3m). Aggregate collects the
//! source messages at `r`: with strat = 0, phases of exactly `2m` rounds in
//! which `r` queries source index `i` and the matching source acknowledges
//! with its message attached, ending with a "done" phase after the first
//! silent one; with strat = 1, round-robin colour slots in which every node
//! repeatedly transmits everything it knows. Inform floods `r`'s complete
//! set and everyone terminates `3m` rounds after it starts.
//!
//! Mechanics are chosen from the label alone: strat = 0 without a colour
//! field means tree machinery (depth counters, join-gated relays); any
//! label carrying a colour means the slotted general-graph machinery.

use crate::ack::{label_ack_general, label_ack_tree, AckBits, SlotParams};
use crate::coloring::Coloring;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::message::{bit_length, Action, MsgSet};
use crate::sim::NodeProgram;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// A fixed-width little bit field inside a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitField {
    pub value: u32,
    pub width: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KBLabel {
    /// false: source-index scheduling; true: colour-slot scheduling
    pub strat: bool,
    pub bits: AckBits,
    /// strat=0: source index (0 at non-sources); strat=1: distance-two colour
    pub sched: BitField,
    /// extra colour field for slotted acknowledgement on non-tree graphs
    /// when strat=0
    pub color: Option<BitField>,
}

impl KBLabel {
    pub fn bit_len(&self) -> u32 {
        4 + self.sched.width + self.color.map_or(0, |c| c.width)
    }

    /// bit 0 strat, bits 1-3 join/stay/ack, then sched (then colour)
    pub fn bits_string(&self) -> String {
        let mut s = format!("{}{}", self.strat as u8, self.bits.bits());
        for f in std::iter::once(self.sched).chain(self.color) {
            for i in (0..f.width).rev() {
                s.push(if f.value >> i & 1 == 1 { '1' } else { '0' });
            }
        }
        s
    }

    /// colour this node schedules slotted transmissions by, if any
    fn slot_color(&self) -> Option<u32> {
        if self.strat {
            Some(self.sched.value)
        } else {
            self.color.map(|c| c.value)
        }
    }

    fn slot_width(&self) -> Option<u32> {
        if self.strat {
            Some(self.sched.width)
        } else {
            self.color.map(|c| c.width)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KBScheme {
    pub labels: Vec<KBLabel>,
    pub coordinator: NodeId,
    pub sources: Vec<NodeId>,
    pub strat: bool,
    /// present whenever the slotted machinery is used (strat=1 or non-tree)
    pub params: Option<SlotParams>,
    pub coloring: Option<Coloring>,
}

impl KBScheme {
    pub fn max_label_bits(&self) -> u32 {
        self.labels.iter().map(|l| l.bit_len()).max().unwrap()
    }
}

/// The declared maximum label length: `4 + max(1, bits(k))` plus the
/// colour-field width on non-trees when `k <= Δ`, and `4 + ceil(log2(c+1))`
/// when `k > Δ`.
pub fn kb_length_formula(strat: bool, tree: bool, k: usize, w: u32) -> u32 {
    if strat {
        4 + w
    } else {
        4 + 1.max(bit_length(k as u64)) + if tree { 0 } else { w }
    }
}

/// Builds the labeling. `coordinator` overrides the default choice (node 0,
/// or the smallest non-source when node 0 is a source and non-sources
/// exist).
pub fn labeling_kb(
    g: &Graph,
    sources: &[NodeId],
    coordinator: Option<NodeId>,
) -> Result<KBScheme> {
    let n = g.node_count();
    if sources.is_empty() {
        return Err(Error::Precondition("at least one source required".into()));
    }
    let mut seen = BTreeSet::new();
    for &s in sources {
        if s as usize >= n || !seen.insert(s) {
            return Err(Error::Precondition(format!("bad source list entry {s}")));
        }
    }
    let r = match coordinator {
        Some(r) if (r as usize) < n => r,
        Some(r) => return Err(Error::Precondition(format!("coordinator {r} out of range"))),
        None => {
            if sources.len() < n && sources.contains(&0) {
                g.nodes().find(|v| !sources.contains(v)).unwrap()
            } else {
                0
            }
        }
    };
    if n == 1 {
        return Ok(KBScheme {
            labels: vec![KBLabel {
                strat: false,
                bits: AckBits::coordinator(),
                sched: BitField { value: 1, width: 1 },
                color: None,
            }],
            coordinator: r,
            sources: sources.to_vec(),
            strat: false,
            params: None,
            coloring: None,
        });
    }
    let k = sources.len();
    let delta = g.nodes().map(|v| g.neighbors(v).len()).max().unwrap();
    let strat = k > delta;
    let tree = g.is_tree();
    let slotted = strat || !tree;
    let (bits, coloring, params) = if slotted {
        let (b, c, p) = label_ack_general(g, r)?;
        (b, Some(c), Some(p))
    } else {
        (label_ack_tree(g, r)?, None, None)
    };
    let labels = g
        .nodes()
        .map(|v| {
            let sched = if strat {
                BitField {
                    value: coloring.as_ref().unwrap().of(v),
                    width: params.as_ref().unwrap().w,
                }
            } else if let Some(i) = sources.iter().position(|&s| s == v) {
                let idx = i as u32 + 1;
                BitField {
                    value: idx,
                    width: bit_length(idx as u64),
                }
            } else {
                BitField { value: 0, width: 1 }
            };
            let color = if !strat && slotted {
                Some(BitField {
                    value: coloring.as_ref().unwrap().of(v),
                    width: params.as_ref().unwrap().w,
                })
            } else {
                None
            };
            KBLabel {
                strat,
                bits: bits[v as usize],
                sched,
                color,
            }
        })
        .collect();
    Ok(KBScheme {
        labels,
        coordinator: r,
        sources: sources.to_vec(),
        strat,
        params,
        coloring,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueryVal {
    Index(u64),
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum KBMsg {
    // Initialize, tree machinery
    Init { counter: u64 },
    InitAck { depth: u64, m: u64 },
    MAnnounce { m: u64, counter: u64 },
    // Initialize, slotted machinery
    InitSlot { sync: u64, colors: Vec<u32> },
    InitAckSlot { m: u64, colors: Vec<u32> },
    MAnnounceSlot { m: u64 },
    // Individual-Collect
    Query { phase: u64, value: QueryVal, counter: u64 },
    QuerySlot { phase: u64, value: QueryVal },
    PhaseAck { phase: u64, depth: u64, msgs: MsgSet },
    PhaseAckSlot { phase: u64, msgs: MsgSet, colors: Vec<u32> },
    // RoundRobin-Collect
    RRData { msgs: MsgSet },
    // Inform
    Inform { msgs: MsgSet, counter: u64 },
    InformSlot { msgs: MsgSet },
    InformAck { depth: u64 },
    InformAckSlot { colors: Vec<u32> },
}

impl KBMsg {
    fn is_ack_kind(&self) -> bool {
        matches!(
            self,
            KBMsg::InitAck { .. }
                | KBMsg::InitAckSlot { .. }
                | KBMsg::PhaseAck { .. }
                | KBMsg::PhaseAckSlot { .. }
                | KBMsg::InformAck { .. }
                | KBMsg::InformAckSlot { .. }
        )
    }
}

#[derive(Debug)]
pub struct KBProgram {
    id: NodeId,
    label: KBLabel,
    solo: bool,
    /// slotted machinery in use (strat=1 or non-tree)
    slotted: bool,
    color: u32,
    cycle: u64,
    known: MsgSet,
    sync_delta: Option<i64>,
    depth: Option<u64>,
    /// colour path back to `r` recorded during Initialize (slotted)
    path: Vec<u32>,
    m: Option<u64>,
    /// entries: (earliest sync round, message); tree entries fire at that
    /// round exactly, slotted entries at the first own-colour slot >= it
    queue: Vec<(u64, KBMsg)>,
    started: bool,
    seen_init: bool,
    seen_mann: bool,
    seen_inform: bool,
    last_query_phase: u64,
    /// coordinator: phases in which an acknowledgement (or the local
    /// absorption) arrived
    ack_phases: BTreeSet<u64>,
    next_phase: u64,
    done_phase: Option<u64>,
    inform_acked: bool,
    final_sync: Option<u64>,
    done: bool,
}

impl KBProgram {
    pub fn new(id: NodeId, label: KBLabel, is_source: bool, solo: bool) -> KBProgram {
        let is_r = label.bits.is_coordinator();
        let slotted = label.slot_color().is_some();
        let cycle = label.slot_width().map_or(1, |w| (1u64 << w) - 1);
        KBProgram {
            id,
            color: label.slot_color().unwrap_or(0),
            cycle,
            known: if is_source {
                MsgSet::singleton(id)
            } else {
                MsgSet::empty()
            },
            sync_delta: None,
            depth: if is_r { Some(0) } else { None },
            path: Vec::new(),
            m: None,
            queue: if is_r {
                let first = if slotted {
                    KBMsg::InitSlot {
                        sync: 0,
                        colors: Vec::new(),
                    }
                } else {
                    KBMsg::Init { counter: 0 }
                };
                vec![(1, first)]
            } else {
                Vec::new()
            },
            started: false,
            seen_init: false,
            seen_mann: false,
            seen_inform: false,
            last_query_phase: 0,
            ack_phases: BTreeSet::new(),
            next_phase: 1,
            done_phase: None,
            inform_acked: false,
            final_sync: None,
            done: false,
            label,
            solo,
            slotted,
        }
    }

    pub fn acknowledged(&self) -> bool {
        self.inform_acked
    }

    pub fn learned_m(&self) -> Option<u64> {
        self.m
    }

    fn is_r(&self) -> bool {
        self.label.bits.is_coordinator()
    }

    fn is_z(&self) -> bool {
        self.label.bits.ack && !self.is_r()
    }

    /// source index from the label (strat=0)
    fn self_index(&self) -> Option<u64> {
        if !self.label.strat && self.label.sched.value > 0 {
            Some(self.label.sched.value as u64)
        } else {
            None
        }
    }

    fn sync(&self, local: u64) -> Option<u64> {
        self.sync_delta.map(|d| (local as i64 + d) as u64)
    }

    fn phase_start(&self, p: u64) -> u64 {
        3 * self.m.unwrap() + (p - 1) * 2 * self.m.unwrap() + 1
    }

    fn phase_end(&self, p: u64) -> u64 {
        3 * self.m.unwrap() + p * 2 * self.m.unwrap()
    }

    /// strat=1: round-robin hop bound, window, and Inform start
    fn rr_hops(&self) -> u64 {
        let m = self.m.unwrap();
        if self.slotted {
            m / self.cycle - 1
        } else {
            m
        }
    }

    fn inform_start(&self) -> Option<u64> {
        let m = self.m?;
        if self.label.strat {
            Some(3 * m + 1 + self.rr_hops() * self.cycle)
        } else {
            Some(self.phase_end(self.done_phase?) + 1)
        }
    }

    fn stale(&self, at: u64, msg: &KBMsg) -> bool {
        let m = match self.m {
            Some(m) => m,
            None => return false,
        };
        match msg {
            KBMsg::Init { .. }
            | KBMsg::InitAck { .. }
            | KBMsg::MAnnounce { .. }
            | KBMsg::InitSlot { .. }
            | KBMsg::InitAckSlot { .. }
            | KBMsg::MAnnounceSlot { .. } => at > 3 * m,
            KBMsg::Query { phase, .. }
            | KBMsg::QuerySlot { phase, .. }
            | KBMsg::PhaseAck { phase, .. }
            | KBMsg::PhaseAckSlot { phase, .. } => at > self.phase_end(*phase),
            _ => false,
        }
    }

    /// acknowledgements go to the front: a pending flood relay of ours that
    /// has not fired by acknowledgement time is provably unnecessary
    fn enqueue(&mut self, at: u64, msg: KBMsg) {
        if msg.is_ack_kind() {
            self.queue.insert(0, (at, msg));
        } else {
            self.queue.push((at, msg));
        }
    }

    fn learn_m(&mut self, m: u64) {
        if self.m.is_some() {
            return;
        }
        self.m = Some(m);
        if self.label.strat {
            // the whole timeline is fixed once m is known
            let inform0 = self.inform_start().unwrap();
            self.final_sync = Some(inform0 - 1 + 3 * m);
            if self.is_r() {
                self.enqueue(
                    inform0,
                    if self.slotted {
                        KBMsg::InformSlot {
                            msgs: MsgSet::empty(),
                        }
                    } else {
                        KBMsg::Inform {
                            msgs: MsgSet::empty(),
                            counter: 0,
                        }
                    },
                );
            }
        }
    }

    /// coordinator bookkeeping at phase starts (strat=0)
    fn run_phase_schedule(&mut self, sync: u64) {
        if !self.is_r() || self.label.strat || self.m.is_none() {
            return;
        }
        while self.done_phase.is_none() && self.phase_start(self.next_phase) <= sync {
            let p = self.next_phase;
            if p >= 2 && !self.ack_phases.contains(&(p - 1)) {
                // first silent phase was p-1: broadcast "done" now
                self.done_phase = Some(p);
                let done_end = self.phase_end(p);
                self.final_sync = Some(done_end + 3 * self.m.unwrap());
                self.push_query(p, QueryVal::Done);
                self.enqueue(
                    done_end + 1,
                    if self.slotted {
                        KBMsg::InformSlot {
                            msgs: MsgSet::empty(),
                        }
                    } else {
                        KBMsg::Inform {
                            msgs: MsgSet::empty(),
                            counter: 0,
                        }
                    },
                );
            } else {
                if self.self_index() == Some(p) {
                    // coordinator doubles as this phase's source: absorb
                    // locally, no over-the-air acknowledgement
                    self.ack_phases.insert(p);
                }
                self.push_query(p, QueryVal::Index(p));
            }
            self.next_phase += 1;
        }
    }

    fn push_query(&mut self, phase: u64, value: QueryVal) {
        let at = self.phase_start(phase);
        let msg = if self.slotted {
            KBMsg::QuerySlot { phase, value }
        } else {
            KBMsg::Query {
                phase,
                value,
                counter: 0,
            }
        };
        self.enqueue(at, msg);
    }

    fn next_own_slot(&self, at_or_after: u64) -> u64 {
        let t = at_or_after;
        t + (self.cycle + self.color as u64 - 1 - (t - 1) % self.cycle) % self.cycle
    }

    fn in_rr_window(&self, sync: u64) -> bool {
        if !self.label.strat || self.m.is_none() {
            return false;
        }
        let agg0 = 3 * self.m.unwrap() + 1;
        sync >= agg0 && sync < self.inform_start().unwrap()
    }
}

impl NodeProgram for KBProgram {
    type Msg = KBMsg;

    fn decide(&mut self, local: u64) -> Action<KBMsg> {
        if self.solo {
            self.done = true;
            return Action::Listen;
        }
        // the coordinator's first decide anchors the shared clock: the
        // round it first speaks in is sync round 1 by definition
        if self.sync_delta.is_none() && self.is_r() {
            self.sync_delta = Some(1 - local as i64);
        }
        let sync = match self.sync(local) {
            Some(s) => s,
            None => return Action::Listen,
        };
        if let Some(f) = self.final_sync {
            if sync >= f {
                self.done = true;
            }
        }
        self.run_phase_schedule(sync);
        let stale: Vec<usize> = self
            .queue
            .iter()
            .enumerate()
            .filter(|(_, (_, msg))| self.stale(sync, msg))
            .map(|(i, _)| i)
            .collect();
        for i in stale.into_iter().rev() {
            self.queue.remove(i);
        }
        let may_fire = if self.slotted {
            (sync - 1) % self.cycle + 1 == self.color as u64
        } else {
            true
        };
        if may_fire {
            if let Some(i) = self.queue.iter().position(|(at, _)| *at <= sync) {
                let (_, mut msg) = self.queue.remove(i);
                self.started = true;
                match &mut msg {
                    KBMsg::InitSlot { sync: s, colors } => {
                        *s = sync;
                        colors.push(self.color);
                    }
                    KBMsg::Inform { msgs, .. } | KBMsg::InformSlot { msgs } => {
                        if self.is_r() {
                            msgs.union_with(&self.known);
                        }
                    }
                    _ => {}
                }
                return Action::Transmit(msg);
            }
        }
        if may_fire && self.in_rr_window(sync) {
            return Action::Transmit(KBMsg::RRData {
                msgs: self.known.clone(),
            });
        }
        Action::Listen
    }

    fn deliver(&mut self, local: u64, msg: &KBMsg) {
        match msg {
            KBMsg::Init { counter } => {
                if self.seen_init || self.is_r() {
                    return;
                }
                self.seen_init = true;
                let depth = counter + 1;
                self.depth = Some(depth);
                self.sync_delta = Some(depth as i64 - local as i64);
                if self.label.bits.join {
                    self.enqueue(depth + 1, KBMsg::Init { counter: depth });
                }
                if self.is_z() {
                    // deepest node: report m = its depth
                    self.learn_m(depth);
                    self.enqueue(depth + 1, KBMsg::InitAck { depth, m: depth });
                }
            }
            KBMsg::InitAck { depth, m } => {
                let my = match self.depth {
                    Some(d) => d,
                    None => return,
                };
                if my + 1 != *depth {
                    return;
                }
                let sync = self.sync(local).unwrap();
                if self.is_r() {
                    self.learn_m(*m);
                    self.enqueue(sync + 1, KBMsg::MAnnounce { m: *m, counter: 0 });
                } else {
                    self.enqueue(sync + 1, KBMsg::InitAck { depth: my, m: *m });
                }
            }
            KBMsg::MAnnounce { m, counter } => {
                if self.seen_mann || self.is_r() {
                    return;
                }
                self.seen_mann = true;
                self.learn_m(*m);
                if self.label.bits.join {
                    let sync = self.sync(local).unwrap();
                    self.enqueue(
                        sync + 1,
                        KBMsg::MAnnounce {
                            m: *m,
                            counter: counter + 1,
                        },
                    );
                }
            }
            KBMsg::InitSlot { sync, colors } => {
                if self.seen_init || self.is_r() {
                    return;
                }
                self.seen_init = true;
                self.sync_delta = Some(*sync as i64 - local as i64);
                self.path = colors.clone();
                self.enqueue(
                    *sync + 1,
                    KBMsg::InitSlot {
                        sync: 0,
                        colors: colors.clone(),
                    },
                );
                if self.is_z() {
                    // report m = (own reception round + 1) * cycle length
                    let m = (*sync + 1) * self.cycle;
                    self.learn_m(m);
                    self.enqueue(
                        *sync + 1,
                        KBMsg::InitAckSlot {
                            m,
                            colors: self.path.clone(),
                        },
                    );
                }
            }
            KBMsg::InitAckSlot { m, colors } => {
                if colors.last() != Some(&self.color) {
                    return;
                }
                let mut rest = colors.clone();
                rest.pop();
                let sync = self.sync(local).unwrap();
                if self.is_r() {
                    if rest.is_empty() && self.m.is_none() {
                        self.learn_m(*m);
                        self.enqueue(sync + 1, KBMsg::MAnnounceSlot { m: *m });
                    }
                } else if !rest.is_empty() {
                    self.enqueue(sync + 1, KBMsg::InitAckSlot { m: *m, colors: rest });
                }
            }
            KBMsg::MAnnounceSlot { m } => {
                if self.seen_mann || self.is_r() {
                    return;
                }
                self.seen_mann = true;
                self.learn_m(*m);
                let sync = self.sync(local).unwrap();
                self.enqueue(sync + 1, KBMsg::MAnnounceSlot { m: *m });
            }
            KBMsg::Query { phase, value, .. } | KBMsg::QuerySlot { phase, value } => {
                if self.is_r() || self.last_query_phase >= *phase || self.m.is_none() {
                    return;
                }
                self.last_query_phase = *phase;
                let sync = self.sync(local).unwrap();
                if self.slotted {
                    self.enqueue(
                        sync + 1,
                        KBMsg::QuerySlot {
                            phase: *phase,
                            value: *value,
                        },
                    );
                } else if self.label.bits.join {
                    let counter = match msg {
                        KBMsg::Query { counter, .. } => *counter,
                        _ => 0,
                    };
                    self.enqueue(
                        sync + 1,
                        KBMsg::Query {
                            phase: *phase,
                            value: *value,
                            counter: counter + 1,
                        },
                    );
                }
                match value {
                    QueryVal::Index(i) => {
                        if self.self_index() == Some(*i) {
                            // designated acknowledger: fire no earlier than
                            // in-phase round m+1
                            let at = self.phase_start(*phase) + self.m.unwrap();
                            let msgs = MsgSet::singleton(self.id);
                            if self.slotted {
                                self.enqueue(
                                    at,
                                    KBMsg::PhaseAckSlot {
                                        phase: *phase,
                                        msgs,
                                        colors: self.path.clone(),
                                    },
                                );
                            } else {
                                self.enqueue(
                                    at,
                                    KBMsg::PhaseAck {
                                        phase: *phase,
                                        depth: self.depth.unwrap(),
                                        msgs,
                                    },
                                );
                            }
                        }
                    }
                    QueryVal::Done => {
                        self.done_phase = Some(*phase);
                        self.final_sync = Some(self.phase_end(*phase) + 3 * self.m.unwrap());
                        if self.is_z() {
                            if self.slotted {
                                self.enqueue(
                                    sync + 1,
                                    KBMsg::PhaseAckSlot {
                                        phase: *phase,
                                        msgs: MsgSet::empty(),
                                        colors: self.path.clone(),
                                    },
                                );
                            } else {
                                self.enqueue(
                                    sync + 1,
                                    KBMsg::PhaseAck {
                                        phase: *phase,
                                        depth: self.depth.unwrap(),
                                        msgs: MsgSet::empty(),
                                    },
                                );
                            }
                        }
                    }
                }
            }
            KBMsg::PhaseAck { phase, depth, msgs } => {
                let my = match self.depth {
                    Some(d) => d,
                    None => return,
                };
                if my + 1 != *depth {
                    return;
                }
                if self.is_r() {
                    self.known.union_with(msgs);
                    self.ack_phases.insert(*phase);
                } else {
                    let sync = self.sync(local).unwrap();
                    self.enqueue(
                        sync + 1,
                        KBMsg::PhaseAck {
                            phase: *phase,
                            depth: my,
                            msgs: msgs.clone(),
                        },
                    );
                }
            }
            KBMsg::PhaseAckSlot {
                phase,
                msgs,
                colors,
            } => {
                if colors.last() != Some(&self.color) {
                    return;
                }
                let mut rest = colors.clone();
                rest.pop();
                if self.is_r() {
                    if rest.is_empty() {
                        self.known.union_with(msgs);
                        self.ack_phases.insert(*phase);
                    }
                } else if !rest.is_empty() {
                    let sync = self.sync(local).unwrap();
                    self.enqueue(
                        sync + 1,
                        KBMsg::PhaseAckSlot {
                            phase: *phase,
                            msgs: msgs.clone(),
                            colors: rest,
                        },
                    );
                }
            }
            KBMsg::RRData { msgs } => {
                self.known.union_with(msgs);
            }
            KBMsg::Inform { msgs, counter } => {
                if self.seen_inform || self.is_r() {
                    return;
                }
                self.seen_inform = true;
                self.known.union_with(msgs);
                let sync = self.sync(local).unwrap();
                if self.label.bits.join {
                    self.enqueue(
                        sync + 1,
                        KBMsg::Inform {
                            msgs: msgs.clone(),
                            counter: counter + 1,
                        },
                    );
                }
                if self.is_z() {
                    self.enqueue(
                        sync + 1,
                        KBMsg::InformAck {
                            depth: self.depth.unwrap(),
                        },
                    );
                }
            }
            KBMsg::InformSlot { msgs } => {
                if self.seen_inform || self.is_r() {
                    return;
                }
                self.seen_inform = true;
                self.known.union_with(msgs);
                let sync = self.sync(local).unwrap();
                self.enqueue(sync + 1, KBMsg::InformSlot { msgs: msgs.clone() });
                if self.is_z() {
                    self.enqueue(
                        sync + 1,
                        KBMsg::InformAckSlot {
                            colors: self.path.clone(),
                        },
                    );
                }
            }
            KBMsg::InformAck { depth } => {
                let my = match self.depth {
                    Some(d) => d,
                    None => return,
                };
                if my + 1 != *depth {
                    return;
                }
                if self.is_r() {
                    self.inform_acked = true;
                } else {
                    let sync = self.sync(local).unwrap();
                    self.enqueue(sync + 1, KBMsg::InformAck { depth: my });
                }
            }
            KBMsg::InformAckSlot { colors } => {
                if colors.last() != Some(&self.color) {
                    return;
                }
                let mut rest = colors.clone();
                rest.pop();
                if self.is_r() {
                    if rest.is_empty() {
                        self.inform_acked = true;
                    }
                } else if !rest.is_empty() {
                    let sync = self.sync(local).unwrap();
                    self.enqueue(sync + 1, KBMsg::InformAckSlot { colors: rest });
                }
            }
        }
    }

    fn next_activity(&self, local: u64) -> Option<u64> {
        if self.solo {
            return None;
        }
        let delta = self.sync_delta?;
        let sync = (local as i64 + delta) as u64;
        let to_local = |s: u64| (s as i64 - delta) as u64;
        let mut next: Option<u64> = None;
        let mut push = |s: u64| {
            if s > sync {
                next = Some(next.map_or(s, |x: u64| x.min(s)));
            }
        };
        for (at, msg) in &self.queue {
            if self.stale(sync, msg) {
                continue;
            }
            let earliest = (*at).max(sync + 1);
            push(if self.slotted {
                self.next_own_slot(earliest)
            } else {
                earliest
            });
        }
        if self.is_r() && !self.label.strat && self.m.is_some() && self.done_phase.is_none() {
            push(self.phase_start(self.next_phase));
        }
        if self.m.is_some() && self.label.strat {
            let agg0 = 3 * self.m.unwrap() + 1;
            let inform0 = self.inform_start().unwrap();
            if sync < inform0 - 1 {
                let s = self.next_own_slot(agg0.max(sync + 1));
                if s < inform0 {
                    push(s);
                }
            }
        }
        if let Some(f) = self.final_sync {
            push(f);
        }
        next.map(to_local)
    }

    fn terminated(&self) -> bool {
        self.done
    }

    fn knowledge(&self) -> Vec<u32> {
        self.known.iter().collect()
    }
}

/// Builds the per-node programs for a labeled instance.
pub fn kb_programs(scheme: &KBScheme) -> Vec<KBProgram> {
    let n = scheme.labels.len();
    (0..n as NodeId)
        .map(|v| {
            KBProgram::new(
                v,
                scheme.labels[v as usize].clone(),
                scheme.sources.contains(&v),
                n == 1,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run, RunConfig, Trace};

    fn run_kb(
        g: &Graph,
        sources: &[NodeId],
        coordinator: Option<NodeId>,
        horizon: u64,
    ) -> (KBScheme, Vec<KBProgram>, Trace<KBMsg>) {
        let scheme = labeling_kb(g, sources, coordinator).unwrap();
        let mut progs = kb_programs(&scheme);
        let offsets = vec![0u64; g.node_count()];
        let trace = run(g, &mut progs, &offsets, &RunConfig::new(horizon));
        (scheme, progs, trace)
    }

    fn assert_solved(g: &Graph, sources: &[NodeId], progs: &[KBProgram], trace: &Trace<KBMsg>) {
        assert!(trace.all_terminated, "did not terminate");
        let want: Vec<u32> = {
            let mut s = sources.to_vec();
            s.sort();
            s
        };
        for v in g.nodes() {
            let mut k = progs[v as usize].knowledge();
            k.sort();
            assert_eq!(k, want, "node {v} missing messages");
        }
        assert!(progs.iter().any(|p| p.acknowledged() || g.node_count() == 1));
    }

    #[test]
    fn labels_k8_two_sources() {
        let g = Graph::complete(8);
        let scheme = labeling_kb(&g, &[1, 2], None).unwrap();
        assert!(!scheme.strat); // k=2 <= Δ=7
        assert_eq!(scheme.coordinator, 0);
        assert_eq!(scheme.labels[1].sched, BitField { value: 1, width: 1 });
        assert_eq!(scheme.labels[2].sched, BitField { value: 2, width: 2 });
        assert_eq!(scheme.labels[3].sched, BitField { value: 0, width: 1 });
        // K_8 is not a tree: every label carries a colour field of width
        // ceil(log2(8+1)) = 4
        assert_eq!(scheme.labels[0].color.unwrap().width, 4);
        let formula = kb_length_formula(false, false, 2, 4);
        assert_eq!(scheme.max_label_bits(), formula);
        assert_eq!(formula, 4 + 2 + 4);
    }

    #[test]
    fn labels_star_all_sources() {
        let g = Graph::star(3);
        let scheme = labeling_kb(&g, &[0, 1, 2, 3], None).unwrap();
        assert!(scheme.strat); // k=4 > Δ=3
        assert_eq!(scheme.params.as_ref().unwrap().c, 4);
        assert_eq!(scheme.labels[0].sched.width, 3);
        assert_eq!(scheme.max_label_bits(), 4 + 3);
        // numColours = 2^3 - 1 = 7
        assert_eq!(scheme.params.as_ref().unwrap().s, 7);
    }

    #[test]
    fn labels_path3_all_sources() {
        let g = Graph::path(3);
        let scheme = labeling_kb(&g, &[0, 1, 2], None).unwrap();
        assert!(scheme.strat);
        assert_eq!(scheme.labels[0].sched.width, 2);
        assert_eq!(scheme.params.as_ref().unwrap().s, 3);
    }

    #[test]
    fn labels_k1_always_strat0() {
        for g in [Graph::path(5), Graph::complete(4), Graph::star(4)] {
            let scheme = labeling_kb(&g, &[1], None).unwrap();
            assert!(!scheme.strat);
            assert_eq!(scheme.labels[1].sched, BitField { value: 1, width: 1 });
        }
    }

    #[test]
    fn coordinator_avoids_sources() {
        let g = Graph::path(4);
        let scheme = labeling_kb(&g, &[0, 2], None).unwrap();
        assert_eq!(scheme.coordinator, 1);
        let scheme = labeling_kb(&g, &[0, 1, 2, 3], None).unwrap();
        assert_eq!(scheme.coordinator, 0); // no non-source exists
    }

    #[test]
    fn strat_bit_agrees_everywhere() {
        let g = Graph::complete(5);
        for k in 1..=5 {
            let sources: Vec<NodeId> = (0..k).collect();
            let scheme = labeling_kb(&g, &sources, None).unwrap();
            assert!(scheme.labels.iter().all(|l| l.strat == scheme.strat));
        }
    }

    #[test]
    fn path2_single_source_pinned_timeline() {
        // tree strat=0, m=1: Initialize 1..3, query phases of 2 rounds from
        // round 4, silence in phase 2, done in phase 3 ending round 9,
        // Inform 10..12
        let g = Graph::path(2);
        let (scheme, progs, trace) = run_kb(&g, &[1], None, 100);
        assert!(!scheme.strat);
        assert_eq!(progs[0].learned_m(), Some(1));
        assert_eq!(trace.termination_round, vec![Some(12), Some(12)]);
        assert_solved(&g, &[1], &progs, &trace);
        let queries: Vec<(u64, QueryVal)> = trace
            .rounds
            .iter()
            .flat_map(|r| r.transmitters.iter().map(move |(v, m)| (r.round, *v, m)))
            .filter_map(|(t, v, m)| match m {
                KBMsg::Query { value, .. } if v == 0 => Some((t, *value)),
                _ => None,
            })
            .collect();
        assert_eq!(
            queries,
            vec![
                (4, QueryVal::Index(1)),
                (6, QueryVal::Index(2)),
                (8, QueryVal::Done)
            ]
        );
    }

    #[test]
    fn individual_collect_phase_count() {
        // k sources on a path tree: k+2 query phases in total
        let g = Graph::path(5);
        for k in 1..=2u64 {
            let sources: Vec<NodeId> = (1..=k as NodeId).collect();
            let (scheme, progs, trace) = run_kb(&g, &sources, None, 2000);
            assert!(!scheme.strat);
            let n_queries = trace
                .rounds
                .iter()
                .flat_map(|r| r.transmitters.iter())
                .filter(|(v, m)| *v == scheme.coordinator && matches!(m, KBMsg::Query { .. }))
                .count() as u64;
            assert_eq!(n_queries, k + 2);
            assert_solved(&g, &sources, &progs, &trace);
        }
    }

    #[test]
    fn coordinator_as_source_absorbs_locally() {
        let g = Graph::path(3);
        let (scheme, progs, trace) = run_kb(&g, &[0], Some(0), 500);
        assert!(!scheme.strat);
        assert_eq!(scheme.coordinator, 0);
        // no PhaseAck carrying the message is ever transmitted
        let acks_with_payload = trace
            .rounds
            .iter()
            .flat_map(|r| r.transmitters.iter())
            .filter(|(_, m)| matches!(m, KBMsg::PhaseAck { msgs, .. } if msgs.len() > 0))
            .count();
        assert_eq!(acks_with_payload, 0);
        assert_solved(&g, &[0], &progs, &trace);
    }

    #[test]
    fn k4_three_sources_within_phase_accounting() {
        let g = Graph::complete(4);
        let (scheme, progs, trace) = run_kb(&g, &[1, 2, 3], None, 10_000);
        assert!(!scheme.strat);
        let m = progs[0].learned_m().unwrap();
        // Initialize 3m + (k+2) phases of 2m + Inform 3m
        assert!(trace.last_round <= 3 * m + 5 * 2 * m + 3 * m);
        assert_solved(&g, &[1, 2, 3], &progs, &trace);
    }

    #[test]
    fn k_equals_n_round_robin() {
        for g in [Graph::complete(4), Graph::path(4), Graph::star(4), {
            let (t6, _, _) = crate::tn::build_tn(2).unwrap();
            t6
        }] {
            let n = g.node_count() as NodeId;
            let sources: Vec<NodeId> = (0..n).collect();
            let (scheme, progs, trace) = run_kb(&g, &sources, None, 50_000);
            assert!(scheme.strat, "k=n must exceed Δ");
            assert_solved(&g, &sources, &progs, &trace);
        }
    }

    #[test]
    fn round_robin_no_listener_hears_two() {
        let g = Graph::star(4);
        let sources: Vec<NodeId> = (0..5).collect();
        let (_, progs, trace) = run_kb(&g, &sources, None, 50_000);
        for rec in &trace.rounds {
            for v in g.nodes() {
                let tx = rec
                    .transmitters
                    .iter()
                    .filter(|(u, _)| g.has_edge(*u, v))
                    .count();
                assert!(tx <= 1, "round {}", rec.round);
            }
        }
        assert!(trace.all_terminated);
        let _ = progs;
    }

    #[test]
    fn non_tree_strat0_uses_slots() {
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        let (scheme, progs, trace) = run_kb(&g, &[2], None, 5000);
        assert!(!scheme.strat);
        assert!(scheme.labels[0].color.is_some());
        assert_eq!(trace.collision_count(), 0);
        assert_solved(&g, &[2], &progs, &trace);
    }

    #[test]
    fn single_node_network() {
        let g = Graph::from_edges(1, &[]).unwrap();
        let (_, progs, trace) = run_kb(&g, &[0], None, 10);
        assert!(trace.all_terminated);
        assert_eq!(progs[0].knowledge(), vec![0]);
    }

    #[test]
    fn random_graphs_every_k_completes() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for trial in 0..6 {
            let n = 5 + trial;
            let g = Graph::random_connected(n, trial, &mut rng);
            for k in [1usize, 2, n / 2 + 1, n] {
                let sources: Vec<NodeId> = (0..k as NodeId).collect();
                let (scheme, progs, trace) = run_kb(&g, &sources, None, 2_000_000);
                assert_solved(&g, &sources, &progs, &trace);
                let tree = g.is_tree();
                let w = scheme.params.as_ref().map_or(0, |p| p.w);
                assert_eq!(
                    scheme.max_label_bits(),
                    kb_length_formula(scheme.strat, tree, k, w),
                    "n={n} k={k}"
                );
            }
        }
    }

    #[test]
    fn fast_forward_matches_naive() {
        let g = Graph::from_prufer(&[0, 2, 2, 5]);
        for sources in [vec![1], vec![1, 3, 4, 0]] {
            let scheme = labeling_kb(&g, &sources, None).unwrap();
            let offsets = vec![0u64; 6];
            let fast = run(
                &g,
                &mut kb_programs(&scheme),
                &offsets,
                &RunConfig::new(20_000),
            );
            let naive = run(
                &g,
                &mut kb_programs(&scheme),
                &offsets,
                &RunConfig::naive(20_000),
            );
            assert_eq!(fast, naive);
            assert!(fast.all_terminated);
        }
    }

    #[test]
    fn clock_offsets_are_invisible() {
        let g = Graph::path(4);
        let scheme = labeling_kb(&g, &[2], None).unwrap();
        let a = run(
            &g,
            &mut kb_programs(&scheme),
            &[0, 0, 0, 0],
            &RunConfig::new(20_000),
        );
        let b = run(
            &g,
            &mut kb_programs(&scheme),
            &[5, 0, 12, 3],
            &RunConfig::new(20_000),
        );
        assert_eq!(a, b);
    }

    #[test]
    fn label_bits_string_layout() {
        let g = Graph::path(2);
        let scheme = labeling_kb(&g, &[1], None).unwrap();
        // r: strat 0, join/stay/ack 111, sched "0"
        assert_eq!(scheme.labels[0].bits_string(), "01110");
        // source: strat 0, ack bit set (deepest node), sched "1"
        assert_eq!(scheme.labels[1].bits_string(), "00011");
    }

    #[test]
    fn bad_inputs_rejected() {
        let g = Graph::path(3);
        assert!(labeling_kb(&g, &[], None).is_err());
        assert!(labeling_kb(&g, &[1, 1], None).is_err());
        assert!(labeling_kb(&g, &[7], None).is_err());
        assert!(labeling_kb(&g, &[0], Some(9)).is_err());
    }
}
