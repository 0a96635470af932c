//! Acknowledged broadcast primitives: plain acknowledged broadcast, the
//! bounded variant in which every node learns a round bound `m` and a common
//! termination round `3m`, and the designated-acknowledger variant that
//! starts the acknowledgement at round `m+1`.
//!
//! Two implementations are provided. The tree implementation floods with an
//! incrementing hop counter (so every node learns its depth and the
//! initiator's clock) and retraces the acknowledgement hop by hop along
//! depths; only nodes with children relay, which keeps the acknowledgement
//! rounds free of flood echoes. The general-graph implementation assigns a
//! distance-two colouring and schedules every transmission in the
//! transmitter's colour slot, which guarantees that no listener ever has two
//! transmitting neighbours; the acknowledgement retraces the accumulated
//! colour path of the broadcast.

use crate::coloring::{distance_two_coloring, Coloring};
use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::message::{bit_length, Action, MsgSet};
use crate::sim::{NodeProgram, Trace};
use serde::{Deserialize, Serialize};

/// The three label bits. The initiator carries all three set; the
/// acknowledger carries only `ack`; `join` marks nodes that relay the flood
/// (tree mode: nodes with children).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AckBits {
    pub join: bool,
    pub stay: bool,
    pub ack: bool,
}

impl AckBits {
    pub fn coordinator() -> AckBits {
        AckBits {
            join: true,
            stay: true,
            ack: true,
        }
    }

    pub fn is_coordinator(&self) -> bool {
        self.join && self.stay && self.ack
    }

    pub fn bits(&self) -> String {
        format!(
            "{}{}{}",
            self.join as u8, self.stay as u8, self.ack as u8
        )
    }
}

/// Labels a tree for acknowledged broadcast from `root`: the root is the
/// coordinator, nodes with children carry `join` (they relay the flood), and
/// the acknowledger `z` is the smallest-identifier node at maximum depth —
/// in a tree the flood reaches depth `d` in round `d`, so `z` is among the
/// last nodes to receive the broadcast and its depth equals the flood bound.
pub fn label_ack_tree(tree: &Graph, root: NodeId) -> Result<Vec<AckBits>> {
    let view = tree.rooted_at(root)?;
    let mut bits = vec![AckBits::default(); tree.node_count()];
    for v in tree.nodes() {
        bits[v as usize].join = !view.children[v as usize].is_empty();
    }
    bits[root as usize] = AckBits::coordinator();
    if tree.node_count() > 1 {
        bits[view.deepest_node() as usize].ack = true;
    }
    Ok(bits)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AckMsg {
    /// the broadcast flood; `counter` counts hops from the initiator
    Bcast { body: MsgSet, counter: u64 },
    /// the acknowledgement, retraced by depth; `m` present in bounded mode
    Ack {
        depth: u64,
        m: Option<u64>,
        body: MsgSet,
    },
    /// the initiator's rebroadcast announcing `m` (bounded mode)
    Info { m: u64, body: MsgSet, counter: u64 },
}

/// Which acknowledged-broadcast variant a tree program runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeMode {
    /// flood + acknowledgement from the labeled acknowledger
    AckOnly,
    /// additionally: the acknowledger reports `m` (= its depth), the
    /// initiator rebroadcasts it, and everyone terminates at round `3m`
    Bounded,
    /// `m` known up front; the designated node acknowledges at round `m+1`
    /// with `payload` attached; everyone terminates at round `2m`
    Des { m: u64, designated: bool },
}

/// One node of the tree implementation. All rounds are the initiator's
/// rounds; other nodes learn the mapping from the flood's hop counter.
#[derive(Debug)]
pub struct TreeAckProgram {
    bits: AckBits,
    mode: TreeMode,
    /// content attached to an acknowledgement by a designated acknowledger
    ack_payload: MsgSet,
    known: MsgSet,
    body: MsgSet,
    depth: Option<u64>,
    /// initiator round = local round + delta
    sync_delta: Option<i64>,
    pending: Vec<AckMsg>,
    seen_bcast: bool,
    seen_info: bool,
    started: bool,
    m: Option<u64>,
    /// sync round in which the initiator received the acknowledgement
    ack_round: Option<u64>,
    reception_round: Option<u64>,
    done: bool,
}

impl TreeAckProgram {
    /// `body` is the broadcast content (used by the initiator); every node
    /// also tracks its own identifier in `known`.
    pub fn new(id: NodeId, bits: AckBits, mode: TreeMode, body: MsgSet) -> TreeAckProgram {
        TreeAckProgram {
            bits,
            mode,
            ack_payload: MsgSet::empty(),
            known: MsgSet::singleton(id),
            body,
            depth: if bits.is_coordinator() { Some(0) } else { None },
            sync_delta: None,
            pending: Vec::new(),
            seen_bcast: false,
            seen_info: false,
            started: false,
            m: match mode {
                TreeMode::Des { m, .. } => Some(m),
                _ => None,
            },
            ack_round: None,
            reception_round: None,
            done: false,
        }
    }

    pub fn with_ack_payload(mut self, payload: MsgSet) -> TreeAckProgram {
        self.ack_payload = payload;
        self
    }

    fn sync(&self, local: u64) -> Option<u64> {
        self.sync_delta.map(|d| (local as i64 + d) as u64)
    }

    /// sync round at which this node's broadcast reception happened
    pub fn reception_round(&self) -> Option<u64> {
        self.reception_round
    }

    /// sync round at which the initiator received the acknowledgement
    pub fn ack_round(&self) -> Option<u64> {
        self.ack_round
    }

    pub fn learned_m(&self) -> Option<u64> {
        self.m
    }

    fn termination_sync(&self) -> Option<u64> {
        match self.mode {
            TreeMode::AckOnly => None,
            TreeMode::Bounded => self.m.map(|m| 3 * m),
            TreeMode::Des { m, .. } => Some(2 * m),
        }
    }
}

impl NodeProgram for TreeAckProgram {
    type Msg = AckMsg;

    fn decide(&mut self, local: u64) -> Action<AckMsg> {
        // the initiator's first decide anchors sync round 1
        if self.sync_delta.is_none() && self.bits.is_coordinator() {
            self.sync_delta = Some(1 - local as i64);
        }
        let sync = self.sync(local);
        // termination coincides with the round of the last transmission, so
        // the flag is set regardless of the action taken this round
        if let (Some(t), Some(s)) = (self.termination_sync(), sync) {
            if s >= t {
                self.done = true;
            }
        }
        if self.bits.is_coordinator() && !self.started && sync == Some(1) {
            self.started = true;
            return Action::Transmit(AckMsg::Bcast {
                body: self.body.clone(),
                counter: 0,
            });
        }
        // designated acknowledger fires at exactly sync round m+1
        if let TreeMode::Des { m, designated: true } = self.mode {
            if self.seen_bcast && sync == Some(m + 1) && !self.bits.is_coordinator() {
                let mut body = self.ack_payload.clone();
                body.union_with(&self.known);
                return Action::Transmit(AckMsg::Ack {
                    depth: self.depth.unwrap(),
                    m: None,
                    body,
                });
            }
        }
        if !self.pending.is_empty() {
            return Action::Transmit(self.pending.remove(0));
        }
        Action::Listen
    }

    fn deliver(&mut self, local: u64, msg: &AckMsg) {
        match msg {
            AckMsg::Bcast { body, counter } => {
                if self.seen_bcast || self.bits.is_coordinator() {
                    return;
                }
                self.seen_bcast = true;
                let depth = counter + 1;
                self.depth = Some(depth);
                self.sync_delta = Some(depth as i64 - local as i64);
                self.reception_round = Some(depth);
                self.known.union_with(body);
                if self.bits.join {
                    self.pending.push(AckMsg::Bcast {
                        body: body.clone(),
                        counter: depth,
                    });
                }
                // labeled acknowledger: immediate ack (plain/bounded modes)
                if self.bits.ack && !matches!(self.mode, TreeMode::Des { .. }) {
                    let m = match self.mode {
                        TreeMode::Bounded => {
                            self.m = Some(depth);
                            Some(depth)
                        }
                        _ => None,
                    };
                    self.pending.push(AckMsg::Ack {
                        depth,
                        m,
                        body: self.ack_payload.clone(),
                    });
                }
            }
            AckMsg::Ack { depth, m, body } => {
                let my_depth = match self.depth {
                    Some(d) => d,
                    None => return,
                };
                if my_depth + 1 != *depth {
                    return;
                }
                if self.bits.is_coordinator() {
                    self.known.union_with(body);
                    if self.ack_round.is_none() {
                        self.ack_round = self.sync(local);
                        if let (TreeMode::Bounded, Some(m)) = (self.mode, *m) {
                            self.m = Some(m);
                            let mut info_body = self.body.clone();
                            info_body.union_with(&self.known);
                            self.pending.push(AckMsg::Info {
                                m,
                                body: info_body,
                                counter: 0,
                            });
                        }
                    }
                } else {
                    self.pending.push(AckMsg::Ack {
                        depth: my_depth,
                        m: *m,
                        body: body.clone(),
                    });
                }
            }
            AckMsg::Info { m, body, counter } => {
                if self.seen_info || self.bits.is_coordinator() {
                    return;
                }
                self.seen_info = true;
                self.m = Some(*m);
                self.known.union_with(body);
                if self.bits.join {
                    self.pending.push(AckMsg::Info {
                        m: *m,
                        body: body.clone(),
                        counter: counter + 1,
                    });
                }
            }
        }
    }

    fn next_activity(&self, local: u64) -> Option<u64> {
        if !self.pending.is_empty() {
            return Some(local + 1);
        }
        let mut next: Option<u64> = None;
        let mut push = |l: u64| {
            if l > local {
                next = Some(next.map_or(l, |x: u64| x.min(l)));
            }
        };
        if self.bits.is_coordinator() && !self.started {
            push(local + 1);
        }
        if let Some(delta) = self.sync_delta {
            let to_local = |s: u64| (s as i64 - delta) as u64;
            if let TreeMode::Des { m, designated: true } = self.mode {
                if self.seen_bcast && !self.bits.is_coordinator() {
                    push(to_local(m + 1));
                }
            }
            if let Some(t) = self.termination_sync() {
                push(to_local(t));
            }
        }
        next
    }

    fn terminated(&self) -> bool {
        self.done
    }

    fn knowledge(&self) -> Vec<u32> {
        self.known.iter().collect()
    }
}

/// Builds the per-node tree programs for one run.
pub fn tree_programs(
    tree: &Graph,
    bits: &[AckBits],
    mode: TreeMode,
    body: MsgSet,
) -> Vec<TreeAckProgram> {
    tree.nodes()
        .map(|v| TreeAckProgram::new(v, bits[v as usize], mode, body.clone()))
        .collect()
}

/// Tree programs for the designated-acknowledger variant.
pub fn des_programs(
    tree: &Graph,
    bits: &[AckBits],
    m: u64,
    designated: Option<NodeId>,
    body: MsgSet,
) -> Vec<TreeAckProgram> {
    tree.nodes()
        .map(|v| {
            let mode = TreeMode::Des {
                m,
                designated: designated == Some(v),
            };
            TreeAckProgram::new(v, bits[v as usize], mode, body.clone())
        })
        .collect()
}

/// Summary of a bounded broadcast run, extracted from a trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BroadcastResult {
    pub m: u64,
    pub t_done: u64,
    /// first round each node received the broadcast (initiator: round 0)
    pub reception_round: Vec<Option<u64>>,
}

/// Reads first broadcast receptions out of a tree-mode trace.
pub fn summarize_tree_broadcast(trace: &Trace<AckMsg>, m: u64, n: usize) -> BroadcastResult {
    let mut reception_round = vec![None; n];
    for r in &trace.rounds {
        for (v, msg) in &r.receptions {
            if let AckMsg::Bcast { .. } = msg {
                reception_round[*v as usize].get_or_insert(r.round);
            }
        }
    }
    BroadcastResult {
        m,
        t_done: 3 * m,
        reception_round,
    }
}

// ---------------------------------------------------------------------------
// general-graph variant: distance-two colour slots
// ---------------------------------------------------------------------------

/// Slot parameters shared by all nodes of a slotted run: colour count `c`,
/// the fixed sched width `w = ceil(log2(c+1))`, and the slot cycle length
/// `s = 2^w - 1 >= c`. Round `t` belongs to slot `((t-1) mod s) + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotParams {
    pub c: u32,
    pub w: u32,
    pub s: u64,
}

impl SlotParams {
    pub fn from_colors(c: u32) -> SlotParams {
        // w = ceil(log2(c+1)), the fixed width of a colour field
        let w = if (c as u64 + 1).is_power_of_two() {
            (c as u64 + 1).trailing_zeros()
        } else {
            bit_length(c as u64)
        };
        SlotParams {
            c,
            w,
            s: (1u64 << w) - 1,
        }
    }

    pub fn slot_of(&self, round: u64) -> u64 {
        (round - 1) % self.s + 1
    }

    /// first round strictly after `round` that lies in slot `color`
    pub fn next_slot(&self, color: u32, round: u64) -> u64 {
        let mut t = round + 1;
        t += (self.s + color as u64 - 1 - (t - 1) % self.s) % self.s;
        t
    }
}

/// Offline flood schedule for the slotted broadcast started in round 1:
/// when each node first receives the broadcast, assuming every node relays
/// once in its first own-colour slot after being informed.
pub fn slotted_flood_schedule(
    g: &Graph,
    root: NodeId,
    coloring: &Coloring,
    params: &SlotParams,
) -> Vec<u64> {
    let n = g.node_count();
    let mut informed = vec![u64::MAX; n];
    // transmission round of each node once informed
    let mut heap = std::collections::BinaryHeap::new();
    let root_tx = params.next_slot(coloring.of(root), 0);
    heap.push(std::cmp::Reverse((root_tx, root)));
    informed[root as usize] = 0;
    let mut transmitted = vec![false; n];
    while let Some(std::cmp::Reverse((tx, u))) = heap.pop() {
        if transmitted[u as usize] {
            continue;
        }
        transmitted[u as usize] = true;
        for &v in g.neighbors(u) {
            if informed[v as usize] > tx {
                informed[v as usize] = tx;
                heap.push(std::cmp::Reverse((
                    params.next_slot(coloring.of(v), tx),
                    v,
                )));
            }
        }
    }
    informed
}

/// Labels an arbitrary connected graph for slotted acknowledged broadcast
/// from `root`: coordinator bits at the root, `ack` at the last node the
/// slotted flood informs (smallest identifier on ties), plus the
/// distance-two colouring every node schedules by.
pub fn label_ack_general(
    g: &Graph,
    root: NodeId,
) -> Result<(Vec<AckBits>, Coloring, SlotParams)> {
    let coloring = distance_two_coloring(g);
    let params = SlotParams::from_colors(coloring.count);
    let mut bits = vec![AckBits::default(); g.node_count()];
    bits[root as usize] = AckBits::coordinator();
    if g.node_count() > 1 {
        let informed = slotted_flood_schedule(g, root, &coloring, &params);
        let z = g
            .nodes()
            .filter(|&v| v != root)
            .max_by_key(|&v| (informed[v as usize], std::cmp::Reverse(v)))
            .unwrap();
        bits[z as usize].ack = true;
    }
    Ok((bits, coloring, params))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotKind {
    Bcast,
    Info,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotMsg {
    Flood {
        kind: SlotKind,
        body: MsgSet,
        m: Option<u64>,
        /// sync round of this transmission; receivers adopt the clock
        sync: u64,
        /// colours along the relay chain from the initiator, inclusive
        colors: Vec<u32>,
    },
    Ack {
        body: MsgSet,
        m: Option<u64>,
        sync: u64,
        /// remaining colour path to retrace; the next responder is the
        /// transmitter's unique neighbour with the last colour
        colors: Vec<u32>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneralMode {
    AckOnly,
    Bounded,
    Des { m: u64, designated: bool },
}

/// One node of the slotted general-graph implementation. Every transmission
/// happens in the node's own colour slot, so no listener ever has two
/// transmitting neighbours.
#[derive(Debug)]
pub struct SlotAckProgram {
    bits: AckBits,
    color: u32,
    params: SlotParams,
    mode: GeneralMode,
    ack_payload: MsgSet,
    known: MsgSet,
    body: MsgSet,
    sync_delta: Option<i64>,
    /// messages waiting for our next colour slot
    queue: Vec<SlotMsg>,
    seen_bcast: bool,
    seen_info: bool,
    started: bool,
    /// reverse colour path recorded at broadcast reception
    path: Vec<u32>,
    reception_round: Option<u64>,
    ack_round: Option<u64>,
    m: Option<u64>,
    /// designated acknowledger: don't ack before sync m+1
    ack_not_before: Option<u64>,
    pending_ack: bool,
    done: bool,
}

impl SlotAckProgram {
    pub fn new(
        id: NodeId,
        bits: AckBits,
        color: u32,
        params: SlotParams,
        mode: GeneralMode,
        body: MsgSet,
    ) -> SlotAckProgram {
        SlotAckProgram {
            bits,
            color,
            params,
            mode,
            ack_payload: MsgSet::empty(),
            known: MsgSet::singleton(id),
            body,
            sync_delta: None,
            queue: Vec::new(),
            seen_bcast: false,
            seen_info: false,
            started: false,
            path: Vec::new(),
            reception_round: None,
            ack_round: None,
            m: match mode {
                GeneralMode::Des { m, .. } => Some(m),
                _ => None,
            },
            ack_not_before: match mode {
                GeneralMode::Des { m, .. } => Some(m + 1),
                _ => None,
            },
            pending_ack: false,
            done: false,
        }
    }

    pub fn with_ack_payload(mut self, payload: MsgSet) -> SlotAckProgram {
        self.ack_payload = payload;
        self
    }

    fn sync(&self, local: u64) -> Option<u64> {
        self.sync_delta.map(|d| (local as i64 + d) as u64)
    }

    pub fn reception_round(&self) -> Option<u64> {
        self.reception_round
    }

    pub fn ack_round(&self) -> Option<u64> {
        self.ack_round
    }

    pub fn learned_m(&self) -> Option<u64> {
        self.m
    }

    fn is_designated(&self) -> bool {
        match self.mode {
            GeneralMode::Des { designated, .. } => designated,
            _ => self.bits.ack && !self.bits.is_coordinator(),
        }
    }

    fn termination_sync(&self) -> Option<u64> {
        match self.mode {
            GeneralMode::AckOnly => None,
            GeneralMode::Bounded => self.m.map(|m| 3 * m),
            GeneralMode::Des { m, .. } => Some(2 * m),
        }
    }

    fn build_ack(&self) -> SlotMsg {
        let mut body = self.ack_payload.clone();
        body.union_with(&self.known);
        SlotMsg::Ack {
            body,
            m: match self.mode {
                GeneralMode::Bounded => self.m,
                _ => None,
            },
            sync: 0, // stamped at transmission
            colors: self.path.clone(),
        }
    }
}

impl NodeProgram for SlotAckProgram {
    type Msg = SlotMsg;

    fn decide(&mut self, local: u64) -> Action<SlotMsg> {
        // the initiator's first decide anchors sync round 1
        if self.sync_delta.is_none() && self.bits.is_coordinator() {
            self.sync_delta = Some(1 - local as i64);
        }
        let sync = match self.sync(local) {
            Some(s) => s,
            None => return Action::Listen,
        };
        if let Some(t) = self.termination_sync() {
            if sync >= t {
                self.done = true;
            }
        }
        if self.params.slot_of(sync) == self.color as u64 {
            if self.bits.is_coordinator() && !self.started {
                self.started = true;
                return Action::Transmit(SlotMsg::Flood {
                    kind: SlotKind::Bcast,
                    body: self.body.clone(),
                    m: None,
                    sync,
                    colors: vec![self.color],
                });
            }
            if self.pending_ack && self.ack_not_before.map_or(true, |t| sync >= t) {
                self.pending_ack = false;
                let mut msg = self.build_ack();
                if let SlotMsg::Ack { sync: s, .. } = &mut msg {
                    *s = sync;
                }
                return Action::Transmit(msg);
            }
            if !self.queue.is_empty() {
                let mut msg = self.queue.remove(0);
                match &mut msg {
                    SlotMsg::Flood { sync: s, colors, .. } => {
                        *s = sync;
                        colors.push(self.color);
                    }
                    SlotMsg::Ack { sync: s, .. } => *s = sync,
                }
                return Action::Transmit(msg);
            }
        }
        Action::Listen
    }

    fn deliver(&mut self, local: u64, msg: &SlotMsg) {
        match msg {
            SlotMsg::Flood {
                kind: SlotKind::Bcast,
                body,
                sync,
                colors,
                ..
            } => {
                if self.seen_bcast || self.bits.is_coordinator() {
                    return;
                }
                self.seen_bcast = true;
                self.sync_delta = Some(*sync as i64 - local as i64);
                self.reception_round = Some(*sync);
                self.path = colors.clone();
                self.known.union_with(body);
                // one-shot relay in our next slot
                self.queue.push(SlotMsg::Flood {
                    kind: SlotKind::Bcast,
                    body: body.clone(),
                    m: None,
                    sync: 0,
                    colors: colors.clone(),
                });
                if self.is_designated() {
                    if let GeneralMode::Bounded = self.mode {
                        // report m = (own reception round + 1) * cycle length
                        self.m = Some((*sync + 1) * self.params.s);
                    }
                    self.pending_ack = true;
                }
            }
            SlotMsg::Flood {
                kind: SlotKind::Info,
                body,
                m,
                ..
            } => {
                if self.seen_info || self.bits.is_coordinator() {
                    return;
                }
                self.seen_info = true;
                self.m = *m;
                self.known.union_with(body);
                self.queue.push(SlotMsg::Flood {
                    kind: SlotKind::Info,
                    body: body.clone(),
                    m: *m,
                    sync: 0,
                    colors: Vec::new(),
                });
            }
            SlotMsg::Ack {
                body, m, colors, ..
            } => {
                if colors.last() != Some(&self.color) {
                    return;
                }
                let mut rest = colors.clone();
                rest.pop();
                if self.bits.is_coordinator() {
                    if rest.is_empty() {
                        self.known.union_with(body);
                        if self.ack_round.is_none() {
                            self.ack_round = self.sync(local);
                            if let (GeneralMode::Bounded, Some(m)) = (self.mode, *m) {
                                self.m = Some(m);
                                let mut info_body = self.body.clone();
                                info_body.union_with(&self.known);
                                self.queue.push(SlotMsg::Flood {
                                    kind: SlotKind::Info,
                                    body: info_body,
                                    m: Some(m),
                                    sync: 0,
                                    colors: Vec::new(),
                                });
                            }
                        }
                    }
                } else if !rest.is_empty() {
                    self.queue.push(SlotMsg::Ack {
                        body: body.clone(),
                        m: *m,
                        sync: 0,
                        colors: rest,
                    });
                }
            }
        }
    }

    fn next_activity(&self, local: u64) -> Option<u64> {
        let delta = self.sync_delta?;
        let sync = (local as i64 + delta) as u64;
        let to_local = |s: u64| (s as i64 - delta) as u64;
        let mut next: Option<u64> = None;
        let mut push = |l: u64| {
            if l > local {
                next = Some(next.map_or(l, |x: u64| x.min(l)));
            }
        };
        let has_tx = (self.bits.is_coordinator() && !self.started)
            || !self.queue.is_empty()
            || self.pending_ack;
        if has_tx {
            let mut slot = self.params.next_slot(self.color, sync);
            if self.pending_ack && self.queue.is_empty() && !(self.bits.is_coordinator() && !self.started) {
                if let Some(nb) = self.ack_not_before {
                    if slot < nb {
                        slot = self.params.next_slot(self.color, nb - 1);
                    }
                }
            }
            push(to_local(slot));
        }
        if let Some(t) = self.termination_sync() {
            push(to_local(t));
        }
        next
    }

    fn terminated(&self) -> bool {
        self.done
    }

    fn knowledge(&self) -> Vec<u32> {
        self.known.iter().collect()
    }
}

/// Builds slotted programs for one general-graph run.
pub fn general_programs(
    g: &Graph,
    bits: &[AckBits],
    coloring: &Coloring,
    params: &SlotParams,
    mode: GeneralMode,
    body: MsgSet,
) -> Vec<SlotAckProgram> {
    g.nodes()
        .map(|v| {
            SlotAckProgram::new(
                v,
                bits[v as usize],
                coloring.of(v),
                params.clone(),
                mode,
                body.clone(),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run, RunConfig};

    fn run_tree(
        tree: &Graph,
        root: NodeId,
        mode: TreeMode,
    ) -> (Vec<TreeAckProgram>, Trace<AckMsg>) {
        let bits = label_ack_tree(tree, root).unwrap();
        let mut progs = tree_programs(tree, &bits, mode, MsgSet::singleton(root));
        let offsets = vec![0u64; tree.node_count()];
        let trace = run(tree, &mut progs, &offsets, &RunConfig::new(500));
        (progs, trace)
    }

    #[test]
    fn tree_labels_path3() {
        // root - a - b: z is b, a relays
        let bits = label_ack_tree(&Graph::path(3), 0).unwrap();
        assert!(bits[0].is_coordinator());
        assert!(bits[1].join && !bits[1].ack);
        assert!(bits[2].ack && !bits[2].join);
    }

    #[test]
    fn tree_labels_star_tiebreak() {
        let bits = label_ack_tree(&Graph::star(3), 0).unwrap();
        assert!(bits[1].ack);
        assert!(!bits[2].ack && !bits[3].ack);
    }

    #[test]
    fn single_edge_bounded() {
        let (progs, trace) = run_tree(&Graph::path(2), 0, TreeMode::Bounded);
        assert_eq!(progs[1].reception_round(), Some(1));
        assert_eq!(progs[0].ack_round(), Some(2));
        assert_eq!(progs[0].learned_m(), Some(1));
        assert!(trace.all_terminated);
        assert_eq!(trace.termination_round, vec![Some(3), Some(3)]);
    }

    #[test]
    fn path3_bounded_hand_trace() {
        // receptions at rounds 1, 2; ack back in rounds 3, 4; t_done = 6
        let (progs, trace) = run_tree(&Graph::path(3), 0, TreeMode::Bounded);
        assert_eq!(progs[1].reception_round(), Some(1));
        assert_eq!(progs[2].reception_round(), Some(2));
        let ack_rounds: Vec<u64> = trace
            .rounds
            .iter()
            .filter(|r| {
                r.transmitters
                    .iter()
                    .any(|(_, m)| matches!(m, AckMsg::Ack { .. }))
            })
            .map(|r| r.round)
            .collect();
        assert_eq!(ack_rounds, vec![3, 4]);
        assert_eq!(progs[0].ack_round(), Some(4));
        assert_eq!(progs[0].learned_m(), Some(2));
        assert_eq!(trace.termination_round, vec![Some(6); 3]);
    }

    #[test]
    fn bounded_m_is_height_and_no_unheard_collisions() {
        use crate::tn::build_tn;
        let (g, spec, _) = build_tn(3).unwrap();
        let (progs, trace) = run_tree(&g, spec.r, TreeMode::Bounded);
        // T at x=3 has height 3
        assert_eq!(progs[0].learned_m(), Some(3));
        let res = summarize_tree_broadcast(&trace, 3, spec.n);
        for v in g.nodes() {
            if v != spec.r {
                let d = g.bfs_distances(spec.r)[v as usize];
                assert_eq!(res.reception_round[v as usize], Some(d));
                assert!(d <= 3);
            }
        }
        assert_eq!(trace.termination_round, vec![Some(9); spec.n]);
        // collisions may only hit nodes that already hold the broadcast
        for r in &trace.rounds {
            for &v in &r.collisions {
                let informed = res.reception_round[v as usize].is_some_and(|t| t < r.round)
                    || v == spec.r;
                assert!(informed, "collision at uninformed node {v} round {}", r.round);
            }
        }
    }

    #[test]
    fn des_far_end_path3() {
        let g = Graph::path(3);
        let bits = label_ack_tree(&g, 0).unwrap();
        let mut progs = des_programs(&g, &bits, 2, Some(2), MsgSet::singleton(0));
        let trace = run(&g, &mut progs, &[0, 0, 0], &RunConfig::new(100));
        assert_eq!(progs[0].ack_round(), Some(4));
        assert_eq!(trace.termination_round, vec![Some(4); 3]);
    }

    #[test]
    fn des_near_neighbor_path3() {
        let g = Graph::path(3);
        let bits = label_ack_tree(&g, 0).unwrap();
        let mut progs = des_programs(&g, &bits, 2, Some(1), MsgSet::singleton(0));
        let _ = run(&g, &mut progs, &[0, 0, 0], &RunConfig::new(100));
        // initiated at round m+1 = 3, one hop: arrives round 3
        assert_eq!(progs[0].ack_round(), Some(3));
    }

    #[test]
    fn des_without_acknowledger_is_silent() {
        let g = Graph::path(3);
        let bits = label_ack_tree(&g, 0).unwrap();
        let mut progs = des_programs(&g, &bits, 2, None, MsgSet::singleton(0));
        let _ = run(&g, &mut progs, &[0, 0, 0], &RunConfig::new(100));
        assert_eq!(progs[0].ack_round(), None);
    }

    #[test]
    fn des_ack_carries_payload() {
        let g = Graph::path(3);
        let bits = label_ack_tree(&g, 0).unwrap();
        let mut progs: Vec<TreeAckProgram> = g
            .nodes()
            .map(|v| {
                let mode = TreeMode::Des {
                    m: 2,
                    designated: v == 2,
                };
                let p = TreeAckProgram::new(v, bits[v as usize], mode, MsgSet::singleton(0));
                if v == 2 {
                    p.with_ack_payload(MsgSet::singleton(42))
                } else {
                    p
                }
            })
            .collect();
        let _ = run(&g, &mut progs, &[0, 0, 0], &RunConfig::new(100));
        assert!(progs[0].knowledge().contains(&42));
    }

    #[test]
    fn slot_params_examples() {
        let p = SlotParams::from_colors(4);
        assert_eq!((p.w, p.s), (3, 7));
        let p = SlotParams::from_colors(3);
        assert_eq!((p.w, p.s), (2, 3));
        let p = SlotParams::from_colors(7);
        assert_eq!((p.w, p.s), (3, 7));
        assert_eq!(p.slot_of(1), 1);
        assert_eq!(p.slot_of(7), 7);
        assert_eq!(p.slot_of(8), 1);
        assert_eq!(p.next_slot(3, 3), 10);
        assert_eq!(p.next_slot(3, 2), 3);
    }

    fn run_general(
        g: &Graph,
        root: NodeId,
        mode: GeneralMode,
    ) -> (Vec<SlotAckProgram>, Trace<SlotMsg>) {
        let (bits, coloring, params) = label_ack_general(g, root).unwrap();
        let mut progs = general_programs(g, &bits, &coloring, &params, mode, MsgSet::singleton(root));
        let offsets = vec![0u64; g.node_count()];
        let trace = run(g, &mut progs, &offsets, &RunConfig::new(20_000));
        (progs, trace)
    }

    #[test]
    fn k4_slotted_bounded() {
        let (progs, trace) = run_general(&Graph::complete(4), 0, GeneralMode::Bounded);
        assert_eq!(trace.collision_count(), 0);
        assert!(trace.all_terminated);
        let m = progs[0].learned_m().unwrap();
        for p in &progs {
            assert_eq!(p.learned_m(), Some(m));
            if let Some(r) = p.reception_round() {
                assert!(r <= m);
            }
        }
        // K_4 coloured 1..4: the root transmits in round 1 and every other
        // node receives immediately
        for v in 1..4 {
            assert_eq!(progs[v].reception_round(), Some(1));
        }
    }

    #[test]
    fn four_cycle_completes_where_naive_flooding_cannot() {
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        let (progs, trace) = run_general(&g, 0, GeneralMode::Bounded);
        assert_eq!(trace.collision_count(), 0);
        assert!(trace.all_terminated);
        for v in 1..4 {
            assert!(progs[v].reception_round().is_some());
            assert!(progs[v].knowledge().contains(&0));
        }
    }

    #[test]
    fn general_listener_never_has_two_transmitting_neighbors() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(7);
        let g = Graph::random_connected(12, 6, &mut rng);
        let (_, trace) = run_general(&g, 0, GeneralMode::Bounded);
        for rec in &trace.rounds {
            assert!(rec.collisions.is_empty());
            for v in g.nodes() {
                let tx_neighbors = rec
                    .transmitters
                    .iter()
                    .filter(|(u, _)| g.has_edge(*u, v))
                    .count();
                assert!(tx_neighbors <= 1, "round {}", rec.round);
            }
        }
    }

    #[test]
    fn tree_as_general_graph_still_works() {
        let g = Graph::path(4);
        let (progs, trace) = run_general(&g, 0, GeneralMode::Bounded);
        assert!(trace.all_terminated);
        for p in &progs {
            assert!(p.knowledge().contains(&0));
        }
    }

    #[test]
    fn general_des_variant() {
        let g = Graph::complete(4);
        let (bits, coloring, params) = label_ack_general(&g, 0).unwrap();
        // pick node 3 as designated, m large enough for the slotted schedule
        let m = 2 * params.s;
        let mut progs: Vec<SlotAckProgram> = g
            .nodes()
            .map(|v| {
                SlotAckProgram::new(
                    v,
                    bits[v as usize],
                    coloring.of(v),
                    params.clone(),
                    GeneralMode::Des {
                        m,
                        designated: v == 3,
                    },
                    MsgSet::singleton(0),
                )
            })
            .collect();
        let trace = run(&g, &mut progs, &[0; 4], &RunConfig::new(10_000));
        let ack = progs[0].ack_round().unwrap();
        assert!(ack > m && ack <= 2 * m, "ack at {ack}, m = {m}");
        assert!(trace.all_terminated);
    }

    #[test]
    fn fast_forward_matches_naive_bounded_tree() {
        let g = Graph::from_prufer(&[0, 2, 2, 5]);
        let bits = label_ack_tree(&g, 0).unwrap();
        let build = || tree_programs(&g, &bits, TreeMode::Bounded, MsgSet::singleton(0));
        let offsets = vec![0u64; 6];
        let fast = run(&g, &mut build(), &offsets, &RunConfig::new(300));
        let naive = run(&g, &mut build(), &offsets, &RunConfig::naive(300));
        assert_eq!(fast, naive);
    }

    #[test]
    fn clock_offsets_do_not_change_sync_behavior() {
        let g = Graph::path(3);
        let bits = label_ack_tree(&g, 0).unwrap();
        let mut a = tree_programs(&g, &bits, TreeMode::Bounded, MsgSet::singleton(0));
        let mut b = tree_programs(&g, &bits, TreeMode::Bounded, MsgSet::singleton(0));
        let ta = run(&g, &mut a, &[0, 0, 0], &RunConfig::new(300));
        let tb = run(&g, &mut b, &[0, 17, 4], &RunConfig::new(300));
        // non-initiator offsets are invisible: same global-round trace
        assert_eq!(ta, tb);
    }
}
