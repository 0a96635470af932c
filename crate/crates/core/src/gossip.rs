//! Tree gossiping with prime transmission delays.
//!
//! Labeling: pick the coordinator `r` (node 0), attach acknowledged-broadcast
//! bits, give every node the binary form of its colour under a distinguishing
//! colouring, and mark with a `term` bit the node whose source message is the
//! last to arrive at `r` (found by simulating the aggregation stage).
//!
//! Algorithm: three stages. Initialize is the bounded acknowledged broadcast
//! after which every node knows its depth, the height `m`, and shares `r`'s
//! clock (rounds 1..3m). From round 3m+1, odd-numbered rounds aggregate: a
//! non-coordinator transmits everything it knows, together with its current
//! encoding and depth, whenever its aggregation-round counter is a multiple
//! of its current delay; the parent (depth = received depth - 1) absorbs the
//! encoding and recomputes its own encoding and delay. Even rounds carry the
//! finish wave: the `term` node's message carries a "last" marker; when it
//! reaches `r`, a "finish" flood halts aggregation, and `r` floods its
//! complete set 2m+2 rounds later. Everyone terminates in the same round.
//!
//! Encodings multiply a fresh prime power per absorbed child, so their
//! numeric values grow as power towers and quickly leave the range of any
//! bignum. They are therefore kept in structural form (colour, depth, list
//! of child encodings); by unique factorisation, structural equality is
//! exactly numeric equality and divisibility reduces to component-wise
//! numeric comparison of child values. A bignum mirror is materialised
//! whenever the value fits, and comparisons of values too large for that
//! fall back to iterated-logarithm magnitudes.

use crate::ack::{label_ack_tree, AckBits};
use crate::coloring::Coloring;
use crate::distinguishing::distinguishing_number;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::kb::BitField;
use crate::message::{bit_length, Action, MsgSet};
use crate::primes::{DelayPolicy, PrimeTable};
use crate::sim::{run, NodeProgram, RunConfig, Trace};
use num_bigint::BigUint;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::{Hash, Hasher};
use std::rc::Rc;

// ---------------------------------------------------------------------------
// iterated-logarithm magnitudes
// ---------------------------------------------------------------------------

/// Values below this stay at level 0 (plain `f64`).
const MAG_HI: f64 = 1e300;
/// `ln(MAG_HI)`: the canonical floor for levels >= 1.
const MAG_LHI: f64 = 690.775527898;

/// Approximate magnitude of a huge positive number: `level`-fold natural
/// logarithm brought into `f64` range. Used only to order encoding values
/// that are both too large for bignums and not related by divisibility.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Mag {
    level: u8,
    v: f64,
}

impl Mag {
    fn from_f64(x: f64) -> Mag {
        Mag { level: 0, v: x }.normalized()
    }

    fn normalized(mut self) -> Mag {
        while self.v > MAG_HI {
            self.v = self.v.ln();
            self.level += 1;
        }
        self
    }

    /// Lower the level while the value fits one level down.
    fn canonical_down(mut self) -> Mag {
        while self.level > 0 && self.v < MAG_LHI {
            self.v = self.v.exp();
            self.level -= 1;
        }
        self
    }

    fn ln(self) -> Mag {
        if self.level > 0 {
            Mag {
                level: self.level - 1,
                v: self.v,
            }
        } else {
            Mag {
                level: 0,
                v: self.v.ln(),
            }
        }
    }

    fn exp(self) -> Mag {
        if self.level == 0 && self.v < MAG_LHI {
            Mag::from_f64(self.v.exp())
        } else {
            Mag {
                level: self.level + 1,
                v: self.v,
            }
        }
    }

    fn add(self, other: Mag) -> Mag {
        let (a, b) = (self.canonical_down(), other.canonical_down());
        if a.level == 0 && b.level == 0 {
            return Mag::from_f64(a.v + b.v);
        }
        // work one logarithm down: ln(x+y) = max + ln(1 + e^(min-max))
        let (la, lb) = (a.ln(), b.ln());
        if la.level == 0 && lb.level == 0 {
            let (hi, lo) = if la.v >= lb.v { (la.v, lb.v) } else { (lb.v, la.v) };
            return Mag { level: 0, v: hi + (lo - hi).exp().ln_1p() }.exp();
        }
        // at two or more nested logarithms the smaller term is negligible
        if a.cmp(b) == Ordering::Less {
            b
        } else {
            a
        }
    }

    fn mul(self, other: Mag) -> Mag {
        let (a, b) = (self.canonical_down(), other.canonical_down());
        if a.level == 0 && b.level == 0 {
            let p = a.v * b.v;
            if p.is_finite() {
                return Mag::from_f64(p);
            }
        }
        a.ln().add(b.ln()).exp()
    }

    fn cmp(self, other: Mag) -> Ordering {
        let (a, b) = (self.canonical_down(), other.canonical_down());
        match a.level.cmp(&b.level) {
            Ordering::Equal => a.v.partial_cmp(&b.v).unwrap_or(Ordering::Equal),
            o => o,
        }
    }
}

// ---------------------------------------------------------------------------
// encoding values
// ---------------------------------------------------------------------------

/// The first hundred primes, 1-based (`SMALL_PRIMES[0] == p_1 == 2`).
const SMALL_PRIMES: [u64; 100] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191,
    193, 197, 199, 211, 223, 227, 229, 233, 239, 241, 251, 257, 263, 269, 271, 277, 281, 283, 293,
    307, 311, 313, 317, 331, 337, 347, 349, 353, 359, 367, 373, 379, 383, 389, 397, 401, 409, 419,
    421, 431, 433, 439, 443, 449, 457, 461, 463, 467, 479, 487, 491, 499, 503, 509, 521, 523, 541,
];

fn prime_1based(i: usize) -> u64 {
    *SMALL_PRIMES
        .get(i - 1)
        .expect("encoding uses more child primes than supported")
}

/// Largest bignum mirror kept alongside the structural form, in bits.
const EXACT_BITS: f64 = 4096.0;

/// A subtree encoding `2^colour * 3^dist * prod_j p_{j+2}^{e_j}` where each
/// exponent `e_j` is itself the value of a child encoding. Kept structurally;
/// `exact` mirrors the numeric value whenever it fits in [`EXACT_BITS`] bits.
///
/// Equality and hashing look only at `(colour, dist, children)`: by unique
/// factorisation this coincides with numeric equality.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Enc {
    colour: u32,
    dist: u64,
    children: Vec<Enc>,
    exact: Option<BigUint>,
    mag: Mag,
}

impl PartialEq for Enc {
    fn eq(&self, other: &Enc) -> bool {
        self.colour == other.colour && self.dist == other.dist && self.children == other.children
    }
}

impl Eq for Enc {}

impl Hash for Enc {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.colour.hash(state);
        self.dist.hash(state);
        self.children.len().hash(state);
        for c in &self.children {
            c.hash(state);
        }
    }
}

impl Enc {
    pub fn colour(&self) -> u32 {
        self.colour
    }

    pub fn dist(&self) -> u64 {
        self.dist
    }

    pub fn children(&self) -> &[Enc] {
        &self.children
    }

    /// The numeric value, when small enough to materialise.
    pub fn exact(&self) -> Option<&BigUint> {
        self.exact.as_ref()
    }

    /// True iff this value divides `other`'s value: component-wise on the
    /// prime factorisation, recursively comparing child values as numbers.
    pub fn divides(&self, other: &Enc) -> bool {
        if let (Some(a), Some(b)) = (&self.exact, &other.exact) {
            return (b % a).is_zero();
        }
        self.colour <= other.colour
            && self.dist <= other.dist
            && self.children.len() <= other.children.len()
            && self
                .children
                .iter()
                .zip(&other.children)
                .all(|(a, b)| a.value_le(b))
    }

    /// Numeric `self <= other`. Exact whenever the bignum mirrors exist or
    /// the values are comparable by divisibility; otherwise decided by
    /// magnitude with a deterministic structural tie-break.
    pub fn value_le(&self, other: &Enc) -> bool {
        if self == other {
            return true;
        }
        if let (Some(a), Some(b)) = (&self.exact, &other.exact) {
            return a <= b;
        }
        if self.divides(other) {
            return true;
        }
        if other.divides(self) {
            return false;
        }
        match self.mag.cmp(other.mag) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => self.structural_cmp(other) != Ordering::Greater,
        }
    }

    fn structural_cmp(&self, other: &Enc) -> Ordering {
        self.colour
            .cmp(&other.colour)
            .then(self.dist.cmp(&other.dist))
            .then(self.children.len().cmp(&other.children.len()))
            .then_with(|| {
                for (a, b) in self.children.iter().zip(&other.children) {
                    let o = a.structural_cmp(b);
                    if o != Ordering::Equal {
                        return o;
                    }
                }
                Ordering::Equal
            })
    }
}

/// `2^colour * 3^dist`, the encoding of a node that has absorbed no children.
pub fn enc_base(colour: u32, dist: u64) -> Enc {
    enc_combine(colour, dist, Vec::new())
}

/// `2^colour * 3^dist * prod_j p_{j+2}^{children[j]}` with `p_3 = 5`.
pub fn enc_combine(colour: u32, dist: u64, children: Vec<Enc>) -> Enc {
    const LN_2: f64 = std::f64::consts::LN_2;
    let ln_3 = 3f64.ln();
    let mut ln = Mag::from_f64(colour as f64 * LN_2 + dist as f64 * ln_3);
    for (j, c) in children.iter().enumerate() {
        let lnp = Mag::from_f64((prime_1based(j + 3) as f64).ln());
        ln = ln.add(c.mag.mul(lnp));
    }
    let exact = if ln.level == 0 && ln.v / LN_2 <= EXACT_BITS {
        children
            .iter()
            .map(|c| c.exact.as_ref())
            .collect::<Option<Vec<_>>>()
            .map(|exps| {
                let mut x = BigUint::from(2u8).pow(colour) * BigUint::from(3u8).pow(dist as u32);
                for (j, e) in exps.iter().enumerate() {
                    let e32 = u32::try_from(*e).expect("exponent bounded by the bit guard");
                    x *= BigUint::from(prime_1based(j + 3)).pow(e32);
                }
                x
            })
    } else {
        None
    };
    Enc {
        colour,
        dist,
        children,
        exact,
        mag: ln.exp(),
    }
}

impl TryFrom<&Enc> for u32 {
    type Error = ();
    fn try_from(e: &Enc) -> std::result::Result<u32, ()> {
        e.exact
            .as_ref()
            .and_then(num_traits::ToPrimitive::to_u32)
            .ok_or(())
    }
}

/// The child-encoding update rule: the entry at the minimum index dividing
/// the received encoding is overwritten; with no divisor, it is appended.
pub fn absorb_child_enc(children: &mut Vec<Enc>, recv: &Enc) {
    if let Some(i) = children.iter().position(|e| e.divides(recv)) {
        children[i] = recv.clone();
    } else {
        children.push(recv.clone());
    }
}

// ---------------------------------------------------------------------------
// delay oracle
// ---------------------------------------------------------------------------

/// Run-global source of transmission delays. Faithful mode indexes the
/// primes by the numeric encoding value behind a feasibility guard; registry
/// mode maps distinct encodings, in first-appearance order, to successive
/// odd primes.
#[derive(Debug)]
pub struct DelayOracle {
    policy: DelayPolicy,
    table: PrimeTable,
    registry: HashMap<Enc, u64>,
    order: Vec<Enc>,
    next_index: u64,
}

impl DelayOracle {
    pub fn new(policy: DelayPolicy) -> DelayOracle {
        DelayOracle {
            policy,
            table: PrimeTable::new(),
            registry: HashMap::new(),
            order: Vec::new(),
            next_index: 2, // first assignment is prime(2) == 3
        }
    }

    pub fn delay_for(&mut self, enc: &Enc) -> Result<u64> {
        match self.policy {
            DelayPolicy::FaithfulPrime { bound } => match enc.exact() {
                Some(x) => self.table.nth_checked(x, bound),
                // no bignum mirror: the value certainly exceeds 2^EXACT_BITS,
                // reported as that lower bound
                None => Err(Error::PrimeBoundExceeded {
                    index: BigUint::from(1u8) << (EXACT_BITS as u32),
                    bound,
                }),
            },
            DelayPolicy::RegistryPrime => {
                if let Some(&p) = self.registry.get(enc) {
                    return Ok(p);
                }
                let p = self.table.nth(self.next_index);
                self.next_index += 1;
                self.registry.insert(enc.clone(), p);
                self.order.push(enc.clone());
                Ok(p)
            }
        }
    }

    /// Registry assignments in assignment order (empty in faithful mode).
    pub fn assignments(&self) -> Vec<(Enc, u64)> {
        self.order
            .iter()
            .map(|e| (e.clone(), self.registry[e]))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// labels
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GossipLabel {
    pub bits: AckBits,
    /// marks the node whose message arrives last at the coordinator
    pub term: bool,
    /// binary form of the node's distinguishing colour
    pub sched: BitField,
}

impl GossipLabel {
    pub fn bit_len(&self) -> u32 {
        4 + self.sched.width
    }

    /// bits 0-2 join/stay/ack, bit 3 term, then sched
    pub fn bits_string(&self) -> String {
        let mut s = format!("{}{}", self.bits.bits(), self.term as u8);
        for i in (0..self.sched.width).rev() {
            s.push(if self.sched.value >> i & 1 == 1 { '1' } else { '0' });
        }
        s
    }
}

/// Declared label length for a tree with distinguishing number `d`.
pub fn gossip_length_formula(d: u32) -> u32 {
    4 + bit_length(d as u64).max(1)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GossipScheme {
    pub labels: Vec<GossipLabel>,
    pub coordinator: NodeId,
    pub term_node: NodeId,
    /// the distinguishing number of the tree
    pub d_number: u32,
    /// the distinguishing colouring the sched bits encode
    pub coloring: Coloring,
    pub policy: DelayPolicy,
}

impl GossipScheme {
    pub fn max_label_bits(&self) -> u32 {
        self.labels.iter().map(|l| l.bit_len()).max().unwrap()
    }
}

// ---------------------------------------------------------------------------
// messages and the node program
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GossipMsg {
    // Initialize (bounded acknowledged broadcast)
    Init { counter: u64 },
    InitAck { depth: u64, m: u64 },
    MAnnounce { m: u64, counter: u64 },
    // Aggregate, odd rounds of stage two
    Agg { msgs: MsgSet, enc: Enc, dist: u64 },
    // finish wave, even rounds of stage two
    Finish,
    // Inform (acknowledged broadcast of the full set)
    Inform { msgs: MsgSet, counter: u64 },
    InformAck { depth: u64 },
}

impl GossipMsg {
    fn is_ack_kind(&self) -> bool {
        matches!(self, GossipMsg::InitAck { .. } | GossipMsg::InformAck { .. })
    }
}

/// One recorded encoding state of a node: taken at initialisation and after
/// every absorbed child encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncSnapshot {
    /// synchronized round at which this state took effect
    pub sync: u64,
    pub enc: Enc,
    pub children: Vec<Enc>,
    /// `None` at the coordinator (its delay is never used)
    pub delay: Option<u64>,
}

#[derive(Debug)]
pub struct GossipProgram {
    label: GossipLabel,
    solo: bool,
    oracle: Rc<RefCell<DelayOracle>>,
    known: MsgSet,
    sync_delta: Option<i64>,
    depth: Option<u64>,
    m: Option<u64>,
    colour: u32,
    enc: Option<Enc>,
    children_encs: Vec<Enc>,
    delay: Option<u64>,
    guard: Option<Error>,
    /// aggregation stopped (finish received, or the marker reached `r`)
    halted: bool,
    /// coordinator only: stage-two round in which the "last" marker arrived
    t_last: Option<u64>,
    queue: Vec<(u64, GossipMsg)>,
    seen_init: bool,
    seen_mann: bool,
    seen_finish: bool,
    seen_inform: bool,
    inform_acked: bool,
    final_sync: Option<u64>,
    done: bool,
    timeline: Vec<EncSnapshot>,
}

impl GossipProgram {
    pub fn new(
        id: NodeId,
        label: GossipLabel,
        oracle: Rc<RefCell<DelayOracle>>,
        solo: bool,
    ) -> GossipProgram {
        let is_r = label.bits.is_coordinator();
        let mut known = MsgSet::singleton(id);
        if label.term {
            known.mark_last(id);
        }
        GossipProgram {
            colour: label.sched.value,
            oracle,
            known,
            sync_delta: None,
            depth: if is_r { Some(0) } else { None },
            m: None,
            enc: None,
            children_encs: Vec::new(),
            delay: None,
            guard: None,
            halted: false,
            t_last: None,
            queue: if is_r {
                vec![(1, GossipMsg::Init { counter: 0 })]
            } else {
                Vec::new()
            },
            seen_init: false,
            seen_mann: false,
            seen_finish: false,
            seen_inform: false,
            inform_acked: false,
            final_sync: None,
            done: false,
            timeline: Vec::new(),
            label,
            solo,
        }
    }

    fn is_r(&self) -> bool {
        self.label.bits.is_coordinator()
    }

    fn is_z(&self) -> bool {
        self.label.bits.ack && !self.is_r()
    }

    fn sync(&self, local: u64) -> Option<u64> {
        self.sync_delta.map(|d| (local as i64 + d) as u64)
    }

    pub fn learned_m(&self) -> Option<u64> {
        self.m
    }

    pub fn acknowledged(&self) -> bool {
        self.inform_acked
    }

    pub fn guard_error(&self) -> Option<&Error> {
        self.guard.as_ref()
    }

    pub fn timeline(&self) -> &[EncSnapshot] {
        &self.timeline
    }

    pub fn marker_round(&self) -> Option<u64> {
        self.t_last
    }

    pub fn current_depth(&self) -> Option<u64> {
        self.depth
    }

    /// acknowledgements go to the front: a pending flood relay of ours that
    /// has not fired by acknowledgement time is provably unnecessary
    fn enqueue(&mut self, at: u64, msg: GossipMsg) {
        if msg.is_ack_kind() {
            self.queue.insert(0, (at, msg));
        } else {
            self.queue.push((at, msg));
        }
    }

    fn stale(&self, at: u64, msg: &GossipMsg) -> bool {
        let m = match self.m {
            Some(m) => m,
            None => return false,
        };
        matches!(
            msg,
            GossipMsg::Init { .. } | GossipMsg::InitAck { .. } | GossipMsg::MAnnounce { .. }
        ) && at > 3 * m
    }

    /// recompute the delay for a fresh encoding (never at the coordinator)
    fn compute_delay(&mut self, enc: &Enc) -> Option<u64> {
        if self.is_r() {
            return None;
        }
        match self.oracle.borrow_mut().delay_for(enc) {
            Ok(p) => Some(p),
            Err(e) => {
                self.guard = Some(e);
                None
            }
        }
    }

    fn record(&mut self, sync: u64) {
        // re-absorbing an unchanged child encoding changes nothing: keep the
        // timeline to actual state changes
        if let Some(last) = self.timeline.last() {
            if Some(&last.enc) == self.enc.as_ref()
                && last.children == self.children_encs
                && last.delay == self.delay
            {
                return;
            }
        }
        self.timeline.push(EncSnapshot {
            sync,
            enc: self.enc.clone().unwrap(),
            children: self.children_encs.clone(),
            delay: self.delay,
        });
    }

    fn set_enc(&mut self, sync: u64, enc: Enc) {
        self.delay = self.compute_delay(&enc);
        self.enc = Some(enc);
        self.record(sync);
    }
}

impl NodeProgram for GossipProgram {
    type Msg = GossipMsg;

    fn decide(&mut self, local: u64) -> Action<GossipMsg> {
        if self.solo {
            self.done = true;
            return Action::Listen;
        }
        // the coordinator's first decide anchors the shared clock: the round
        // it first speaks in is sync round 1 by definition
        if self.sync_delta.is_none() && self.is_r() {
            self.sync_delta = Some(1 - local as i64);
            self.enc = Some(enc_base(self.colour, 0));
            self.record(1);
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
        if let Some(i) = self.queue.iter().position(|(at, _)| *at <= sync) {
            let (_, mut msg) = self.queue.remove(i);
            if let GossipMsg::Inform { msgs, .. } = &mut msg {
                if self.is_r() {
                    msgs.union_with(&self.known);
                }
            }
            return Action::Transmit(msg);
        }
        // aggregation: odd stage-two rounds, own delay multiples
        if !self.is_r() && !self.halted && self.guard.is_none() {
            if let (Some(m), Some(delay), Some(depth)) = (self.m, self.delay, self.depth) {
                if sync > 3 * m && (sync - 3 * m) % 2 == 1 {
                    let t = (sync - 3 * m + 1) / 2;
                    if t % delay == 0 {
                        return Action::Transmit(GossipMsg::Agg {
                            msgs: self.known.clone(),
                            enc: self.enc.clone().unwrap(),
                            dist: depth,
                        });
                    }
                }
            }
        }
        Action::Listen
    }

    fn deliver(&mut self, local: u64, msg: &GossipMsg) {
        match msg {
            GossipMsg::Init { counter } => {
                if self.seen_init || self.is_r() {
                    return;
                }
                self.seen_init = true;
                let depth = counter + 1;
                self.depth = Some(depth);
                self.sync_delta = Some(depth as i64 - local as i64);
                let e = enc_base(self.colour, depth);
                self.set_enc(depth, e);
                if self.label.bits.join {
                    self.enqueue(depth + 1, GossipMsg::Init { counter: depth });
                }
                if self.is_z() {
                    // deepest node: report m = its depth
                    self.m = Some(depth);
                    self.enqueue(depth + 1, GossipMsg::InitAck { depth, m: depth });
                }
            }
            GossipMsg::InitAck { depth, m } => {
                let my = match self.depth {
                    Some(d) => d,
                    None => return,
                };
                if my + 1 != *depth {
                    return;
                }
                let sync = self.sync(local).unwrap();
                if self.is_r() {
                    if self.m.is_none() {
                        self.m = Some(*m);
                        self.enqueue(sync + 1, GossipMsg::MAnnounce { m: *m, counter: 0 });
                    }
                } else {
                    self.enqueue(sync + 1, GossipMsg::InitAck { depth: my, m: *m });
                }
            }
            GossipMsg::MAnnounce { m, counter } => {
                if self.seen_mann || self.is_r() {
                    return;
                }
                self.seen_mann = true;
                if self.m.is_none() {
                    self.m = Some(*m);
                }
                if self.label.bits.join {
                    let sync = self.sync(local).unwrap();
                    self.enqueue(
                        sync + 1,
                        GossipMsg::MAnnounce {
                            m: *m,
                            counter: counter + 1,
                        },
                    );
                }
            }
            GossipMsg::Agg { msgs, enc, dist } => {
                if self.halted {
                    return;
                }
                let my = match self.depth {
                    Some(d) => d,
                    None => return,
                };
                // parent filter: act only on messages from one level deeper
                if my + 1 != *dist {
                    return;
                }
                self.known.union_with(msgs);
                absorb_child_enc(&mut self.children_encs, enc);
                let e = enc_combine(self.colour, my, self.children_encs.clone());
                let sync = self.sync(local).unwrap();
                self.set_enc(sync, e);
                if self.is_r() && msgs.last_marker().is_some() && self.t_last.is_none() {
                    let m = self.m.expect("m known before stage two");
                    let t = sync - 3 * m;
                    self.t_last = Some(t);
                    self.halted = true;
                    self.enqueue(sync + 1, GossipMsg::Finish);
                    self.enqueue(
                        3 * m + t + 2 * m + 2,
                        GossipMsg::Inform {
                            msgs: MsgSet::empty(),
                            counter: 0,
                        },
                    );
                    self.final_sync = Some(3 * m + t + 4 * m + 2);
                }
            }
            GossipMsg::Finish => {
                if self.seen_finish || self.is_r() {
                    return;
                }
                self.seen_finish = true;
                self.halted = true;
                let sync = self.sync(local).unwrap();
                let m = self.m.expect("m known before stage two");
                let depth = self.depth.unwrap();
                // the wave reaches depth d in stage-two round t + 2d - 1
                let t = (sync - 3 * m) + 1 - 2 * depth;
                self.final_sync = Some(3 * m + t + 4 * m + 2);
                self.enqueue(sync + 2, GossipMsg::Finish);
            }
            GossipMsg::Inform { msgs, counter } => {
                if self.seen_inform || self.is_r() {
                    return;
                }
                self.seen_inform = true;
                self.known.union_with(msgs);
                let sync = self.sync(local).unwrap();
                if self.label.bits.join {
                    self.enqueue(
                        sync + 1,
                        GossipMsg::Inform {
                            msgs: msgs.clone(),
                            counter: counter + 1,
                        },
                    );
                }
                if self.is_z() {
                    self.enqueue(
                        sync + 1,
                        GossipMsg::InformAck {
                            depth: self.depth.unwrap(),
                        },
                    );
                }
            }
            GossipMsg::InformAck { depth } => {
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
                    self.enqueue(sync + 1, GossipMsg::InformAck { depth: my });
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
            push((*at).max(sync + 1));
        }
        if !self.is_r() && !self.halted && self.guard.is_none() {
            if let (Some(m), Some(delay)) = (self.m, self.delay) {
                // current aggregation-round count, then the next own multiple
                let t_cur = if sync <= 3 * m {
                    0
                } else {
                    (sync - 3 * m + 1) / 2
                };
                let t_next = (t_cur / delay + 1) * delay;
                push(3 * m + 2 * t_next - 1);
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

// ---------------------------------------------------------------------------
// labeling and full runs
// ---------------------------------------------------------------------------

/// Smallest horizon tried; doubled until the run settles.
const HORIZON_START: u64 = 1 << 12;
/// Hard cap: reaching it without completion is reported as an error.
const HORIZON_MAX: u64 = 1 << 26;

fn bare_labels(bits: &[AckBits], d: u32, coloring: &Coloring) -> Vec<GossipLabel> {
    let width = bit_length(d as u64).max(1);
    bits.iter()
        .enumerate()
        .map(|(v, &b)| GossipLabel {
            bits: b,
            term: false,
            sched: BitField {
                value: coloring.of(v as NodeId),
                width,
            },
        })
        .collect()
}

fn programs_for(labels: &[GossipLabel], policy: DelayPolicy) -> Vec<GossipProgram> {
    let oracle = Rc::new(RefCell::new(DelayOracle::new(policy)));
    let solo = labels.len() == 1;
    labels
        .iter()
        .enumerate()
        .map(|(v, l)| GossipProgram::new(v as NodeId, l.clone(), oracle.clone(), solo))
        .collect()
}

fn first_guard(programs: &[GossipProgram]) -> Option<Error> {
    programs.iter().find_map(|p| p.guard.clone())
}

/// Builds the gossip labeling: acknowledged-broadcast bits, distinguishing
/// colours in `sched`, and the `term` bit on the originator of the message
/// that is last to arrive at the coordinator (ties broken by smallest
/// originating identifier), found by simulating the aggregation stage under
/// the same delay policy.
pub fn labeling_gossip(tree: &Graph, policy: DelayPolicy) -> Result<GossipScheme> {
    if !tree.is_tree() {
        return Err(Error::Precondition("gossip labeling requires a tree".into()));
    }
    let n = tree.node_count();
    let r: NodeId = 0;
    let bits = label_ack_tree(tree, r)?;
    let dst = distinguishing_number(tree)?;
    let mut labels = bare_labels(&bits, dst.number, &dst.witness);
    if n == 1 {
        labels[0].term = true;
        return Ok(GossipScheme {
            labels,
            coordinator: r,
            term_node: r,
            d_number: dst.number,
            coloring: dst.witness,
            policy,
        });
    }
    // simulate aggregation (no term marker: nothing halts) and watch arrivals
    let term = {
        let mut horizon = HORIZON_START;
        loop {
            let mut programs = programs_for(&labels, policy);
            let trace = run(tree, &mut programs, &vec![0; n], &RunConfig::new(horizon));
            if let Some(e) = first_guard(&programs) {
                return Err(e);
            }
            let mut have: BTreeSet<u32> = BTreeSet::new();
            have.insert(r);
            let mut last: Option<(u64, u32)> = None;
            'scan: for round in &trace.rounds {
                for (v, msg) in &round.receptions {
                    if *v != r {
                        continue;
                    }
                    if let GossipMsg::Agg { msgs, dist: 1, .. } = msg {
                        let fresh: Vec<u32> =
                            msgs.iter().filter(|o| !have.contains(o)).collect();
                        for o in fresh {
                            have.insert(o);
                            match last {
                                Some((t, w)) if t == round.round => {
                                    last = Some((t, w.min(o)));
                                }
                                _ => last = Some((round.round, o)),
                            }
                        }
                        if have.len() == n {
                            break 'scan;
                        }
                    }
                }
            }
            if have.len() == n {
                break last.unwrap().1;
            }
            horizon *= 2;
            if horizon > HORIZON_MAX {
                return Err(Error::Precondition(
                    "gossip labeling simulation exhausted its horizon".into(),
                ));
            }
        }
    };
    labels[term as usize].term = true;
    Ok(GossipScheme {
        labels,
        coordinator: r,
        term_node: term,
        d_number: dst.number,
        coloring: dst.witness,
        policy,
    })
}

/// Per-node programs plus the shared delay oracle for a labeled instance.
pub fn gossip_programs(scheme: &GossipScheme) -> (Vec<GossipProgram>, Rc<RefCell<DelayOracle>>) {
    let oracle = Rc::new(RefCell::new(DelayOracle::new(scheme.policy)));
    let solo = scheme.labels.len() == 1;
    let programs = scheme
        .labels
        .iter()
        .enumerate()
        .map(|(v, l)| GossipProgram::new(v as NodeId, l.clone(), oracle.clone(), solo))
        .collect();
    (programs, oracle)
}

/// Everything a completed run exposes beyond the raw trace.
#[derive(Debug)]
pub struct GossipRun {
    pub trace: Trace<GossipMsg>,
    /// per-node encoding timelines, in node order
    pub timelines: Vec<Vec<EncSnapshot>>,
    /// tree height learned during Initialize (0 for a single node)
    pub m: u64,
    /// stage-two round in which the "last" marker reached the coordinator
    pub t_last: u64,
    /// node depths from the coordinator
    pub depths: Vec<u64>,
    /// registry assignments in assignment order (empty in faithful mode)
    pub registry: Vec<(Enc, u64)>,
}

/// Runs the full three-stage algorithm to termination.
pub fn gossip_full(tree: &Graph, scheme: &GossipScheme) -> Result<GossipRun> {
    let n = tree.node_count();
    if scheme.labels.len() != n {
        return Err(Error::Precondition(
            "label count does not match the tree".into(),
        ));
    }
    let depths = tree.bfs_distances(scheme.coordinator);
    let mut horizon = HORIZON_START;
    loop {
        let (mut programs, oracle) = gossip_programs(scheme);
        let trace = run(tree, &mut programs, &vec![0; n], &RunConfig::new(horizon));
        if let Some(e) = first_guard(&programs) {
            return Err(e);
        }
        if trace.all_terminated {
            let m = if n == 1 {
                0
            } else {
                programs[scheme.coordinator as usize].m.unwrap()
            };
            let t_last = programs[scheme.coordinator as usize].t_last.unwrap_or(0);
            return Ok(GossipRun {
                trace,
                timelines: programs.into_iter().map(|p| p.timeline).collect(),
                m,
                t_last,
                depths,
                registry: oracle.borrow().assignments(),
            });
        }
        horizon *= 2;
        if horizon > HORIZON_MAX {
            return Err(Error::Precondition(
                "gossip run exhausted its horizon".into(),
            ));
        }
    }
}

/// Labeling plus full run under one policy.
pub fn gossip(tree: &Graph, policy: DelayPolicy) -> Result<(GossipScheme, GossipRun)> {
    let scheme = labeling_gossip(tree, policy)?;
    let run = gossip_full(tree, &scheme)?;
    Ok((scheme, run))
}

/// Orders registry assignments for inspection: `(enc, prime)` by prime.
pub fn registry_by_prime(run: &GossipRun) -> BTreeMap<u64, Enc> {
    run.registry.iter().map(|(e, p)| (*p, e.clone())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primes::{nth_prime, DEFAULT_PRIME_BOUND};

    fn big(x: u64) -> BigUint {
        BigUint::from(x)
    }

    #[test]
    fn base_encodings() {
        assert_eq!(enc_base(1, 0).exact(), Some(&big(2)));
        assert_eq!(enc_base(1, 2).exact(), Some(&big(18)));
        assert_eq!(enc_base(2, 1).exact(), Some(&big(12)));
    }

    #[test]
    fn combined_encodings() {
        let e = enc_combine(1, 1, vec![enc_base(1, 2)]);
        assert_eq!(e.exact(), Some(&big(22_888_183_593_750)));
        let e = enc_combine(1, 0, vec![enc_base(1, 0)]);
        // 2 * 5^2
        assert_eq!(e.exact(), Some(&big(50)));
        let e = enc_combine(1, 0, vec![enc_base(1, 0), enc_base(0, 1)]);
        // 2 * 5^2 * 7^3
        assert_eq!(e.exact(), Some(&big(17_150)));
    }

    #[test]
    fn absorb_rule() {
        // [6], 12: 6 | 12, overwrite
        let mut l = vec![enc_base(1, 1)];
        absorb_child_enc(&mut l, &enc_base(2, 1));
        assert_eq!(l, vec![enc_base(2, 1)]);
        // [6], 10: no divisor, append
        let ten = enc_combine(1, 0, vec![enc_base(0, 0)]);
        assert_eq!(ten.exact(), Some(&big(10)));
        let mut l = vec![enc_base(1, 1)];
        absorb_child_enc(&mut l, &ten);
        assert_eq!(l, vec![enc_base(1, 1), ten]);
        // [6, 4], 12: minimum index with a divisor wins
        let mut l = vec![enc_base(1, 1), enc_base(2, 0)];
        absorb_child_enc(&mut l, &enc_base(2, 1));
        assert_eq!(l, vec![enc_base(2, 1), enc_base(2, 0)]);
    }

    #[test]
    fn structural_equality_is_value_equality() {
        let a = enc_combine(1, 1, vec![enc_base(1, 2)]);
        let b = enc_combine(1, 1, vec![enc_base(1, 2)]);
        assert_eq!(a, b);
        assert_ne!(a, enc_combine(1, 2, vec![enc_base(1, 2)]));
        // towers beyond bignum range still compare structurally
        let t1 = enc_combine(1, 1, vec![a.clone()]);
        let t2 = enc_combine(1, 1, vec![b.clone()]);
        assert!(t1.exact().is_none());
        assert_eq!(t1, t2);
    }

    #[test]
    fn divisibility_on_towers() {
        let small = enc_combine(1, 1, vec![enc_base(1, 2)]); // 2*3*5^18
        let larger = enc_combine(1, 2, vec![enc_base(1, 2)]); // 2*9*5^18
        assert!(small.divides(&larger));
        assert!(!larger.divides(&small));
        let t_small = enc_combine(1, 1, vec![small.clone()]);
        let t_large = enc_combine(1, 1, vec![larger.clone()]);
        assert!(t_small.exact().is_none() && t_large.exact().is_none());
        assert!(t_small.divides(&t_large));
        assert!(!t_large.divides(&t_small));
        assert!(t_small.value_le(&t_large));
        assert!(!t_large.value_le(&t_small));
    }

    #[test]
    fn magnitude_orders_unrelated_towers() {
        // 3^40 vs 2^5: huge difference, divisibility-incomparable
        let a = enc_base(0, 40);
        let b = enc_base(5, 0);
        assert!(b.value_le(&a) && !a.value_le(&b));
        // tower levels dominate
        let t = enc_combine(1, 0, vec![enc_combine(1, 1, vec![enc_base(1, 2)])]);
        let u = enc_combine(40, 40, vec![enc_base(1, 2)]);
        assert!(u.value_le(&t) && !t.value_le(&u));
    }

    #[test]
    fn oracle_registry_order_and_stability() {
        let mut o = DelayOracle::new(DelayPolicy::RegistryPrime);
        let a = enc_base(1, 1);
        let b = enc_base(2, 1);
        assert_eq!(o.delay_for(&a).unwrap(), 3);
        assert_eq!(o.delay_for(&b).unwrap(), 5);
        assert_eq!(o.delay_for(&a).unwrap(), 3);
        assert_eq!(o.delay_for(&enc_base(1, 2)).unwrap(), 7);
        assert_eq!(o.assignments().len(), 3);
    }

    #[test]
    fn oracle_faithful_guard() {
        let mut o = DelayOracle::new(DelayPolicy::FaithfulPrime { bound: 1_000_000 });
        // p_18 = 61
        assert_eq!(o.delay_for(&enc_base(1, 2)).unwrap(), 61);
        let huge = enc_combine(1, 1, vec![enc_base(1, 2)]);
        assert!(matches!(
            o.delay_for(&huge),
            Err(Error::PrimeBoundExceeded { .. })
        ));
    }

    #[test]
    fn labeling_lengths() {
        // rigid spider: paths of lengths 1, 2, 3 from the root -> D = 1
        let g = Graph::from_edges(
            7,
            &[(0, 1), (0, 2), (2, 3), (0, 4), (4, 5), (5, 6)],
        )
        .unwrap();
        let s = labeling_gossip(&g, DelayPolicy::RegistryPrime).unwrap();
        assert_eq!(s.d_number, 1);
        assert_eq!(s.max_label_bits(), 5);
        assert!(s.labels.iter().all(|l| l.sched.value == 1));
        assert_eq!(gossip_length_formula(1), 5);

        let star = Graph::star(3);
        let s = labeling_gossip(&star, DelayPolicy::RegistryPrime).unwrap();
        assert_eq!(s.d_number, 3);
        assert_eq!(s.max_label_bits(), 6);
        assert_eq!(gossip_length_formula(3), 6);

        let p2 = Graph::path(2);
        let s = labeling_gossip(&p2, DelayPolicy::RegistryPrime).unwrap();
        assert_eq!(s.d_number, 2);
        let mut vals: Vec<u32> = s.labels.iter().map(|l| l.sched.value).collect();
        vals.sort_unstable();
        assert_eq!(vals, vec![1, 2]);
    }

    #[test]
    fn exactly_one_term_and_one_coordinator() {
        for g in [Graph::path(5), Graph::star(4), Graph::from_prufer(&[0, 2, 2, 5])] {
            let s = labeling_gossip(&g, DelayPolicy::RegistryPrime).unwrap();
            assert_eq!(
                s.labels.iter().filter(|l| l.term).count(),
                1,
                "one term bit"
            );
            assert_eq!(
                s.labels
                    .iter()
                    .filter(|l| l.bits.is_coordinator())
                    .count(),
                1
            );
            assert!(s.labels[s.term_node as usize].term);
        }
    }

    #[test]
    fn single_edge_pinned_timeline() {
        let g = Graph::path(2);
        let (scheme, r) = gossip(&g, DelayPolicy::RegistryPrime).unwrap();
        assert_eq!(scheme.term_node, 1);
        assert_eq!(r.m, 1);
        // the leaf's delay is the first registry prime and it transmits at
        // aggregation round 3 = sync 8; marker reception round 5
        assert_eq!(r.t_last, 5);
        assert_eq!(r.trace.termination_round, vec![Some(14), Some(14)]);
        for k in &r.trace.knowledge {
            assert_eq!(k, &vec![0, 1]);
        }
        // leaf settled from the start: exactly one snapshot
        assert_eq!(r.timelines[1].len(), 1);
        assert_eq!(r.timelines[1][0].delay, Some(3));
    }

    #[test]
    fn star_completes_with_distinct_delays() {
        let g = Graph::star(4);
        let (scheme, r) = gossip(&g, DelayPolicy::RegistryPrime).unwrap();
        for k in &r.trace.knowledge {
            assert_eq!(k, &vec![0, 1, 2, 3, 4]);
        }
        // distinct colours -> distinct base encodings -> delays 3,5,7,11 in
        // identifier order; the slowest leaf's message arrives last
        let delays: Vec<u64> = (1..5)
            .map(|v| r.timelines[v][0].delay.unwrap())
            .collect();
        assert_eq!(delays, vec![3, 5, 7, 11]);
        assert_eq!(scheme.term_node, 4);
    }

    #[test]
    fn path3_registry_pinned_run() {
        let g = Graph::path(3);
        let (scheme, r) = gossip(&g, DelayPolicy::RegistryPrime).unwrap();
        assert_eq!(scheme.term_node, 2);
        assert_eq!(r.m, 2);
        assert_eq!(r.t_last, 13);
        assert_eq!(
            r.trace.termination_round,
            vec![Some(29), Some(29), Some(29)]
        );
        for k in &r.trace.knowledge {
            assert_eq!(k, &vec![0, 1, 2]);
        }
        // the middle node's settled encoding combines the leaf's
        let psi = |v: NodeId| scheme.coloring.of(v);
        let leaf_enc = enc_base(psi(2), 2);
        let settled = enc_combine(psi(1), 1, vec![leaf_enc.clone()]);
        assert_eq!(r.timelines[1].last().unwrap().enc, settled);
        assert_eq!(r.timelines[2], vec![r.timelines[2][0].clone()]);
        // registry assigned: base encs of 1 and 2, then the combined one
        assert_eq!(r.registry.len(), 3);
        assert_eq!(r.registry[2].0, settled);
    }

    #[test]
    fn path3_faithful_fails_the_guard() {
        let g = Graph::path(3);
        let scheme = labeling_gossip(&g, DelayPolicy::default());
        let err = match scheme {
            Err(e) => e,
            Ok(s) => gossip_full(&g, &s).unwrap_err(),
        };
        match err {
            Error::PrimeBoundExceeded { index, bound } => {
                assert_eq!(bound, DEFAULT_PRIME_BOUND);
                // the middle node's combined encoding 2^psi(1)*3*5^enc(leaf)
                let d = distinguishing_number(&g).unwrap();
                let expect =
                    enc_combine(d.witness.of(1), 1, vec![enc_base(d.witness.of(2), 2)]);
                assert_eq!(&index, expect.exact().unwrap());
            }
            e => panic!("expected the prime bound guard, got {e}"),
        }
    }

    #[test]
    fn depth_one_faithful_delays_match_the_sieve() {
        let g = Graph::star(3);
        let (scheme, r) = gossip(&g, DelayPolicy::default()).unwrap();
        for v in 1..4usize {
            let snap = &r.timelines[v][0];
            let enc_val = snap.enc.exact().unwrap();
            let idx = u64::try_from(enc_val).unwrap();
            assert_eq!(snap.delay, Some(nth_prime(idx)));
            assert_eq!(
                enc_val,
                &(big(2).pow(scheme.coloring.of(v as NodeId)) * big(3))
            );
        }
        for k in &r.trace.knowledge {
            assert_eq!(k, &vec![0, 1, 2, 3]);
        }
    }

    #[test]
    fn policies_agree_on_final_knowledge() {
        for g in [Graph::path(2), Graph::star(4), Graph::star(2)] {
            let (_, a) = gossip(&g, DelayPolicy::RegistryPrime).unwrap();
            let (_, b) = gossip(&g, DelayPolicy::default()).unwrap();
            assert_eq!(a.trace.knowledge, b.trace.knowledge);
        }
    }

    #[test]
    fn fast_forward_matches_naive() {
        for g in [Graph::path(3), Graph::star(3)] {
            let scheme = labeling_gossip(&g, DelayPolicy::RegistryPrime).unwrap();
            let horizon = 200;
            let (mut fastp, _) = gossip_programs(&scheme);
            let fast = run(&g, &mut fastp, &vec![0; g.node_count()], &RunConfig::new(horizon));
            let (mut naivep, _) = gossip_programs(&scheme);
            let naive = run(
                &g,
                &mut naivep,
                &vec![0; g.node_count()],
                &RunConfig::naive(horizon),
            );
            assert_eq!(fast, naive);
            assert!(fast.all_terminated);
        }
    }

    #[test]
    fn clock_offsets_are_invisible() {
        let g = Graph::path(3);
        let scheme = labeling_gossip(&g, DelayPolicy::RegistryPrime).unwrap();
        let (mut base, _) = gossip_programs(&scheme);
        let plain = run(&g, &mut base, &[0, 0, 0], &RunConfig::new(500));
        let (mut shifted, _) = gossip_programs(&scheme);
        let offset = run(&g, &mut shifted, &[7, 0, 13], &RunConfig::new(500));
        assert_eq!(plain, offset);
    }

    #[test]
    fn single_node_network() {
        let g = Graph::from_edges(1, &[]).unwrap();
        let (scheme, r) = gossip(&g, DelayPolicy::RegistryPrime).unwrap();
        assert!(scheme.labels[0].term);
        assert!(r.trace.all_terminated);
        assert_eq!(r.trace.knowledge, vec![vec![0]]);
    }

    #[test]
    fn random_trees_complete_under_registry() {
        use rand::SeedableRng;
        for seed in 0..8u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = Graph::random_tree(9, &mut rng);
            let (_, r) = gossip(&g, DelayPolicy::RegistryPrime).unwrap();
            let all: Vec<u32> = (0..9).collect();
            for k in &r.trace.knowledge {
                assert_eq!(k, &all);
            }
        }
    }

    #[test]
    fn label_bits_string_layout() {
        let g = Graph::path(2);
        let s = labeling_gossip(&g, DelayPolicy::RegistryPrime).unwrap();
        let r = &s.labels[0];
        // coordinator: join stay ack = 111, term 0, then sched
        assert!(r.bits_string().starts_with("1110"));
        let leaf = &s.labels[1];
        assert!(leaf.bits_string().starts_with("0011")); // z with term
        assert_eq!(r.bits_string().len() as u32, r.bit_len());
    }

    #[test]
    fn serde_roundtrip_preserves_encodings() {
        let e = enc_combine(1, 1, vec![enc_base(1, 2), enc_base(2, 0)]);
        let json = serde_json::to_string(&e).unwrap();
        let back: Enc = serde_json::from_str(&json).unwrap();
        assert_eq!(e, back);
        assert_eq!(back.exact(), e.exact());
    }
}
