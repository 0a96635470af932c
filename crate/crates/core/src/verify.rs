//! Completion checking, trace invariant suites, and the indistinguishability
//! demos.
//!
//! The demos mechanize the two impossibility arguments: nodes that share a
//! label on a complete graph behave identically forever (so neither source
//! message is ever delivered), and a labeling preserved by a non-trivial
//! automorphism forces per-round history equality along the symmetry (so a
//! moved node's message never reaches its image). The claims are checked on a
//! family of deterministic label-driven programs; their universal versions
//! are theorems, not tests.

use crate::autom::{is_automorphism, tree_automorphisms, Permutation};
use crate::coloring::Coloring;
use crate::error::{Error, Result};
use crate::gossip::{EncSnapshot, GossipMsg, GossipRun, GossipScheme};
use crate::graph::{Graph, NodeId};
use crate::message::{Action, MsgSet};
use crate::sim::{run, NodeProgram, RunConfig, Trace};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

// ---------------------------------------------------------------------------
// completion reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionReport {
    /// every node holds every source message
    pub solved: bool,
    /// the common round by whose end all programs had terminated
    pub completion_round: Option<u64>,
    /// per node, the source messages it is missing
    pub missing: Vec<Vec<u32>>,
    /// dissemination finished *and* the final acknowledged flood ran to its
    /// known end (all programs terminated)
    pub acknowledged: bool,
}

/// Checks the k-broadcast goal against a finished trace.
pub fn check_completion<M: Clone>(trace: &Trace<M>, sources: &[NodeId]) -> CompletionReport {
    let missing: Vec<Vec<u32>> = trace
        .knowledge
        .iter()
        .map(|k| {
            let have: BTreeSet<u32> = k.iter().copied().collect();
            sources.iter().copied().filter(|s| !have.contains(s)).collect()
        })
        .collect();
    let solved = missing.iter().all(|m| m.is_empty());
    let completion_round = if trace.all_terminated {
        trace.termination_round.iter().map(|r| r.unwrap()).max()
    } else {
        None
    };
    CompletionReport {
        solved,
        completion_round,
        acknowledged: solved && trace.all_terminated,
        missing,
    }
}

// ---------------------------------------------------------------------------
// the demo program library
// ---------------------------------------------------------------------------

/// Deterministic label-driven programs the demos quantify over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DemoKind {
    /// transmit the known set whenever `(round - 1) mod cycle == label mod cycle`
    RoundRobinByLabel,
    /// transmit the known set in the round after learning something new
    FloodOnReceive,
    /// transmit the known set every round
    AllTransmit,
}

pub const DEMO_KINDS: [DemoKind; 3] = [
    DemoKind::RoundRobinByLabel,
    DemoKind::FloodOnReceive,
    DemoKind::AllTransmit,
];

impl DemoKind {
    pub fn name(&self) -> &'static str {
        match self {
            DemoKind::RoundRobinByLabel => "round-robin-by-label",
            DemoKind::FloodOnReceive => "flood-on-receive",
            DemoKind::AllTransmit => "all-transmit",
        }
    }
}

/// A node of the demo family: state is the known message set plus the label.
#[derive(Debug)]
pub struct DemoProgram {
    label: u32,
    cycle: u64,
    kind: DemoKind,
    known: MsgSet,
    dirty: bool,
}

impl DemoProgram {
    pub fn new(id: NodeId, label: u32, cycle: u64, kind: DemoKind, is_source: bool) -> DemoProgram {
        DemoProgram {
            label,
            cycle: cycle.max(1),
            kind,
            known: if is_source {
                MsgSet::singleton(id)
            } else {
                MsgSet::empty()
            },
            dirty: is_source,
        }
    }

    fn my_slot(&self, local: u64) -> bool {
        (local - 1) % self.cycle == self.label as u64 % self.cycle
    }
}

impl NodeProgram for DemoProgram {
    type Msg = MsgSet;

    fn decide(&mut self, local: u64) -> Action<MsgSet> {
        match self.kind {
            DemoKind::RoundRobinByLabel => {
                if self.my_slot(local) && !self.known.is_empty() {
                    Action::Transmit(self.known.clone())
                } else {
                    Action::Listen
                }
            }
            DemoKind::FloodOnReceive => {
                if self.dirty {
                    self.dirty = false;
                    Action::Transmit(self.known.clone())
                } else {
                    Action::Listen
                }
            }
            DemoKind::AllTransmit => {
                if self.known.is_empty() {
                    Action::Listen
                } else {
                    Action::Transmit(self.known.clone())
                }
            }
        }
    }

    fn deliver(&mut self, _local: u64, msg: &MsgSet) {
        if msg.iter().any(|o| !self.known.contains(o)) {
            self.dirty = true;
        }
        self.known.union_with(msg);
    }

    fn next_activity(&self, local: u64) -> Option<u64> {
        match self.kind {
            DemoKind::RoundRobinByLabel => {
                if self.known.is_empty() {
                    return None;
                }
                let r0 = self.label as u64 % self.cycle;
                Some(local + 1 + (r0 + self.cycle - local % self.cycle) % self.cycle)
            }
            DemoKind::FloodOnReceive => self.dirty.then_some(local + 1),
            DemoKind::AllTransmit => (!self.known.is_empty()).then_some(local + 1),
        }
    }

    fn terminated(&self) -> bool {
        false
    }

    fn knowledge(&self) -> Vec<u32> {
        self.known.iter().collect()
    }
}

fn run_demo(
    g: &Graph,
    labels: &[u32],
    sources: &[NodeId],
    kind: DemoKind,
    horizon: u64,
) -> Trace<MsgSet> {
    let cycle = labels.iter().copied().max().unwrap_or(0) as u64 + 1;
    let mut programs: Vec<DemoProgram> = g
        .nodes()
        .map(|v| {
            DemoProgram::new(v, labels[v as usize], cycle, kind, sources.contains(&v))
        })
        .collect();
    run(g, &mut programs, &vec![0; g.node_count()], &RunConfig::new(horizon))
}

// ---------------------------------------------------------------------------
// history comparison
// ---------------------------------------------------------------------------

/// Per-round reception histories of two nodes coincide.
pub fn histories_equal<M: Clone + PartialEq>(trace: &Trace<M>, x: NodeId, y: NodeId) -> bool {
    trace.history(x) == trace.history(y)
}

fn map_set(phi: &Permutation, s: &MsgSet) -> MsgSet {
    s.iter().map(|o| phi.apply(o)).collect()
}

/// History of `phi(x)` equals the `phi`-image of the history of `x`.
pub fn histories_equal_under(trace: &Trace<MsgSet>, x: NodeId, phi: &Permutation) -> bool {
    let hx: Vec<(u64, MsgSet)> = trace
        .history(x)
        .into_iter()
        .map(|(t, m)| (t, map_set(phi, &m)))
        .collect();
    hx == trace.history(phi.apply(x))
}

fn deliveries_containing(trace: &Trace<MsgSet>, to: NodeId, origin: u32) -> usize {
    trace
        .rounds
        .iter()
        .flat_map(|r| r.receptions.iter())
        .filter(|(v, m)| *v == to && m.contains(origin))
        .count()
}

// ---------------------------------------------------------------------------
// duplicate-label demos
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DupLabelEvidence {
    pub n: usize,
    pub k: usize,
    pub program: String,
    pub horizon: u64,
    pub rounds_recorded: usize,
    /// the two equal-labeled sources' reception histories coincide per round
    pub histories_equal: bool,
    /// deliveries anywhere of a set containing the first shared-label source
    pub mu_alpha_deliveries: usize,
    pub mu_beta_deliveries: usize,
    pub passed: bool,
}

/// Two sources forced to share a label on the complete graph `K_n`: their
/// histories stay equal at every round, so their transmissions always
/// coincide and collide — neither source message is ever delivered.
pub fn demo_duplicate_labels_kn(
    n: usize,
    k: usize,
    kind: DemoKind,
    horizon: u64,
) -> Result<DupLabelEvidence> {
    if n < 3 || k < 2 || k > n {
        return Err(Error::Precondition(
            "duplicate-label demo needs n >= 3 and 2 <= k <= n".into(),
        ));
    }
    let g = Graph::complete(n);
    // sources 0..k; sources 0 and 1 share a label, everyone else is distinct
    let labels: Vec<u32> = g.nodes().map(|v| if v == 1 { 0 } else { v }).collect();
    let sources: Vec<NodeId> = (0..k as NodeId).collect();
    let trace = run_demo(&g, &labels, &sources, kind, horizon);
    let eq = histories_equal(&trace, 0, 1);
    let a: usize = g.nodes().map(|v| deliveries_containing(&trace, v, 0)).sum();
    let b: usize = g.nodes().map(|v| deliveries_containing(&trace, v, 1)).sum();
    Ok(DupLabelEvidence {
        n,
        k,
        program: kind.name().into(),
        horizon,
        rounds_recorded: trace.rounds.len(),
        histories_equal: eq,
        mu_alpha_deliveries: a,
        mu_beta_deliveries: b,
        passed: eq && a == 0 && b == 0,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleEvidence {
    pub program: String,
    pub horizon: u64,
    /// deliveries of the source message at the antipodal node
    pub far_deliveries: usize,
    pub passed: bool,
}

/// One source on a 4-cycle where every label is equal: the two relays stay
/// in lockstep, so the antipodal node only ever hears collisions.
pub fn demo_identical_labels_cycle4(kind: DemoKind, horizon: u64) -> CycleEvidence {
    let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
    let trace = run_demo(&g, &[0, 0, 0, 0], &[0], kind, horizon);
    let far = deliveries_containing(&trace, 2, 0);
    CycleEvidence {
        program: kind.name().into(),
        horizon,
        far_deliveries: far,
        passed: far == 0,
    }
}

// ---------------------------------------------------------------------------
// automorphism demo
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AutomorphismEvidence {
    pub program: String,
    pub horizon: u64,
    pub moved_nodes: Vec<NodeId>,
    /// per-round history equality of x and phi(x), up to relabeling by phi
    pub histories_equal: bool,
    /// deliveries at phi(x) of a set containing x's message, over moved x
    pub cross_deliveries: usize,
    pub passed: bool,
}

/// Finds a non-trivial automorphism of the tree preserving the colouring,
/// if one exists (there is none exactly when the colouring distinguishes).
pub fn find_preserved_automorphism(
    tree: &Graph,
    coloring: &Coloring,
) -> Result<Option<Permutation>> {
    if !tree.is_tree() {
        return Err(Error::Precondition("automorphism search requires a tree".into()));
    }
    Ok(tree_automorphisms(tree).into_iter().find(|p| {
        !p.is_identity() && tree.nodes().all(|v| coloring.of(v) == coloring.of(p.apply(v)))
    }))
}

/// All nodes as sources on a tree whose labeling (the colouring) is
/// preserved by the non-trivial automorphism `phi`: every node's history
/// equals its image's history up to relabeling, and a moved node's source
/// message never reaches its image.
pub fn demo_automorphism_histories(
    tree: &Graph,
    coloring: &Coloring,
    phi: &Permutation,
    kind: DemoKind,
    horizon: u64,
) -> Result<AutomorphismEvidence> {
    if !tree.is_tree() || phi.len() != tree.node_count() {
        return Err(Error::Precondition("demo requires a tree and a matching map".into()));
    }
    if !is_automorphism(tree, phi) || phi.is_identity() {
        return Err(Error::Precondition(
            "demo requires a non-trivial automorphism".into(),
        ));
    }
    if tree.nodes().any(|v| coloring.of(v) != coloring.of(phi.apply(v))) {
        return Err(Error::Precondition(
            "the automorphism does not preserve the labeling".into(),
        ));
    }
    let labels: Vec<u32> = tree.nodes().map(|v| coloring.of(v)).collect();
    let sources: Vec<NodeId> = tree.nodes().collect();
    let trace = run_demo(tree, &labels, &sources, kind, horizon);
    let moved: Vec<NodeId> = tree.nodes().filter(|&v| phi.apply(v) != v).collect();
    let eq = tree.nodes().all(|v| histories_equal_under(&trace, v, phi));
    let cross: usize = moved
        .iter()
        .map(|&x| deliveries_containing(&trace, phi.apply(x), x))
        .sum();
    Ok(AutomorphismEvidence {
        program: kind.name().into(),
        horizon,
        moved_nodes: moved,
        histories_equal: eq,
        cross_deliveries: cross,
        passed: eq && cross == 0,
    })
}

// ---------------------------------------------------------------------------
// gossip trace invariants
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GossipInvariantReport {
    pub violations: Vec<String>,
    /// per node, the round by which it was settled (delay fixed ever after
    /// and all subtree messages held)
    pub settled: Vec<u64>,
    pub completion_round: u64,
}

fn state_at<'a>(timeline: &'a [EncSnapshot], sync: u64) -> Option<&'a EncSnapshot> {
    timeline.iter().take_while(|s| s.sync <= sync).last()
}

/// The aggregation-stage invariant suite, checked over a finished run:
/// encoding divisibility monotonicity per node, child-list size bounds,
/// per-round ancestor encoding/delay distinctness, post-settling sibling
/// delay distinctness, settled-equal-encodings implying colour-preserving
/// subtree isomorphism, and settling before completion.
pub fn gossip_invariants(
    tree: &Graph,
    scheme: &GossipScheme,
    grun: &GossipRun,
) -> Result<GossipInvariantReport> {
    let n = tree.node_count();
    let view = tree.rooted_at(scheme.coordinator)?;
    let tl = &grun.timelines;
    if tl.len() != n {
        return Err(Error::Precondition("timeline count mismatch".into()));
    }
    let completion = grun
        .trace
        .termination_round
        .iter()
        .map(|r| r.unwrap_or(grun.trace.last_round))
        .max()
        .unwrap_or(0);
    let mut violations = Vec::new();
    if n == 1 {
        return Ok(GossipInvariantReport {
            violations,
            settled: vec![0],
            completion_round: completion,
        });
    }

    // encoding monotonicity under divisibility, per node over time
    for v in 0..n {
        for w in tl[v].windows(2) {
            if !w[0].enc.divides(&w[1].enc) {
                violations.push(format!(
                    "encoding of node {v} at round {} does not divide its round-{} value",
                    w[0].sync, w[1].sync
                ));
            }
        }
        for s in &tl[v] {
            if s.children.len() > view.children[v].len() {
                violations.push(format!(
                    "node {v} stores {} child encodings but has {} children",
                    s.children.len(),
                    view.children[v].len()
                ));
            }
        }
    }

    // ancestor distinctness, at every state-change checkpoint
    let checkpoints: BTreeSet<u64> = tl.iter().flatten().map(|s| s.sync).collect();
    let ancestors: Vec<Vec<usize>> = (0..n)
        .map(|v| {
            let mut out = Vec::new();
            let mut cur = v as NodeId;
            while let Some(p) = view.parent[cur as usize] {
                out.push(p as usize);
                cur = p;
            }
            out
        })
        .collect();
    for &t in &checkpoints {
        for v in 0..n {
            let sv = match state_at(&tl[v], t) {
                Some(s) => s,
                None => continue,
            };
            for &w in &ancestors[v] {
                let sw = match state_at(&tl[w], t) {
                    Some(s) => s,
                    None => continue,
                };
                if sv.enc == sw.enc {
                    violations.push(format!(
                        "equal encodings of node {v} and its ancestor {w} at round {t}"
                    ));
                }
                if let (Some(a), Some(b)) = (sv.delay, sw.delay) {
                    if a == b {
                        violations.push(format!(
                            "equal delays of node {v} and its ancestor {w} at round {t}"
                        ));
                    }
                }
            }
        }
    }

    // settling: last state change, plus holding the whole subtree
    let mut subtree: Vec<BTreeSet<u32>> = (0..n)
        .map(|v| [v as u32].into_iter().collect())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&v| std::cmp::Reverse(view.depth[v]));
    for &v in &order {
        if let Some(p) = view.parent[v] {
            let s = subtree[v].clone();
            subtree[p as usize].extend(s);
        }
    }
    let mut have: Vec<BTreeSet<u32>> = (0..n).map(|v| [v as u32].into_iter().collect()).collect();
    let mut complete_at: Vec<Option<u64>> = (0..n)
        .map(|v| (subtree[v].len() == 1).then_some(0))
        .collect();
    for round in &grun.trace.rounds {
        for (v, msg) in &round.receptions {
            let v = *v as usize;
            if let GossipMsg::Agg { msgs, dist, .. } = msg {
                if *dist == grun.depths[v] + 1 && complete_at[v].is_none() {
                    have[v].extend(msgs.iter());
                    if subtree[v].iter().all(|o| have[v].contains(o)) {
                        complete_at[v] = Some(round.round);
                    }
                }
            }
        }
    }
    let mut settled = vec![0u64; n];
    for v in 0..n {
        let last_change = tl[v].last().map_or(0, |s| s.sync);
        match complete_at[v] {
            Some(c) => settled[v] = c.max(last_change),
            None => violations.push(format!("node {v} never held its whole subtree")),
        }
        if settled[v] > completion {
            violations.push(format!(
                "node {v} settled at round {} after completion round {completion}",
                settled[v]
            ));
        }
    }

    // settled siblings keep distinct delays ever after; delays are constant
    // from each node's last state change, so the final values decide
    for p in 0..n {
        let kids = &view.children[p];
        for (i, &a) in kids.iter().enumerate() {
            for &b in &kids[i + 1..] {
                let (da, db) = (
                    tl[a as usize].last().and_then(|s| s.delay),
                    tl[b as usize].last().and_then(|s| s.delay),
                );
                if da.is_some() && da == db {
                    violations.push(format!(
                        "settled siblings {a} and {b} share delay {:?}",
                        da.unwrap()
                    ));
                }
            }
        }
    }

    // equal settled encodings imply colour-isomorphic subtrees
    let mut canon: Vec<Option<String>> = vec![None; n];
    for &v in &order {
        let mut parts: Vec<String> = view.children[v]
            .iter()
            .map(|&c| canon[c as usize].clone().unwrap())
            .collect();
        parts.sort();
        canon[v] = Some(format!("({}:{})", scheme.coloring.of(v as NodeId), parts.join(",")));
    }
    for v in 0..n {
        for w in v + 1..n {
            if let (Some(sv), Some(sw)) = (tl[v].last(), tl[w].last()) {
                if sv.enc == sw.enc && canon[v] != canon[w] {
                    violations.push(format!(
                        "nodes {v} and {w} share an encoding but their coloured subtrees differ"
                    ));
                }
            }
        }
    }

    Ok(GossipInvariantReport {
        violations,
        settled,
        completion_round: completion,
    })
}

// ---------------------------------------------------------------------------
// label lengths
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelLengthReport {
    pub max_bits: u32,
    pub per_node: Vec<u32>,
    /// count per length, for the distribution
    pub histogram: BTreeMap<u32, usize>,
    pub declared_bound: u32,
    pub within_bound: bool,
}

/// Compares measured per-node label lengths against a scheme's declared
/// maximum.
pub fn label_length_report(per_node: Vec<u32>, declared_bound: u32) -> LabelLengthReport {
    let max_bits = per_node.iter().copied().max().unwrap_or(0);
    let mut histogram = BTreeMap::new();
    for &b in &per_node {
        *histogram.entry(b).or_insert(0) += 1;
    }
    LabelLengthReport {
        max_bits,
        histogram,
        declared_bound,
        within_bound: max_bits <= declared_bound,
        per_node,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distinguishing::distinguishing_number;
    use crate::gossip::{gossip, gossip_length_formula};
    use crate::kb::{kb_length_formula, kb_programs, labeling_kb};
    use crate::primes::DelayPolicy;
    use crate::tn::{build_tn, tn_program};

    #[test]
    fn completion_on_kb_k4() {
        let g = Graph::complete(4);
        let scheme = labeling_kb(&g, &[1, 2], None).unwrap();
        let mut programs = kb_programs(&scheme);
        let trace = run(&g, &mut programs, &[0; 4], &RunConfig::new(10_000));
        let rep = check_completion(&trace, &[1, 2]);
        assert!(rep.solved && rep.acknowledged);
        assert!(rep.completion_round.is_some());
        assert!(rep.missing.iter().all(|m| m.is_empty()));
    }

    #[test]
    fn truncated_run_reports_missing() {
        let g = Graph::complete(4);
        let scheme = labeling_kb(&g, &[1, 2], None).unwrap();
        let mut programs = kb_programs(&scheme);
        let trace = run(&g, &mut programs, &[0; 4], &RunConfig::new(2));
        let rep = check_completion(&trace, &[1, 2]);
        assert!(!rep.solved && !rep.acknowledged);
        assert!(rep.completion_round.is_none());
        assert!(rep.missing.iter().any(|m| !m.is_empty()));
    }

    #[test]
    fn completion_on_gossip_single_edge() {
        let g = Graph::path(2);
        let (_, r) = gossip(&g, DelayPolicy::RegistryPrime).unwrap();
        let rep = check_completion(&r.trace, &[0, 1]);
        assert!(rep.solved && rep.acknowledged);
        assert_eq!(rep.completion_round, Some(14));
    }

    #[test]
    fn duplicate_labels_on_complete_graphs() {
        for kind in DEMO_KINDS {
            let ev = demo_duplicate_labels_kn(4, 2, kind, 1000).unwrap();
            assert!(ev.passed, "{}", ev.program);
            assert_eq!(ev.mu_alpha_deliveries, 0);
        }
        let ev = demo_duplicate_labels_kn(3, 3, DemoKind::AllTransmit, 1000).unwrap();
        assert!(ev.passed);
        assert!(demo_duplicate_labels_kn(2, 2, DemoKind::AllTransmit, 10).is_err());
    }

    #[test]
    fn four_cycle_never_delivers_across() {
        for kind in DEMO_KINDS {
            let ev = demo_identical_labels_cycle4(kind, 1000);
            assert!(ev.passed, "{}", ev.program);
        }
    }

    #[test]
    fn reflection_of_a_path_freezes_endpoints() {
        let g = Graph::path(3);
        let phi = Permutation::new(vec![2, 1, 0]).unwrap();
        let coloring = Coloring::all_ones(3);
        for kind in DEMO_KINDS {
            let ev = demo_automorphism_histories(&g, &coloring, &phi, kind, 1000).unwrap();
            assert!(ev.passed, "{}", ev.program);
            assert_eq!(ev.moved_nodes, vec![0, 2]);
        }
    }

    #[test]
    fn same_colour_star_leaves_never_exchange() {
        let g = Graph::star(3);
        // hub one colour, all leaves another: leaf swaps are preserved
        let coloring = Coloring {
            color: vec![2, 1, 1, 1],
            count: 2,
        };
        let phi = find_preserved_automorphism(&g, &coloring).unwrap().unwrap();
        let ev =
            demo_automorphism_histories(&g, &coloring, &phi, DemoKind::RoundRobinByLabel, 1000)
                .unwrap();
        assert!(ev.passed);
        assert!(ev.cross_deliveries == 0);
    }

    #[test]
    fn distinguishing_colouring_has_no_preserved_map() {
        let g = Graph::star(3);
        let d = distinguishing_number(&g).unwrap();
        assert!(find_preserved_automorphism(&g, &d.witness).unwrap().is_none());
        // and a non-preserving map is rejected
        let phi = Permutation::new(vec![0, 2, 3, 1]).unwrap();
        assert!(matches!(
            demo_automorphism_histories(&g, &d.witness, &phi, DemoKind::AllTransmit, 10),
            Err(Error::Precondition(_))
        ));
        let id = Permutation::identity(4);
        assert!(demo_automorphism_histories(
            &g,
            &Coloring::all_ones(4),
            &id,
            DemoKind::AllTransmit,
            10
        )
        .is_err());
    }

    #[test]
    fn gossip_invariants_hold_on_small_trees() {
        for g in [
            Graph::path(2),
            Graph::path(3),
            Graph::path(6),
            Graph::star(4),
            Graph::from_prufer(&[0, 2, 2, 5]),
        ] {
            let (scheme, r) = gossip(&g, DelayPolicy::RegistryPrime).unwrap();
            let rep = gossip_invariants(&g, &scheme, &r).unwrap();
            assert!(rep.violations.is_empty(), "{:?}", rep.violations);
            assert!(rep.settled.iter().all(|&s| s <= rep.completion_round));
        }
    }

    #[test]
    fn gossip_invariants_hold_on_random_trees() {
        use rand::SeedableRng;
        for seed in 0..5u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = Graph::random_tree(10, &mut rng);
            let (scheme, r) = gossip(&g, DelayPolicy::RegistryPrime).unwrap();
            let rep = gossip_invariants(&g, &scheme, &r).unwrap();
            assert!(rep.violations.is_empty(), "{:?}", rep.violations);
        }
    }

    #[test]
    fn label_length_reports() {
        let (_, _, labels) = build_tn(4).unwrap();
        let rep = label_length_report(labels.iter().map(|l| l.bit_len()).collect(), 2);
        assert_eq!(rep.max_bits, 2);
        assert!(rep.within_bound);

        let spider =
            Graph::from_edges(7, &[(0, 1), (0, 2), (2, 3), (0, 4), (4, 5), (5, 6)]).unwrap();
        let s = gossip(&spider, DelayPolicy::RegistryPrime).unwrap().0;
        let rep = label_length_report(
            s.labels.iter().map(|l| l.bit_len()).collect(),
            gossip_length_formula(s.d_number),
        );
        assert_eq!(rep.max_bits, 5);
        assert!(rep.within_bound);

        let g = Graph::complete(5);
        let s = labeling_kb(&g, &[1, 2, 3], None).unwrap();
        let w = s.params.as_ref().unwrap().w;
        let rep = label_length_report(
            s.labels.iter().map(|l| l.bit_len()).collect(),
            kb_length_formula(s.strat, false, 3, w),
        );
        assert_eq!(rep.max_bits, kb_length_formula(false, false, 3, w));
        assert!(rep.within_bound);
    }

    #[test]
    fn evidence_serializes_to_json() {
        let ev = demo_duplicate_labels_kn(4, 2, DemoKind::RoundRobinByLabel, 100).unwrap();
        let js = serde_json::to_string_pretty(&ev).unwrap();
        assert!(js.contains("histories_equal"));
        let g = Graph::path(3);
        let (scheme, r) = gossip(&g, DelayPolicy::RegistryPrime).unwrap();
        let rep = gossip_invariants(&g, &scheme, &r).unwrap();
        assert!(serde_json::to_string(&rep).unwrap().contains("violations"));
    }

    #[test]
    fn completion_on_tn_family() {
        let (g, spec, labels) = build_tn(3).unwrap();
        let mut programs: Vec<_> = g
            .nodes()
            .map(|v| tn_program(labels[v as usize], v))
            .collect();
        let trace = run(&g, &mut programs, &vec![0; g.node_count()], &RunConfig::new(100));
        let sources: Vec<NodeId> = g.nodes().collect();
        let rep = check_completion(&trace, &sources);
        assert!(rep.solved);
        assert!(rep.completion_round.unwrap() <= 3 * spec.x);
    }
}
