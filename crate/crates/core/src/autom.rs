//! Graph automorphisms: brute-force enumeration for small general graphs and
//! canonical-form based enumeration for trees of any size, plus the path
//! reflection property used by the lower-bound machinery.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Default node-count bound for brute-force enumeration on non-tree graphs.
pub const DEFAULT_BRUTE_FORCE_LIMIT: usize = 10;

/// A bijection on the node set, stored as the image list.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Permutation {
    map: Vec<NodeId>,
}

impl Permutation {
    pub fn new(map: Vec<NodeId>) -> Result<Permutation> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &v in &map {
            if v as usize >= n || seen[v as usize] {
                return Err(Error::Precondition("mapping is not a bijection".into()));
            }
            seen[v as usize] = true;
        }
        Ok(Permutation { map })
    }

    pub fn identity(n: usize) -> Permutation {
        Permutation {
            map: (0..n as NodeId).collect(),
        }
    }

    pub fn apply(&self, v: NodeId) -> NodeId {
        self.map[v as usize]
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &v)| i as NodeId == v)
    }

    /// `self` after `other`: `(self ∘ other)(v) = self(other(v))`.
    pub fn compose(&self, other: &Permutation) -> Permutation {
        Permutation {
            map: other.map.iter().map(|&v| self.apply(v)).collect(),
        }
    }

    pub fn images(&self) -> &[NodeId] {
        &self.map
    }
}

/// True iff `p` preserves adjacency in both directions.
pub fn is_automorphism(g: &Graph, p: &Permutation) -> bool {
    if p.len() != g.node_count() {
        return false;
    }
    g.edges()
        .iter()
        .all(|&(u, v)| g.has_edge(p.apply(u), p.apply(v)))
}

/// Exhaustive backtracking enumeration of the automorphism group. Exact for
/// every graph; exponential, so callers gate it on node count.
pub fn brute_force_automorphisms(g: &Graph) -> Vec<Permutation> {
    let n = g.node_count();
    let mut out = Vec::new();
    let mut image = vec![0 as NodeId; n];
    let mut used = vec![false; n];
    fn rec(
        g: &Graph,
        i: usize,
        image: &mut Vec<NodeId>,
        used: &mut Vec<bool>,
        out: &mut Vec<Permutation>,
    ) {
        let n = g.node_count();
        if i == n {
            out.push(Permutation {
                map: image.clone(),
            });
            return;
        }
        for j in 0..n as NodeId {
            if used[j as usize] || g.degree(i as NodeId) != g.degree(j) {
                continue;
            }
            let ok = (0..i).all(|u| {
                g.has_edge(u as NodeId, i as NodeId) == g.has_edge(image[u], j)
            });
            if ok {
                image[i] = j;
                used[j as usize] = true;
                rec(g, i + 1, image, used, out);
                used[j as usize] = false;
            }
        }
    }
    rec(g, 0, &mut image, &mut used, &mut out);
    out
}

/// Enumerates the automorphism group: canonical-form enumeration for trees
/// (no size limit), brute force for other graphs up to `limit` nodes.
pub fn enumerate_automorphisms(g: &Graph, limit: usize) -> Result<Vec<Permutation>> {
    if g.is_tree() {
        Ok(tree_automorphisms(g))
    } else if g.node_count() <= limit {
        Ok(brute_force_automorphisms(g))
    } else {
        Err(Error::BruteForceLimit {
            n: g.node_count(),
            limit,
        })
    }
}

/// A tree rooted for isomorphism work; may contain one virtual node standing
/// in for a center edge.
pub(crate) struct CanonRooted {
    pub root: usize,
    pub children: Vec<Vec<usize>>,
    /// number of real nodes (virtual node, if any, has index == real_n)
    pub real_n: usize,
}

/// Roots a tree at its center, subdividing the center edge with a virtual
/// node when the center is an edge, so that every automorphism of the tree
/// corresponds to a root-fixing automorphism of the rooted structure.
pub(crate) fn root_at_center(g: &Graph) -> CanonRooted {
    let n = g.node_count();
    let center = g.center();
    if center.len() == 1 {
        let t = g.rooted_at(center[0]).unwrap();
        CanonRooted {
            root: center[0] as usize,
            children: t
                .children
                .iter()
                .map(|c| c.iter().map(|&v| v as usize).collect())
                .collect(),
            real_n: n,
        }
    } else {
        let (a, b) = (center[0], center[1]);
        let mut children = vec![Vec::new(); n + 1];
        children[n] = vec![a as usize, b as usize];
        // orient each half away from its center endpoint
        let mut parent = vec![usize::MAX; n];
        parent[a as usize] = n;
        parent[b as usize] = n;
        let mut queue = std::collections::VecDeque::from([a, b]);
        while let Some(u) = queue.pop_front() {
            for &v in g.neighbors(u) {
                if (u == a && v == b) || (u == b && v == a) {
                    continue;
                }
                if parent[v as usize] == usize::MAX {
                    parent[v as usize] = u as usize;
                    children[u as usize].push(v as usize);
                    queue.push_back(v);
                }
            }
        }
        for c in &mut children {
            c.sort_unstable();
        }
        CanonRooted {
            root: n,
            children,
            real_n: n,
        }
    }
}

/// AHU canonical form identifiers for every node of a rooted tree, refined by
/// per-node colour values. Equal identifiers mean colour-preserving
/// isomorphic subtrees.
pub(crate) fn ahu_forms(rooted: &CanonRooted, colors: &[u64]) -> Vec<u64> {
    let n = rooted.children.len();
    let mut forms = vec![0u64; n];
    let mut intern: HashMap<(u64, Vec<u64>), u64> = HashMap::new();
    // post-order
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![(rooted.root, false)];
    while let Some((v, expanded)) = stack.pop() {
        if expanded {
            order.push(v);
        } else {
            stack.push((v, true));
            for &c in &rooted.children[v] {
                stack.push((c, false));
            }
        }
    }
    for v in order {
        let mut child_forms: Vec<u64> = rooted.children[v].iter().map(|&c| forms[c]).collect();
        child_forms.sort_unstable();
        let key = (colors[v], child_forms);
        let next = intern.len() as u64;
        forms[v] = *intern.entry(key).or_insert(next);
    }
    forms
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    fn heap(k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(cur.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, cur, out);
            if k % 2 == 0 {
                cur.swap(i, k - 1);
            } else {
                cur.swap(0, k - 1);
            }
        }
    }
    heap(k, &mut cur, &mut out);
    out
}

/// All isomorphisms from subtree(u) onto subtree(v), as pair lists.
fn subtree_isos(
    rooted: &CanonRooted,
    forms: &[u64],
    u: usize,
    v: usize,
) -> Vec<Vec<(usize, usize)>> {
    debug_assert_eq!(forms[u], forms[v]);
    // group u's and v's children by form; forms match because the subtrees do
    let mut groups: HashMap<u64, (Vec<usize>, Vec<usize>)> = HashMap::new();
    for &c in &rooted.children[u] {
        groups.entry(forms[c]).or_default().0.push(c);
    }
    for &c in &rooted.children[v] {
        groups.entry(forms[c]).or_default().1.push(c);
    }
    let mut result: Vec<Vec<(usize, usize)>> = vec![vec![(u, v)]];
    let mut group_keys: Vec<u64> = groups.keys().copied().collect();
    group_keys.sort_unstable();
    for key in group_keys {
        let (gu, gv) = &groups[&key];
        debug_assert_eq!(gu.len(), gv.len());
        let mut group_alternatives: Vec<Vec<(usize, usize)>> = Vec::new();
        for perm in permutations(gu.len()) {
            // one matching of gu onto gv; expand to all per-pair isomorphisms
            let mut partials: Vec<Vec<(usize, usize)>> = vec![Vec::new()];
            for (i, &cu) in gu.iter().enumerate() {
                let cv = gv[perm[i]];
                let subs = subtree_isos(rooted, forms, cu, cv);
                let mut next = Vec::with_capacity(partials.len() * subs.len());
                for p in &partials {
                    for s in &subs {
                        let mut q = p.clone();
                        q.extend_from_slice(s);
                        next.push(q);
                    }
                }
                partials = next;
            }
            group_alternatives.extend(partials);
        }
        let mut next = Vec::with_capacity(result.len() * group_alternatives.len());
        for r in &result {
            for ga in &group_alternatives {
                let mut q = r.clone();
                q.extend_from_slice(ga);
                next.push(q);
            }
        }
        result = next;
    }
    result
}

/// The full automorphism group of a tree, enumerated via canonical forms
/// rooted at the center (with the center-edge reflection handled through a
/// virtual subdivision node).
pub fn tree_automorphisms(g: &Graph) -> Vec<Permutation> {
    let n = g.node_count();
    if n == 1 {
        return vec![Permutation::identity(1)];
    }
    let rooted = root_at_center(g);
    let colors = vec![0u64; rooted.children.len()];
    let forms = ahu_forms(&rooted, &colors);
    let isos = subtree_isos(&rooted, &forms, rooted.root, rooted.root);
    let mut out: Vec<Permutation> = isos
        .into_iter()
        .map(|pairs| {
            let mut map = vec![0 as NodeId; n];
            for (a, b) in pairs {
                if a < rooted.real_n {
                    map[a] = b as NodeId;
                }
            }
            Permutation { map }
        })
        .collect();
    out.sort_by(|a, b| a.map.cmp(&b.map));
    out.dedup();
    out
}

/// Reflection check: for the path `(v_1,...,v_{l+1})` from `x`
/// to `p(x)`, verifies `v_{l+1-i} == p(v_{1+i})` for all `i <= l/2`.
pub fn check_path_symmetry(tree: &Graph, p: &Permutation, x: NodeId) -> Result<bool> {
    if !tree.is_tree() {
        return Err(Error::Precondition("path symmetry requires a tree".into()));
    }
    if p.is_identity() || !is_automorphism(tree, p) {
        return Err(Error::Precondition(
            "requires a non-trivial automorphism".into(),
        ));
    }
    let y = p.apply(x);
    if y == x {
        return Err(Error::Precondition("x must not be fixed by p".into()));
    }
    let path = tree_path(tree, x, y);
    let l = path.len() - 1;
    for i in 0..=l / 2 {
        if path[l - i] != p.apply(path[i]) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// The unique path between two nodes of a tree.
pub fn tree_path(tree: &Graph, from: NodeId, to: NodeId) -> Vec<NodeId> {
    let n = tree.node_count();
    let mut parent = vec![NodeId::MAX; n];
    parent[from as usize] = from;
    let mut queue = std::collections::VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        if u == to {
            break;
        }
        for &v in tree.neighbors(u) {
            if parent[v as usize] == NodeId::MAX {
                parent[v as usize] = u;
                queue.push_back(v);
            }
        }
    }
    let mut path = vec![to];
    let mut cur = to;
    while cur != from {
        cur = parent[cur as usize];
        path.push(cur);
    }
    path.reverse();
    path
}
