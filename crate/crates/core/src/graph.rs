//! Simple undirected connected graphs with dense node identifiers `0..n-1`,
//! plus rooted tree views and the standard generators used by the scenario
//! front end.

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub type NodeId = u32;

/// Simple undirected connected graph. Adjacency lists are kept sorted so all
/// derived computations are deterministic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    adj: Vec<Vec<NodeId>>,
}

impl Graph {
    /// Builds a graph from an edge list, validating simplicity and
    /// connectivity.
    pub fn from_edges(n: usize, edges: &[(NodeId, NodeId)]) -> Result<Graph> {
        if n == 0 {
            return Err(Error::InvalidGraph("empty node set".into()));
        }
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u as usize >= n || v as usize >= n {
                return Err(Error::InvalidGraph(format!("edge ({u},{v}) out of range")));
            }
            if u == v {
                return Err(Error::InvalidGraph(format!("self-loop at {u}")));
            }
            if adj[u as usize].contains(&v) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({u},{v})")));
            }
            adj[u as usize].push(v);
            adj[v as usize].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        let g = Graph { adj };
        if !g.is_connected() {
            return Err(Error::InvalidGraph("graph is not connected".into()));
        }
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        0..self.adj.len() as NodeId
    }

    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.adj[v as usize]
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adj[v as usize].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adj.iter().map(|l| l.len()).max().unwrap_or(0)
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(|l| l.len()).sum::<usize>() / 2
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.adj[u as usize].binary_search(&v).is_ok()
    }

    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::new();
        for u in self.nodes() {
            for &v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn is_tree(&self) -> bool {
        self.edge_count() == self.node_count() - 1
    }

    fn is_connected(&self) -> bool {
        let d = bfs_distances_raw(self, 0);
        d.iter().all(|&x| x != u64::MAX)
    }

    /// Shortest-path hop distances from `src` to every node.
    pub fn bfs_distances(&self, src: NodeId) -> Vec<u64> {
        bfs_distances_raw(self, src)
    }

    pub fn eccentricity(&self, v: NodeId) -> u64 {
        self.bfs_distances(v).into_iter().max().unwrap()
    }

    pub fn radius(&self) -> u64 {
        self.nodes().map(|v| self.eccentricity(v)).min().unwrap()
    }

    /// Nodes of minimum eccentricity.
    pub fn center(&self) -> Vec<NodeId> {
        let ecc: Vec<u64> = self.nodes().map(|v| self.eccentricity(v)).collect();
        let rad = *ecc.iter().min().unwrap();
        self.nodes().filter(|&v| ecc[v as usize] == rad).collect()
    }

    /// The square graph: `u ~ v` iff `1 <= d(u,v) <= 2` in `self`.
    pub fn square_graph(&self) -> Graph {
        let n = self.node_count();
        let mut adj = vec![Vec::new(); n];
        for u in self.nodes() {
            let mut seen = vec![false; n];
            seen[u as usize] = true;
            for &v in self.neighbors(u) {
                if !seen[v as usize] {
                    seen[v as usize] = true;
                    adj[u as usize].push(v);
                }
                for &w in self.neighbors(v) {
                    if !seen[w as usize] {
                        seen[w as usize] = true;
                        adj[u as usize].push(w);
                    }
                }
            }
            adj[u as usize].sort_unstable();
        }
        Graph { adj }
    }

    /// Rooted orientation of a tree. Children lists are sorted ascending.
    pub fn rooted_at(&self, root: NodeId) -> Result<RootedTreeView> {
        if !self.is_tree() {
            return Err(Error::Precondition("rooted view requires a tree".into()));
        }
        let n = self.node_count();
        let dist = self.bfs_distances(root);
        let mut parent = vec![None; n];
        let mut children = vec![Vec::new(); n];
        for v in self.nodes() {
            if v == root {
                continue;
            }
            let p = *self
                .neighbors(v)
                .iter()
                .find(|&&u| dist[u as usize] + 1 == dist[v as usize])
                .expect("connected tree");
            parent[v as usize] = Some(p);
            children[p as usize].push(v);
        }
        let height = *dist.iter().max().unwrap();
        Ok(RootedTreeView {
            root,
            parent,
            children,
            depth: dist,
            height,
        })
    }

    // ---- generators ----

    pub fn path(n: usize) -> Graph {
        let edges: Vec<_> = (0..n as NodeId - 1).map(|i| (i, i + 1)).collect();
        Graph::from_edges(n, &edges).unwrap()
    }

    /// Star with hub 0 and `m` leaves.
    pub fn star(m: usize) -> Graph {
        let edges: Vec<_> = (1..=m as NodeId).map(|i| (0, i)).collect();
        Graph::from_edges(m + 1, &edges).unwrap()
    }

    pub fn complete(n: usize) -> Graph {
        let mut edges = Vec::new();
        for u in 0..n as NodeId {
            for v in u + 1..n as NodeId {
                edges.push((u, v));
            }
        }
        Graph::from_edges(n, &edges).unwrap()
    }

    /// Decodes a Prüfer sequence into a labeled tree on `len + 2` nodes,
    /// using smallest-leaf elimination.
    pub fn from_prufer(seq: &[NodeId]) -> Graph {
        use std::cmp::Reverse;
        use std::collections::BinaryHeap;
        let n = seq.len() + 2;
        let mut deg = vec![1u32; n];
        for &s in seq {
            deg[s as usize] += 1;
        }
        let mut leaves: BinaryHeap<Reverse<NodeId>> = (0..n as NodeId)
            .filter(|&v| deg[v as usize] == 1)
            .map(Reverse)
            .collect();
        let mut edges = Vec::with_capacity(n - 1);
        for &s in seq {
            let Reverse(l) = leaves.pop().unwrap();
            edges.push((l, s));
            deg[l as usize] = 0;
            deg[s as usize] -= 1;
            if deg[s as usize] == 1 {
                leaves.push(Reverse(s));
            }
        }
        let Reverse(a) = leaves.pop().unwrap();
        let Reverse(b) = leaves.pop().unwrap();
        edges.push((a, b));
        Graph::from_edges(n, &edges).unwrap()
    }

    /// Uniform random labeled tree on `n` nodes via a random Prüfer sequence.
    pub fn random_tree<R: Rng>(n: usize, rng: &mut R) -> Graph {
        if n == 1 {
            return Graph { adj: vec![vec![]] };
        }
        if n == 2 {
            return Graph::path(2);
        }
        let seq: Vec<NodeId> = (0..n - 2).map(|_| rng.gen_range(0..n as NodeId)).collect();
        Graph::from_prufer(&seq)
    }

    /// Random connected graph: a random tree plus `extra` random non-duplicate
    /// edges.
    pub fn random_connected<R: Rng>(n: usize, extra: usize, rng: &mut R) -> Graph {
        let tree = Graph::random_tree(n, rng);
        let mut edges = tree.edges();
        let mut added = 0;
        let mut attempts = 0;
        while added < extra && attempts < extra * 20 + 100 {
            attempts += 1;
            let u = rng.gen_range(0..n as NodeId);
            let v = rng.gen_range(0..n as NodeId);
            if u == v {
                continue;
            }
            let e = (u.min(v), u.max(v));
            if !edges.contains(&e) {
                edges.push(e);
                added += 1;
            }
        }
        Graph::from_edges(n, &edges).unwrap()
    }

    // ---- text format: first line "n m", then m lines "u v" ----

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.node_count(), self.edge_count());
        for (u, v) in self.edges() {
            s.push_str(&format!("{u} {v}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Graph> {
        let mut it = text.split_whitespace();
        let n: usize = it
            .next()
            .ok_or_else(|| Error::Parse("missing node count".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("node count: {e}")))?;
        let m: usize = it
            .next()
            .ok_or_else(|| Error::Parse("missing edge count".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("edge count: {e}")))?;
        let mut edges = Vec::with_capacity(m);
        for _ in 0..m {
            let u: NodeId = it
                .next()
                .ok_or_else(|| Error::Parse("missing edge endpoint".into()))?
                .parse()
                .map_err(|e| Error::Parse(format!("endpoint: {e}")))?;
            let v: NodeId = it
                .next()
                .ok_or_else(|| Error::Parse("missing edge endpoint".into()))?
                .parse()
                .map_err(|e| Error::Parse(format!("endpoint: {e}")))?;
            edges.push((u, v));
        }
        Graph::from_edges(n, &edges)
    }
}

fn bfs_distances_raw(g: &Graph, src: NodeId) -> Vec<u64> {
    let n = g.node_count();
    let mut dist = vec![u64::MAX; n];
    dist[src as usize] = 0;
    let mut queue = std::collections::VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        for &v in g.neighbors(u) {
            if dist[v as usize] == u64::MAX {
                dist[v as usize] = dist[u as usize] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// A tree with a chosen root: parents, sorted children lists, depths.
#[derive(Debug, Clone)]
pub struct RootedTreeView {
    pub root: NodeId,
    pub parent: Vec<Option<NodeId>>,
    pub children: Vec<Vec<NodeId>>,
    pub depth: Vec<u64>,
    pub height: u64,
}

impl RootedTreeView {
    /// The smallest-identifier node at maximum depth.
    pub fn deepest_node(&self) -> NodeId {
        (0..self.depth.len())
            .filter(|&v| self.depth[v] == self.height)
            .map(|v| v as NodeId)
            .min()
            .unwrap()
    }
}
