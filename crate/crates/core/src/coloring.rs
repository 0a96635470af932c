//! Greedy proper colourings and the distance-two colouring obtained by
//! colouring the square graph.

use crate::graph::{Graph, NodeId};
use serde::{Deserialize, Serialize};

/// A node colouring with colours drawn from `1..=count`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coloring {
    pub color: Vec<u32>,
    pub count: u32,
}

impl Coloring {
    pub fn of(&self, v: NodeId) -> u32 {
        self.color[v as usize]
    }

    pub fn all_ones(n: usize) -> Coloring {
        Coloring {
            color: vec![1; n],
            count: 1,
        }
    }
}

/// Greedy colouring in the given node order: each node takes the smallest
/// positive colour unused by already-coloured neighbours.
pub fn greedy_coloring(g: &Graph, order: &[NodeId]) -> Coloring {
    let n = g.node_count();
    debug_assert_eq!(order.len(), n);
    let mut color = vec![0u32; n];
    for &v in order {
        let used: Vec<u32> = g
            .neighbors(v)
            .iter()
            .map(|&u| color[u as usize])
            .filter(|&c| c != 0)
            .collect();
        let mut c = 1;
        while used.contains(&c) {
            c += 1;
        }
        color[v as usize] = c;
    }
    let count = *color.iter().max().unwrap_or(&0);
    Coloring { color, count }
}

/// Distance-two colouring: greedy colouring of the square graph in ascending
/// node order. Any two nodes within distance 2 get different colours.
pub fn distance_two_coloring(g: &Graph) -> Coloring {
    let order: Vec<NodeId> = g.nodes().collect();
    greedy_coloring(&g.square_graph(), &order)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn is_proper(g: &Graph, c: &Coloring) -> bool {
        g.edges().iter().all(|&(u, v)| c.of(u) != c.of(v))
    }

    #[test]
    fn clique_forces_distinct_colors() {
        let g = Graph::complete(4);
        let order: Vec<_> = g.nodes().collect();
        let c = greedy_coloring(&g, &order);
        assert_eq!(c.count, 4);
        assert!(is_proper(&g, &c));
    }

    #[test]
    fn path5_greedy_ascending() {
        // hand-run greedy: 1,2,1,2,1
        let g = Graph::path(5);
        let order: Vec<_> = g.nodes().collect();
        let c = greedy_coloring(&g, &order);
        assert_eq!(c.color, vec![1, 2, 1, 2, 1]);
    }

    #[test]
    fn greedy_within_delta_plus_one() {
        let g = Graph::star(6);
        let order: Vec<_> = g.nodes().collect();
        let c = greedy_coloring(&g, &order);
        assert!(c.count as usize <= g.max_degree() + 1);
        assert!(is_proper(&g, &c));
    }

    #[test]
    fn d2_star_k13_uses_four_colors() {
        // G^2 of K_{1,3} is K_4
        let c = distance_two_coloring(&Graph::star(3));
        assert_eq!(c.count, 4);
    }

    #[test]
    fn d2_triangle_uses_three() {
        let c = distance_two_coloring(&Graph::complete(3));
        assert_eq!(c.count, 3);
    }

    #[test]
    fn d2_path5_hand_run() {
        // greedy on G^2 ascending: 1,2,3,1,2
        let c = distance_two_coloring(&Graph::path(5));
        assert_eq!(c.color, vec![1, 2, 3, 1, 2]);
    }

    #[test]
    fn d2_property_within_distance_two() {
        let g = Graph::from_prufer(&[0, 2, 2, 5, 5]);
        let c = distance_two_coloring(&g);
        for u in g.nodes() {
            let d = g.bfs_distances(u);
            for v in g.nodes() {
                if u != v && d[v as usize] <= 2 {
                    assert_ne!(c.of(u), c.of(v));
                }
            }
        }
        assert!(c.count as usize <= g.max_degree() * g.max_degree() + 1);
    }
}
