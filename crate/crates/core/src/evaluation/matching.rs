use serde::{Deserialize, Serialize};

use super::graph::{EvalGraph, GraphNode};
use crate::skeleton::NodeKind;

#[inline]
fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Reference node → matched computed node (positions in the graphs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMatch {
    pub reference_to_computed: Vec<Option<usize>>,
}

impl NodeMatch {
    pub fn matched_count(&self) -> usize {
        self.reference_to_computed.iter().flatten().count()
    }

    pub fn nodes_true_pct(&self) -> f64 {
        let n = self.reference_to_computed.len();
        if n == 0 {
            return 0.0;
        }
        100.0 * (self.matched_count() as f64 / n as f64)
    }
}

/// A reference node can pair with a computed node within `radius` when some
/// neighbor of the computed node is within `radius` of some neighbor of the
/// reference node. Pairs are then taken greedily by ascending distance,
/// each node used at most once.
pub fn match_nodes(computed: &EvalGraph, reference: &EvalGraph, radius: f64) -> NodeMatch {
    let cn = computed.neighbors();
    let rn = reference.neighbors();
    let mut cands = Vec::new();
    for (r, rnode) in reference.nodes.iter().enumerate() {
        for (c, cnode) in computed.nodes.iter().enumerate() {
            let d = dist(&rnode.pos, &cnode.pos);
            if d > radius {
                continue;
            }
            let connected = rn[r].iter().any(|&r2| {
                cn[c].iter().any(|&c2| dist(&reference.nodes[r2].pos, &computed.nodes[c2].pos) <= radius)
            });
            if connected {
                cands.push((d, r, c));
            }
        }
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut r2c = vec![None; reference.len()];
    let mut used = vec![false; computed.len()];
    for (_, r, c) in cands {
        if r2c[r].is_none() && !used[c] {
            r2c[r] = Some(c);
            used[c] = true;
        }
    }
    NodeMatch { reference_to_computed: r2c }
}

/// The node's label, or its kind when unlabeled.
pub fn node_class(n: &GraphNode) -> String {
    match (&n.label, n.kind) {
        (Some(l), _) => l.clone(),
        (None, NodeKind::Trunk) => "Trunk".into(),
        (None, NodeKind::Branch) => "Branch".into(),
    }
}

/// An edge takes the class of its non-trunk endpoint.
fn edge_class(a: &GraphNode, b: &GraphNode) -> String {
    let (ca, cb) = (node_class(a), node_class(b));
    if ca == "Trunk" {
        cb
    } else {
        ca
    }
}

/// Outcome for one reference edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeResult {
    /// Node ids from the reference document.
    pub a: usize,
    pub b: usize,
    pub length_m: f64,
    /// Branch class the edge belongs to in the reference.
    pub class: String,
    pub matched: bool,
}

/// A reference edge is true when both endpoints are matched and their
/// matched computed nodes are adjacent.
pub fn match_edges(m: &NodeMatch, computed: &EvalGraph, reference: &EvalGraph) -> Vec<EdgeResult> {
    reference
        .edges
        .iter()
        .map(|&(a, b, w)| {
            let matched = match (m.reference_to_computed[a], m.reference_to_computed[b]) {
                (Some(ca), Some(cb)) => computed.adjacent(ca, cb),
                _ => false,
            };
            let class = edge_class(&reference.nodes[a], &reference.nodes[b]);
            EdgeResult { a: reference.nodes[a].id, b: reference.nodes[b].id, length_m: w, class, matched }
        })
        .collect()
}

/// `(plain, length-weighted)` percentages of true edges.
pub fn edge_percentages(edges: &[EdgeResult]) -> (f64, f64) {
    if edges.is_empty() {
        return (0.0, 0.0);
    }
    let t = edges.iter().filter(|e| e.matched).count();
    let total_len: f64 = edges.iter().map(|e| e.length_m).sum();
    let true_len: f64 = edges.iter().filter(|e| e.matched).map(|e| e.length_m).sum();
    let weighted = if total_len > 0.0 { 100.0 * (true_len / total_len) } else { 0.0 };
    (100.0 * (t as f64 / edges.len() as f64), weighted)
}

#[cfg(test)]
mod tests {
    use super::super::graph::tests::{node, random_tree};
    use super::super::graph::{collapse_degree_two, EvalGraph};
    use super::*;
    use nalgebra::{Rotation3, Vector3};
    use proptest::prelude::*;

    fn path3(offset: [f64; 3]) -> EvalGraph {
        let p = |x: f64, z: f64| [x + offset[0], offset[1], z + offset[2]];
        EvalGraph::new(vec![node(0, p(0.0, 0.0)), node(1, p(0.0, 1.0)), node(2, p(0.5, 1.5))], [(0, 1, 1.0), (1, 2, 0.7)]).unwrap()
    }

    #[test]
    fn within_and_beyond_radius() {
        let r = path3([0.0; 3]);
        let near = path3([0.04, 0.0, 0.0]);
        let m = match_nodes(&near, &r, 0.05);
        assert_eq!(m.nodes_true_pct(), 100.0);
        let far = path3([0.06, 0.0, 0.0]);
        assert_eq!(match_nodes(&far, &r, 0.05).matched_count(), 0);
    }

    #[test]
    fn needs_an_equivalent_connection() {
        let r = path3([0.0; 3]);
        // same position for node 0 but its only neighbor is elsewhere
        let c = EvalGraph::new(vec![node(0, [0.0; 3]), node(1, [1.0, 1.0, 0.0])], [(0, 1, 1.0)]).unwrap();
        assert_eq!(match_nodes(&c, &r, 0.05).reference_to_computed[0], None);
    }

    #[test]
    fn one_to_one() {
        // two reference nodes 2 cm apart compete for one computed node
        let r = EvalGraph::new(vec![node(0, [0.0; 3]), node(1, [0.02, 0.0, 0.0]), node(2, [0.0, 0.0, 1.0])], [(0, 2, 1.0), (1, 2, 1.0)]).unwrap();
        let c = EvalGraph::new(vec![node(0, [0.015, 0.0, 0.0]), node(1, [0.0, 0.0, 1.0])], [(0, 1, 1.0)]).unwrap();
        let m = match_nodes(&c, &r, 0.05);
        assert_eq!(m.reference_to_computed, vec![None, Some(0), Some(1)]);
    }

    #[test]
    fn unmatched_fork_fails_all_incident_edges() {
        let nodes = vec![node(0, [0.0; 3]), node(1, [1.0, 0.0, 0.0]), node(2, [0.0, 1.0, 0.0]), node(3, [0.0, 0.0, 1.0])];
        let r = EvalGraph::new(nodes, [(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0)]).unwrap();
        let m = NodeMatch { reference_to_computed: vec![None, Some(1), Some(2), Some(3)] };
        let e = match_edges(&m, &r, &r);
        assert!(e.iter().all(|x| !x.matched));
    }

    #[test]
    fn weighting_arithmetic() {
        let e = [
            EdgeResult { a: 0, b: 1, length_m: 1.0, class: "LB1".into(), matched: true },
            EdgeResult { a: 1, b: 2, length_m: 3.0, class: "LB1".into(), matched: false },
        ];
        assert_eq!(edge_percentages(&e), (50.0, 25.0));
    }

    proptest! {
        #[test]
        fn self_match_is_perfect(seed in 0u64..3000, n in 2usize..30) {
            let g = collapse_degree_two(&random_tree(seed, n));
            let m = match_nodes(&g, &g, 0.05);
            prop_assert_eq!(m.nodes_true_pct(), 100.0);
            let (p, w) = edge_percentages(&match_edges(&m, &g, &g));
            prop_assert_eq!(p, 100.0);
            prop_assert_eq!(w, 100.0);
        }

        #[test]
        fn rigid_motion_invariant(seed in 0u64..3000, ax in -1.0f64..1.0, ay in -1.0f64..1.0, ang in 0.0f64..6.0) {
            let r = collapse_degree_two(&random_tree(seed, 25));
            let mut c = collapse_degree_two(&random_tree(seed + 1, 25));
            // put computed nodes near the reference ones so some matches exist
            for (i, x) in c.nodes.iter_mut().enumerate() {
                if i < r.len() && i % 2 == 0 {
                    x.pos = [r.nodes[i].pos[0] + 0.01, r.nodes[i].pos[1], r.nodes[i].pos[2]];
                }
            }
            let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(Vector3::new(ax, ay, 1.0)), ang);
            let t = Vector3::new(3.0, -2.0, 0.5);
            let mv = |g: &EvalGraph| {
                let mut g = g.clone();
                for x in &mut g.nodes {
                    let p = rot * Vector3::from(x.pos) + t;
                    x.pos = [p.x, p.y, p.z];
                }
                g
            };
            let m1 = match_nodes(&c, &r, 0.05);
            let m2 = match_nodes(&mv(&c), &mv(&r), 0.05);
            prop_assert_eq!(&m1, &m2);
            prop_assert_eq!(edge_percentages(&match_edges(&m1, &c, &r)), edge_percentages(&match_edges(&m2, &mv(&c), &mv(&r))));
            // one-to-one
            let mut seen: Vec<usize> = m1.reference_to_computed.iter().flatten().copied().collect();
            let k = seen.len();
            seen.sort_unstable();
            seen.dedup();
            prop_assert_eq!(seen.len(), k);
        }
    }
}
