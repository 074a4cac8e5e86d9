use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::skeleton::{NodeKind, SkeletonDoc};

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    /// Id from the source document.
    pub id: usize,
    pub pos: [f64; 3],
    pub kind: NodeKind,
    pub label: Option<String>,
}

/// Undirected weighted graph used for comparisons. Edges are stored once
/// with `a < b` (positions in `nodes`), sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<(usize, usize, f64)>,
}

impl EvalGraph {
    pub fn new(nodes: Vec<GraphNode>, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (a, b, w) in edges {
            if a == b || a >= nodes.len() || b >= nodes.len() {
                return Err(Error::data(format!("invalid edge ({a}, {b})")));
            }
            if map.insert((a.min(b), a.max(b)), w).is_some() {
                return Err(Error::data(format!("duplicate edge ({a}, {b})")));
            }
        }
        Ok(EvalGraph { nodes, edges: map.into_iter().map(|((a, b), w)| (a, b, w)).collect() })
    }

    pub fn from_doc(doc: &SkeletonDoc) -> Result<Self> {
        doc.validate()?;
        let pos: BTreeMap<usize, usize> = doc.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let nodes = doc
            .nodes
            .iter()
            .map(|n| GraphNode { id: n.id, pos: n.centroid, kind: n.kind, label: n.label.clone() })
            .collect();
        EvalGraph::new(nodes, doc.edges.iter().map(|e| (pos[&e.child], pos[&e.parent], e.length_m)))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Neighbor lists, ascending.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.len()];
        for &(a, b, _) in &self.edges {
            nb[a].push(b);
            nb[b].push(a);
        }
        for n in &mut nb {
            n.sort_unstable();
        }
        nb
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.len()];
        for &(a, b, _) in &self.edges {
            d[a] += 1;
            d[b] += 1;
        }
        d
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.edges.binary_search_by(|e| (e.0, e.1).cmp(&(a.min(b), a.max(b)))).is_ok()
    }

    pub fn total_length(&self) -> f64 {
        self.edges.iter().map(|e| e.2).sum()
    }

    /// Whether every node is reachable from node 0.
    pub fn is_connected(&self) -> bool {
        if self.is_empty() {
            return true;
        }
        let nb = self.neighbors();
        let mut seen = vec![false; self.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &nb[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Removes every node with exactly two incident edges, fusing those edges
/// into one whose length is their sum. Surviving nodes keep their order.
pub fn collapse_degree_two(g: &EvalGraph) -> EvalGraph {
    let n = g.len();
    let mut adj: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
    for &(a, b, w) in &g.edges {
        adj[a].insert(b, w);
        adj[b].insert(a, w);
    }
    let mut alive = vec![true; n];
    for v in 0..n {
        if adj[v].len() != 2 {
            continue;
        }
        let mut it = adj[v].iter();
        let (&a, &wa) = it.next().unwrap();
        let (&b, &wb) = it.next().unwrap();
        // In a tree a and b are never already linked; in a cycle keep v.
        if adj[a].contains_key(&b) {
            continue;
        }
        adj[a].remove(&v);
        adj[b].remove(&v);
        adj[a].insert(b, wa + wb);
        adj[b].insert(a, wa + wb);
        adj[v].clear();
        alive[v] = false;
    }
    let mut new_idx = vec![usize::MAX; n];
    let mut nodes = Vec::new();
    for v in 0..n {
        if alive[v] {
            new_idx[v] = nodes.len();
            nodes.push(g.nodes[v].clone());
        }
    }
    let mut edges = Vec::new();
    for a in 0..n {
        for (&b, &w) in &adj[a] {
            if a < b {
                edges.push((new_idx[a], new_idx[b], w));
            }
        }
    }
    EvalGraph::new(nodes, edges).expect("collapse keeps a simple graph")
}
