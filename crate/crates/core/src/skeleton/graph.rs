use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use rayon::prelude::*;

use super::{ClusterNode, NodeKind};
use crate::cloud::{PointCloud, SpatialIndex};
use crate::error::{Error, Result};

/// Symmetric sparse weights; `neighbors[u]` is sorted by node id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightedAdjacency {
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl WeightedAdjacency {
    pub fn new(n_nodes: usize) -> Self {
        WeightedAdjacency { neighbors: vec![Vec::new(); n_nodes] }
    }

    /// Builds from undirected edges; a repeated pair keeps its smallest weight.
    pub fn from_edges(n_nodes: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut best: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (u, v, w) in edges {
            if u == v || u >= n_nodes || v >= n_nodes {
                return Err(Error::param(format!("invalid edge ({u}, {v}) for {n_nodes} nodes")));
            }
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::param(format!("edge ({u}, {v}) has non-positive weight {w}")));
            }
            let e = best.entry((u.min(v), u.max(v))).or_insert(w);
            *e = e.min(w);
        }
        let mut adj = WeightedAdjacency::new(n_nodes);
        for ((u, v), w) in best {
            adj.neighbors[u].push((v, w));
            adj.neighbors[v].push((u, w));
        }
        for n in &mut adj.neighbors {
            n.sort_by_key(|e| e.0);
        }
        Ok(adj)
    }

    pub fn n_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn n_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, u: usize) -> &[(usize, f64)] {
        &self.neighbors[u]
    }

    pub fn weight(&self, u: usize, v: usize) -> Option<f64> {
        let n = &self.neighbors[u];
        n.binary_search_by_key(&v, |e| e.0).ok().map(|i| n[i].1)
    }

    /// Edges with `u < v`, ascending.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (u, n) in self.neighbors.iter().enumerate() {
            out.extend(n.iter().filter(|e| e.0 > u).map(|&(v, w)| (u, v, w)));
        }
        out
    }
}

/// Links nodes whose closest member points are at most `edge_max` apart,
/// weighted by that closest distance. Node ids are positions in `nodes`;
/// member ids index `cloud`.
pub fn build_adjacency(cloud: &PointCloud, nodes: &[ClusterNode], edge_max: f64) -> Result<WeightedAdjacency> {
    if !(edge_max > 0.0) {
        return Err(Error::param(format!("edge_max must be positive, got {edge_max}")));
    }
    let mut coords = Vec::new();
    let mut owner = Vec::new();
    for (id, n) in nodes.iter().enumerate() {
        for &m in &n.member_ids {
            coords.push(cloud.point(m).coords());
            owner.push(id);
        }
    }
    let index = SpatialIndex::from_coords(coords, edge_max);
    let r2 = edge_max * edge_max;
    let pairs = (0..owner.len())
        .into_par_iter()
        .fold(HashMap::<(usize, usize), f64>::new, |mut acc, i| {
            let oi = owner[i];
            index.for_each_within(index.coords()[i], edge_max, |j, d2| {
                let oj = owner[j];
                if j > i && oj != oi && d2 <= r2 {
                    let e = acc.entry((oi.min(oj), oi.max(oj))).or_insert(d2);
                    if d2 < *e {
                        *e = d2;
                    }
                }
            });
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                let e = a.entry(k).or_insert(v);
                if v < *e {
                    *e = v;
                }
            }
            a
        });
    // Coincident points in different clusters would give a zero weight.
    WeightedAdjacency::from_edges(nodes.len(), pairs.into_iter().map(|((u, v), d2)| (u, v, d2.sqrt().max(1e-12))))
}

/// Dijkstra tree grown from one trunk node.
#[derive(Debug, Clone, PartialEq)]
pub struct ShortestPathTree {
    pub source: usize,
    /// Reached node → predecessor (the source has none).
    pub parent: BTreeMap<usize, usize>,
    /// Reached node → path cost, source included at 0.
    pub cost: BTreeMap<usize, f64>,
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// One shortest-path tree per trunk node. A tree never enters any of the
/// other trunk nodes. Equal-cost alternatives keep the lower predecessor id.
pub fn shortest_path_trees(adj: &WeightedAdjacency, trunk_ids: &[usize]) -> Vec<ShortestPathTree> {
    let n = adj.n_nodes();
    let mut is_trunk = vec![false; n];
    for &t in trunk_ids {
        is_trunk[t] = true;
    }
    trunk_ids
        .par_iter()
        .map(|&s| {
            let mut dist = vec![f64::INFINITY; n];
            let mut pred = vec![usize::MAX; n];
            let mut done = vec![false; n];
            let mut heap = BinaryHeap::new();
            dist[s] = 0.0;
            heap.push(Entry(0.0, s));
            while let Some(Entry(d, u)) = heap.pop() {
                if done[u] || d > dist[u] {
                    continue;
                }
                done[u] = true;
                for &(v, w) in adj.neighbors(u) {
                    if done[v] || (is_trunk[v] && v != s) {
                        continue;
                    }
                    let nd = d + w;
                    if nd < dist[v] || (nd == dist[v] && u < pred[v]) {
                        dist[v] = nd;
                        pred[v] = u;
                        heap.push(Entry(nd, v));
                    }
                }
            }
            let mut tree = ShortestPathTree { source: s, parent: BTreeMap::new(), cost: BTreeMap::new() };
            for v in 0..n {
                if done[v] {
                    tree.cost.insert(v, dist[v]);
                    if v != s {
                        tree.parent.insert(v, pred[v]);
                    }
                }
            }
            tree
        })
        .collect()
}

/// Final tree: `nodes[i].id == i`, edges point from child to parent.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonGraph {
    pub nodes: Vec<ClusterNode>,
    pub parent: Vec<Option<usize>>,
    /// Length of the edge to the parent; 0 at the root.
    pub edge_length: Vec<f64>,
    /// Branch nodes: summed edge weights down to the trunk node they hang
    /// from. Trunk nodes: 0.
    pub cost: Vec<f64>,
    pub root_id: usize,
}

impl SkeletonGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `(child, parent, length)` for every edge, by child id.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        (0..self.len()).filter_map(|c| self.parent[c].map(|p| (c, p, self.edge_length[c]))).collect()
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut ch = vec![Vec::new(); self.len()];
        for (c, p) in self.parent.iter().enumerate() {
            if let Some(p) = p {
                ch[*p].push(c);
            }
        }
        ch
    }

    pub fn trunk_ids(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.nodes[i].kind == NodeKind::Trunk).collect()
    }

    /// Checks the tree structure: single root at the lowest trunk node,
    /// every node reachable, trunk nodes forming one chain.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let bad = |m: String| Err(Error::Data(format!("invalid skeleton graph: {m}")));
        if n == 0 {
            return bad("no nodes".into());
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id != i {
                return bad(format!("node at position {i} has id {}", node.id));
            }
        }
        let roots: Vec<usize> = (0..n).filter(|&i| self.parent[i].is_none()).collect();
        if roots != [self.root_id] {
            return bad(format!("roots {roots:?}, expected [{}]", self.root_id));
        }
        let children = self.children();
        let mut seen = vec![false; n];
        let mut stack = vec![self.root_id];
        let mut count = 0;
        while let Some(u) = stack.pop() {
            if seen[u] {
                return bad("cycle".into());
            }
            seen[u] = true;
            count += 1;
            stack.extend(&children[u]);
        }
        if count != n {
            return bad(format!("{} of {n} nodes unreachable from the root", n - count));
        }
        let trunk = self.trunk_ids();
        let lowest = trunk.iter().min_by_key(|&&t| self.nodes[t].slice_index).copied();
        if lowest != Some(self.root_id) {
            return bad("root is not the lowest trunk node".into());
        }
        for &t in &trunk {
            if t == self.root_id {
                continue;
            }
            let p = self.parent[t].unwrap();
            if self.nodes[p].kind != NodeKind::Trunk || self.nodes[p].slice_index >= self.nodes[t].slice_index {
                return bad(format!("trunk node {t} does not hang from a lower trunk node"));
            }
            if trunk.iter().filter(|&&o| self.parent[o] == Some(p)).count() > 1 {
                return bad(format!("trunk chain forks at node {p}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeResult {
    pub graph: SkeletonGraph,
    /// Branch nodes not reached from any trunk node, with their original ids.
    pub leftover: Vec<ClusterNode>,
}

/// Combines the per-trunk trees: each branch node keeps its parent from the
/// tree where its cost is smallest (ties: lower slice, then lower trunk id).
/// Trunk nodes are chained bottom to top. Surviving nodes are renumbered in
/// input order.
pub fn merge_graphs(nodes: &[ClusterNode], adj: &WeightedAdjacency, trees: &[ShortestPathTree]) -> Result<MergeResult> {
    let mut trunk: Vec<usize> = trees.iter().map(|t| t.source).collect();
    if trunk.is_empty() {
        return Err(Error::Trunk("no trunk nodes to build the skeleton from".into()));
    }
    trunk.sort_by_key(|&t| (nodes[t].slice_index, t));
    let rank: HashMap<usize, usize> = trunk.iter().enumerate().map(|(r, &t)| (t, r)).collect();
    let n = nodes.len();
    let mut best: Vec<Option<(f64, usize, usize)>> = vec![None; n];
    for tree in trees {
        let r = rank[&tree.source];
        for (&v, &p) in &tree.parent {
            let c = tree.cost[&v];
            let better = match best[v] {
                None => true,
                Some((bc, br, _)) => c < bc || (c == bc && r < br),
            };
            if better {
                best[v] = Some((c, r, p));
            }
        }
    }
    let mut new_id = vec![usize::MAX; n];
    let mut kept = Vec::new();
    let mut leftover = Vec::new();
    for (i, node) in nodes.iter().enumerate() {
        if node.kind == NodeKind::Trunk || best[i].is_some() {
            new_id[i] = kept.len();
            let mut nn = node.clone();
            nn.id = kept.len();
            kept.push(nn);
        } else {
            leftover.push(node.clone());
        }
    }
    let m = kept.len();
    let mut parent = vec![None; m];
    let mut edge_length = vec![0.0; m];
    for w in trunk.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        parent[new_id[hi]] = Some(new_id[lo]);
        edge_length[new_id[hi]] = (nodes[hi].centroid - nodes[lo].centroid).norm();
    }
    for v in 0..n {
        if let Some((_, _, p)) = best[v] {
            parent[new_id[v]] = Some(new_id[p]);
            edge_length[new_id[v]] = adj.weight(v, p).expect("tree edge missing from adjacency");
        }
    }
    // Costs along the final parent chains; a parent's best cost is strictly
    // below its child's, so ascending best cost visits parents first.
    let mut order: Vec<usize> = (0..n).filter(|&v| best[v].is_some()).collect();
    order.sort_by(|&a, &b| best[a].unwrap().0.total_cmp(&best[b].unwrap().0).then(a.cmp(&b)));
    let mut cost = vec![0.0; m];
    for v in order {
        let c = new_id[v];
        let p = parent[c].unwrap();
        cost[c] = edge_length[c] + if kept[p].kind == NodeKind::Trunk { 0.0 } else { cost[p] };
    }
    let graph = SkeletonGraph { nodes: kept, parent, edge_length, cost, root_id: new_id[trunk[0]] };
    Ok(MergeResult { graph, leftover })
}
