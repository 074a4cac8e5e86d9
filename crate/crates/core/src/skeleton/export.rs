use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BranchLabeling, NodeKind, SkeletonGraph};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDoc {
    pub id: usize,
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice_index: Option<usize>,
    pub centroid: [f64; 3],
    #[serde(default)]
    pub n_points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<usize>,
    /// Branch class name such as "Trunk", "LB2" or "SB".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeDoc {
    pub child: usize,
    pub parent: usize,
    pub length_m: f64,
}

/// Serialized skeleton graph, used for both computed and reference skeletons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonDoc {
    pub root_id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leading_branches: Option<usize>,
    pub nodes: Vec<NodeDoc>,
    pub edges: Vec<EdgeDoc>,
}

impl SkeletonDoc {
    pub fn from_graph(graph: &SkeletonGraph, labeling: Option<&BranchLabeling>) -> Self {
        let nodes = graph
            .nodes
            .iter()
            .map(|n| NodeDoc {
                id: n.id,
                kind: n.kind,
                slice_index: n.slice_index,
                centroid: [n.centroid.x, n.centroid.y, n.centroid.z],
                n_points: n.member_ids.len(),
                parent_id: graph.parent[n.id],
                label: labeling.map(|l| l.node_labels[n.id].to_string()),
            })
            .collect();
        let edges = graph.edges().into_iter().map(|(child, parent, length_m)| EdgeDoc { child, parent, length_m }).collect();
        SkeletonDoc { root_id: graph.root_id, leading_branches: labeling.map(|l| l.n_leading), nodes, edges }
    }

    /// Position of each node id in `nodes`.
    pub fn index_of(&self, id: usize) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// Checks ids are unique and edges reference existing nodes.
    pub fn validate(&self) -> Result<()> {
        let mut ids: Vec<usize> = self.nodes.iter().map(|n| n.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::data("skeleton has duplicate node ids"));
        }
        let has = |id: usize| ids.binary_search(&id).is_ok();
        if !self.nodes.is_empty() && !has(self.root_id) {
            return Err(Error::data(format!("skeleton root {} is not a node", self.root_id)));
        }
        for e in &self.edges {
            if !has(e.child) || !has(e.parent) || e.child == e.parent {
                return Err(Error::data(format!("skeleton edge {} -> {} is invalid", e.child, e.parent)));
            }
            if !(e.length_m >= 0.0) {
                return Err(Error::data(format!("skeleton edge {} -> {} has length {}", e.child, e.parent, e.length_m)));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: SkeletonDoc = serde_json::from_str(&s)
            .map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph skeleton {\n  node [shape=point];\n");
        for n in &self.nodes {
            let shape = match n.kind {
                NodeKind::Trunk => "box",
                NodeKind::Branch => "circle",
            };
            let label = n.label.clone().unwrap_or_else(|| n.id.to_string());
            let _ = writeln!(
                s,
                "  n{} [shape={shape}, label=\"{label}\", pos=\"{:.4},{:.4}!\"];",
                n.id, n.centroid[0], n.centroid[2]
            );
        }
        for e in &self.edges {
            let _ = writeln!(s, "  n{} -> n{} [label=\"{:.3}\"];", e.child, e.parent, e.length_m);
        }
        s.push_str("}\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::ClusterNode;
    use nalgebra::Vector3;

    fn small() -> SkeletonGraph {
        let nodes = vec![
            ClusterNode { id: 0, kind: NodeKind::Trunk, centroid: Vector3::zeros(), member_ids: vec![0, 1], slice_index: Some(0) },
            ClusterNode { id: 1, kind: NodeKind::Branch, centroid: Vector3::new(0.1, 0.0, 0.2), member_ids: vec![2], slice_index: None },
        ];
        SkeletonGraph { nodes, parent: vec![None, Some(0)], edge_length: vec![0.0, 0.01], cost: vec![0.0, 0.01], root_id: 0 }
    }

    #[test]
    fn json_round_trip() {
        let doc = SkeletonDoc::from_graph(&small(), None);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        doc.save(&p).unwrap();
        let back = SkeletonDoc::load(&p).unwrap();
        assert_eq!(back, doc);
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(v["nodes"][0]["kind"], "trunk");
        assert!(v["nodes"][0].get("parent_id").is_none());
        assert_eq!(v["edges"][0]["length_m"], 0.01);
        assert_eq!(v["nodes"][1]["n_points"], 1);
    }

    #[test]
    fn dot_lists_edges() {
        let dot = SkeletonDoc::from_graph(&small(), None).to_dot();
        assert!(dot.contains("n1 -> n0"));
        assert!(dot.starts_with("digraph"));
    }

    #[test]
    fn bad_edge_rejected() {
        let mut doc = SkeletonDoc::from_graph(&small(), None);
        doc.edges[0].parent = 9;
        assert!(doc.validate().is_err());
    }
}
