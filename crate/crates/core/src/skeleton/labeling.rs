use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use super::{NodeKind, SkeletonGraph};
use crate::error::{Error, Result};

/// Per-point branch class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BranchLabel {
    Trunk,
    /// Leading branch, numbered from 1 by descending size.
    Leading(usize),
    Small,
    Rest,
}

impl BranchLabel {
    /// Integer code: 0 Trunk, 1..=n leading, n+1 small, -1 rest.
    pub fn code(self, n_leading: usize) -> i64 {
        match self {
            BranchLabel::Trunk => 0,
            BranchLabel::Leading(i) => i as i64,
            BranchLabel::Small => n_leading as i64 + 1,
            BranchLabel::Rest => -1,
        }
    }

    pub fn from_code(code: i64, n_leading: usize) -> Option<Self> {
        match code {
            -1 => Some(BranchLabel::Rest),
            0 => Some(BranchLabel::Trunk),
            c if c >= 1 && (c as usize) <= n_leading => Some(BranchLabel::Leading(c as usize)),
            c if c == n_leading as i64 + 1 => Some(BranchLabel::Small),
            _ => None,
        }
    }
}

impl fmt::Display for BranchLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BranchLabel::Trunk => write!(f, "Trunk"),
            BranchLabel::Leading(i) => write!(f, "LB{i}"),
            BranchLabel::Small => write!(f, "SB"),
            BranchLabel::Rest => write!(f, "Rest"),
        }
    }
}

impl FromStr for BranchLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Trunk" => Ok(BranchLabel::Trunk),
            "SB" => Ok(BranchLabel::Small),
            "Rest" => Ok(BranchLabel::Rest),
            _ => s
                .strip_prefix("LB")
                .and_then(|d| d.parse::<usize>().ok())
                .filter(|&i| i >= 1)
                .map(BranchLabel::Leading)
                .ok_or_else(|| Error::param(format!("unknown branch label '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchLabeling {
    /// One label per point of the tree cloud.
    pub labels: Vec<BranchLabel>,
    /// One label per graph node.
    pub node_labels: Vec<BranchLabel>,
    pub n_leading: usize,
}

impl BranchLabeling {
    pub fn codes(&self) -> Vec<i64> {
        self.labels.iter().map(|l| l.code(self.n_leading)).collect()
    }
}

/// Labels the `n_points` tree points from the graph. Every subtree hanging
/// directly off a trunk node holding at least `lb_min_fraction * n_points`
/// points becomes a leading branch; smaller ones are small branches. Points
/// outside the graph's clusters are rest.
pub fn assign_branch_labels(graph: &SkeletonGraph, n_points: usize, lb_min_fraction: f64) -> BranchLabeling {
    let n = graph.len();
    let children = graph.children();
    // Subtree point totals, children before parents.
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![graph.root_id];
    while let Some(u) = stack.pop() {
        order.push(u);
        stack.extend(&children[u]);
    }
    let mut size = vec![0usize; n];
    for &u in order.iter().rev() {
        size[u] = graph.nodes[u].member_ids.len()
            + children[u].iter().filter(|&&c| graph.nodes[c].kind == NodeKind::Branch).map(|&c| size[c]).sum::<usize>();
    }
    let mut heads: Vec<usize> = (0..n)
        .filter(|&v| {
            graph.nodes[v].kind == NodeKind::Branch
                && graph.parent[v].is_some_and(|p| graph.nodes[p].kind == NodeKind::Trunk)
        })
        .collect();
    heads.sort_by(|&a, &b| size[b].cmp(&size[a]).then(a.cmp(&b)));
    let min_size = lb_min_fraction * n_points as f64;
    let mut node_labels = vec![BranchLabel::Rest; n];
    let mut n_leading = 0;
    for &h in &heads {
        node_labels[h] = if size[h] as f64 >= min_size {
            n_leading += 1;
            BranchLabel::Leading(n_leading)
        } else {
            BranchLabel::Small
        };
    }
    // Top-down propagation.
    for &u in &order {
        if graph.nodes[u].kind == NodeKind::Trunk {
            node_labels[u] = BranchLabel::Trunk;
        } else if node_labels[u] == BranchLabel::Rest {
            node_labels[u] = node_labels[graph.parent[u].unwrap()];
        }
    }
    let mut labels = vec![BranchLabel::Rest; n_points];
    for (node, &l) in graph.nodes.iter().zip(&node_labels) {
        for &m in &node.member_ids {
            labels[m] = l;
        }
    }
    BranchLabeling { labels, node_labels, n_leading }
}

/// Writes `source_id,branch_id,label` rows.
pub fn write_labels_csv(path: &Path, source_ids: &[usize], labels: &[BranchLabel], n_leading: usize) -> Result<()> {
    let io_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::data(format!("{other:?}")),
    };
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(["source_id", "branch_id", "label"]).map_err(io_err)?;
    for (id, l) in source_ids.iter().zip(labels) {
        w.write_record([id.to_string(), l.code(n_leading).to_string(), l.to_string()]).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct LabelRow {
    source_id: usize,
    #[allow(dead_code)]
    branch_id: i64,
    label: String,
}

/// Reads a labels CSV back as `(source_id, label)` rows; the label column wins
/// over the numeric code.
pub fn read_labels_csv(path: &Path) -> Result<Vec<(usize, BranchLabel)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(e) => Error::io(path, e),
            other => Error::parse(path, 0, format!("{other:?}")),
        })?;
    let line_of = |e: &csv::Error| e.position().map_or(0, |p| p.line() as usize);
    let headers = rdr.headers().map_err(|e| Error::parse(path, line_of(&e), e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["source_id", "branch_id", "label"] {
        return Err(Error::parse(path, 1, "expected header 'source_id,branch_id,label'"));
    }
    let mut out = Vec::new();
    for rec in rdr.deserialize::<LabelRow>() {
        let row = rec.map_err(|e| Error::parse(path, line_of(&e), e.to_string()))?;
        let label = row.label.parse::<BranchLabel>().map_err(|e| Error::parse(path, out.len() + 2, e.to_string()))?;
        out.push((row.source_id, label));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::ClusterNode;
    use nalgebra::Vector3;

    fn graph(spec: &[(NodeKind, Option<usize>, usize)]) -> SkeletonGraph {
        let mut next = 0;
        let nodes: Vec<ClusterNode> = spec
            .iter()
            .enumerate()
            .map(|(id, &(kind, _, n))| {
                let m: Vec<usize> = (next..next + n).collect();
                next += n;
                ClusterNode {
                    id,
                    kind,
                    centroid: Vector3::zeros(),
                    member_ids: m,
                    slice_index: (kind == NodeKind::Trunk).then_some(id),
                }
            })
            .collect();
        let len = nodes.len();
        SkeletonGraph {
            nodes,
            parent: spec.iter().map(|s| s.1).collect(),
            edge_length: vec![0.01; len],
            cost: vec![0.0; len],
            root_id: 0,
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.csv");
        let labels = [BranchLabel::Trunk, BranchLabel::Leading(2), BranchLabel::Small, BranchLabel::Rest];
        write_labels_csv(&p, &[4, 5, 6, 7], &labels, 2).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("6,3,SB"));
        let back = read_labels_csv(&p).unwrap();
        assert_eq!(back, vec![(4, labels[0]), (5, labels[1]), (6, labels[2]), (7, labels[3])]);
        std::fs::write(&p, "source_id,branch_id,label\n1,2,LBx\n").unwrap();
        let err = read_labels_csv(&p).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn codes_round_trip() {
        for l in [BranchLabel::Trunk, BranchLabel::Leading(3), BranchLabel::Small, BranchLabel::Rest] {
            assert_eq!(BranchLabel::from_code(l.code(5), 5), Some(l));
            assert_eq!(l.to_string().parse::<BranchLabel>().unwrap(), l);
        }
        assert_eq!(BranchLabel::Small.code(5), 6);
        assert_eq!(BranchLabel::from_code(7, 5), None);
    }

    #[test]
    fn five_leading_and_small() {
        use NodeKind::*;
        // Two trunk nodes, five large subtrees, three tiny ones.
        let mut spec = vec![(Trunk, None, 100), (Trunk, Some(0), 100)];
        for (i, sz) in [60, 80, 70, 90, 50].into_iter().enumerate() {
            spec.push((Branch, Some(i % 2), sz));
        }
        for _ in 0..3 {
            spec.push((Branch, Some(1), 5));
        }
        // child of the 80-point head (node 3)
        spec.push((Branch, Some(3), 30));
        let g = graph(&spec);
        let total: usize = spec.iter().map(|s| s.2).sum();
        let lab = assign_branch_labels(&g, total + 10, 0.05);
        assert_eq!(lab.n_leading, 5);
        assert_eq!(lab.node_labels[3], BranchLabel::Leading(1));
        assert_eq!(lab.node_labels[10], BranchLabel::Leading(1));
        assert_eq!(lab.node_labels[5], BranchLabel::Leading(2));
        assert_eq!(lab.node_labels[6], BranchLabel::Leading(5));
        assert_eq!(lab.node_labels[7], BranchLabel::Small);
        assert_eq!(lab.node_labels[0], BranchLabel::Trunk);
        // points past the clusters stay rest
        assert!(lab.labels[total..].iter().all(|&l| l == BranchLabel::Rest));
        assert_eq!(lab.labels.len(), total + 10);
    }
}
