//! Comparison of a computed skeleton with a reference graph, and scoring of
//! per-point branch assignments.

mod graph;
mod matching;
mod points;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use graph::{collapse_degree_two, EvalGraph, GraphNode};
pub use matching::{edge_percentages, match_edges, match_nodes, node_class, EdgeResult, NodeMatch};
pub use points::{score_point_assignment, PointScore};

use crate::error::{Error, Result};
use crate::skeleton::SkeletonDoc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: String,
    pub nodes_total: usize,
    pub nodes_true: usize,
    pub nodes_true_pct: f64,
    pub edges_total: usize,
    pub edges_true: usize,
    pub edges_true_pct: f64,
    pub edges_length_weighted_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub radius_m: f64,
    pub computed_fork_nodes: usize,
    pub reference_fork_nodes: usize,
    /// Per reference branch class, Trunk first, then LB1.., SB, others.
    pub classes: Vec<ClassScore>,
    pub all: ClassScore,
    pub edges: Vec<EdgeResult>,
}

fn class_order(c: &str) -> (u8, usize, String) {
    match c {
        "Trunk" => (0, 0, String::new()),
        "SB" => (2, 0, String::new()),
        _ => match c.strip_prefix("LB").and_then(|d| d.parse::<usize>().ok()) {
            Some(i) => (1, i, String::new()),
            None => (3, 0, c.to_string()),
        },
    }
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * (num as f64 / den as f64)
    }
}

fn score(class: &str, node_hits: &[bool], edges: &[&EdgeResult]) -> ClassScore {
    let nodes_true = node_hits.iter().filter(|&&h| h).count();
    let owned: Vec<EdgeResult> = edges.iter().map(|e| (*e).clone()).collect();
    let (edges_true_pct, edges_length_weighted_pct) = edge_percentages(&owned);
    ClassScore {
        class: class.to_string(),
        nodes_total: node_hits.len(),
        nodes_true,
        nodes_true_pct: pct(nodes_true, node_hits.len()),
        edges_total: edges.len(),
        edges_true: edges.iter().filter(|e| e.matched).count(),
        edges_true_pct,
        edges_length_weighted_pct,
    }
}

/// Collapses both graphs to forks and leaves, matches nodes within `radius`
/// and scores reference edges, overall and per reference branch class.
pub fn evaluate_skeleton(computed: &SkeletonDoc, reference: &SkeletonDoc, radius: f64) -> Result<MatchReport> {
    if !(radius > 0.0) {
        return Err(Error::param(format!("match radius must be positive, got {radius}")));
    }
    let c = collapse_degree_two(&EvalGraph::from_doc(computed)?);
    let r_full = EvalGraph::from_doc(reference)?;
    if !r_full.is_connected() {
        return Err(Error::data("reference graph is not connected"));
    }
    let r = collapse_degree_two(&r_full);
    if c.is_empty() || r.is_empty() {
        return Err(Error::data("cannot compare an empty graph"));
    }
    let m = match_nodes(&c, &r, radius);
    let edges = match_edges(&m, &c, &r);
    let hits: Vec<bool> = m.reference_to_computed.iter().map(Option::is_some).collect();
    let mut names: Vec<String> = r.nodes.iter().map(node_class).chain(edges.iter().map(|e| e.class.clone())).collect();
    names.sort_by_key(|n| class_order(n));
    names.dedup();
    let classes = names
        .iter()
        .map(|name| {
            let nh: Vec<bool> = r.nodes.iter().zip(&hits).filter(|(n, _)| &node_class(n) == name).map(|(_, &h)| h).collect();
            let es: Vec<&EdgeResult> = edges.iter().filter(|e| &e.class == name).collect();
            score(name, &nh, &es)
        })
        .collect();
    let all = score("all", &hits, &edges.iter().collect::<Vec<_>>());
    Ok(MatchReport { radius_m: radius, computed_fork_nodes: c.len(), reference_fork_nodes: r.len(), classes, all, edges })
}

impl MatchReport {
    /// Rows of node, edge and weighted-edge percentages; one column per class plus "all".
    pub fn to_table(&self) -> String {
        let cols: Vec<&ClassScore> = self.classes.iter().chain(std::iter::once(&self.all)).collect();
        let mut s = format!("{:<22}", "");
        for c in &cols {
            let _ = write!(s, "{:>9}", c.class);
        }
        s.push('\n');
        let rows: [(&str, fn(&ClassScore) -> String); 5] = [
            ("Nodes [n]", |c| c.nodes_total.to_string()),
            ("Nodes true [%]", |c| format!("{:.2}", c.nodes_true_pct)),
            ("Edges [n]", |c| c.edges_total.to_string()),
            ("Edges true [%]", |c| format!("{:.2}", c.edges_true_pct)),
            ("Edges weighted [%]", |c| format!("{:.2}", c.edges_length_weighted_pct)),
        ];
        for (name, f) in rows {
            let _ = write!(s, "{name:<22}");
            for c in &cols {
                let _ = write!(s, "{:>9}", f(c));
            }
            s.push('\n');
        }
        s
    }
}

impl PointScore {
    pub fn to_table(&self) -> String {
        let mut s = self.matrix.summary_table_with("OA [%] (reference Rest excluded)", Some(self.overall_accuracy));
        let _ = writeln!(s, "Rest fraction: {:.2} %", 100.0 * self.rest_fraction);
        s
    }
}
