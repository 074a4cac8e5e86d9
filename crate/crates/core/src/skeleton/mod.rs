//! Skeleton graph construction: trunk slices and branch clusters become
//! nodes, linked by shortest paths over a contact-distance adjacency.

mod export;
mod graph;
mod kmeans;
mod labeling;
mod trunk;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub use export::{EdgeDoc, NodeDoc, SkeletonDoc};
pub use graph::{build_adjacency, merge_graphs, shortest_path_trees, MergeResult, ShortestPathTree, SkeletonGraph, WeightedAdjacency};
pub use kmeans::{kmeans, KMeansParams, KMeansResult};
pub use labeling::{assign_branch_labels, read_labels_csv, write_labels_csv, BranchLabel, BranchLabeling};
pub use trunk::{cluster_count, cluster_count_for_voxels, extract_trunk_points, slice_trunk};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::CylinderModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Trunk,
    Branch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterNode {
    pub id: usize,
    pub kind: NodeKind,
    pub centroid: Vector3<f64>,
    /// Indices into the tree cloud, ascending.
    pub member_ids: Vec<usize>,
    pub slice_index: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkeletonParams {
    /// Trunk membership distance to the cylinder surface (m).
    pub trunk_dist: f64,
    /// Link radius of the trunk connectivity check (m).
    pub trunk_link: f64,
    /// Voxel edge used to size k (m).
    pub voxel_size: f64,
    pub clusters_per_100_voxels: f64,
    /// Largest contact distance kept as an edge (m).
    pub edge_max: f64,
    pub lb_min_fraction: f64,
    pub kmeans_restarts: usize,
    pub kmeans_max_iterations: usize,
    pub seed: u64,
}

impl Default for SkeletonParams {
    fn default() -> Self {
        SkeletonParams {
            trunk_dist: 0.05,
            trunk_link: 0.02,
            voxel_size: 0.01,
            clusters_per_100_voxels: 2.0,
            edge_max: 0.03,
            lb_min_fraction: 0.05,
            kmeans_restarts: 5,
            kmeans_max_iterations: 100,
            seed: 0,
        }
    }
}

impl SkeletonParams {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("trunk_dist", self.trunk_dist),
            ("trunk_link", self.trunk_link),
            ("voxel_size", self.voxel_size),
            ("clusters_per_100_voxels", self.clusters_per_100_voxels),
            ("edge_max", self.edge_max),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.lb_min_fraction) {
            return Err(Error::param(format!("lb_min_fraction must lie in [0, 1], got {}", self.lb_min_fraction)));
        }
        if self.kmeans_restarts == 0 || self.kmeans_max_iterations == 0 {
            return Err(Error::param("k-means restarts and iterations must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub graph: SkeletonGraph,
    pub leftover: Vec<ClusterNode>,
    /// Per point of the input tree cloud.
    pub labeling: BranchLabeling,
    pub trunk_points: Vec<usize>,
    /// Number of branch clusters requested from k-means.
    pub k: usize,
}

impl Skeleton {
    pub fn to_doc(&self) -> SkeletonDoc {
        SkeletonDoc::from_graph(&self.graph, Some(&self.labeling))
    }
}

/// Runs trunk extraction, slicing, branch clustering, adjacency, per-trunk
/// shortest paths, merging and labeling on a cloud of tree points.
pub fn skeletonize(cloud: &PointCloud, cyl: &CylinderModel, params: &SkeletonParams) -> Result<Skeleton> {
    params.validate()?;
    if cloud.is_empty() {
        return Err(Error::data("tree cloud is empty"));
    }
    let trunk_points = extract_trunk_points(cloud, cyl, params.trunk_dist, params.trunk_link)?;
    let mut nodes = slice_trunk(cloud, &trunk_points, cyl);
    let mut is_trunk = vec![false; cloud.len()];
    for &i in &trunk_points {
        is_trunk[i] = true;
    }
    let branch: Vec<usize> = (0..cloud.len()).filter(|&i| !is_trunk[i]).collect();
    let mut k = 0;
    if !branch.is_empty() {
        let sub = cloud.select(&branch);
        k = cluster_count(&sub, params.voxel_size, params.clusters_per_100_voxels)?.min(branch.len());
        let res = kmeans(
            &sub.positions(),
            &KMeansParams {
                k,
                max_iterations: params.kmeans_max_iterations,
                restarts: params.kmeans_restarts,
                seed: params.seed,
            },
        )?;
        let mut members = vec![Vec::new(); k];
        for (i, &a) in res.assignment.iter().enumerate() {
            members[a].push(branch[i]);
        }
        for m in members.into_iter().filter(|m| !m.is_empty()) {
            let centroid = cloud.centroid_of(&m);
            nodes.push(ClusterNode { id: 0, kind: NodeKind::Branch, centroid, member_ids: m, slice_index: None });
        }
    }
    for (i, n) in nodes.iter_mut().enumerate() {
        n.id = i;
    }
    let trunk_ids: Vec<usize> = (0..nodes.len()).filter(|&i| nodes[i].kind == NodeKind::Trunk).collect();
    let adj = build_adjacency(cloud, &nodes, params.edge_max)?;
    let trees = shortest_path_trees(&adj, &trunk_ids);
    let MergeResult { graph, leftover } = merge_graphs(&nodes, &adj, &trees)?;
    let labeling = assign_branch_labels(&graph, cloud.len(), params.lb_min_fraction);
    Ok(Skeleton { graph, leftover, labeling, trunk_points, k })
}
