use super::{ClusterNode, NodeKind};
use crate::cloud::{connected_components, voxelize, PointCloud};
use crate::error::{Error, Result};
use crate::geometry::{point_cylinder_distance, CylinderModel};

/// Points within `dist` of the cylinder surface, reduced to the component
/// (hops of at most `link`) that contains the lowest candidate.
pub fn extract_trunk_points(cloud: &PointCloud, cyl: &CylinderModel, dist: f64, link: f64) -> Result<Vec<usize>> {
    let cand: Vec<usize> = (0..cloud.len())
        .filter(|&i| point_cylinder_distance(cloud.point(i), cyl) <= dist)
        .collect();
    if cand.is_empty() {
        return Err(Error::Trunk(format!("no points within {dist} m of the trunk cylinder")));
    }
    let sub = cloud.select(&cand);
    let lowest = (0..sub.len())
        .min_by(|&a, &b| sub.point(a).z.total_cmp(&sub.point(b).z).then(a.cmp(&b)))
        .unwrap();
    let comps = connected_components(&sub, link)?;
    let comp = comps.into_iter().find(|c| c.binary_search(&lowest).is_ok()).unwrap();
    Ok(comp.into_iter().map(|i| cand[i]).collect())
}

/// Horizontal slices of height `cyl.radius` starting at the lowest trunk
/// point. The topmost boundary is closed so an extent of exactly `m` slice
/// heights yields `m` slices.
pub fn slice_trunk(cloud: &PointCloud, trunk: &[usize], cyl: &CylinderModel) -> Vec<ClusterNode> {
    if trunk.is_empty() {
        return Vec::new();
    }
    let h = cyl.radius;
    let zs: Vec<f64> = trunk.iter().map(|&i| cloud.point(i).z).collect();
    let z_min = zs.iter().cloned().fold(f64::INFINITY, f64::min);
    let z_max = zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n_slices = (((z_max - z_min) / h) - 1e-9).ceil().max(1.0) as usize;
    let mut slices: Vec<Vec<usize>> = vec![Vec::new(); n_slices];
    for (&i, &z) in trunk.iter().zip(&zs) {
        let k = (((z - z_min) / h).floor() as usize).min(n_slices - 1);
        slices[k].push(i);
    }
    slices
        .into_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(k, mut members)| {
            members.sort_unstable();
            let centroid = cloud.centroid_of(&members);
            ClusterNode { id: 0, kind: NodeKind::Trunk, centroid, member_ids: members, slice_index: Some(k) }
        })
        .collect()
}

/// `max(1, round(per_100 * voxels / 100))` over voxels of size `voxel`.
pub fn cluster_count(cloud: &PointCloud, voxel: f64, per_100: f64) -> Result<usize> {
    let v = voxelize(cloud, voxel)?.occupied_count();
    Ok(cluster_count_for_voxels(v, per_100))
}

pub fn cluster_count_for_voxels(voxels: usize, per_100: f64) -> usize {
    ((per_100 * voxels as f64 / 100.0).round() as usize).max(1)
}
