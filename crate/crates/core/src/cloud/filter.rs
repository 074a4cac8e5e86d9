use std::collections::HashMap;

use rayon::prelude::*;

use super::index::{dist2, SpatialIndex};
use super::PointCloud;
use crate::error::{Error, Result};

/// Greedy minimum-distance subsampling. Points are visited in ascending
/// `source_id`; a point is kept when no already-kept point lies closer than `d`.
/// The result keeps the input order.
pub fn subsample_min_distance(cloud: &PointCloud, d: f64) -> Result<PointCloud> {
    if !(d > 0.0) {
        return Err(Error::param(format!("subsample distance must be positive, got {d}")));
    }
    let pts = cloud.points();
    let mut visit: Vec<usize> = (0..pts.len()).collect();
    visit.sort_by_key(|&i| pts[i].source_id);

    let key = |c: &[f64; 3]| c.map(|v| (v / d).floor() as i64);
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    let mut keep = vec![false; pts.len()];
    let d2 = d * d;
    for i in visit {
        let c = pts[i].coords();
        let k = key(&c);
        let mut clear = true;
        'search: for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let Some(bucket) = grid.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        if bucket.iter().any(|&j| dist2(&pts[j].coords(), &c) < d2) {
                            clear = false;
                            break 'search;
                        }
                    }
                }
            }
        }
        if clear {
            keep[i] = true;
            grid.entry(k).or_default().push(i);
        }
    }
    Ok(cloud.filter_mask(&keep))
}

/// Statistical outlier removal: drops points whose mean distance to their `k`
/// nearest neighbors exceeds `mean + n_sigma * std` of those means.
pub fn sor_filter(cloud: &PointCloud, k: usize, n_sigma: f64) -> Result<PointCloud> {
    if k == 0 {
        return Err(Error::param("SOR neighbor count must be at least 1"));
    }
    if cloud.len() <= k {
        return Err(Error::param(format!(
            "SOR needs more than k = {k} points, cloud has {}",
            cloud.len()
        )));
    }
    let means = knn_mean_distances(cloud, k);
    let n = means.len() as f64;
    let mean = means.iter().sum::<f64>() / n;
    let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n;
    let threshold = mean + n_sigma * var.sqrt();
    // Relative slack absorbs summation rounding when all means are equal.
    let slack = 1e-12 * mean.abs().max(f64::MIN_POSITIVE);
    let keep: Vec<bool> = means.iter().map(|&m| m <= threshold + slack).collect();
    Ok(cloud.filter_mask(&keep))
}

/// Mean distance from each point to its `k` nearest other points.
pub(crate) fn knn_mean_distances(cloud: &PointCloud, k: usize) -> Vec<f64> {
    let coords = cloud.positions();
    let cell = suggest_cell(&coords, k);
    let index = SpatialIndex::from_coords(coords, cell);
    (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let nn = index.knn(index.coords()[i], k + 1);
            let others: Vec<f64> =
                nn.iter().filter(|(j, _)| *j != i).take(k).map(|(_, d)| *d).collect();
            others.iter().sum::<f64>() / others.len().max(1) as f64
        })
        .collect()
}

/// Grid cell edge giving roughly `k` points per cell for a cloud spread over
/// its bounding box.
fn suggest_cell(coords: &[[f64; 3]], k: usize) -> f64 {
    if coords.len() < 2 {
        return 1.0;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for c in coords {
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    let ext: Vec<f64> = (0..3).map(|a| (hi[a] - lo[a]).max(1e-6)).collect();
    let vol = ext[0] * ext[1] * ext[2];
    let per = vol * (k.max(1) as f64) / coords.len() as f64;
    per.cbrt().clamp(1e-4, ext.iter().cloned().fold(0.0, f64::max))
}

/// Partitions the cloud into groups linked by chains of hops no longer than
/// `link_radius`. Returned as point indices, largest group first (ties by
/// lowest member index), each group ascending.
pub fn connected_components(cloud: &PointCloud, link_radius: f64) -> Result<Vec<Vec<usize>>> {
    if !(link_radius > 0.0) {
        return Err(Error::param(format!("link radius must be positive, got {link_radius}")));
    }
    let index = SpatialIndex::new(cloud, link_radius);
    let mut uf = UnionFind::new(cloud.len());
    for i in 0..cloud.len() {
        index.for_each_within(index.coords()[i], link_radius, |j, _| {
            if j > i {
                uf.union(i, j);
            }
        });
    }
    Ok(uf.groups())
}

/// Keeps only the largest linked component.
pub fn keep_largest_component(cloud: &PointCloud, link_radius: f64) -> Result<PointCloud> {
    let comps = connected_components(cloud, link_radius)?;
    Ok(match comps.first() {
        Some(c) => cloud.select(c),
        None => cloud.clone(),
    })
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), rank: vec![0; n] }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }

    pub(crate) fn groups(&mut self) -> Vec<Vec<usize>> {
        let n = self.parent.len();
        let mut by_root: HashMap<usize, Vec<usize>> = HashMap::new();
        for i in 0..n {
            let r = self.find(i);
            by_root.entry(r).or_default().push(i);
        }
        let mut groups: Vec<Vec<usize>> = by_root.into_values().collect();
        groups.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        groups
    }
}
