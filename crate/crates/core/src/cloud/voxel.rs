use std::collections::BTreeSet;

use super::PointCloud;
use crate::error::{Error, Result};

/// Set of occupied cubic cells. A point maps to `floor(coord / voxel_size)` per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub voxel_size: f64,
    pub occupied: BTreeSet<[i64; 3]>,
}

impl VoxelGrid {
    pub fn cell_of(&self, p: [f64; 3]) -> [i64; 3] {
        p.map(|c| (c / self.voxel_size).floor() as i64)
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.len()
    }
}

pub fn voxelize(cloud: &PointCloud, voxel_size: f64) -> Result<VoxelGrid> {
    if !(voxel_size > 0.0) {
        return Err(Error::param(format!("voxel size must be positive, got {voxel_size}")));
    }
    let mut grid = VoxelGrid { voxel_size, occupied: BTreeSet::new() };
    for p in cloud.points() {
        let c = grid.cell_of(p.coords());
        grid.occupied.insert(c);
    }
    Ok(grid)
}
