//! Point-cloud representation, file I/O, spatial queries and the generic
//! filters used during preprocessing.

mod color;
mod filter;
mod index;
mod io;
mod voxel;

use std::collections::BTreeMap;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub use color::rgb_to_cielab;
pub use filter::{
    connected_components, keep_largest_component, sor_filter, subsample_min_distance,
};
pub use index::SpatialIndex;
pub use io::{load_cloud, save_cloud, CloudFormat};
pub use voxel::{voxelize, VoxelGrid};

/// A single point. Coordinates are meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub color: Option<[u8; 3]>,
    pub normal: Option<Vector3<f64>>,
    /// Index of the point in the cloud it was originally loaded or generated
    /// into. Survives every filtering stage unchanged.
    pub source_id: usize,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z, color: None, normal: None, source_id: 0 }
    }

    pub fn from_vec(v: &Vector3<f64>) -> Self {
        Point3::new(v.x, v.y, v.z)
    }

    pub fn with_color(mut self, rgb: [u8; 3]) -> Self {
        self.color = Some(rgb);
        self
    }

    #[inline]
    pub fn pos(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    #[inline]
    pub fn set_pos(&mut self, v: &Vector3<f64>) {
        self.x = v.x;
        self.y = v.y;
        self.z = v.z;
    }

    #[inline]
    pub fn coords(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// Per-point attribute column.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarField {
    Int(Vec<i64>),
    Real(Vec<f64>),
}

impl ScalarField {
    pub fn len(&self) -> usize {
        match self {
            ScalarField::Int(v) => v.len(),
            ScalarField::Real(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_int(&self) -> bool {
        matches!(self, ScalarField::Int(_))
    }

    pub fn get_f64(&self, i: usize) -> f64 {
        match self {
            ScalarField::Int(v) => v[i] as f64,
            ScalarField::Real(v) => v[i],
        }
    }

    fn select(&self, idx: &[usize]) -> ScalarField {
        match self {
            ScalarField::Int(v) => ScalarField::Int(idx.iter().map(|&i| v[i]).collect()),
            ScalarField::Real(v) => ScalarField::Real(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Ordered point collection with named per-point scalar fields.
///
/// Every scalar field holds exactly one value per point; the setters enforce it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    fields: BTreeMap<String, ScalarField>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        PointCloud { points, fields: BTreeMap::new() }
    }

    /// Builds a cloud from positions, assigning `source_id` 0..n in order.
    pub fn from_positions<I>(positions: I) -> Self
    where
        I: IntoIterator<Item = [f64; 3]>,
    {
        let points = positions
            .into_iter()
            .enumerate()
            .map(|(i, [x, y, z])| Point3 { source_id: i, ..Point3::new(x, y, z) })
            .collect();
        PointCloud::new(points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    /// Mutable access to the points. The point count cannot change through
    /// this slice, so scalar fields stay aligned.
    pub fn points_mut(&mut self) -> &mut [Point3] {
        &mut self.points
    }

    pub fn point(&self, i: usize) -> &Point3 {
        &self.points[i]
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(Point3::coords).collect()
    }

    pub fn has_color(&self) -> bool {
        !self.points.is_empty() && self.points.iter().all(|p| p.color.is_some())
    }

    pub fn has_normals(&self) -> bool {
        !self.points.is_empty() && self.points.iter().all(|p| p.normal.is_some())
    }

    pub fn fields(&self) -> &BTreeMap<String, ScalarField> {
        &self.fields
    }

    pub fn field(&self, name: &str) -> Option<&ScalarField> {
        self.fields.get(name)
    }

    pub fn int_field(&self, name: &str) -> Option<&[i64]> {
        match self.fields.get(name) {
            Some(ScalarField::Int(v)) => Some(v),
            _ => None,
        }
    }

    pub fn real_field(&self, name: &str) -> Option<&[f64]> {
        match self.fields.get(name) {
            Some(ScalarField::Real(v)) => Some(v),
            _ => None,
        }
    }

    pub fn set_field(&mut self, name: impl Into<String>, field: ScalarField) -> Result<()> {
        let name = name.into();
        if field.len() != self.points.len() {
            return Err(Error::data(format!(
                "field {name:?} has {} values for {} points",
                field.len(),
                self.points.len()
            )));
        }
        self.fields.insert(name, field);
        Ok(())
    }

    pub fn remove_field(&mut self, name: &str) -> Option<ScalarField> {
        self.fields.remove(name)
    }

    /// Sub-cloud of the given point indices, in the given order, carrying every field.
    pub fn select(&self, idx: &[usize]) -> PointCloud {
        PointCloud {
            points: idx.iter().map(|&i| self.points[i].clone()).collect(),
            fields: self.fields.iter().map(|(k, f)| (k.clone(), f.select(idx))).collect(),
        }
    }

    /// Sub-cloud of points where `keep[i]` is true.
    pub fn filter_mask(&self, keep: &[bool]) -> PointCloud {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep[i]).collect();
        self.select(&idx)
    }

    pub fn source_ids(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.source_id).collect()
    }

    /// Coordinate mean of the given point indices.
    pub fn centroid_of(&self, idx: &[usize]) -> Vector3<f64> {
        let mut sum = Vector3::zeros();
        for &i in idx {
            sum += self.points[i].pos();
        }
        sum / idx.len().max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_length_is_enforced() {
        let mut c = PointCloud::from_positions([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert!(c.set_field("class", ScalarField::Int(vec![1])).is_err());
        c.set_field("class", ScalarField::Int(vec![1, 2])).unwrap();
        let s = c.select(&[1]);
        assert_eq!(s.int_field("class"), Some(&[2][..]));
        assert_eq!(s.point(0).source_id, 1);
    }
}
