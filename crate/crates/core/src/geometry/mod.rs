//! RANSAC plane and cylinder estimation, ground alignment and distances to
//! fitted primitives.

mod cylinder;
mod plane;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

pub use cylinder::{fit_trunk_cylinder, point_cylinder_distance, CylinderModel};
pub use plane::{align_to_ground, ransac_plane, PlaneModel, RigidTransform};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    /// Inlier distance in meters.
    pub distance_threshold: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl RansacParams {
    pub fn plane_default(seed: u64) -> Self {
        RansacParams { distance_threshold: 0.010, max_iterations: 1000, seed }
    }

    pub fn cylinder_default(seed: u64) -> Self {
        RansacParams { distance_threshold: 0.010, max_iterations: 2000, seed }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.distance_threshold > 0.0) || self.max_iterations == 0 {
            return Err(Error::param(format!("invalid RANSAC parameters {self:?}")));
        }
        Ok(())
    }
}

/// Uniformly rescales the cloud about the origin so that the fitted trunk's
/// circumference equals `measured_circumference`. Returns the scaled cloud,
/// the rescaled cylinder and the factor applied.
///
/// `measure_height` is where the circumference was taken; the infinite
/// cylinder model makes it informational only, but it must be non-negative.
pub fn scale_by_trunk_circumference(
    cloud: &PointCloud,
    measured_circumference: f64,
    measure_height: f64,
    fitted: &CylinderModel,
) -> Result<(PointCloud, CylinderModel, f64)> {
    if !(measured_circumference > 0.0) || !(fitted.radius > 0.0) || !(measure_height >= 0.0) {
        return Err(Error::param(format!(
            "circumference {measured_circumference}, height {measure_height} and fitted radius {} must be positive",
            fitted.radius
        )));
    }
    let s = measured_circumference / (2.0 * std::f64::consts::PI * fitted.radius);
    let mut out = cloud.clone();
    for p in out.points_mut() {
        let v = p.pos() * s;
        p.set_pos(&v);
    }
    let cyl = CylinderModel {
        axis_point: fitted.axis_point * s,
        axis_dir: fitted.axis_dir,
        radius: fitted.radius * s,
    };
    Ok((out, cyl, s))
}

/// Total least-squares plane through the points: (unit normal, centroid).
pub(crate) fn fit_plane_lsq(points: &[Vector3<f64>]) -> Option<(Vector3<f64>, Vector3<f64>)> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov / n);
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let normal = eig.eigenvectors.column(imin).into_owned().normalize();
    normal.iter().all(|v| v.is_finite()).then_some((normal, centroid))
}

/// Some orthonormal pair spanning the plane orthogonal to unit `d`.
pub(crate) fn orthonormal_basis(d: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if d.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = d.cross(&helper).normalize();
    let v = d.cross(&u);
    (u, v)
}
