use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_plane_lsq, RansacParams};
use crate::cloud::{PointCloud, ScalarField};
use crate::error::{Error, Result};

/// Plane `{p : normal · p = offset}` with `normal.z >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneModel {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl PlaneModel {
    pub fn new(normal: Vector3<f64>, offset: f64) -> Self {
        let len = normal.norm();
        PlaneModel { normal: normal / len, offset: offset / len }.canonical()
    }

    pub fn through(point: &Vector3<f64>, normal: &Vector3<f64>) -> Self {
        let n = normal.normalize();
        PlaneModel::new(n, n.dot(point))
    }

    fn canonical(self) -> Self {
        if self.normal.z < 0.0 {
            PlaneModel { normal: -self.normal, offset: -self.offset }
        } else {
            self
        }
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// Rotation followed by translation: `p' = rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

fn inliers_of(pts: &[Vector3<f64>], plane: &PlaneModel, thr: f64) -> Vec<usize> {
    (0..pts.len()).filter(|&i| plane.signed_distance(&pts[i]).abs() <= thr).collect()
}

/// RANSAC plane estimation over 3-point hypotheses, refined by total least
/// squares on the winning inlier set. Deterministic for a fixed seed; ties
/// between hypotheses go to the earliest one.
pub fn ransac_plane(cloud: &PointCloud, params: &RansacParams) -> Result<(PlaneModel, Vec<usize>)> {
    params.validate()?;
    let pts: Vec<Vector3<f64>> = cloud.points().iter().map(|p| p.pos()).collect();
    let n = pts.len();
    if n < 3 {
        return Err(Error::Fit(format!("plane needs at least 3 points, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let samples: Vec<[usize; 3]> = (0..params.max_iterations)
        .map(|_| {
            let a = rng.random_range(0..n);
            let mut b = rng.random_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            let mut c = rng.random_range(0..n);
            while c == a || c == b {
                c = rng.random_range(0..n);
            }
            [a, b, c]
        })
        .collect();

    let thr = params.distance_threshold;
    let best = samples
        .par_iter()
        .enumerate()
        .filter_map(|(h, &[a, b, c])| {
            let normal = (pts[b] - pts[a]).cross(&(pts[c] - pts[a]));
            let scale = (pts[b] - pts[a]).norm() * (pts[c] - pts[a]).norm();
            if normal.norm() <= 1e-12 * scale.max(1e-300) {
                return None;
            }
            let plane = PlaneModel::through(&pts[a], &normal);
            let count = pts.iter().filter(|p| plane.signed_distance(p).abs() <= thr).count();
            Some((count, h, plane))
        })
        .reduce_with(|x, y| if y.0 > x.0 || (y.0 == x.0 && y.1 < x.1) { y } else { x });

    let (_, _, hypothesis) =
        best.ok_or_else(|| Error::Fit("every plane sample was degenerate".into()))?;
    let inliers = inliers_of(&pts, &hypothesis, thr);
    let members: Vec<Vector3<f64>> = inliers.iter().map(|&i| pts[i]).collect();
    let refined = match fit_plane_lsq(&members) {
        Some((normal, centroid)) => PlaneModel::through(&centroid, &normal),
        None => hypothesis,
    };
    let inliers = inliers_of(&pts, &refined, thr);
    Ok((refined, inliers))
}

/// Rotates the cloud so the plane normal maps to +Z and translates it so the
/// plane becomes `z = 0`. Stores the resulting height in the `ground_dist` field.
pub fn align_to_ground(cloud: &PointCloud, plane: &PlaneModel) -> (PointCloud, RigidTransform) {
    let n = plane.normal.normalize();
    let rotation = Rotation3::rotation_between(&n, &Vector3::z())
        .unwrap_or_else(|| Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::x()), std::f64::consts::PI))
        .into_inner();
    let transform = RigidTransform { rotation, translation: Vector3::new(0.0, 0.0, -plane.offset) };

    let mut out = cloud.clone();
    for p in out.points_mut() {
        let v = transform.apply(&p.pos());
        p.set_pos(&v);
        if let Some(nrm) = p.normal {
            p.normal = Some(rotation * nrm);
        }
    }
    let heights: Vec<f64> = out.points().iter().map(|p| p.z).collect();
    out.set_field("ground_dist", ScalarField::Real(heights)).expect("one value per point");
    (out, transform)
}
