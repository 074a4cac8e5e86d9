use nalgebra::{Matrix3, Matrix5, Vector2, Vector3, Vector5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{orthonormal_basis, RansacParams};
use crate::cloud::{Point3, PointCloud};
use crate::error::{Error, Result};

const MAX_TILT_DEG: f64 = 15.0;
const MIN_INLIERS: usize = 10;

/// Infinite circular cylinder. `axis_dir.z >= 0`; `axis_point` is the axis
/// point at `z = 0` whenever the axis is not horizontal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylinderModel {
    pub axis_point: Vector3<f64>,
    pub axis_dir: Vector3<f64>,
    pub radius: f64,
}

impl CylinderModel {
    pub fn new(axis_point: Vector3<f64>, axis_dir: Vector3<f64>, radius: f64) -> Self {
        let mut d = axis_dir.normalize();
        if d.z < 0.0 {
            d = -d;
        }
        let mut c = axis_point;
        if d.z > 1e-9 {
            c -= d * (c.z / d.z);
        }
        CylinderModel { axis_point: c, axis_dir: d, radius }
    }

    pub fn axis_distance(&self, p: &Vector3<f64>) -> f64 {
        (p - self.axis_point).cross(&self.axis_dir).norm()
    }

    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        (self.axis_distance(p) - self.radius).abs()
    }
}

/// Unsigned distance from a point to the surface of the infinite cylinder.
pub fn point_cylinder_distance(p: &Point3, cyl: &CylinderModel) -> f64 {
    cyl.surface_distance(&p.pos())
}

fn circle_through(a: Vector2<f64>, b: Vector2<f64>, c: Vector2<f64>) -> Option<(Vector2<f64>, f64)> {
    let d = 2.0 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y));
    let scale = (b - a).norm() * (c - a).norm();
    if d.abs() <= 1e-9 * scale.max(1e-300) {
        return None;
    }
    let (a2, b2, c2) = (a.norm_squared(), b.norm_squared(), c.norm_squared());
    let ux = (a2 * (b.y - c.y) + b2 * (c.y - a.y) + c2 * (a.y - b.y)) / d;
    let uy = (a2 * (c.x - b.x) + b2 * (a.x - c.x) + c2 * (b.x - a.x)) / d;
    let center = Vector2::new(ux, uy);
    Some((center, (a - center).norm()))
}

/// Algebraic (Kåsa) circle fit on 2D points.
fn fit_circle_algebraic(pts: &[Vector2<f64>]) -> Option<(Vector2<f64>, f64)> {
    // Minimize sum (x^2 + y^2 + D x + E y + F)^2.
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    for p in pts {
        let row = Vector3::new(p.x, p.y, 1.0);
        ata += row * row.transpose();
        atb -= row * p.norm_squared();
    }
    let sol = ata.lu().solve(&atb)?;
    let center = Vector2::new(-sol.x / 2.0, -sol.y / 2.0);
    let r2 = center.norm_squared() - sol.z;
    (r2 > 0.0).then(|| (center, r2.sqrt()))
}

fn sum_sq_residuals(pts: &[Vector3<f64>], cyl: &CylinderModel) -> f64 {
    pts.iter().map(|p| (cyl.axis_distance(p) - cyl.radius).powi(2)).sum()
}

/// Levenberg-Marquardt on (axis offset u, v; axis tilt u, v; radius).
pub(crate) fn refine_cylinder(pts: &[Vector3<f64>], start: CylinderModel) -> CylinderModel {
    let mut cyl = start;
    let mut cost = sum_sq_residuals(pts, &cyl);
    let mut lambda = 1e-3;
    for _ in 0..100 {
        let (u, v) = orthonormal_basis(&cyl.axis_dir);
        let mut jtj = Matrix5::<f64>::zeros();
        let mut jtr = Vector5::<f64>::zeros();
        for p in pts {
            let w = p - cyl.axis_point;
            let along = w.dot(&cyl.axis_dir);
            let proj = w - cyl.axis_dir * along;
            let rho = proj.norm();
            if rho < 1e-12 {
                continue;
            }
            let res = rho - cyl.radius;
            let pu = proj.dot(&u) / rho;
            let pv = proj.dot(&v) / rho;
            let j = Vector5::new(-pu, -pv, -along * pu, -along * pv, -1.0);
            jtj += j * j.transpose();
            jtr += j * res;
        }
        let mut improved = false;
        for _ in 0..10 {
            let mut damped = jtj;
            for k in 0..5 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = damped.lu().solve(&(-jtr)) else { break };
            let cand = CylinderModel::new(
                cyl.axis_point + u * step[0] + v * step[1],
                cyl.axis_dir + u * step[2] + v * step[3],
                cyl.radius + step[4],
            );
            let c = sum_sq_residuals(pts, &cand);
            if cand.radius > 0.0 && c < cost {
                let rel = (cost - c) / cost.max(1e-300);
                cyl = cand;
                cost = c;
                lambda = (lambda * 0.3).max(1e-12);
                improved = rel > 1e-14;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    cyl
}

/// RANSAC trunk fit on a ground-aligned cloud. Axis hypotheses are random
/// directions within 15° of vertical; each is paired with a circle through
/// three sampled points projected onto the plane orthogonal to the axis.
/// The best hypothesis is refined on its inliers (algebraic circle, then
/// Levenberg-Marquardt on the full cylinder).
pub fn fit_trunk_cylinder(
    cloud: &PointCloud,
    params: &RansacParams,
    z_range: Option<(f64, f64)>,
) -> Result<CylinderModel> {
    params.validate()?;
    let (z0, z1) = z_range.unwrap_or((0.2, 1.2));
    let pts: Vec<Vector3<f64>> = cloud
        .points()
        .iter()
        .filter(|p| p.z >= z0 && p.z <= z1)
        .map(Point3::pos)
        .collect();
    let n = pts.len();
    if n < MIN_INLIERS {
        return Err(Error::Fit(format!(
            "cylinder needs at least {MIN_INLIERS} points in z {z0}..{z1}, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let cos_max = MAX_TILT_DEG.to_radians().cos();
    let hyps: Vec<(Vector3<f64>, [usize; 3])> = (0..params.max_iterations)
        .map(|_| {
            let cz = cos_max + (1.0 - cos_max) * rng.random::<f64>();
            let phi = std::f64::consts::TAU * rng.random::<f64>();
            let sz = (1.0 - cz * cz).max(0.0).sqrt();
            let dir = Vector3::new(sz * phi.cos(), sz * phi.sin(), cz);
            let idx = [rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n)];
            (dir, idx)
        })
        .collect();

    let thr = params.distance_threshold;
    let best = hyps
        .par_iter()
        .enumerate()
        .filter_map(|(h, (dir, idx))| {
            if idx[0] == idx[1] || idx[1] == idx[2] || idx[0] == idx[2] {
                return None;
            }
            let (u, v) = orthonormal_basis(dir);
            let flat = |p: &Vector3<f64>| Vector2::new(p.dot(&u), p.dot(&v));
            let (c2, r) = circle_through(flat(&pts[idx[0]]), flat(&pts[idx[1]]), flat(&pts[idx[2]]))?;
            if !(r > 1e-3 && r < 5.0) {
                return None;
            }
            let cyl = CylinderModel::new(u * c2.x + v * c2.y, *dir, r);
            let count = pts.iter().filter(|p| cyl.surface_distance(p) <= thr).count();
            Some((count, h, cyl))
        })
        .reduce_with(|x, y| if y.0 > x.0 || (y.0 == x.0 && y.1 < x.1) { y } else { x });

    let (count, _, hypothesis) = best.ok_or_else(|| Error::Fit("no valid cylinder hypothesis".into()))?;
    if count < MIN_INLIERS {
        return Err(Error::Fit(format!("best cylinder hypothesis has only {count} inliers")));
    }

    let mut model = hypothesis;
    for _ in 0..2 {
        let inl: Vec<Vector3<f64>> =
            pts.iter().filter(|p| model.surface_distance(p) <= thr).copied().collect();
        if inl.len() < MIN_INLIERS {
            break;
        }
        let (u, v) = orthonormal_basis(&model.axis_dir);
        let flat: Vec<Vector2<f64>> = inl.iter().map(|p| Vector2::new(p.dot(&u), p.dot(&v))).collect();
        if let Some((c2, r)) = fit_circle_algebraic(&flat) {
            let alg = CylinderModel::new(u * c2.x + v * c2.y, model.axis_dir, r);
            if sum_sq_residuals(&inl, &alg) < sum_sq_residuals(&inl, &model) {
                model = alg;
            }
        }
        model = refine_cylinder(&inl, model);
    }
    Ok(model)
}
