//! Per-point neighborhood features used by the branch classifier.
//!
//! | column | feature | radius |
//! |---|---|---|
//! | f1-f4 | neighbor count | 2, 4, 8, 15 cm |
//! | f5-f7 | PCA1 (λ1/Σ) | 2, 4, 8 cm |
//! | f8, f9 | PCA2 (λ2/Σ) | 2, 8 cm |
//! | f10-f13 | omnivariance ((λ1λ2λ3)^(1/3)) | 2, 4, 8, 15 cm |
//! | f14, f15 | linearity ((λ1-λ2)/λ1) | 2, 4 cm |
//! | f16 | verticality (1 - \|e3·z\|) | 15 cm |
//! | f17 | planarity ((λ2-λ3)/λ1) | 8 cm |
//! | f18 | normal change rate (mean 1 - \|n·n_i\|) | 8 cm |
//! | f19 | surface variation (λ3/Σ) | 8 cm |
//! | f20 | distance to the trunk cylinder surface | - |
//!
//! Neighborhoods are closed balls around the query point and include it.
//! Covariances are population covariances. Neighborhoods with fewer than three
//! points report all-zero eigenvalues, and every ratio feature is 0 when its
//! denominator vanishes.

use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use crate::cloud::{Point3, PointCloud, SpatialIndex};
use crate::error::{Error, Result};
use crate::geometry::{point_cylinder_distance, CylinderModel};

pub const N_FEATURES: usize = 20;

/// Search radii in meters, ascending.
pub const RADII: [f64; 4] = [0.02, 0.04, 0.08, 0.15];
const R2: usize = 0;
const R4: usize = 1;
const R8: usize = 2;
const R15: usize = 3;

/// Cell size for indices that serve feature queries.
pub const INDEX_CELL: f64 = 0.04;

/// Eigen-decomposition of a neighborhood covariance, eigenvalues descending.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborhoodEigen {
    pub lambda: [f64; 3],
    /// Unit eigenvectors matching `lambda`; `vectors[2]` is the surface
    /// normal, oriented to non-negative z.
    pub vectors: [Vector3<f64>; 3],
    pub count: usize,
}

impl NeighborhoodEigen {
    fn degenerate(count: usize) -> Self {
        NeighborhoodEigen {
            lambda: [0.0; 3],
            vectors: [Vector3::x(), Vector3::y(), Vector3::z()],
            count,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.count < 3 || self.lambda[0] <= 0.0
    }

    fn sum(&self) -> f64 {
        self.lambda.iter().sum()
    }

    pub fn pca1(&self) -> f64 {
        ratio(self.lambda[0], self.sum())
    }

    pub fn pca2(&self) -> f64 {
        ratio(self.lambda[1], self.sum())
    }

    pub fn surface_variation(&self) -> f64 {
        ratio(self.lambda[2], self.sum())
    }

    pub fn omnivariance(&self) -> f64 {
        (self.lambda[0] * self.lambda[1] * self.lambda[2]).cbrt()
    }

    pub fn linearity(&self) -> f64 {
        ratio(self.lambda[0] - self.lambda[1], self.lambda[0])
    }

    pub fn planarity(&self) -> f64 {
        ratio(self.lambda[1] - self.lambda[2], self.lambda[0])
    }

    pub fn verticality(&self) -> f64 {
        if self.is_degenerate() {
            0.0
        } else {
            1.0 - self.vectors[2].z.abs()
        }
    }

    pub fn normal(&self) -> Option<Vector3<f64>> {
        (!self.is_degenerate()).then_some(self.vectors[2])
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Running first and second moments of offsets from a reference point.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: usize,
    s: [f64; 3],
    ss: [f64; 6],
}

impl Moments {
    #[inline]
    fn add(&mut self, d: [f64; 3]) {
        self.n += 1;
        for a in 0..3 {
            self.s[a] += d[a];
        }
        self.ss[0] += d[0] * d[0];
        self.ss[1] += d[0] * d[1];
        self.ss[2] += d[0] * d[2];
        self.ss[3] += d[1] * d[1];
        self.ss[4] += d[1] * d[2];
        self.ss[5] += d[2] * d[2];
    }

    fn merge(&mut self, o: &Moments) {
        self.n += o.n;
        for a in 0..3 {
            self.s[a] += o.s[a];
        }
        for a in 0..6 {
            self.ss[a] += o.ss[a];
        }
    }

    fn eigen(&self) -> NeighborhoodEigen {
        if self.n < 3 {
            return NeighborhoodEigen::degenerate(self.n);
        }
        let n = self.n as f64;
        let m = [self.s[0] / n, self.s[1] / n, self.s[2] / n];
        let c = |k: usize, i: usize, j: usize| self.ss[k] / n - m[i] * m[j];
        let cov = Matrix3::new(
            c(0, 0, 0), c(1, 0, 1), c(2, 0, 2),
            c(1, 0, 1), c(3, 1, 1), c(4, 1, 2),
            c(2, 0, 2), c(4, 1, 2), c(5, 2, 2),
        );
        decompose(cov, self.n)
    }
}

fn decompose(cov: Matrix3<f64>, count: usize) -> NeighborhoodEigen {
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lambda = order.map(|k| eig.eigenvalues[k].max(0.0));
    let mut vectors = order.map(|k| eig.eigenvectors.column(k).into_owned());
    if vectors[2].z < 0.0 {
        vectors[2] = -vectors[2];
    }
    NeighborhoodEigen { lambda, vectors, count }
}

/// Covariance eigen-decomposition of all indexed points within `r` of `p`.
pub fn eigen_features(index: &SpatialIndex, p: &Point3, r: f64) -> NeighborhoodEigen {
    let q = p.coords();
    let mut m = Moments::default();
    index.for_each_within(q, r, |i, _| {
        let c = index.coords()[i];
        m.add([c[0] - q[0], c[1] - q[1], c[2] - q[2]]);
    });
    m.eigen()
}

/// Neighborhood decompositions at all four radii from one 15 cm search.
fn multi_scale(index: &SpatialIndex, q: [f64; 3]) -> [NeighborhoodEigen; 4] {
    let r2 = RADII.map(|r| r * r);
    let mut shells = [Moments::default(); 4];
    index.for_each_within(q, RADII[R15], |i, d2| {
        let c = index.coords()[i];
        let d = [c[0] - q[0], c[1] - q[1], c[2] - q[2]];
        let shell = if d2 <= r2[R2] {
            R2
        } else if d2 <= r2[R4] {
            R4
        } else if d2 <= r2[R8] {
            R8
        } else {
            R15
        };
        shells[shell].add(d);
    });
    let mut acc = Moments::default();
    let mut out = [NeighborhoodEigen::degenerate(0); 4];
    for k in 0..4 {
        acc.merge(&shells[k]);
        out[k] = acc.eigen();
    }
    out
}

/// One row of the feature matrix, `f1..f20` at indices 0..20.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; N_FEATURES]);

impl FeatureVector {
    /// Feature `f<k>` with 1-based `k`.
    pub fn f(&self, k: usize) -> f64 {
        self.0[k - 1]
    }

    pub fn verticality(&self) -> f64 {
        self.0[15]
    }

    pub fn cylinder_distance(&self) -> f64 {
        self.0[19]
    }
}

fn assemble(ms: &[NeighborhoodEigen; 4], ncr: f64, cyl_dist: f64) -> FeatureVector {
    FeatureVector([
        ms[R2].count as f64,
        ms[R4].count as f64,
        ms[R8].count as f64,
        ms[R15].count as f64,
        ms[R2].pca1(),
        ms[R4].pca1(),
        ms[R8].pca1(),
        ms[R2].pca2(),
        ms[R8].pca2(),
        ms[R2].omnivariance(),
        ms[R4].omnivariance(),
        ms[R8].omnivariance(),
        ms[R15].omnivariance(),
        ms[R2].linearity(),
        ms[R4].linearity(),
        ms[R15].verticality(),
        ms[R8].planarity(),
        ncr,
        ms[R8].surface_variation(),
        cyl_dist,
    ])
}

fn normal_change_rate(
    index: &SpatialIndex,
    q: [f64; 3],
    own: Option<Vector3<f64>>,
    normal_of: impl Fn(usize) -> Option<Vector3<f64>>,
) -> f64 {
    let Some(n0) = own else { return 0.0 };
    let (mut sum, mut cnt) = (0.0, 0usize);
    index.for_each_within(q, RADII[R8], |i, _| {
        if let Some(ni) = normal_of(i) {
            sum += 1.0 - n0.dot(&ni).abs();
            cnt += 1;
        }
    });
    if cnt == 0 {
        0.0
    } else {
        sum / cnt as f64
    }
}

/// Features of a single point against an index built over its cloud.
pub fn compute_feature_vector(index: &SpatialIndex, p: &Point3, trunk: &CylinderModel) -> FeatureVector {
    let q = p.coords();
    let ms = multi_scale(index, q);
    let ncr = normal_change_rate(index, q, ms[R8].normal(), |i| {
        multi_scale(index, index.coords()[i])[R8].normal()
    });
    assemble(&ms, ncr, point_cylinder_distance(p, trunk))
}

/// Dense `n x 20` feature matrix, rows in point order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMatrix {
    pub rows: Vec<FeatureVector>,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.0.to_vec()).collect()
    }

    /// CSV with header `f1..f20`, optionally followed by a `label` column.
    pub fn write_csv(&self, path: &Path, labels: Option<&[i64]>) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let write = |w: &mut std::io::BufWriter<std::fs::File>| -> std::io::Result<()> {
            let mut header: Vec<String> = (1..=N_FEATURES).map(|k| format!("f{k}")).collect();
            if labels.is_some() {
                header.push("label".into());
            }
            writeln!(w, "{}", header.join(","))?;
            for (i, row) in self.rows.iter().enumerate() {
                let mut cells: Vec<String> = row.0.iter().map(|v| format!("{v:?}")).collect();
                if let Some(l) = labels {
                    cells.push(l[i].to_string());
                }
                writeln!(w, "{}", cells.join(","))?;
            }
            w.flush()
        };
        write(&mut w).map_err(|e| Error::io(path, e))
    }
}

/// Features for every point of the cloud. Parallel over points; results do
/// not depend on thread count.
pub fn compute_all_features(cloud: &PointCloud, trunk: &CylinderModel) -> Result<FeatureMatrix> {
    if cloud.is_empty() {
        return Err(Error::data("feature computation needs a non-empty cloud"));
    }
    let index = SpatialIndex::new(cloud, INDEX_CELL);
    let scales: Vec<[NeighborhoodEigen; 4]> = (0..cloud.len())
        .into_par_iter()
        .map(|i| multi_scale(&index, index.coords()[i]))
        .collect();
    let rows = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let q = index.coords()[i];
            let ncr = normal_change_rate(&index, q, scales[i][R8].normal(), |j| scales[j][R8].normal());
            assemble(&scales[i], ncr, point_cylinder_distance(cloud.point(i), trunk))
        })
        .collect();
    Ok(FeatureMatrix { rows })
}

/// Verticality at 15 cm for every point (the geometric input of the
/// ground/tree stage).
pub fn verticality_all(cloud: &PointCloud) -> Vec<f64> {
    let index = SpatialIndex::new(cloud, INDEX_CELL);
    (0..cloud.len())
        .into_par_iter()
        .map(|i| eigen_features(&index, cloud.point(i), RADII[R15]).verticality())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CylinderModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn far_cylinder() -> CylinderModel {
        CylinderModel::new(Vector3::new(100.0, 100.0, 0.0), Vector3::z(), 0.1)
    }

    /// Two-pass covariance over an explicit point list.
    fn oracle_eigen(pts: &[[f64; 3]]) -> NeighborhoodEigen {
        if pts.len() < 3 {
            return NeighborhoodEigen::degenerate(pts.len());
        }
        let n = pts.len() as f64;
        let mut mean = Vector3::zeros();
        for p in pts {
            mean += Vector3::from(*p);
        }
        mean /= n;
        let mut cov = Matrix3::zeros();
        for p in pts {
            let d = Vector3::from(*p) - mean;
            cov += d * d.transpose();
        }
        decompose(cov / n, pts.len())
    }

    #[test]
    fn collinear_is_rank_one() {
        let c = PointCloud::from_positions((0..10).map(|i| [i as f64 * 0.01, i as f64 * 0.005, 0.3]));
        let idx = SpatialIndex::new(&c, 0.05);
        let e = eigen_features(&idx, c.point(5), 1.0);
        assert_eq!(e.count, 10);
        assert!(e.lambda[1].abs() < 1e-12 && e.lambda[2].abs() < 1e-12);
        assert!((e.linearity() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn disk_is_rank_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pts = Vec::new();
        while pts.len() < 2000 {
            let (x, y) = (rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0);
            if x * x + y * y <= 1.0 {
                pts.push([x * 0.05, y * 0.05, 0.0]);
            }
        }
        let c = PointCloud::from_positions(pts);
        let idx = SpatialIndex::new(&c, 0.05);
        let e = eigen_features(&idx, &Point3::new(0.0, 0.0, 0.0), 1.0);
        assert!(e.lambda[2].abs() < 1e-12);
        assert!((e.lambda[0] / e.lambda[1] - 1.0).abs() < 0.1, "{:?}", e.lambda);
        assert!(e.verticality() < 1e-9);
    }

    #[test]
    fn isotropic_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Normal::new(0.0, 0.01).unwrap();
        let pts: Vec<[f64; 3]> = (0..5000).map(|_| [0.0; 3].map(|_: f64| g.sample(&mut rng))).collect();
        let c = PointCloud::from_positions(pts.clone());
        let idx = SpatialIndex::new(&c, 0.05);
        let e = eigen_features(&idx, &Point3::new(0.0, 0.0, 0.0), 10.0);
        assert!(e.lambda[0] / e.lambda[2] <= 1.2);
        let o = oracle_eigen(&pts);
        for k in 0..3 {
            assert!((o.lambda[k] - e.lambda[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn vertical_wall_and_horizontal_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // Thin vertical cylinder wall, radius 15 cm.
        let wall = PointCloud::from_positions((0..20000).map(|_| {
            let phi = rng.random::<f64>() * std::f64::consts::TAU;
            [0.15 * phi.cos(), 0.15 * phi.sin(), rng.random::<f64>()]
        }));
        let idx = SpatialIndex::new(&wall, INDEX_CELL);
        let f = compute_feature_vector(&idx, &Point3::new(0.15, 0.0, 0.5), &far_cylinder());
        assert!(f.verticality() > 0.99, "{}", f.verticality());

        let plane = PointCloud::from_positions((0..20000).map(|_| {
            [rng.random::<f64>() * 0.6, rng.random::<f64>() * 0.6, 0.0]
        }));
        let idx = SpatialIndex::new(&plane, INDEX_CELL);
        let f = compute_feature_vector(&idx, &Point3::new(0.3, 0.3, 0.0), &far_cylinder());
        assert!(f.verticality() < 1e-9);
        // Isotropic disk: λ1 ≈ λ2, λ3 = 0, so planarity near its maximum of 1.
        assert!(f.f(17) > 0.8, "{}", f.f(17));
    }

    #[test]
    fn cylinder_distance_feature() {
        let cyl = CylinderModel::new(Vector3::zeros(), Vector3::z(), 0.1);
        let c = crate::geometry::tests_support::noisy_cylinder(0.1, 0.002, 3000, 9);
        let idx = SpatialIndex::new(&c, INDEX_CELL);
        let on = compute_feature_vector(&idx, &Point3::new(0.1, 0.0, 0.5), &cyl);
        assert!(on.cylinder_distance() <= 0.002);
        let off = compute_feature_vector(&idx, &Point3::new(0.2, 0.0, 0.5), &cyl);
        assert!((off.cylinder_distance() - 0.10).abs() < 1e-12);
    }

    #[test]
    fn single_point_cloud() {
        let c = PointCloud::from_positions([[0.0, 0.0, 0.0]]);
        let m = compute_all_features(&c, &far_cylinder()).unwrap();
        let f = m.rows[0];
        for k in 1..=4 {
            assert_eq!(f.f(k), 1.0);
        }
        for k in 5..=19 {
            assert_eq!(f.f(k), 0.0, "f{k}");
        }
        assert!(compute_all_features(&PointCloud::default(), &far_cylinder()).is_err());
    }

    #[test]
    fn batch_matches_pointwise_and_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let c = PointCloud::from_positions((0..500).map(|_| {
            [rng.random::<f64>() * 0.3, rng.random::<f64>() * 0.3, rng.random::<f64>() * 0.1]
        }));
        let cyl = CylinderModel::new(Vector3::new(0.1, 0.1, 0.0), Vector3::z(), 0.05);
        let batch = compute_all_features(&c, &cyl).unwrap();
        let idx = SpatialIndex::new(&c, INDEX_CELL);
        let pts = c.positions();
        let within = |q: &[f64; 3], r: f64| -> Vec<[f64; 3]> {
            pts.iter()
                .filter(|p| (0..3).map(|a| (p[a] - q[a]).powi(2)).sum::<f64>() <= r * r)
                .copied()
                .collect()
        };
        let oracle_normal = |q: &[f64; 3]| oracle_eigen(&within(q, 0.08)).normal();
        for i in (0..c.len()).step_by(7) {
            assert_eq!(batch.rows[i], compute_feature_vector(&idx, c.point(i), &cyl));
            let q = pts[i];
            let e: Vec<NeighborhoodEigen> = RADII.iter().map(|&r| oracle_eigen(&within(&q, r))).collect();
            let n0 = oracle_normal(&q);
            let ncr = match n0 {
                None => 0.0,
                Some(n0) => {
                    let ns: Vec<Vector3<f64>> = within(&q, 0.08).iter().filter_map(oracle_normal).collect();
                    if ns.is_empty() { 0.0 } else { ns.iter().map(|n| 1.0 - n0.dot(n).abs()).sum::<f64>() / ns.len() as f64 }
                }
            };
            let expect = assemble(&[e[0], e[1], e[2], e[3]], ncr, cyl.surface_distance(&Vector3::from(q)));
            for k in 0..N_FEATURES {
                let (a, b) = (batch.rows[i].0[k], expect.0[k]);
                let tol = if (9..13).contains(&k) { 1e-9 } else { 1e-6 };
                assert!((a - b).abs() <= tol, "point {i} f{}: {a} vs {b}", k + 1);
            }
        }
    }

    #[test]
    fn eigen_identities_and_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let pts: Vec<[f64; 3]> = (0..rng.random_range(3..40))
                .map(|_| [rng.random::<f64>(), rng.random::<f64>() * 0.3, rng.random::<f64>() * 0.05])
                .collect();
            let e = oracle_eigen(&pts);
            if e.lambda[0] > 0.0 {
                let s = e.linearity() + e.planarity() + e.lambda[2] / e.lambda[0];
                assert!((s - 1.0).abs() < 1e-9);
                assert!(e.pca1() >= 1.0 / 3.0 - 1e-12 && e.pca1() <= 1.0 + 1e-12);
                assert!(e.pca2() >= -1e-12 && e.pca2() <= 0.5 + 1e-12);
                assert!(e.surface_variation() <= 1.0 / 3.0 + 1e-12);
                assert!(e.pca1() >= e.pca2());
            }
        }
    }
}
