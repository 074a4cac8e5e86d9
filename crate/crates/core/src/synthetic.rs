//! Deterministic synthetic trees with known skeleton, branch labels and
//! semantic classes.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::classifier::{ClassCode, CLASS_FIELD};
use crate::cloud::{save_cloud, CloudFormat, Point3, PointCloud, ScalarField};
use crate::error::{Error, Result};
use crate::geometry::orthonormal_basis;
use crate::skeleton::{write_labels_csv, BranchLabel, EdgeDoc, NodeDoc, NodeKind, SkeletonDoc};

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;
/// Minimum gap kept between axes of unrelated branches (m).
const CLEARANCE: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hole {
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeSpec {
    pub seed: u64,
    pub trunk_height: f64,
    pub trunk_radius: f64,
    pub leading_branch_count: usize,
    pub leading_branch_length: f64,
    pub leading_branch_radius: f64,
    /// Branch angle from the parent axis (from vertical for leading branches).
    pub branch_angle_range_deg: [f64; 2],
    /// Levels of branches below the trunk; 1 means leading branches only.
    pub recursion_depth: usize,
    pub child_branch_count_range: [usize; 2],
    /// Radius ratio child/parent.
    pub radius_decay: f64,
    /// Length ratio child/parent.
    pub length_decay: f64,
    /// Short shoots on the lower trunk.
    pub small_branch_count: usize,
    /// Thin side twigs per branch (class minor).
    pub twigs_per_branch: usize,
    pub twig_radius: f64,
    /// Points per square metre of bark.
    pub point_density: f64,
    pub noise_sigma: f64,
    /// Radius of the ground disk around the trunk.
    pub ground_extent: f64,
    pub ground_density: f64,
    pub sky_noise_count: usize,
    pub holes: Vec<Hole>,
}

impl Default for TreeSpec {
    fn default() -> Self {
        TreeSpec {
            seed: 1,
            trunk_height: 1.8,
            trunk_radius: 0.07,
            leading_branch_count: 5,
            leading_branch_length: 1.0,
            leading_branch_radius: 0.0175,
            branch_angle_range_deg: [50.0, 75.0],
            recursion_depth: 2,
            child_branch_count_range: [2, 3],
            radius_decay: 0.6,
            length_decay: 0.45,
            small_branch_count: 2,
            twigs_per_branch: 2,
            twig_radius: 0.004,
            point_density: 60_000.0,
            noise_sigma: 0.002,
            ground_extent: 1.5,
            ground_density: 4_000.0,
            sky_noise_count: 1_500,
            holes: Vec::new(),
        }
    }
}

impl TreeSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.trunk_height > 0.0) && self.leading_branch_count == 0 {
            return Err(Error::param("degenerate tree: no height and no branches"));
        }
        let positive = [
            ("trunk_height", self.trunk_height),
            ("trunk_radius", self.trunk_radius),
            ("leading_branch_length", self.leading_branch_length),
            ("leading_branch_radius", self.leading_branch_radius),
            ("twig_radius", self.twig_radius),
            ("point_density", self.point_density),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("noise_sigma", self.noise_sigma),
            ("ground_extent", self.ground_extent),
            ("ground_density", self.ground_density),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(format!("{name} must be non-negative, got {v}")));
            }
        }
        for (name, v) in [("radius_decay", self.radius_decay), ("length_decay", self.length_decay)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::param(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        let [a0, a1] = self.branch_angle_range_deg;
        if !(0.0 < a0 && a0 <= a1 && a1 < 90.0) {
            return Err(Error::param(format!("branch angle range must satisfy 0 < min <= max < 90, got [{a0}, {a1}]")));
        }
        let [c0, c1] = self.child_branch_count_range;
        if c0 > c1 {
            return Err(Error::param(format!("child branch count range [{c0}, {c1}] is reversed")));
        }
        if self.recursion_depth == 0 && self.leading_branch_count > 0 {
            return Err(Error::param("recursion_depth must be at least 1 when leading branches exist"));
        }
        for h in &self.holes {
            if !(h.radius > 0.0) {
                return Err(Error::param(format!("hole radius must be positive, got {}", h.radius)));
            }
        }
        Ok(())
    }
}

/// Generated cloud with everything known about it.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Colored points with integer fields `class`, `branch_id` and `segment_id`.
    pub cloud: PointCloud,
    pub reference: SkeletonDoc,
    pub labels: Vec<BranchLabel>,
    pub n_leading: usize,
    pub classes: Vec<ClassCode>,
}

impl GroundTruth {
    /// Writes `<stem>.ply`, `<stem>_skeleton.json` and `<stem>_labels.csv`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_cloud(&self.cloud, &dir.join(format!("{stem}.ply")), CloudFormat::PlyAscii)?;
        self.reference.save(&dir.join(format!("{stem}_skeleton.json")))?;
        write_labels_csv(&dir.join(format!("{stem}_labels.csv")), &self.cloud.source_ids(), &self.labels, self.n_leading)
    }
}

#[derive(Debug, Clone)]
struct Segment {
    start: Vector3<f64>,
    dir: Vector3<f64>,
    length: f64,
    radius: f64,
    /// Axis parameter where the surface leaves the parent.
    sample_from: f64,
    label: BranchLabel,
    class: ClassCode,
    parent: Option<usize>,
    /// Parent axis parameter of the reference fork node.
    fork_t: f64,
    level: usize,
}

impl Segment {
    fn at(&self, t: f64) -> Vector3<f64> {
        self.start + self.dir * t
    }

    fn end(&self) -> Vector3<f64> {
        self.at(self.length)
    }

    /// Strictly inside the finite solid cylinder.
    fn contains(&self, p: &Vector3<f64>) -> bool {
        let t = (p - self.start).dot(&self.dir);
        if !(0.0..=self.length).contains(&t) {
            return false;
        }
        (p - self.at(t)).norm() < self.radius
    }

    fn area(&self) -> f64 {
        TAU * self.radius * (self.length - self.sample_from).max(0.0)
    }
}

fn segment_distance(a: &Segment, b: &Segment) -> f64 {
    let steps = |s: &Segment| ((s.length - s.sample_from) / 0.02).ceil().max(1.0) as usize;
    let (na, nb) = (steps(a), steps(b));
    let mut best = f64::INFINITY;
    for i in 0..=na {
        let p = a.at(a.sample_from + (a.length - a.sample_from) * i as f64 / na as f64);
        for j in 0..=nb {
            let q = b.at(b.sample_from + (b.length - b.sample_from) * j as f64 / nb as f64);
            best = best.min((p - q).norm());
        }
    }
    best
}


/// Direction at angle `theta` from `axis`, rotated `psi` around it.
fn tilt(axis: &Vector3<f64>, theta: f64, psi: f64) -> Vector3<f64> {
    let (u, v) = orthonormal_basis(axis);
    (axis * theta.cos() + (u * psi.cos() + v * psi.sin()) * theta.sin()).normalize()
}

fn child_segment(
    parent: &Segment,
    parent_id: usize,
    t: f64,
    theta: f64,
    psi: f64,
    length: f64,
    radius: f64,
    label: BranchLabel,
    class: ClassCode,
) -> Segment {
    let dir = tilt(&parent.dir, theta, psi);
    let sample_from = parent.radius / theta.sin();
    Segment {
        start: parent.at(t),
        dir,
        length: length + sample_from,
        radius,
        sample_from,
        label,
        class,
        parent: Some(parent_id),
        fork_t: t + sample_from * theta.cos(),
        level: parent.level + 1,
    }
}

fn build_segments(spec: &TreeSpec, rng: &mut ChaCha8Rng) -> Vec<Segment> {
    let h = spec.trunk_height;
    let mut segs = vec![Segment {
        start: Vector3::zeros(),
        dir: Vector3::z(),
        length: h,
        radius: spec.trunk_radius,
        sample_from: 0.0,
        label: BranchLabel::Trunk,
        class: ClassCode::Major,
        parent: None,
        fork_t: 0.0,
        level: 0,
    }];
    let [a0, a1] = spec.branch_angle_range_deg.map(f64::to_radians);
    let n = spec.leading_branch_count;
    let phi0 = rng.random::<f64>() * TAU;
    // Leading branches, placed with collision retries.
    for i in 0..n {
        let frac = if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
        let mut best: Option<(f64, Segment)> = None;
        for attempt in 0..30 {
            let z = h * (0.55 + 0.35 * frac) + (rng.random::<f64>() - 0.5) * 0.02 * h;
            let theta = rng.random_range(a0..=a1);
            let psi = phi0 + GOLDEN_ANGLE * i as f64 + if attempt == 0 { 0.0 } else { (rng.random::<f64>() - 0.5) * 0.6 };
            let len = spec.leading_branch_length * rng.random_range(0.85..1.15);
            let s = child_segment(&segs[0], 0, z, theta, psi, len, spec.leading_branch_radius, BranchLabel::Leading(i + 1), ClassCode::Major);
            let gap = gap_to_others(&segs, &s);
            if gap >= CLEARANCE {
                best = Some((gap, s));
                break;
            }
            if best.as_ref().is_none_or(|b| gap > b.0) {
                best = Some((gap, s));
            }
        }
        segs.push(best.unwrap().1);
    }
    // Sub-branches, level by level.
    for level in 1..spec.recursion_depth {
        let parents: Vec<usize> = (0..segs.len()).filter(|&s| segs[s].level == level && segs[s].class == ClassCode::Major).collect();
        for p in parents {
            let [c0, c1] = spec.child_branch_count_range;
            let c = rng.random_range(c0..=c1);
            let psi0 = rng.random::<f64>() * TAU;
            let usable = segs[p].length - segs[p].sample_from;
            for j in 0..c {
                let mut best: Option<(f64, Segment)> = None;
                for _ in 0..30 {
                    let t = segs[p].sample_from + usable * (0.3 + 0.5 * (j as f64 + 0.5) / c as f64) + (rng.random::<f64>() - 0.5) * 0.04 * usable;
                    let theta = rng.random_range(a0..=a1);
                    let psi = psi0 + GOLDEN_ANGLE * j as f64 + (rng.random::<f64>() - 0.5) * 0.8;
                    let len = usable * spec.length_decay * rng.random_range(0.85..1.15);
                    let r = segs[p].radius * spec.radius_decay;
                    let s = child_segment(&segs[p], p, t, theta, psi, len, r, segs[p].label, ClassCode::Major);
                    let gap = gap_to_others(&segs, &s);
                    if gap >= CLEARANCE {
                        best = Some((gap, s));
                        break;
                    }
                    if best.as_ref().is_none_or(|b| gap > b.0) {
                        best = Some((gap, s));
                    }
                }
                segs.push(best.unwrap().1);
            }
        }
    }
    // Small trunk shoots.
    for k in 0..spec.small_branch_count {
        let frac = (k as f64 + 0.5) / spec.small_branch_count as f64;
        let z = h * (0.2 + 0.25 * frac);
        let theta = rng.random_range(60f64..80.0).to_radians();
        let psi = rng.random::<f64>() * TAU;
        let len = rng.random_range(0.15..0.25);
        let r = (spec.leading_branch_radius * 0.5).max(spec.twig_radius * 1.5);
        segs.push(child_segment(&segs[0], 0, z, theta, psi, len, r, BranchLabel::Small, ClassCode::Major));
    }
    // Twigs on every branch below the trunk.
    let hosts: Vec<usize> = (1..segs.len()).filter(|&s| segs[s].class == ClassCode::Major && segs[s].label != BranchLabel::Small).collect();
    for p in hosts {
        let usable = segs[p].length - segs[p].sample_from;
        for _ in 0..spec.twigs_per_branch {
            let t = segs[p].sample_from + usable * rng.random_range(0.15..0.95);
            let theta = rng.random_range(40f64..80.0).to_radians();
            let psi = rng.random::<f64>() * TAU;
            let len = rng.random_range(0.05..0.12);
            segs.push(child_segment(&segs[p], p, t, theta, psi, len, spec.twig_radius, BranchLabel::Rest, ClassCode::Minor));
        }
    }
    segs
}

fn gap_to_others(segs: &[Segment], s: &Segment) -> f64 {
    let mut gap = f64::INFINITY;
    for (i, o) in segs.iter().enumerate() {
        if Some(i) == s.parent || o.class != ClassCode::Major {
            continue;
        }
        gap = gap.min(segment_distance(o, s) - o.radius - s.radius);
    }
    gap
}

fn sample_noise(rng: &mut ChaCha8Rng, normal: &Normal<f64>, sigma: f64) -> Vector3<f64> {
    if sigma <= 0.0 {
        return Vector3::zeros();
    }
    loop {
        let n = Vector3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
        if n.norm() <= 4.0 * sigma {
            return n;
        }
    }
}

fn jitter_color(rng: &mut ChaCha8Rng, base: [i32; 3], spread: i32) -> [u8; 3] {
    base.map(|c| (c + rng.random_range(-spread..=spread)).clamp(0, 255) as u8)
}

struct Builder {
    points: Vec<Point3>,
    class: Vec<i64>,
    label: Vec<BranchLabel>,
    segment: Vec<i64>,
}

impl Builder {
    fn push(&mut self, p: Vector3<f64>, rgb: [u8; 3], class: ClassCode, label: BranchLabel, segment: i64) {
        self.points.push(Point3::from_vec(&p).with_color(rgb));
        self.class.push(class as i64);
        self.label.push(label);
        self.segment.push(segment);
    }
}

fn reference_graph(segs: &[Segment]) -> SkeletonDoc {
    // Axis nodes per segment as (axis parameter, position, label).
    let mut on_axis: Vec<Vec<(f64, Vector3<f64>)>> = segs.iter().map(|s| vec![(s.length, s.end())]).collect();
    on_axis[0].push((0.0, Vector3::zeros()));
    let mut attach_of = vec![(0usize, 0.0f64); segs.len()];
    for (i, s) in segs.iter().enumerate() {
        if let (Some(p), ClassCode::Major) = (s.parent, s.class) {
            let t = s.fork_t.min(segs[p].length);
            on_axis[p].push((t, segs[p].at(t)));
            attach_of[i] = (p, t);
        }
    }
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut node_at: Vec<Vec<(f64, usize)>> = vec![Vec::new(); segs.len()];
    for (si, s) in segs.iter().enumerate() {
        if s.class != ClassCode::Major {
            continue;
        }
        on_axis[si].sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(t, p) in &on_axis[si] {
            let id = nodes.len();
            nodes.push(NodeDoc {
                id,
                kind: if si == 0 { NodeKind::Trunk } else { NodeKind::Branch },
                slice_index: None,
                centroid: [p.x, p.y, p.z],
                n_points: 0,
                parent_id: None,
                label: Some(s.label.to_string()),
            });
            node_at[si].push((t, id));
        }
    }
    let mut link = |nodes: &mut Vec<NodeDoc>, child: usize, parent: usize| {
        let (a, b) = (Vector3::from(nodes[child].centroid), Vector3::from(nodes[parent].centroid));
        nodes[child].parent_id = Some(parent);
        edges.push(EdgeDoc { child, parent, length_m: (a - b).norm() });
    };
    for (si, s) in segs.iter().enumerate() {
        if s.class != ClassCode::Major {
            continue;
        }
        let chain = &node_at[si];
        if si > 0 {
            let (p, t) = attach_of[si];
            let parent = node_at[p].iter().find(|x| x.0 == t).expect("attachment node").1;
            link(&mut nodes, chain[0].1, parent);
        }
        for w in chain.windows(2) {
            link(&mut nodes, w[1].1, w[0].1);
        }
    }
    edges.sort_by_key(|e| e.child);
    SkeletonDoc { root_id: 0, leading_branches: None, nodes, edges }
}

/// Samples a tree from `spec`. Identical specs give identical output.
pub fn generate_tree(spec: &TreeSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let segs = build_segments(spec, &mut rng);
    let sigma = spec.noise_sigma;
    let normal = Normal::new(0.0, sigma.max(1e-12)).unwrap();
    let mut b = Builder { points: Vec::new(), class: Vec::new(), label: Vec::new(), segment: Vec::new() };
    let children: Vec<Vec<usize>> =
        (0..segs.len()).map(|i| (0..segs.len()).filter(|&j| segs[j].parent == Some(i)).collect()).collect();
    for (si, s) in segs.iter().enumerate() {
        let count = (s.area() * spec.point_density).round() as usize;
        let (u, v) = orthonormal_basis(&s.dir);
        let base = if s.class == ClassCode::Minor { [105, 95, 60] } else { [95, 72, 52] };
        for _ in 0..count {
            let t = rng.random_range(s.sample_from..=s.length);
            let phi = rng.random::<f64>() * TAU;
            let surf = s.at(t) + (u * phi.cos() + v * phi.sin()) * s.radius;
            let noise = sample_noise(&mut rng, &normal, sigma);
            let rgb = jitter_color(&mut rng, base, 12);
            let hidden = s.parent.is_some_and(|p| segs[p].contains(&surf)) || children[si].iter().any(|&c| segs[c].contains(&surf));
            if hidden || surf.z < 0.0 {
                continue;
            }
            b.push(surf + noise, rgb, s.class, s.label, si as i64);
        }
    }
    let n_tree = b.points.len();
    // Ground disk.
    let area = PI * spec.ground_extent * spec.ground_extent;
    let n_ground = (area * spec.ground_density).round() as usize;
    for _ in 0..n_ground {
        let r = spec.ground_extent * rng.random::<f64>().sqrt();
        let phi = rng.random::<f64>() * TAU;
        let noise = sample_noise(&mut rng, &normal, sigma);
        let rgb = jitter_color(&mut rng, [75, 100, 45], 20);
        if r <= spec.trunk_radius {
            continue;
        }
        b.push(Vector3::new(r * phi.cos(), r * phi.sin(), 0.0) + noise, rgb, ClassCode::Ground, BranchLabel::Rest, -1);
    }
    // Sky noise: mostly mixed pixels just off the bark, some scattered in the crown.
    if n_tree > 0 {
        let (lo, hi) = bounds(&b.points[..n_tree]);
        for k in 0..spec.sky_noise_count {
            let p = if k % 10 < 7 {
                let host = b.points[rng.random_range(0..n_tree)].pos();
                let d = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                host + d.normalize() * rng.random_range(0.01..0.04)
            } else {
                Vector3::new(rng.random_range(lo.x..=hi.x), rng.random_range(lo.y..=hi.y), rng.random_range(lo.z..=hi.z))
            };
            let rgb = jitter_color(&mut rng, [240, 242, 248], 10);
            b.push(p, rgb, ClassCode::Noise, BranchLabel::Rest, -1);
        }
    }
    let n_leading = spec.leading_branch_count;
    let mut reference = reference_graph(&segs);
    reference.leading_branches = Some(n_leading);
    let gt = finish(b, reference, n_leading)?;
    perturb_with_holes(&gt, &spec.holes)
}

fn bounds(points: &[Point3]) -> (Vector3<f64>, Vector3<f64>) {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(&p.pos());
        hi = hi.sup(&p.pos());
    }
    (lo, hi)
}

fn finish(b: Builder, reference: SkeletonDoc, n_leading: usize) -> Result<GroundTruth> {
    let mut cloud = PointCloud::new(b.points);
    for (i, p) in cloud.points_mut().iter_mut().enumerate() {
        p.source_id = i;
    }
    let codes: Vec<i64> = b.label.iter().map(|l| l.code(n_leading)).collect();
    cloud.set_field(CLASS_FIELD, ScalarField::Int(b.class.clone()))?;
    cloud.set_field("branch_id", ScalarField::Int(codes))?;
    cloud.set_field("segment_id", ScalarField::Int(b.segment))?;
    let classes = b.class.iter().map(|&c| ClassCode::from_code(c).unwrap()).collect();
    Ok(GroundTruth { cloud, reference, labels: b.label, n_leading, classes })
}

/// Drops points inside any hole sphere. The reference graph is kept whole.
pub fn perturb_with_holes(gt: &GroundTruth, holes: &[Hole]) -> Result<GroundTruth> {
    for h in holes {
        if !(h.radius > 0.0) {
            return Err(Error::param(format!("hole radius must be positive, got {}", h.radius)));
        }
    }
    let keep: Vec<bool> = gt
        .cloud
        .points()
        .iter()
        .map(|p| {
            !holes.iter().any(|h| {
                let c = Vector3::from(h.center);
                (p.pos() - c).norm() <= h.radius
            })
        })
        .collect();
    let idx: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
    let mut cloud = gt.cloud.select(&idx);
    for (i, p) in cloud.points_mut().iter_mut().enumerate() {
        p.source_id = i;
    }
    Ok(GroundTruth {
        cloud,
        reference: gt.reference.clone(),
        labels: idx.iter().map(|&i| gt.labels[i]).collect(),
        n_leading: gt.n_leading,
        classes: idx.iter().map(|&i| gt.classes[i]).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> TreeSpec {
        TreeSpec { point_density: 8_000.0, ground_density: 500.0, sky_noise_count: 100, ..TreeSpec::default() }
    }

    fn degree_counts(doc: &SkeletonDoc) -> Vec<usize> {
        let mut d = vec![0; doc.nodes.len()];
        for e in &doc.edges {
            d[e.child] += 1;
            d[e.parent] += 1;
        }
        d
    }

    #[test]
    fn bare_trunk() {
        let spec = TreeSpec { leading_branch_count: 0, small_branch_count: 0, ..small_spec() };
        let gt = generate_tree(&spec).unwrap();
        assert_eq!(gt.reference.nodes.len(), 2);
        assert_eq!(gt.reference.edges.len(), 1);
        for (l, c) in gt.labels.iter().zip(&gt.classes) {
            if *c == ClassCode::Major {
                assert_eq!(*l, BranchLabel::Trunk);
            }
        }
    }

    #[test]
    fn degenerate_rejected() {
        let spec = TreeSpec { trunk_height: 0.0, leading_branch_count: 0, ..small_spec() };
        assert!(generate_tree(&spec).is_err());
    }

    #[test]
    fn deterministic() {
        let a = generate_tree(&small_spec()).unwrap();
        let b = generate_tree(&small_spec()).unwrap();
        assert_eq!(a, b);
        let c = generate_tree(&TreeSpec { seed: 2, ..small_spec() }).unwrap();
        assert_ne!(a.cloud, c.cloud);
    }

    #[test]
    fn analytic_fork_count() {
        // n leading branches with c children each, depth 2, s shoots:
        // forks = n + s + n * c
        for (n, c, s) in [(5, 2, 2), (3, 3, 0), (4, 1, 1)] {
            let spec = TreeSpec {
                leading_branch_count: n,
                child_branch_count_range: [c, c],
                small_branch_count: s,
                recursion_depth: 2,
                ..small_spec()
            };
            let gt = generate_tree(&spec).unwrap();
            let forks = degree_counts(&gt.reference).iter().filter(|&&d| d >= 3).count();
            assert_eq!(forks, n + s + n * c, "n={n} c={c} s={s}");
            let leaves = degree_counts(&gt.reference).iter().filter(|&&d| d == 1).count();
            // base, trunk top, every branch tip
            assert_eq!(leaves, 2 + n + s + n * c);
        }
    }

    #[test]
    fn reference_is_a_tree_with_axis_nodes() {
        let gt = generate_tree(&small_spec()).unwrap();
        let doc = &gt.reference;
        doc.validate().unwrap();
        assert_eq!(doc.edges.len(), doc.nodes.len() - 1);
        let roots = doc.nodes.iter().filter(|n| n.parent_id.is_none()).count();
        assert_eq!(roots, 1);
        assert_eq!(doc.nodes[0].centroid, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn points_near_their_segment() {
        let spec = small_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let segs = build_segments(&spec, &mut rng);
        let gt = generate_tree(&spec).unwrap();
        let seg_ids = gt.cloud.int_field("segment_id").unwrap();
        for (p, &s) in gt.cloud.points().iter().zip(seg_ids) {
            if s < 0 {
                continue;
            }
            let seg = &segs[s as usize];
            let q = p.pos();
            let t = (q - seg.start).dot(&seg.dir);
            let d = (q - seg.at(t)).norm();
            assert!(d <= seg.radius + 4.0 * spec.noise_sigma + 1e-12);
            // label follows the segment
            let i = p.source_id;
            assert_eq!(gt.labels[i], seg.label);
        }
    }

    #[test]
    fn classes_present() {
        let gt = generate_tree(&small_spec()).unwrap();
        for c in [ClassCode::Ground, ClassCode::Noise, ClassCode::Major, ClassCode::Minor] {
            assert!(gt.classes.contains(&c), "{c:?}");
        }
        assert!(gt.labels.contains(&BranchLabel::Small));
        assert!(gt.labels.contains(&BranchLabel::Leading(5)));
    }

    #[test]
    fn holes() {
        let gt = generate_tree(&small_spec()).unwrap();
        let far = perturb_with_holes(&gt, &[Hole { center: [50.0, 0.0, 0.0], radius: 1.0 }]).unwrap();
        assert_eq!(far, gt);
        let hole = Hole { center: [0.0, 0.0, 0.9], radius: 0.2 };
        let cut = perturb_with_holes(&gt, &[hole]).unwrap();
        let inside = gt
            .cloud
            .points()
            .iter()
            .filter(|p| (p.pos() - Vector3::new(0.0, 0.0, 0.9)).norm() <= 0.2)
            .count();
        assert!(inside > 0);
        assert_eq!(cut.cloud.len(), gt.cloud.len() - inside);
        assert_eq!(cut.reference, gt.reference);
        assert_eq!(cut.labels.len(), cut.cloud.len());
    }

    #[test]
    fn spec_json() {
        let s: TreeSpec = serde_json::from_str(r#"{"seed": 9, "leading_branch_count": 3}"#).unwrap();
        assert_eq!(s.seed, 9);
        assert_eq!(s.trunk_radius, 0.07);
        assert!(serde_json::from_str::<TreeSpec>(r#"{"sed": 9}"#).is_err());
    }
}
