use super::PointCloud;

const MAX_CELLS: usize = 1 << 23;

/// Uniform-grid acceleration structure for fixed-radius and nearest-neighbor
/// queries. Points are bucketed into cubic cells stored as a dense CSR array
/// over the bounding box. Immutable after construction and `Sync`.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    coords: Vec<[f64; 3]>,
    cell: f64,
    origin: [f64; 3],
    dims: [usize; 3],
    /// `starts[c]..starts[c + 1]` indexes `order` for cell `c`.
    starts: Vec<u32>,
    order: Vec<u32>,
}

impl SpatialIndex {
    /// Builds an index with the requested cell edge length. The edge is
    /// enlarged when the bounding box would need too many cells.
    pub fn new(cloud: &PointCloud, cell_size: f64) -> Self {
        Self::from_coords(cloud.positions(), cell_size)
    }

    pub fn from_coords(coords: Vec<[f64; 3]>, cell_size: f64) -> Self {
        assert!(cell_size > 0.0 && cell_size.is_finite(), "cell size must be positive");
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for c in &coords {
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
        if coords.is_empty() {
            lo = [0.0; 3];
            hi = [0.0; 3];
        }
        let mut cell = cell_size;
        let dims = loop {
            let d = [0, 1, 2].map(|a| ((hi[a] - lo[a]) / cell).floor() as usize + 1);
            if d[0].saturating_mul(d[1]).saturating_mul(d[2]) <= MAX_CELLS {
                break d;
            }
            cell *= 1.5;
        };
        let ncells = dims[0] * dims[1] * dims[2];
        let mut idx = SpatialIndex {
            coords,
            cell,
            origin: lo,
            dims,
            starts: vec![0; ncells + 1],
            order: Vec::new(),
        };
        let keys: Vec<usize> = idx.coords.iter().map(|c| idx.flat(idx.cell_of(c))).collect();
        for &k in &keys {
            idx.starts[k + 1] += 1;
        }
        for c in 0..ncells {
            idx.starts[c + 1] += idx.starts[c];
        }
        let mut fill = idx.starts.clone();
        let mut order = vec![0u32; keys.len()];
        for (i, &k) in keys.iter().enumerate() {
            order[fill[k] as usize] = i as u32;
            fill[k] += 1;
        }
        idx.order = order;
        idx
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    fn cell_of(&self, c: &[f64; 3]) -> [usize; 3] {
        [0, 1, 2].map(|a| {
            let v = ((c[a] - self.origin[a]) / self.cell).floor();
            (v.max(0.0) as usize).min(self.dims[a] - 1)
        })
    }

    fn cell_coord(&self, v: f64, a: usize) -> i64 {
        ((v - self.origin[a]) / self.cell).floor() as i64
    }

    #[inline]
    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    /// Calls `f(index, squared_distance)` for every point with
    /// `||p - q|| <= r`, in cell order.
    pub fn for_each_within<F: FnMut(usize, f64)>(&self, q: [f64; 3], r: f64, mut f: F) {
        if self.coords.is_empty() || r < 0.0 {
            return;
        }
        let r2 = r * r;
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let l = self.cell_coord(q[a] - r, a);
            let h = self.cell_coord(q[a] + r, a);
            if h < 0 || l >= self.dims[a] as i64 {
                return;
            }
            lo[a] = l.max(0) as usize;
            hi[a] = (h as usize).min(self.dims[a] - 1);
        }
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                let row = (z * self.dims[1] + y) * self.dims[0];
                let s = self.starts[row + lo[0]] as usize;
                let e = self.starts[row + hi[0] + 1] as usize;
                for &i in &self.order[s..e] {
                    let p = &self.coords[i as usize];
                    let d2 = dist2(p, &q);
                    if d2 <= r2 {
                        f(i as usize, d2);
                    }
                }
            }
        }
    }

    /// Indices of all points within `r` of `q`, ascending.
    pub fn radius_search(&self, q: [f64; 3], r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(q, r, |i, _| out.push(i));
        out.sort_unstable();
        out
    }

    /// `(index, squared distance)` pairs within `r`, sorted by distance then index.
    pub fn radius_search_sorted(&self, q: [f64; 3], r: f64, out: &mut Vec<(usize, f64)>) {
        out.clear();
        self.for_each_within(q, r, |i, d2| out.push((i, d2)));
        out.sort_unstable_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    }

    pub fn count_within(&self, q: [f64; 3], r: f64) -> usize {
        let mut n = 0;
        self.for_each_within(q, r, |_, _| n += 1);
        n
    }

    /// The `k` nearest points to `q` as `(index, distance)`, closest first.
    /// Ties are broken by lower index.
    pub fn knn(&self, q: [f64; 3], k: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.coords.is_empty() {
            return Vec::new();
        }
        let k = k.min(self.coords.len());
        let center = [0, 1, 2].map(|a| self.cell_coord(q[a], a));
        let mut cand: Vec<(usize, f64)> = Vec::new();
        let max_ring = self.dims.iter().copied().max().unwrap() as i64
            + center.iter().map(|c| c.unsigned_abs() as i64).max().unwrap()
            + 1;
        for ring in 0..=max_ring {
            self.visit_ring(center, ring, |i| {
                cand.push((i, dist2(&self.coords[i], &q)));
            });
            if cand.len() >= k {
                cand.sort_unstable_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                cand.truncate(k);
                // Anything outside rings 0..=ring is at least ring * cell away.
                let reach = ring as f64 * self.cell;
                if cand[k - 1].1 <= reach * reach {
                    break;
                }
            }
        }
        cand.sort_unstable_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        cand.truncate(k);
        cand.into_iter().map(|(i, d2)| (i, d2.sqrt())).collect()
    }

    pub fn nearest(&self, q: [f64; 3]) -> Option<(usize, f64)> {
        self.knn(q, 1).into_iter().next()
    }

    fn visit_ring<F: FnMut(usize)>(&self, center: [i64; 3], ring: i64, mut f: F) {
        let inside = |v: i64, a: usize| v >= 0 && v < self.dims[a] as i64;
        for dz in -ring..=ring {
            let z = center[2] + dz;
            if !inside(z, 2) {
                continue;
            }
            for dy in -ring..=ring {
                let y = center[1] + dy;
                if !inside(y, 1) {
                    continue;
                }
                let on_shell = dz.abs() == ring || dy.abs() == ring;
                let xs: Vec<i64> = if on_shell {
                    (-ring..=ring).collect()
                } else if ring == 0 {
                    vec![0]
                } else {
                    vec![-ring, ring]
                };
                for dx in xs {
                    let x = center[0] + dx;
                    if !inside(x, 0) {
                        continue;
                    }
                    let c = self.flat([x as usize, y as usize, z as usize]);
                    for &i in &self.order[self.starts[c] as usize..self.starts[c + 1] as usize] {
                        f(i as usize);
                    }
                }
            }
        }
    }
}

#[inline]
pub(crate) fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_coords(n: usize, seed: u64) -> Vec<[f64; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>() * 0.3]).collect()
    }

    #[test]
    fn radius_matches_brute_force() {
        let pts = random_coords(700, 3);
        let idx = SpatialIndex::from_coords(pts.clone(), 0.05);
        for (qi, r) in [(0usize, 0.02), (10, 0.1), (50, 0.3), (99, 0.0)] {
            let q = pts[qi];
            let expect: Vec<usize> =
                (0..pts.len()).filter(|&i| dist2(&pts[i], &q) <= r * r).collect();
            assert_eq!(idx.radius_search(q, r), expect);
        }
    }

    #[test]
    fn knn_matches_brute_force() {
        let pts = random_coords(400, 9);
        let idx = SpatialIndex::from_coords(pts.clone(), 0.03);
        let q = [0.5, 0.5, 2.0];
        let mut all: Vec<(usize, f64)> = (0..pts.len()).map(|i| (i, dist2(&pts[i], &q))).collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let got: Vec<usize> = idx.knn(q, 7).into_iter().map(|x| x.0).collect();
        let want: Vec<usize> = all[..7].iter().map(|x| x.0).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn empty_index() {
        let idx = SpatialIndex::from_coords(Vec::new(), 0.1);
        assert!(idx.radius_search([0.0; 3], 1.0).is_empty());
        assert!(idx.nearest([0.0; 3]).is_none());
    }
}
