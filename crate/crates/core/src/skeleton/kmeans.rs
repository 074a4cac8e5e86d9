//! k-means++ seeded Lloyd iterations with Hamerly bounds. The bounds only
//! skip distance computations that cannot change an assignment, so results
//! equal plain Lloyd.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::classifier::derive_seed;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centers: Vec<[f64; 3]>,
    pub assignment: Vec<usize>,
    /// Within-cluster sum of squared distances.
    pub sse: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iterations: usize,
    pub restarts: usize,
    pub seed: u64,
}

#[inline]
fn d2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let (x, y, z) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    x * x + y * y + z * z
}

fn plus_plus(points: &[[f64; 3]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let n = points.len();
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..n)]);
    let mut best: Vec<f64> = points.par_iter().map(|p| d2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in best.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick];
        centers.push(c);
        best.par_iter_mut().zip(points.par_iter()).for_each(|(b, p)| {
            let d = d2(p, &c);
            if d < *b {
                *b = d;
            }
        });
    }
    centers
}

/// Nearest and second-nearest center distances (not squared) and the nearest index.
fn nearest_two(p: &[f64; 3], centers: &[[f64; 3]]) -> (usize, f64, f64) {
    let (mut bi, mut b1, mut b2) = (0, f64::INFINITY, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = d2(p, c);
        if d < b1 {
            b2 = b1;
            b1 = d;
            bi = j;
        } else if d < b2 {
            b2 = d;
        }
    }
    (bi, b1.sqrt(), b2.sqrt())
}

fn lloyd(points: &[[f64; 3]], mut centers: Vec<[f64; 3]>, max_iter: usize) -> KMeansResult {
    let n = points.len();
    let k = centers.len();
    let mut assign = vec![0usize; n];
    let mut upper = vec![0.0f64; n];
    let mut lower = vec![0.0f64; n];
    let init: Vec<(usize, f64, f64)> = points.par_iter().map(|p| nearest_two(p, &centers)).collect();
    for (i, (a, u, l)) in init.into_iter().enumerate() {
        assign[i] = a;
        upper[i] = u;
        lower[i] = l;
    }
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        // Center update, summed in point order.
        let mut sums = vec![[0.0f64; 3]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            for ax in 0..3 {
                sums[a][ax] += p[ax];
            }
            counts[a] += 1;
        }
        let mut moved = vec![0.0f64; k];
        let mut reseeded = false;
        for j in 0..k {
            let new = if counts[j] > 0 {
                sums[j].map(|s| s / counts[j] as f64)
            } else {
                // Empty cluster: move it onto the point worst served by its center.
                reseeded = true;
                let far = (0..n)
                    .max_by(|&a, &b| upper[a].total_cmp(&upper[b]).then(b.cmp(&a)))
                    .unwrap();
                upper[far] = 0.0;
                points[far]
            };
            moved[j] = d2(&centers[j], &new).sqrt();
            centers[j] = new;
        }
        if reseeded {
            // Bounds are stale after a reseed; recompute exactly.
            let fresh: Vec<(usize, f64, f64)> = points.par_iter().map(|p| nearest_two(p, &centers)).collect();
            for (i, (a, u, l)) in fresh.into_iter().enumerate() {
                assign[i] = a;
                upper[i] = u;
                lower[i] = l;
            }
            continue;
        }
        let max_move = moved.iter().cloned().fold(0.0, f64::max);
        let (mut m1, mut m1j, mut m2) = (0.0f64, usize::MAX, 0.0f64);
        for (j, &m) in moved.iter().enumerate() {
            if m > m1 {
                m2 = m1;
                m1 = m;
                m1j = j;
            } else if m > m2 {
                m2 = m;
            }
        }
        // Half the distance from each center to its closest other center.
        let half_sep: Vec<f64> = (0..k)
            .into_par_iter()
            .map(|j| {
                let mut best = f64::INFINITY;
                for (o, c) in centers.iter().enumerate() {
                    if o != j {
                        best = best.min(d2(&centers[j], c));
                    }
                }
                0.5 * best.sqrt()
            })
            .collect();
        let changed: usize = assign
            .par_iter_mut()
            .zip(upper.par_iter_mut())
            .zip(lower.par_iter_mut())
            .zip(points.par_iter())
            .map(|(((a, u), l), p)| {
                *u += moved[*a];
                *l -= if *a == m1j { m2 } else { m1 };
                let bound = l.max(half_sep[*a]);
                if *u <= bound {
                    return 0;
                }
                *u = d2(p, &centers[*a]).sqrt();
                if *u <= bound {
                    return 0;
                }
                let (na, nu, nl) = nearest_two(p, &centers);
                let old = *a;
                *a = na;
                *u = nu;
                *l = nl;
                usize::from(na != old)
            })
            .sum();
        if changed == 0 && max_move == 0.0 {
            break;
        }
        if changed == 0 {
            // Assignments are a fixed point; one more update makes centers exact means.
            let mut sums = vec![[0.0f64; 3]; k];
            let mut counts = vec![0usize; k];
            for (p, &a) in points.iter().zip(&assign) {
                for ax in 0..3 {
                    sums[a][ax] += p[ax];
                }
                counts[a] += 1;
            }
            for j in 0..k {
                if counts[j] > 0 {
                    centers[j] = sums[j].map(|s| s / counts[j] as f64);
                }
            }
            break;
        }
    }
    let sse = points.iter().zip(&assign).map(|(p, &a)| d2(p, &centers[a])).sum();
    KMeansResult { centers, assignment: assign, sse, iterations }
}

/// Best of `restarts` k-means++/Lloyd runs by SSE. Restart `r` is seeded
/// with `derive_seed(seed, r)`.
pub fn kmeans(points: &[[f64; 3]], params: &KMeansParams) -> Result<KMeansResult> {
    let k = params.k;
    if k == 0 {
        return Err(Error::param("k-means needs k >= 1"));
    }
    if k > points.len() {
        return Err(Error::param(format!("k = {k} exceeds the {} points to cluster", points.len())));
    }
    let mut best: Option<KMeansResult> = None;
    for r in 0..params.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, r as u64));
        let init = plus_plus(points, k, &mut rng);
        let res = lloyd(points, init, params.max_iterations.max(1));
        if best.as_ref().is_none_or(|b| res.sse < b.sse) {
            best = Some(res);
        }
    }
    Ok(best.unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(k: usize) -> KMeansParams {
        KMeansParams { k, max_iterations: 100, restarts: 5, seed: 3 }
    }

    #[test]
    fn single_cluster_is_mean() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 3.0]];
        let r = kmeans(&pts, &params(1)).unwrap();
        assert_eq!(r.assignment, vec![0; 4]);
        let c = r.centers[0];
        assert!((c[0] - 0.25).abs() < 1e-12 && (c[1] - 0.5).abs() < 1e-12 && (c[2] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn separated_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pts = Vec::new();
        for b in 0..2 {
            for _ in 0..50 {
                pts.push([b as f64 + rng.random::<f64>() * 0.05, rng.random::<f64>() * 0.05, 0.0]);
            }
        }
        let r = kmeans(&pts, &params(2)).unwrap();
        assert!(r.assignment[..50].iter().all(|&a| a == r.assignment[0]));
        assert!(r.assignment[50..].iter().all(|&a| a == r.assignment[50]));
        assert_ne!(r.assignment[0], r.assignment[50]);
    }

    fn optimum_two_partition(pts: &[[f64; 3]]) -> f64 {
        let n = pts.len();
        let mut opt = f64::INFINITY;
        for mask in 1u32..(1 << (n - 1)) {
            let mut sse = 0.0;
            for side in [true, false] {
                let grp: Vec<&[f64; 3]> = (0..n).filter(|&i| ((mask >> i) & 1 == 1) == side).map(|i| &pts[i]).collect();
                let m = [0, 1, 2].map(|a| grp.iter().map(|p| p[a]).sum::<f64>() / grp.len() as f64);
                sse += grp.iter().map(|p| d2(p, &m)).sum::<f64>();
            }
            opt = opt.min(sse);
        }
        opt
    }

    fn random_eight(seed: u64) -> Vec<[f64; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..8).map(|_| [rng.random(), rng.random(), rng.random()]).collect()
    }

    #[test]
    fn near_optimal_on_eight_points() {
        let pts = random_eight(21);
        let r = kmeans(&pts, &params(2)).unwrap();
        assert!(r.sse <= 1.05 * optimum_two_partition(&pts));
    }

    #[test]
    fn eight_point_optimality_rate() {
        // Lloyd fixed points can be local optima, so the bound is checked as
        // a rate over many instances; no run may be far off.
        let mut hits = 0;
        for trial in 0..400 {
            let pts = random_eight(1000 + trial);
            let opt = optimum_two_partition(&pts);
            let r = kmeans(&pts, &KMeansParams { seed: trial, ..params(2) }).unwrap();
            assert!(r.sse <= 1.5 * opt, "trial {trial}: {} vs {opt}", r.sse);
            hits += usize::from(r.sse <= 1.05 * opt + 1e-12);
        }
        assert!(hits >= 370, "{hits} of 400 within 5%");
    }

    #[test]
    fn clusters_are_non_empty_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<[f64; 3]> = (0..600).map(|_| [rng.random(), rng.random::<f64>() * 0.2, 0.0]).collect();
        let a = kmeans(&pts, &params(40)).unwrap();
        let mut counts = vec![0; 40];
        for &x in &a.assignment {
            counts[x] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0));
        assert_eq!(a, kmeans(&pts, &params(40)).unwrap());
    }

    #[test]
    fn matches_plain_lloyd() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<[f64; 3]> = (0..400).map(|_| [rng.random(), rng.random(), rng.random::<f64>() * 0.1]).collect();
        let mut r = ChaCha8Rng::seed_from_u64(derive_seed(1, 0));
        let init = plus_plus(&pts, 12, &mut r);
        let fast = lloyd(&pts, init.clone(), 100);
        // Reference: textbook Lloyd without bounds.
        let mut centers = init;
        let mut assign = vec![usize::MAX; pts.len()];
        for _ in 0..100 {
            let next: Vec<usize> = pts.iter().map(|p| nearest_two(p, &centers).0).collect();
            if next == assign {
                break;
            }
            assign = next;
            for j in 0..centers.len() {
                let m: Vec<&[f64; 3]> = pts.iter().zip(&assign).filter(|(_, &a)| a == j).map(|(p, _)| p).collect();
                if !m.is_empty() {
                    centers[j] = [0, 1, 2].map(|a| m.iter().map(|p| p[a]).sum::<f64>() / m.len() as f64);
                }
            }
        }
        assert_eq!(fast.assignment, assign);
    }

    #[test]
    fn rejects_k_above_n() {
        assert!(kmeans(&[[0.0; 3]], &params(2)).is_err());
    }
}
