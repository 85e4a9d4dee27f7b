//! Slow, obviously-correct reference implementations for tests.
//!
//! Nothing here shares code with `concept-forge-core`; each routine goes
//! back to the defining formula on raw points.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Points = Vec<Vec<f64>>;

/// Deterministic Gaussian points.
pub fn gaussian_points(seed: u64, n: usize, d: usize) -> Points {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += (a[k] - b[k]) * (a[k] - b[k]);
    }
    s.sqrt()
}

/// Double loop over all ordered pairs.
pub fn pairwise(points: &Points) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            d[i][j] = euclid(&points[i], &points[j]);
        }
    }
    d
}

pub fn centroid(points: &Points, members: &[usize]) -> Vec<f64> {
    let d = points[members[0]].len();
    let mut c = vec![0.0; d];
    for &i in members {
        for k in 0..d {
            c[k] += points[i][k];
        }
    }
    for v in &mut c {
        *v /= members.len() as f64;
    }
    c
}

/// Sum of squared distances to the centroid.
pub fn sse(points: &Points, members: &[usize]) -> f64 {
    let c = centroid(points, members);
    members
        .iter()
        .map(|&i| {
            let e = euclid(&points[i], &c);
            e * e
        })
        .sum()
}

/// Ward linkage between two groups, from the increase in within-group
/// sum of squares: `sqrt(2 * (SSE(a+b) - SSE(a) - SSE(b)))`.
pub fn ward_cost(points: &Points, a: &[usize], b: &[usize]) -> f64 {
    let mut u = a.to_vec();
    u.extend_from_slice(b);
    let inc = sse(points, &u) - sse(points, a) - sse(points, b);
    (2.0 * inc.max(0.0)).sqrt()
}

/// `(left, right, height, size)` with the stepwise-dendrogram id scheme.
pub type OracleMerge = (usize, usize, f64, usize);

/// Ward clustering that recomputes every candidate cost from raw points
/// at every step. O(n^4) or worse; fine for n <= 50.
pub fn naive_ward(points: &Points) -> Vec<OracleMerge> {
    let n = points.len();
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut out = Vec::new();
    let mut next = n;
    while clusters.len() > 1 {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                let cost = ward_cost(points, &clusters[a].1, &clusters[b].1);
                let (ia, ib) = (clusters[a].0, clusters[b].0);
                let key = (ia.min(ib), ia.max(ib));
                let better = match best {
                    None => true,
                    Some((bc, lo, hi, _, _)) => cost < bc || (cost == bc && key < (lo, hi)),
                };
                if better {
                    best = Some((cost, key.0, key.1, a, b));
                }
            }
        }
        let (cost, lo, hi, a, b) = best.unwrap();
        let mut members = clusters[a].1.clone();
        members.extend_from_slice(&clusters[b].1);
        let size = members.len();
        clusters.remove(b);
        clusters.remove(a);
        clusters.push((next, members));
        out.push((lo, hi, cost, size));
        next += 1;
    }
    out
}

/// Flat clusters from applying merges with height below `d_max`, as sorted
/// member lists sorted by first member.
pub fn naive_cut(n: usize, merges: &[OracleMerge], d_max: f64) -> Vec<Vec<usize>> {
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut alive: Vec<bool> = vec![true; n];
    for &(l, r, h, _) in merges {
        let mut u = members[l].clone();
        u.extend_from_slice(&members[r]);
        u.sort_unstable();
        members.push(u);
        if h < d_max {
            alive[l] = false;
            alive[r] = false;
            alive.push(true);
        } else {
            alive.push(false);
        }
    }
    // ids whose merge was skipped stay alive; collect maximal applied sets
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (id, m) in members.iter().enumerate() {
        if alive[id] {
            groups.push(m.clone());
        }
    }
    groups.sort();
    groups
}

/// Every assignment of `n` points to `k` labels (k^n of them).
pub fn for_each_assignment(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut a = vec![0usize; n];
    loop {
        f(&a);
        let mut i = 0;
        loop {
            if i == n {
                return;
            }
            a[i] += 1;
            if a[i] < k {
                break;
            }
            a[i] = 0;
            i += 1;
        }
    }
}

/// SSE of an assignment against fixed centroids.
pub fn sse_against(points: &Points, assign: &[usize], centroids: &Points) -> f64 {
    points
        .iter()
        .zip(assign)
        .map(|(p, &c)| {
            let e = euclid(p, &centroids[c]);
            e * e
        })
        .sum()
}

/// Global minimum SSE over all partitions into at most `k` non-empty groups.
pub fn exhaustive_kmeans_optimum(points: &Points, k: usize) -> f64 {
    let mut best = f64::INFINITY;
    for_each_assignment(points.len(), k, |a| {
        let mut total = 0.0;
        for c in 0..k {
            let m: Vec<usize> = (0..a.len()).filter(|&i| a[i] == c).collect();
            if !m.is_empty() {
                total += sse(points, &m);
            }
        }
        best = best.min(total);
    });
    best
}

/// Singular values of a dense matrix, descending.
pub fn singular_values(points: &Points) -> Vec<f64> {
    let m = points.len();
    let d = points[0].len();
    let a = DMatrix::from_fn(m, d, |i, j| points[i][j]);
    let mut s: Vec<f64> = a
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

pub fn center(points: &Points) -> Points {
    let all: Vec<usize> = (0..points.len()).collect();
    let c = centroid(points, &all);
    points
        .iter()
        .map(|p| p.iter().zip(&c).map(|(a, b)| a - b).collect())
        .collect()
}

/// Channel means of a `(M, d, H, W)` C-order buffer, by nested loops.
pub fn naive_pool(data: &[f64], m: usize, d: usize, h: usize, w: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; d]; m];
    for s in 0..m {
        for c in 0..d {
            let mut acc = 0.0;
            for y in 0..h {
                for x in 0..w {
                    acc += data[((s * d + c) * h + y) * w + x];
                }
            }
            out[s][c] = acc / (h * w) as f64;
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}
