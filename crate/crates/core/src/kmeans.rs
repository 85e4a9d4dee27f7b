//! Lloyd k-means from a given initialization, and centroid-distance outlier
//! filtering.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{input_err, Result};
use crate::linalg::{distance, mean_of_rows, squared_distance, Matrix};

/// Lloyd iterations stop after this many centroid updates.
pub const MAX_ITERATIONS: usize = 300;

/// Final status of one point after filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    /// Kept, member of the given cluster.
    Cluster(usize),
    /// Too far from its centroid.
    Outlier,
    /// Its cluster had too few survivors.
    Dropped,
}

/// Spread statistics of one cluster's member-to-centroid distances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
    /// Members farther than this are outliers.
    pub cutoff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    /// Nearest-centroid assignment at convergence, before filtering.
    pub assignments: Vec<usize>,
    /// Status of each point after filtering. Equal to `Cluster(assignment)`
    /// for every point until [`remove_outliers`] runs.
    pub labels: Vec<Label>,
    pub centroids: Matrix,
    /// Within-cluster sum of squares after each assignment step.
    pub sse_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Cluster ids that survived filtering, ascending.
    pub surviving: Vec<usize>,
    /// Kept member indices per cluster id (empty for dropped clusters).
    pub members: Vec<Vec<usize>>,
    /// Distance statistics per cluster id, filled in by [`remove_outliers`].
    pub spreads: Vec<Option<Spread>>,
}

impl ClusterResult {
    /// Number of clusters k-means was asked for.
    pub fn k_requested(&self) -> usize {
        self.centroids.rows()
    }

    /// Number of clusters that survived filtering.
    pub fn surviving_count(&self) -> usize {
        self.surviving.len()
    }

    pub fn final_sse(&self) -> f64 {
        self.sse_trace.last().copied().unwrap_or(0.0)
    }
}

fn nearest(point: &[f64], centroids: &Matrix) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, row) in centroids.iter_rows().enumerate() {
        let d = squared_distance(point, row);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

fn assign_all(x: &Matrix, centroids: &Matrix) -> Vec<usize> {
    x.iter_rows().map(|p| nearest(p, centroids)).collect()
}

/// Within-cluster sum of squared distances.
pub fn sse(x: &Matrix, assignments: &[usize], centroids: &Matrix) -> f64 {
    x.iter_rows()
        .zip(assignments)
        .map(|(p, &c)| squared_distance(p, centroids.row(c)))
        .sum()
}

fn groups(assignments: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut g = vec![Vec::new(); k];
    for (i, &c) in assignments.iter().enumerate() {
        g[c].push(i);
    }
    g
}

/// Runs Lloyd's algorithm from `init`.
///
/// Points go to the nearest centroid (ties to the lowest index), centroids
/// become member means, and the loop ends when an assignment step changes
/// nothing or after [`MAX_ITERATIONS`] updates. A cluster left empty is
/// reseeded with the point lying farthest from its own centroid, taken from
/// a cluster that has more than one member.
pub fn kmeans_lloyd(x: &Matrix, init: &Matrix) -> Result<ClusterResult> {
    let n = x.rows();
    let k = init.rows();
    if k == 0 {
        return Err(input_err!("k-means needs k >= 1"));
    }
    if k > n {
        return Err(input_err!("k = {k} exceeds the {n} points"));
    }
    if init.cols() != x.cols() {
        return Err(input_err!(
            "initial centroids have {} columns, points have {}",
            init.cols(),
            x.cols()
        ));
    }

    let mut centroids = init.clone();
    let mut assign = assign_all(x, &centroids);
    let mut sse_trace = vec![sse(x, &assign, &centroids)];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < MAX_ITERATIONS {
        reseed_empty(x, &mut assign, &centroids, k);
        for (c, members) in groups(&assign, k).iter().enumerate() {
            centroids
                .row_mut(c)
                .copy_from_slice(&mean_of_rows(x, members));
        }
        iterations += 1;

        let next = assign_all(x, &centroids);
        sse_trace.push(sse(x, &next, &centroids));
        if next == assign {
            converged = true;
            break;
        }
        assign = next;
    }

    let members = groups(&assign, k);
    Ok(ClusterResult {
        labels: assign.iter().map(|&c| Label::Cluster(c)).collect(),
        assignments: assign,
        centroids,
        sse_trace,
        iterations,
        converged,
        surviving: (0..k).collect(),
        members,
        spreads: vec![None; k],
    })
}

fn reseed_empty(x: &Matrix, assign: &mut [usize], centroids: &Matrix, k: usize) {
    let mut counts = vec![0usize; k];
    for &c in assign.iter() {
        counts[c] += 1;
    }
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let mut pick: Option<(usize, f64)> = None;
        for (i, &owner) in assign.iter().enumerate() {
            if counts[owner] < 2 {
                continue;
            }
            let d = squared_distance(x.row(i), centroids.row(owner));
            if pick.is_none_or(|(_, bd)| d > bd) {
                pick = Some((i, d));
            }
        }
        // k <= n guarantees a donor exists
        if let Some((i, _)) = pick {
            counts[assign[i]] -= 1;
            assign[i] = c;
            counts[c] = 1;
        }
    }
}

/// Marks outliers and undersized clusters.
///
/// Within each cluster, a member whose distance to the centroid exceeds
/// `mean + tau * std` of the member distances is an outlier (population
/// standard deviation; no outliers when it is zero). Clusters left with
/// fewer than `min_cluster_size` members (and always those left empty) are
/// dropped.
pub fn remove_outliers(
    mut res: ClusterResult,
    tau: f64,
    min_cluster_size: usize,
    x: &Matrix,
) -> Result<ClusterResult> {
    if !(tau > 0.0) {
        return Err(input_err!("outlier multiplier tau must be > 0, got {tau}"));
    }
    if x.rows() != res.assignments.len() {
        return Err(input_err!("points do not match the clustering"));
    }
    let k = res.k_requested();
    let all = groups(&res.assignments, k);
    res.labels = res.assignments.iter().map(|&c| Label::Cluster(c)).collect();
    res.surviving.clear();
    res.members = vec![Vec::new(); k];
    res.spreads = vec![None; k];

    for (c, members) in all.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let centroid = res.centroids.row(c);
        let dists: Vec<f64> = members
            .iter()
            .map(|&i| distance(x.row(i), centroid))
            .collect();
        let m = dists.len() as f64;
        let mean = dists.iter().sum::<f64>() / m;
        let var = dists.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / m;
        let std = libm::sqrt(var);
        let cutoff = if std == 0.0 || tau.is_infinite() {
            f64::INFINITY
        } else {
            mean + tau * std
        };
        res.spreads[c] = Some(Spread { mean, std, cutoff });

        let mut kept = Vec::with_capacity(members.len());
        for (&i, &d) in members.iter().zip(&dists) {
            if d > cutoff {
                res.labels[i] = Label::Outlier;
            } else {
                kept.push(i);
            }
        }
        if kept.is_empty() || kept.len() < min_cluster_size {
            for &i in &kept {
                res.labels[i] = Label::Dropped;
            }
        } else {
            res.surviving.push(c);
            res.members[c] = kept;
        }
    }
    Ok(res)
}
