//! Ward-linkage agglomerative clustering and threshold cuts.
//!
//! Cluster ids follow the usual stepwise-dendrogram convention: leaves are
//! `0..n`, and the cluster created by merge `k` gets id `n + k`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{input_err, Error, Result};
use crate::linalg::Matrix;

/// One agglomeration step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    /// Smaller of the two merged cluster ids.
    pub left: usize,
    /// Larger of the two merged cluster ids.
    pub right: usize,
    /// Ward linkage distance at which the merge happened.
    pub height: f64,
    /// Number of leaves in the new cluster.
    pub size: usize,
}

/// Full merge history of an agglomerative clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    leaves: usize,
    merges: Vec<Merge>,
}

impl Dendrogram {
    /// Wraps a merge list after checking it describes a binary tree over
    /// `leaves` points with monotone heights (up to a relative 1e-12).
    pub fn from_merges(leaves: usize, merges: Vec<Merge>) -> Result<Self> {
        let d = Self { leaves, merges };
        d.validate()?;
        Ok(d)
    }

    pub fn leaves(&self) -> usize {
        self.leaves
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn heights(&self) -> impl Iterator<Item = f64> + '_ {
        self.merges.iter().map(|m| m.height)
    }

    pub fn max_height(&self) -> Option<f64> {
        self.merges.last().map(|m| m.height)
    }

    /// Heights never decrease along the merge order.
    pub fn is_monotone(&self) -> bool {
        self.merges.windows(2).all(|w| w[0].height <= w[1].height)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.leaves;
        if n == 0 {
            return Err(input_err!("dendrogram without leaves"));
        }
        if self.merges.len() != n - 1 {
            return Err(input_err!(
                "{} merges for {} leaves, expected {}",
                self.merges.len(),
                n,
                n - 1
            ));
        }
        let mut size = vec![1usize; n];
        size.resize(2 * n - 1, 0);
        let mut used = vec![false; 2 * n - 1];
        let mut prev = 0.0f64;
        for (k, m) in self.merges.iter().enumerate() {
            let id = n + k;
            if m.left >= id || m.right >= id || m.left == m.right {
                return Err(input_err!("merge {k} references invalid ids"));
            }
            for c in [m.left, m.right] {
                if core::mem::replace(&mut used[c], true) {
                    return Err(input_err!("merge {k} reuses cluster {c}"));
                }
            }
            if !(m.height >= 0.0) || !m.height.is_finite() {
                return Err(input_err!("merge {k} has invalid height {}", m.height));
            }
            if m.height < prev * (1.0 - 1e-12) {
                return Err(input_err!("merge heights decrease at step {k}"));
            }
            prev = m.height;
            size[id] = size[m.left] + size[m.right];
            if size[id] != m.size {
                return Err(input_err!(
                    "merge {k} records size {} but joins {}",
                    m.size,
                    size[id]
                ));
            }
        }
        Ok(())
    }

    /// Applies every merge with `height < d_max` and returns the resulting
    /// connected components.
    ///
    /// The comparison is strict: a merge at exactly `d_max` does not happen.
    pub fn cut(&self, d_max: f64) -> Result<Partition> {
        if !(d_max > 0.0) {
            return Err(input_err!("distance threshold must be > 0, got {d_max}"));
        }
        let n = self.leaves;
        let mut uf = UnionFind::new(n);
        let mut rep: Vec<usize> = (0..n).collect();
        for m in &self.merges {
            let (a, b) = (rep[m.left], rep[m.right]);
            if m.height < d_max {
                uf.union(a, b);
            }
            rep.push(a);
        }
        Ok(Partition::from_roots((0..n).map(|i| uf.find(i))))
    }

    /// Number of clusters the cut at `d_max` yields.
    pub fn count_at(&self, d_max: f64) -> Result<usize> {
        self.cut(d_max).map(|p| p.count())
    }
}

/// Assignment of `n` points to `count` groups labelled `0..count`.
///
/// Labels are numbered by first appearance in point order, so group 0
/// always contains point 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    labels: Vec<usize>,
    count: usize,
}

impl Partition {
    pub fn from_labels(labels: Vec<usize>) -> Self {
        Self::from_roots(labels.into_iter())
    }

    fn from_roots(roots: impl Iterator<Item = usize>) -> Self {
        let mut map: Vec<(usize, usize)> = Vec::new();
        let labels = roots
            .map(|r| match map.iter().find(|(k, _)| *k == r) {
                Some(&(_, l)) => l,
                None => {
                    let l = map.len();
                    map.push((r, l));
                    l
                }
            })
            .collect();
        Self {
            labels,
            count: map.len(),
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Member indices of each group, ascending.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut g = vec![Vec::new(); self.count];
        for (i, &l) in self.labels.iter().enumerate() {
            g[l].push(i);
        }
        g
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

fn check_distance_matrix(d: &Matrix) -> Result<()> {
    let n = d.rows();
    if n != d.cols() {
        return Err(input_err!(
            "distance matrix is {}x{}, expected square",
            n,
            d.cols()
        ));
    }
    if n < 2 {
        return Err(input_err!("agglomeration needs at least 2 points, got {n}"));
    }
    let scale = d.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * scale;
    for i in 0..n {
        if d.get(i, i) != 0.0 {
            return Err(input_err!("distance matrix has non-zero diagonal at {i}"));
        }
        for j in (i + 1)..n {
            let (a, b) = (d.get(i, j), d.get(j, i));
            if !a.is_finite() || !b.is_finite() || a < 0.0 || b < 0.0 {
                return Err(input_err!("distance ({i},{j}) is negative or non-finite"));
            }
            if (a - b).abs() > tol {
                return Err(input_err!("distance matrix is asymmetric at ({i},{j})"));
            }
        }
    }
    Ok(())
}

/// Ward agglomerative clustering over a Euclidean distance matrix with unit
/// point weights.
///
/// At each step the pair of active clusters with the smallest linkage is
/// merged; exact ties go to the lexicographically smallest
/// `(min_id, max_id)`. Linkages to the new cluster follow the Lance-Williams
/// Ward update, carried on squared distances:
///
/// ```text
/// d(u,k)^2 = ((n_i+n_k) d(i,k)^2 + (n_j+n_k) d(j,k)^2 - n_k d(i,j)^2) / (n_i+n_j+n_k)
/// ```
pub fn ward_agglomerate(d: &Matrix) -> Result<Dendrogram> {
    check_distance_matrix(d)?;
    let n = d.rows();

    // squared linkages, indexed by slot; a merged cluster reuses the lower slot
    let mut dist2 = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            // average the two triangles so tiny asymmetries cannot bias the order
            let v = 0.5 * (d.get(i, j) + d.get(j, i));
            dist2.set(i, j, v * v);
            dist2.set(j, i, v * v);
        }
    }
    let mut id: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n - 1);

    for step in 0..n - 1 {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for (ai, &a) in active.iter().enumerate() {
            for &b in &active[ai + 1..] {
                let v = dist2.get(a, b);
                let (lo, hi) = if id[a] < id[b] {
                    (id[a], id[b])
                } else {
                    (id[b], id[a])
                };
                let better = match best {
                    None => true,
                    Some((bv, blo, bhi, _, _)) => v < bv || (v == bv && (lo, hi) < (blo, bhi)),
                };
                if better {
                    best = Some((v, lo, hi, a, b));
                }
            }
        }
        let (v, lo, hi, a, b) = best.ok_or_else(|| Error::Input(format!("no pair at {step}")))?;
        let (ni, nj) = (size[a] as f64, size[b] as f64);
        for &k in &active {
            if k == a || k == b {
                continue;
            }
            let nk = size[k] as f64;
            let num = (ni + nk) * dist2.get(a, k) + (nj + nk) * dist2.get(b, k) - nk * v;
            let u = (num / (ni + nj + nk)).max(0.0);
            dist2.set(a, k, u);
            dist2.set(k, a, u);
        }
        size[a] += size[b];
        id[a] = n + step;
        active.retain(|&s| s != b);
        merges.push(Merge {
            left: lo,
            right: hi,
            height: libm::sqrt(v),
            size: size[a],
        });
    }

    debug_assert!(merges
        .windows(2)
        .all(|w| w[0].height <= w[1].height * (1.0 + 1e-12)));
    Ok(Dendrogram { leaves: n, merges })
}

#[cfg(feature = "serde")]
mod serde_impl {
    use super::{Dendrogram, Merge};
    use alloc::format;
    use alloc::vec::Vec;
    use serde::de::Error as _;
    use serde::ser::SerializeStruct;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    /// Rounds to 12 significant digits; the shortest round-trip printer then
    /// emits at most 12 digits.
    pub(crate) fn sig12(v: f64) -> f64 {
        format!("{v:.11e}").parse().unwrap_or(v)
    }

    impl Serialize for Dendrogram {
        fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
            let merges: Vec<(usize, usize, f64, usize)> = self
                .merges
                .iter()
                .map(|m| (m.left, m.right, sig12(m.height), m.size))
                .collect();
            let mut st = s.serialize_struct("Dendrogram", 2)?;
            st.serialize_field("leaves", &self.leaves)?;
            st.serialize_field("merges", &merges)?;
            st.end()
        }
    }

    #[derive(Deserialize)]
    struct Raw {
        leaves: usize,
        merges: Vec<(usize, usize, f64, usize)>,
    }

    impl<'de> Deserialize<'de> for Dendrogram {
        fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
            let raw = Raw::deserialize(d)?;
            let merges = raw
                .merges
                .into_iter()
                .map(|(left, right, height, size)| Merge {
                    left,
                    right,
                    height,
                    size,
                })
                .collect();
            Dendrogram::from_merges(raw.leaves, merges).map_err(D::Error::custom)
        }
    }
}
