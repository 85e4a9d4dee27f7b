//! Evaluation metrics for concept vectors.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{input_err, Result};
use crate::linalg::{dot, norm, symmetric_eigen, Matrix};
use crate::pipeline::top_k_by;
use crate::store::ActivationStore;

/// Per-member projections onto a concept vector and onto the neuron axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Projections {
    /// `<x_i, v>`
    pub proj_v: Vec<f64>,
    /// `x_i[n]`, the projection onto the basis vector `e_n`.
    pub proj_n: Vec<f64>,
    pub cos_v: Vec<f64>,
    pub cos_n: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl Projections {
    pub fn mean_proj_v(&self) -> f64 {
        mean(&self.proj_v)
    }

    pub fn mean_proj_n(&self) -> f64 {
        mean(&self.proj_n)
    }

    pub fn mean_cos_v(&self) -> f64 {
        mean(&self.cos_v)
    }

    pub fn mean_cos_n(&self) -> f64 {
        mean(&self.cos_n)
    }
}

/// Compares how members line up with `v` versus the neuron direction.
/// Zero-norm members get cosine 0.
pub fn projections(x: &Matrix, v: &[f64], neuron: usize) -> Result<Projections> {
    if v.len() != x.cols() {
        return Err(input_err!(
            "vector has {} entries, embeddings have {}",
            v.len(),
            x.cols()
        ));
    }
    if neuron >= x.cols() {
        return Err(input_err!("neuron {neuron} out of range"));
    }
    let nv = norm(v);
    if (nv - 1.0).abs() > 1e-9 {
        return Err(input_err!(
            "concept vector must be unit norm, got norm {nv}"
        ));
    }
    let m = x.rows();
    let mut out = Projections {
        proj_v: Vec::with_capacity(m),
        proj_n: Vec::with_capacity(m),
        cos_v: Vec::with_capacity(m),
        cos_n: Vec::with_capacity(m),
    };
    for row in x.iter_rows() {
        let pv = dot(row, v);
        let pn = row[neuron];
        let nx = norm(row);
        out.proj_v.push(pv);
        out.proj_n.push(pn);
        if nx == 0.0 {
            out.cos_v.push(0.0);
            out.cos_n.push(0.0);
        } else {
            out.cos_v.push(pv / nx);
            out.cos_n.push(pn / nx);
        }
    }
    Ok(out)
}

/// Distance matrices over the top-N set and the retained points.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceSummary {
    pub full: Matrix,
    /// Indices (into the top-N set) of retained points, grouped by cluster
    /// id ascending, then by index.
    pub retained_order: Vec<usize>,
    pub retained: Matrix,
    /// Mean distance over pairs in the same cluster; `None` without pairs.
    pub mean_intra: Option<f64>,
    /// Mean distance over pairs in different clusters; `None` with fewer
    /// than two clusters.
    pub mean_inter: Option<f64>,
}

/// Summarizes a distance matrix under a partial labelling; `None` marks
/// points that were not retained.
pub fn distance_summary(distances: &Matrix, labels: &[Option<usize>]) -> Result<DistanceSummary> {
    let n = distances.rows();
    if distances.cols() != n || labels.len() != n {
        return Err(input_err!("labels do not cover the distance matrix"));
    }
    let mut order: Vec<usize> = (0..n).filter(|&i| labels[i].is_some()).collect();
    order.sort_by_key(|&i| (labels[i], i));

    let r = order.len();
    let mut retained = Matrix::zeros(r, r);
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for (a, &i) in order.iter().enumerate() {
        for (b, &j) in order.iter().enumerate() {
            retained.set(a, b, distances.get(i, j));
            if b <= a {
                continue;
            }
            if labels[i] == labels[j] {
                intra += distances.get(i, j);
                n_intra += 1;
            } else {
                inter += distances.get(i, j);
                n_inter += 1;
            }
        }
    }
    Ok(DistanceSummary {
        full: distances.clone(),
        retained_order: order,
        retained,
        mean_intra: (n_intra > 0).then(|| intra / n_intra as f64),
        mean_inter: (n_inter > 0).then(|| inter / n_inter as f64),
    })
}

/// Dataset rows with the largest projection onto `v`, descending, ties to
/// the lower row. Returns `(row, projection)` pairs.
pub fn max_projecting(store: &ActivationStore, v: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
    if v.len() != store.dim() {
        return Err(input_err!(
            "vector has {} entries, store has {}",
            v.len(),
            store.dim()
        ));
    }
    if k > store.len() {
        return Err(input_err!(
            "K = {k} exceeds the {} stored inputs",
            store.len()
        ));
    }
    let scores: Vec<f64> = store.data().iter_rows().map(|r| dot(r, v)).collect();
    Ok(top_k_by(&scores, k)
        .into_iter()
        .map(|r| (r, scores[r]))
        .collect())
}

/// Two-dimensional PCA projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca2 {
    /// `m x 2` coordinates of the centered points.
    pub coords: Matrix,
    /// Principal directions as rows (`2 x d`). A direction is all zeros when
    /// the data has no variance left along it.
    pub components: Matrix,
    pub singular_values: [f64; 2],
}

/// Projects the centered rows of `x` onto their top two right singular
/// directions.
///
/// Each direction is signed so that its largest-magnitude component is
/// positive (ties to the lower index).
pub fn pca_2d(x: &Matrix) -> Result<Pca2> {
    let (m, d) = (x.rows(), x.cols());
    if m < 2 {
        return Err(input_err!("PCA needs at least 2 points, got {m}"));
    }
    let all: Vec<usize> = (0..m).collect();
    let centre = crate::linalg::mean_of_rows(x, &all);
    let mut xc = x.clone();
    for i in 0..m {
        for (v, c) in xc.row_mut(i).iter_mut().zip(&centre) {
            *v -= c;
        }
    }

    let mut components = Matrix::zeros(2, d);
    let mut singular = [0.0; 2];
    if m <= d {
        // eigen-decompose the m x m Gram matrix and map back to R^d
        let mut g = Matrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let v = dot(xc.row(i), xc.row(j));
                g.set(i, j, v);
                g.set(j, i, v);
            }
        }
        let e = symmetric_eigen(&g)?;
        for (k, sk) in singular.iter_mut().enumerate().take(m) {
            let s = libm::sqrt(e.values[k].max(0.0));
            *sk = s;
            if s == 0.0 {
                continue;
            }
            let u = e.vectors.row(k);
            for j in 0..d {
                let v: f64 = (0..m).map(|i| xc.get(i, j) * u[i]).sum();
                components.set(k, j, v / s);
            }
        }
    } else {
        let mut c = Matrix::zeros(d, d);
        for row in xc.iter_rows() {
            for a in 0..d {
                for b in a..d {
                    c.set(a, b, c.get(a, b) + row[a] * row[b]);
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                c.set(a, b, c.get(b, a));
            }
        }
        let e = symmetric_eigen(&c)?;
        for (k, sk) in singular.iter_mut().enumerate().take(d) {
            *sk = libm::sqrt(e.values[k].max(0.0));
            if *sk == 0.0 {
                continue;
            }
            components.row_mut(k).copy_from_slice(e.vectors.row(k));
        }
    }

    // drop directions that only carry rounding noise
    let tiny = singular[0] * 1e-12;
    for (k, s) in singular.iter_mut().enumerate() {
        if *s <= tiny {
            *s = 0.0;
            components.row_mut(k).fill(0.0);
        }
    }

    for k in 0..2 {
        let row = components.row_mut(k);
        let mut pivot = 0;
        for (j, v) in row.iter().enumerate() {
            if v.abs() > row[pivot].abs() {
                pivot = j;
            }
        }
        if row[pivot] < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
    }

    let mut coords = Matrix::zeros(m, 2);
    for i in 0..m {
        for k in 0..2 {
            coords.set(i, k, dot(xc.row(i), components.row(k)));
        }
    }
    Ok(Pca2 {
        coords,
        components,
        singular_values: singular,
    })
}

/// Mean cosine similarity between `members` and the unit vector `u`.
pub fn mean_cosine(members: &Matrix, u: &[f64]) -> f64 {
    let cos: Vec<f64> = members
        .iter_rows()
        .map(|r| crate::linalg::cosine(r, u))
        .collect();
    mean(&cos)
}

/// Basis vector `e_i` of length `d`.
pub fn basis(d: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[i] = 1.0;
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{Dtype, ImageEntry};
    use alloc::format;

    #[test]
    fn projection_on_own_axis() {
        let x = Matrix::from_rows(&[[0.0, 3.0, 0.0]]).unwrap();
        let p = projections(&x, &basis(3, 1), 1).unwrap();
        assert_eq!(
            (p.proj_v[0], p.proj_n[0], p.cos_v[0], p.cos_n[0]),
            (3.0, 3.0, 1.0, 1.0)
        );
    }

    #[test]
    fn orthogonal_concept() {
        let x = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let p = projections(&x, &basis(2, 1), 0).unwrap();
        assert_eq!((p.proj_v[0], p.proj_n[0]), (0.0, 1.0));
    }

    #[test]
    fn non_unit_vector_is_rejected() {
        let x = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        assert!(projections(&x, &[1.0, 1.0], 0).is_err());
    }

    #[test]
    fn degenerate_blobs() {
        // two coincident pairs at distance 10
        let d = Matrix::from_rows(&[
            [0.0, 0.0, 10.0, 10.0],
            [0.0, 0.0, 10.0, 10.0],
            [10.0, 10.0, 0.0, 0.0],
            [10.0, 10.0, 0.0, 0.0],
        ])
        .unwrap();
        let s = distance_summary(&d, &[Some(1), Some(1), Some(0), Some(0)]).unwrap();
        assert_eq!(s.mean_intra, Some(0.0));
        assert_eq!(s.mean_inter, Some(10.0));
        assert_eq!(s.retained_order, vec![2, 3, 0, 1]);
        for i in 0..4 {
            assert_eq!(s.retained.get(i, i), 0.0);
        }

        let one = distance_summary(&d, &[Some(0), Some(0), None, None]).unwrap();
        assert_eq!(one.mean_inter, None);
        assert_eq!(one.retained.rows(), 2);
    }

    #[test]
    fn max_projecting_on_basis() {
        let m = Matrix::from_rows(&[[2.0, 0.0], [9.0, 1.0], [4.0, 5.0]]).unwrap();
        let ids = (0..3).map(|i| ImageEntry::new(format!("i{i}"))).collect();
        let s = ActivationStore::from_matrix(m, ids, "l", Dtype::F64).unwrap();
        let top = max_projecting(&s, &basis(2, 0), 2).unwrap();
        assert_eq!(top, vec![(1, 9.0), (2, 4.0)]);
        let all: Vec<usize> = max_projecting(&s, &basis(2, 0), 3)
            .unwrap()
            .iter()
            .map(|p| p.0)
            .collect();
        assert_eq!(all, vec![1, 2, 0]);
        assert!(max_projecting(&s, &basis(2, 0), 4).is_err());
    }

    #[test]
    fn pca_needs_two_points() {
        assert!(pca_2d(&Matrix::from_rows(&[[1.0, 2.0]]).unwrap()).is_err());
    }

    #[test]
    fn pca_duplicated_rows() {
        let x = Matrix::from_rows(&[
            [1.0, 2.0, 0.5],
            [1.0, 2.0, 0.5],
            [3.0, -1.0, 0.0],
            [0.0, 0.0, 2.0],
        ])
        .unwrap();
        let p = pca_2d(&x).unwrap();
        assert_eq!(p.coords.row(0), p.coords.row(1));
    }
}
