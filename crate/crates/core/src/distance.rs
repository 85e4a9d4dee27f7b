//! Pairwise Euclidean distances between embeddings.

use alloc::vec::Vec;

use crate::linalg::{distance, Matrix};

/// Full symmetric matrix of Euclidean distances between the rows of `x`.
///
/// Every entry is summed over coordinates in index order, so a row-blocked
/// parallel evaluation through [`distance_row`] yields identical bits.
pub fn pairwise_euclidean(x: &Matrix) -> Matrix {
    let n = x.rows();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = distance(x.row(i), x.row(j));
            d.set(i, j, v);
            d.set(j, i, v);
        }
    }
    d
}

/// Row `i` of the pairwise distance matrix.
///
/// `(a - b)^2` and `(b - a)^2` are the same float, so the rows assemble into
/// exactly the matrix [`pairwise_euclidean`] returns.
pub fn distance_row(x: &Matrix, i: usize) -> Vec<f64> {
    (0..x.rows())
        .map(|j| {
            if i == j {
                0.0
            } else {
                distance(x.row(i), x.row(j))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_four_five() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [3.0, 4.0]]).unwrap();
        let d = pairwise_euclidean(&x);
        assert_eq!(d.get(0, 1), 5.0);
        assert_eq!(d.get(1, 0), 5.0);
        assert_eq!(d.get(0, 0), 0.0);
    }

    #[test]
    fn rows_match_full_matrix() {
        let x = Matrix::from_rows(&[[0.1, 0.7, -2.0], [1.5, 0.3, 0.0], [-0.4, 2.2, 9.0]]).unwrap();
        let d = pairwise_euclidean(&x);
        for i in 0..3 {
            assert_eq!(distance_row(&x, i), d.row(i));
        }
    }
}
