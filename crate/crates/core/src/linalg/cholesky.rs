//! Envelope (profile) Cholesky factorization with reverse Cuthill-McKee
//! ordering.
//!
//! For the P1 matrices used here the RCM envelope is proportional to the
//! number of nodes across the domain, so fill stays modest at desk scale.

use std::collections::VecDeque;

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

/// `P A P^T = L L^T`, with `L` stored row-wise over its envelope.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    /// perm[new] = old
    perm: Vec<usize>,
    /// first column of the envelope of each (permuted) row
    first: Vec<usize>,
    /// offset of each row's envelope in `values`
    offset: Vec<usize>,
    values: Vec<f64>,
}

impl Cholesky {
    /// Factors a symmetric positive definite matrix. Only the structure and
    /// values of the lower triangle (in permuted order) are used.
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.n_rows();
        if a.n_cols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: a.n_cols(),
            });
        }
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }

        let mut first: Vec<usize> = (0..n).collect();
        for (new_i, &old_i) in perm.iter().enumerate() {
            for (old_j, _) in a.row(old_i) {
                let new_j = inv[old_j];
                if new_j < first[new_i] {
                    first[new_i] = new_j;
                }
            }
        }
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0);
        for i in 0..n {
            offset.push(offset[i] + (i - first[i] + 1));
        }
        let mut values = vec![0.0; offset[n]];
        for (new_i, &old_i) in perm.iter().enumerate() {
            for (old_j, v) in a.row(old_i) {
                let new_j = inv[old_j];
                if new_j <= new_i {
                    values[offset[new_i] + new_j - first[new_i]] = v;
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            let row_i = offset[i];
            for j in fi..i {
                let fj = first[j];
                let row_j = offset[j];
                let start = fi.max(fj);
                let mut s = values[row_i + j - fi];
                for k in start..j {
                    s -= values[row_i + k - fi] * values[row_j + k - fj];
                }
                values[row_i + j - fi] = s / values[row_j + j - fj];
            }
            let mut d = values[row_i + i - fi];
            for k in fi..i {
                let l = values[row_i + k - fi];
                d -= l * l;
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    row: perm[i],
                    pivot: d,
                });
            }
            values[row_i + i - fi] = d.sqrt();
        }

        Ok(Cholesky {
            n,
            perm,
            first,
            offset,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored factor entries.
    pub fn envelope_size(&self) -> usize {
        self.values.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        self.solve_into(b, &mut x);
        x
    }

    pub fn solve_into(&self, b: &[f64], x: &mut [f64]) {
        let n = self.n;
        let mut w: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        // L w' = w
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.values[self.offset[i]..self.offset[i + 1]];
            let mut s = w[i];
            for k in fi..i {
                s -= row[k - fi] * w[k];
            }
            w[i] = s / row[i - fi];
        }
        // L^T x = w'
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.values[self.offset[i]..self.offset[i + 1]];
            w[i] /= row[i - fi];
            let wi = w[i];
            for k in fi..i {
                w[k] -= row[k - fi] * wi;
            }
        }
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = w[new];
        }
    }
}

/// Reverse Cuthill-McKee ordering of the symmetric sparsity graph of `a`.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.n_rows();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).filter(|&(j, _)| j != i).count()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    let mut neighbours = Vec::new();

    while order.len() < n {
        // start each component at an unvisited node of minimum degree
        let start = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degree[i], i))
            .unwrap();
        visited[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            order.push(i);
            neighbours.clear();
            neighbours.extend(a.row(i).map(|(j, _)| j).filter(|&j| !visited[j]));
            neighbours.sort_by_key(|&j| (degree[j], j));
            for &j in &neighbours {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    order.reverse();
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sparse::{norm2, sub};

    fn laplacian_1d(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
                t.push((i - 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, &t)
    }

    #[test]
    fn identity_factor_is_identity() {
        let f = Cholesky::factor(&CsrMatrix::identity(5)).unwrap();
        assert!(f.values.iter().all(|&v| v == 1.0));
        let b = [1.0, -2.0, 3.0, 0.5, 7.0];
        assert_eq!(f.solve(&b), b.to_vec());
    }

    #[test]
    fn tridiagonal_solve() {
        let a = laplacian_1d(50);
        let f = Cholesky::factor(&a).unwrap();
        let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let x = f.solve(&b);
        let r = sub(&a.mul_vec(&x), &b);
        assert!(norm2(&r) / norm2(&b) < 1e-13);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]);
        assert!(matches!(
            Cholesky::factor(&a),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn rcm_is_a_permutation() {
        let a = laplacian_1d(17);
        let mut p = reverse_cuthill_mckee(&a);
        p.sort();
        assert_eq!(p, (0..17).collect::<Vec<_>>());
    }
}
