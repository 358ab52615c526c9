//! Envelope (profile) Cholesky factorization with reverse Cuthill-McKee
//! ordering. Good enough for mesh Laplacians in the tens of thousands of
//! vertices, where the RCM bandwidth stays around `sqrt(n)`.

use std::collections::VecDeque;

use nalgebra_sparse::CsrMatrix;

use crate::error::{Error, Result};

pub struct EnvelopeCholesky {
    /// `perm[new] = old`
    perm: Vec<usize>,
    /// First column stored in each (permuted) row.
    first: Vec<usize>,
    /// Offsets of each row in `values`; row `i` holds columns `first[i]..=i`.
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl EnvelopeCholesky {
    /// Factors a symmetric positive definite matrix.
    pub fn factor(a: &CsrMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }

        let mut first: Vec<usize> = (0..n).collect();
        for (old_i, row) in a.row_iter().enumerate() {
            let i = inv[old_i];
            for &old_j in row.col_indices() {
                let j = inv[old_j];
                if j < i {
                    first[i] = first[i].min(j);
                }
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for i in 0..n {
            offsets.push(offsets[i] + (i - first[i] + 1));
        }
        let mut values = vec![0.0; offsets[n]];
        for (old_i, row) in a.row_iter().enumerate() {
            let i = inv[old_i];
            for (&old_j, &v) in row.col_indices().iter().zip(row.values()) {
                let j = inv[old_j];
                if j <= i {
                    values[offsets[i] + j - first[i]] += v;
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            let oi = offsets[i];
            for j in fi..i {
                let fj = first[j];
                let oj = offsets[j];
                let mut s = values[oi + j - fi];
                for k in fi.max(fj)..j {
                    s -= values[oi + k - fi] * values[oj + k - fj];
                }
                values[oi + j - fi] = s / values[offsets[j + 1] - 1];
            }
            let mut d = values[offsets[i + 1] - 1];
            for k in fi..i {
                let v = values[oi + k - fi];
                d -= v * v;
            }
            if !(d > 0.0) {
                return Err(Error::SolverFailure(format!(
                    "matrix not positive definite at pivot {i}"
                )));
            }
            values[offsets[i + 1] - 1] = d.sqrt();
        }
        Ok(EnvelopeCholesky {
            perm,
            first,
            offsets,
            values,
        })
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.perm.len();
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let (fi, oi) = (self.first[i], self.offsets[i]);
            let mut s = y[i];
            for k in fi..i {
                s -= self.values[oi + k - fi] * y[k];
            }
            y[i] = s / self.values[self.offsets[i + 1] - 1];
        }
        for i in (0..n).rev() {
            let (fi, oi) = (self.first[i], self.offsets[i]);
            y[i] /= self.values[self.offsets[i + 1] - 1];
            let yi = y[i];
            for k in fi..i {
                y[k] -= self.values[oi + k - fi] * yi;
            }
        }
        for (new, &old) in self.perm.iter().enumerate() {
            b[old] = y[new];
        }
    }

    pub fn envelope_size(&self) -> usize {
        self.values.len()
    }
}

/// Reverse Cuthill-McKee ordering; returns `perm[new] = old`.
fn reverse_cuthill_mckee(a: &CsrMatrix<f64>) -> Vec<usize> {
    let n = a.nrows();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).nnz()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let seed = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degree[i], i))
            .expect("unvisited vertex");
        let start = pseudo_peripheral(a, seed, &degree);
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = a
                .row(v)
                .col_indices()
                .iter()
                .copied()
                .filter(|&u| !visited[u])
                .collect();
            nbrs.sort_by_key(|&u| (degree[u], u));
            for u in nbrs {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

fn pseudo_peripheral(a: &CsrMatrix<f64>, seed: usize, degree: &[usize]) -> usize {
    let mut current = seed;
    let mut ecc = 0;
    for _ in 0..8 {
        let levels = bfs_levels(a, current);
        let max_level = levels.iter().filter_map(|l| *l).max().unwrap_or(0);
        if max_level <= ecc && ecc > 0 {
            break;
        }
        ecc = max_level;
        current = (0..levels.len())
            .filter(|&i| levels[i] == Some(max_level))
            .min_by_key(|&i| (degree[i], i))
            .unwrap_or(current);
    }
    current
}

fn bfs_levels(a: &CsrMatrix<f64>, start: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; a.nrows()];
    level[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        let lv = level[v].unwrap();
        for &u in a.row(v).col_indices() {
            if level[u].is_none() {
                level[u] = Some(lv + 1);
                queue.push_back(u);
            }
        }
    }
    level
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use nalgebra_sparse::CooMatrix;

    #[test]
    fn solves_shifted_laplacian() {
        let mesh = crate::synthetic::icosphere(2);
        let mm = crate::spectral::metric_measure(&mesh).unwrap();
        let n = mm.num_vertices();
        let mut coo = CooMatrix::new(n, n);
        for (i, j, v) in mm.stiffness.triplet_iter() {
            coo.push(i, j, *v);
        }
        for i in 0..n {
            coo.push(i, i, 0.1 * mm.mass[i]);
        }
        let a = CsrMatrix::from(&coo);
        let chol = EnvelopeCholesky::factor(&a).unwrap();
        let x_true = DVector::from_fn(n, |i, _| ((i * 37) % 11) as f64 - 5.0);
        let dense = {
            let mut d = DMatrix::zeros(n, n);
            for (i, j, v) in a.triplet_iter() {
                d[(i, j)] += *v;
            }
            d
        };
        let b = &dense * &x_true;
        let mut x = b.as_slice().to_vec();
        chol.solve_in_place(&mut x);
        let err = (DVector::from_vec(x) - &x_true).norm() / x_true.norm();
        assert!(err < 1e-10, "{err}");
        assert!(chol.envelope_size() < n * n / 2);
    }

    #[test]
    fn rejects_indefinite() {
        let mut coo = CooMatrix::new(2, 2);
        coo.push(0, 0, 1.0);
        coo.push(0, 1, 2.0);
        coo.push(1, 0, 2.0);
        coo.push(1, 1, 1.0);
        assert!(EnvelopeCholesky::factor(&CsrMatrix::from(&coo)).is_err());
    }
}
