//! Dense linear-algebra helpers shared across modules.
//!
//! Everything here is deterministic: eigenpairs come back sorted with a fixed
//! sign convention so that downstream artifacts are byte-reproducible.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Symmetric eigendecomposition with eigenvalues in ascending order.
///
/// The input is symmetrized as `(A + A^T) / 2` first. Each eigenvector is
/// flipped so that its largest-magnitude entry is positive.
pub fn sym_eigen_ascending(a: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "eigendecomposition of a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let sym = symmetrize(a);
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolverFailure("non-finite matrix entries".into()));
    }
    // nalgebra's QR iteration loses accuracy on larger Laplacians; faer's
    // divide-and-conquer solver does not.
    let eig = faer::Mat::<f64>::from_fn(n, n, |i, j| sym[(i, j)])
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::SolverFailure(format!("symmetric eigensolver: {e:?}")))?;
    let s = eig.S().column_vector();
    let u = eig.U();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[i].total_cmp(&s[j]).then(i.cmp(&j)));

    let values = DVector::from_iterator(n, order.iter().map(|&i| s[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, dst)] = u[(r, src)];
        }
    }
    fix_column_signs(&mut vectors);
    Ok((values, vectors))
}

/// Symmetric eigendecomposition with eigenvalues in descending order.
pub fn sym_eigen_descending(a: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (values, vectors) = sym_eigen_ascending(a)?;
    let n = values.len();
    let desc_values = DVector::from_iterator(n, values.iter().rev().copied());
    let mut desc_vectors = DMatrix::zeros(n, n);
    for j in 0..n {
        desc_vectors.set_column(j, &vectors.column(n - 1 - j));
    }
    Ok((desc_values, desc_vectors))
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Flips every column so that its entry of largest magnitude is positive.
/// Ties go to the lowest row index.
pub fn fix_column_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for v in col.iter() {
            if v.abs() > best {
                best = v.abs();
                sign = v.signum();
            }
        }
        if sign < 0.0 {
            col.neg_mut();
        }
    }
}

/// Maximal runs of consecutive values whose successive gaps are below `tol`.
/// Only runs of length two or more are reported.
pub fn clusters(values: &[f64], tol: f64) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=values.len() {
        let split = i == values.len() || (values[i] - values[i - 1]).abs() >= tol;
        if split {
            if i - start >= 2 {
                out.push(start..i);
            }
            start = i;
        }
    }
    out
}

/// Moore-Penrose pseudo-inverse; singular values below `rtol * sigma_max` are dropped.
pub fn pinv(a: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    if a.is_empty() {
        return DMatrix::zeros(a.ncols(), a.nrows());
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = rtol * smax;
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    let mut out = DMatrix::zeros(a.ncols(), a.nrows());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            out += vt.row(i).transpose() * u.column(i).transpose() / s;
        }
    }
    out
}

/// 2-norm condition number from the singular values. Infinite when singular.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    let sv = a.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if smin <= 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// `|A^T A - I|_F` for a matrix whose columns should be orthonormal.
pub fn orthonormality_residual(a: &DMatrix<f64>) -> f64 {
    let p = a.ncols();
    (a.transpose() * a - DMatrix::<f64>::identity(p, p)).norm()
}

/// Frobenius mass of the off-diagonal part relative to the diagonal part.
pub fn off_diagonal_ratio(a: &DMatrix<f64>) -> f64 {
    let mut diag = 0.0;
    let mut off = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            let v = a[(i, j)];
            if i == j {
                diag += v * v;
            } else {
                off += v * v;
            }
        }
    }
    if diag == 0.0 {
        if off == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (off / diag).sqrt()
    }
}

/// Left singular vectors of `a` for the `p` largest singular values, ordered
/// by decreasing singular value, with the column sign convention applied.
pub fn top_left_singular_vectors(a: &DMatrix<f64>, p: usize) -> (DMatrix<f64>, DVector<f64>) {
    // Eigen route on A A^T keeps ordering and signs under our control.
    let gram = a * a.transpose();
    let (values, vectors) = sym_eigen_descending(&gram).expect("gram matrix is symmetric");
    let p = p.min(values.len());
    let sv = DVector::from_iterator(p, values.iter().take(p).map(|v| v.max(0.0).sqrt()));
    (vectors.columns(0, p).into_owned(), sv)
}
