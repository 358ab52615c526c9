//! Shift-invert Lanczos for the smallest generalized eigenpairs of large meshes.
//!
//! The operator `(L + sigma M)^{-1} M` is self-adjoint in the M inner product.
//! We build an M-orthonormal Krylov basis with full reorthogonalization and
//! extract Ritz pairs of `L` on that basis directly, growing the basis until
//! every requested residual is below tolerance.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use super::{EnvelopeCholesky, MetricMeasure};
use crate::error::{Error, Result};
use crate::linalg;

pub(super) fn shift_invert(
    mm: &MetricMeasure,
    k: usize,
    tol: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = mm.num_vertices();
    let mass = &mm.mass;
    let mean_eig = mm
        .stiffness
        .triplet_iter()
        .filter(|(i, j, _)| i == j)
        .map(|(i, _, v)| v / mass[i])
        .sum::<f64>()
        / n as f64;
    let sigma = (1e-5 * mean_eig).max(f64::MIN_POSITIVE);

    let mut coo = CooMatrix::new(n, n);
    for (i, j, v) in mm.stiffness.triplet_iter() {
        coo.push(i, j, *v);
    }
    for i in 0..n {
        coo.push(i, i, sigma * mass[i]);
    }
    let chol = EnvelopeCholesky::factor(&CsrMatrix::from(&coo))?;
    let lnorm = mm.stiffness_frobenius();

    let mut ncv = n.min((2 * k + 1).max(k + 20));
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut restarts = 0usize;
    loop {
        extend_krylov(&mut basis, ncv, mass, &chol, &mut restarts)?;
        let v = DMatrix::from_columns(&basis);
        let lv = mm.apply_stiffness(&v);
        let h = v.transpose() * &lv;
        let (theta, s) = linalg::sym_eigen_ascending(&h)?;
        let x = &v * s.columns(0, k);
        let lx = &lv * s.columns(0, k);
        let converged = (0..k).all(|j| {
            let r = lx.column(j) - x.column(j).component_mul(mass) * theta[j];
            r.norm() <= tol * lnorm
        });
        if converged {
            return Ok((theta.rows(0, k).into_owned(), x));
        }
        if ncv == n {
            return Err(Error::SolverFailure(format!(
                "Lanczos did not reach residual {tol:e} with a full basis"
            )));
        }
        ncv = n.min(ncv * 2);
        log::debug!("Lanczos: growing Krylov basis to {ncv}");
    }
}

fn m_dot(a: &DVector<f64>, b: &DVector<f64>, mass: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).zip(mass.iter()).map(|((x, y), m)| x * y * m).sum()
}

fn extend_krylov(
    basis: &mut Vec<DVector<f64>>,
    target: usize,
    mass: &DVector<f64>,
    chol: &EnvelopeCholesky,
    restarts: &mut usize,
) -> Result<()> {
    let n = mass.len();
    if basis.is_empty() {
        let start = DVector::from_fn(n, |i, _| 1.0 + ((i * 7919) % 101) as f64 / 101.0);
        basis.push(normalized(start, mass).expect("nonzero start vector"));
    }
    while basis.len() < target {
        let last = basis.last().unwrap();
        let mut w = last.component_mul(mass);
        chol.solve_in_place(w.as_mut_slice());
        let mut next = orthogonalize(w, basis, mass);
        if next.is_none() {
            // Invariant subspace: continue from a fresh deterministic vector.
            *restarts += 1;
            if *restarts > n {
                return Err(Error::SolverFailure("Lanczos breakdown".into()));
            }
            let fresh = DVector::from_fn(n, |i, _| {
                (((i + 1) * (*restarts * 2654435761 % 1000003)) % 997) as f64 / 997.0 - 0.5
            });
            next = orthogonalize(fresh, basis, mass);
        }
        if let Some(v) = next {
            basis.push(v);
        }
    }
    Ok(())
}

/// Two passes of classical Gram-Schmidt in the M inner product.
fn orthogonalize(
    mut w: DVector<f64>,
    basis: &[DVector<f64>],
    mass: &DVector<f64>,
) -> Option<DVector<f64>> {
    let initial = m_dot(&w, &w, mass).sqrt();
    for _ in 0..2 {
        for b in basis {
            let c = m_dot(&w, b, mass);
            w.axpy(-c, b, 1.0);
        }
    }
    let remaining = m_dot(&w, &w, mass).sqrt();
    if remaining <= 1e-10 * initial {
        return None;
    }
    normalized(w, mass)
}

fn normalized(w: DVector<f64>, mass: &DVector<f64>) -> Option<DVector<f64>> {
    let nrm = m_dot(&w, &w, mass).sqrt();
    (nrm > 0.0 && nrm.is_finite()).then(|| w / nrm)
}
