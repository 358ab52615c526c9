//! Discrete spectral geometry of a single shape: cotangent stiffness,
//! lumped mass, truncated Laplace-Beltrami eigenbasis and Shape-DNA.

mod envelope;
mod lanczos;

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mesh::{cross, dot, sub, Mesh};

pub use envelope::EnvelopeCholesky;

/// Metric (cotangent stiffness) and measure (lumped mass) of one shape.
#[derive(Debug, Clone)]
pub struct MetricMeasure {
    /// Symmetric positive semidefinite stiffness matrix `L`.
    pub stiffness: CsrMatrix<f64>,
    /// Diagonal of the lumped mass matrix `M` (one third of incident areas).
    pub mass: DVector<f64>,
}

impl MetricMeasure {
    pub fn num_vertices(&self) -> usize {
        self.mass.len()
    }

    pub fn stiffness_dense(&self) -> DMatrix<f64> {
        let n = self.num_vertices();
        let mut d = DMatrix::zeros(n, n);
        for (i, j, v) in self.stiffness.triplet_iter() {
            d[(i, j)] += *v;
        }
        d
    }

    pub fn stiffness_frobenius(&self) -> f64 {
        self.stiffness.values().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `L x` for a dense block of column vectors.
    pub fn apply_stiffness(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.stiffness * x
    }

    pub fn total_area(&self) -> f64 {
        self.mass.sum()
    }
}

/// Assembles cotangent stiffness and barycentric lumped mass.
pub fn metric_measure(mesh: &Mesh) -> Result<MetricMeasure> {
    let n = mesh.num_vertices();
    let mut coo = CooMatrix::new(n, n);
    let mut mass = DVector::zeros(n);
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let p = tri.map(|i| mesh.vertices[i]);
        let area = 0.5 * crate::mesh::norm(cross(sub(p[1], p[0]), sub(p[2], p[0])));
        for &v in tri {
            mass[v] += area / 3.0;
        }
        for k in 0..3 {
            // Angle at corner k is opposite the edge (k+1, k+2).
            let (a, b) = ((k + 1) % 3, (k + 2) % 3);
            let u = sub(p[a], p[k]);
            let w = sub(p[b], p[k]);
            let cot = dot(u, w) / crate::mesh::norm(cross(u, w));
            if !cot.is_finite() {
                return Err(Error::DegenerateGeometry(format!(
                    "non-finite cotangent weight in triangle {t}"
                )));
            }
            let weight = 0.5 * cot;
            let (i, j) = (tri[a], tri[b]);
            coo.push(i, j, -weight);
            coo.push(j, i, -weight);
            coo.push(i, i, weight);
            coo.push(j, j, weight);
        }
    }
    Ok(MetricMeasure {
        stiffness: CsrMatrix::from(&coo),
        mass,
    })
}

/// Eigensolver configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EigenConfig {
    /// Meshes up to this many vertices use the dense solver.
    pub dense_max_vertices: usize,
    /// Successive eigenvalues closer than `cluster_tol * max(1, lambda_k)` form a cluster.
    pub cluster_tol: f64,
    /// Residual target of the iterative solver, relative to `|L|_F`.
    pub iterative_tol: f64,
}

impl Default for EigenConfig {
    fn default() -> Self {
        EigenConfig {
            dense_max_vertices: 2000,
            cluster_tol: 1e-8,
            iterative_tol: 1e-10,
        }
    }
}

/// Truncated generalized eigenbasis `L phi = lambda M phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    pub shape_id: String,
    /// Ascending, nonnegative.
    pub eigenvalues: DVector<f64>,
    /// `num_vertices x k`, M-orthonormal columns.
    pub eigenvectors: DMatrix<f64>,
    /// Index ranges of eigenvalue clusters (within-cluster order is solver order).
    pub clusters: Vec<Range<usize>>,
}

impl SpectralBasis {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.eigenvectors.nrows()
    }
}

pub fn eigenbasis(mm: &MetricMeasure, k: usize, shape_id: &str) -> Result<SpectralBasis> {
    eigenbasis_with(mm, k, shape_id, &EigenConfig::default())
}

/// The `k` smallest generalized eigenpairs of `(L, M)`.
///
/// Each eigenvector is signed so its largest-magnitude entry is positive.
pub fn eigenbasis_with(
    mm: &MetricMeasure,
    k: usize,
    shape_id: &str,
    cfg: &EigenConfig,
) -> Result<SpectralBasis> {
    let n = mm.num_vertices();
    if k == 0 || k > n {
        return Err(Error::precondition(format!(
            "k = {k} must be in 1..={n} (number of vertices)"
        )));
    }
    if let Some(i) = mm.mass.iter().position(|&m| !(m > 0.0) || !m.is_finite()) {
        return Err(Error::RankDeficientMass(i));
    }
    let (mut values, mut vectors) = if n <= cfg.dense_max_vertices {
        dense_eigen(mm, k)?
    } else {
        lanczos::shift_invert(mm, k, cfg.iterative_tol)?
    };

    // Round-off can push the constant mode slightly below zero.
    for v in values.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    linalg::fix_column_signs(&mut vectors);
    let scale = values.iter().copied().fold(1.0f64, f64::max);
    let clusters = linalg::clusters(values.as_slice(), cfg.cluster_tol * scale);
    if !clusters.is_empty() {
        log::info!("{shape_id}: eigenvalue clusters at {clusters:?} (solver order kept)");
    }
    Ok(SpectralBasis {
        shape_id: shape_id.to_string(),
        eigenvalues: values,
        eigenvectors: vectors,
        clusters,
    })
}

fn dense_eigen(mm: &MetricMeasure, k: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = mm.num_vertices();
    let inv_sqrt: DVector<f64> = mm.mass.map(|m| 1.0 / m.sqrt());
    let mut a = mm.stiffness_dense();
    for j in 0..n {
        for i in 0..n {
            a[(i, j)] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    let (values, vectors) = linalg::sym_eigen_ascending(&a)?;
    let mut phi = vectors.columns(0, k).into_owned();
    for (i, mut row) in phi.row_iter_mut().enumerate() {
        row *= inv_sqrt[i];
    }
    Ok((values.rows(0, k).into_owned(), phi))
}

/// Shape-DNA descriptor: the first `d` Laplace-Beltrami eigenvalues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeDna(pub Vec<f64>);

impl ShapeDna {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn distance(&self, other: &ShapeDna) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

pub fn shape_dna(basis: &SpectralBasis, d: usize) -> Result<ShapeDna> {
    if d == 0 || d > basis.k() {
        return Err(Error::precondition(format!(
            "Shape-DNA length {d} must be in 1..={}",
            basis.k()
        )));
    }
    Ok(ShapeDna(basis.eigenvalues.iter().take(d).copied().collect()))
}

/// Everything the network layer needs about one shape.
#[derive(Debug, Clone)]
pub struct SpectralShape {
    pub id: String,
    pub metric: MetricMeasure,
    pub basis: SpectralBasis,
    pub dna: ShapeDna,
    pub bbox_diagonal: f64,
}

impl SpectralShape {
    /// Metric, eigenbasis of order `k` and full-length Shape-DNA.
    pub fn compute(mesh: &Mesh, k: usize, cfg: &EigenConfig) -> Result<Self> {
        let metric = metric_measure(mesh)?;
        let basis = eigenbasis_with(&metric, k, &mesh.shape_id, cfg)?;
        let dna = shape_dna(&basis, k)?;
        Ok(SpectralShape {
            id: mesh.shape_id.clone(),
            metric,
            basis,
            dna,
            bbox_diagonal: mesh.bbox_diagonal(),
        })
    }

    pub fn k(&self) -> usize {
        self.basis.k()
    }
}
