//! Functional maps between shape pairs and pairwise shape differences.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{SpectralBasis, SpectralShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrespondenceKind {
    FullBijection,
    SparseLandmarks,
}

/// Vertex pairs `(source index, target index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pub pairs: Vec<(usize, usize)>,
    pub kind: CorrespondenceKind,
}

impl Correspondence {
    pub fn identity(n: usize) -> Self {
        Correspondence {
            pairs: (0..n).map(|i| (i, i)).collect(),
            kind: CorrespondenceKind::FullBijection,
        }
    }

    /// The bijection induced by a relabeling where source vertex `i` became
    /// target vertex `perm[i]`.
    pub fn from_permutation(perm: &[usize]) -> Self {
        Correspondence {
            pairs: perm.iter().enumerate().map(|(i, &p)| (i, p)).collect(),
            kind: CorrespondenceKind::FullBijection,
        }
    }

    pub fn landmarks(pairs: Vec<(usize, usize)>) -> Self {
        Correspondence {
            pairs,
            kind: CorrespondenceKind::SparseLandmarks,
        }
    }

    /// Parses `src tgt` pairs, one per line. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str, kind: CorrespondenceKind, origin: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| Error::Parse {
                path: origin.to_string(),
                line: lineno + 1,
                msg: msg.to_string(),
            };
            let mut it = line.split_whitespace();
            let s = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| err("bad source index"))?;
            let t = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| err("bad target index"))?;
            if it.next().is_some() {
                return Err(err("expected two indices"));
            }
            pairs.push((s, t));
        }
        Ok(Correspondence { pairs, kind })
    }

    pub fn read(path: &Path, kind: CorrespondenceKind) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, kind, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.pairs.len() * 12);
        for (s, t) in &self.pairs {
            let _ = writeln!(out, "{s} {t}");
        }
        out
    }

    /// Checks index ranges, and for full bijections that every vertex on
    /// both sides appears exactly once.
    pub fn validate(&self, n_source: usize, n_target: usize) -> Result<()> {
        for &(s, t) in &self.pairs {
            if s >= n_source || t >= n_target {
                return Err(Error::DimensionMismatch(format!(
                    "pair ({s}, {t}) out of range for {n_source} source / {n_target} target vertices"
                )));
            }
        }
        if self.kind == CorrespondenceKind::FullBijection {
            if n_source != n_target || self.pairs.len() != n_source {
                return Err(Error::NonBijective(format!(
                    "{} pairs between meshes of {n_source} and {n_target} vertices",
                    self.pairs.len()
                )));
            }
            let mut seen_s = vec![false; n_source];
            let mut seen_t = vec![false; n_target];
            for &(s, t) in &self.pairs {
                if std::mem::replace(&mut seen_s[s], true) {
                    return Err(Error::NonBijective(format!("source vertex {s} repeated")));
                }
                if std::mem::replace(&mut seen_t[t], true) {
                    return Err(Error::NonBijective(format!("target vertex {t} repeated")));
                }
            }
        }
        Ok(())
    }
}

/// `k_target x k_source` matrix mapping spectral coefficients from source to target.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalMap {
    pub source_id: String,
    pub target_id: String,
    pub matrix: DMatrix<f64>,
}

impl FunctionalMap {
    pub fn k_source(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn k_target(&self) -> usize {
        self.matrix.nrows()
    }
}

/// `C = Phi_tgt^T M_tgt Pi Phi_src`, where `Pi` pulls functions back along the bijection.
pub fn fmap_from_correspondence(
    src: &SpectralShape,
    tgt: &SpectralShape,
    corr: &Correspondence,
) -> Result<FunctionalMap> {
    if corr.kind != CorrespondenceKind::FullBijection {
        return Err(Error::NonBijective(
            "sparse landmarks must go through fmap_from_landmarks".into(),
        ));
    }
    fmap_from_bijection(&src.basis, &tgt.basis, &tgt.metric.mass, corr)
}

/// Same as [`fmap_from_correspondence`] but from bare bases and target mass.
pub fn fmap_from_bijection(
    src: &SpectralBasis,
    tgt: &SpectralBasis,
    tgt_mass: &DVector<f64>,
    corr: &Correspondence,
) -> Result<FunctionalMap> {
    if tgt_mass.len() != tgt.num_vertices() {
        return Err(Error::DimensionMismatch(format!(
            "target mass has {} entries, basis has {} vertices",
            tgt_mass.len(),
            tgt.num_vertices()
        )));
    }
    corr.validate(src.num_vertices(), tgt.num_vertices())?;
    let (ks, kt) = (src.k(), tgt.k());
    let mut transported = DMatrix::zeros(tgt.num_vertices(), ks);
    for &(s, t) in &corr.pairs {
        for c in 0..ks {
            transported[(t, c)] = src.eigenvectors[(s, c)] * tgt_mass[t];
        }
    }
    let matrix = tgt.eigenvectors.transpose() * transported;
    debug_assert_eq!(matrix.shape(), (kt, ks));
    Ok(FunctionalMap {
        source_id: src.shape_id.clone(),
        target_id: tgt.shape_id.clone(),
        matrix,
    })
}

/// Outcome of a landmark-driven map fit.
#[derive(Debug, Clone)]
pub struct LandmarkFit {
    pub map: FunctionalMap,
    /// Too few landmarks to pin down the map; the returned map is the
    /// minimum-norm (Tikhonov floor) solution.
    pub underdetermined: bool,
    /// `|C A - B|_F / |B|_F` on the landmark descriptors.
    pub residual: f64,
}

const LANDMARK_SIGMA_REL: f64 = 0.05;
const TIKHONOV_FLOOR: f64 = 1e-12;

/// Least-squares map from landmark descriptors with Laplacian-commutativity
/// regularization.
///
/// Each landmark yields a normalized Gaussian of spectral biharmonic distance
/// with width `0.05 * bbox diagonal` on both shapes; `C` maps the source
/// coefficients to the target coefficients. The penalty on `C[a][b]` is
/// `weight * (mu_t[a] - mu_s[b])^2` with eigenvalues scaled by their joint maximum.
pub fn fmap_from_landmarks(
    src: &SpectralShape,
    tgt: &SpectralShape,
    landmarks: &Correspondence,
    weight: f64,
) -> Result<LandmarkFit> {
    landmarks.validate(src.basis.num_vertices(), tgt.basis.num_vertices())?;
    if !(weight >= 0.0) {
        return Err(Error::precondition("regularizer weight must be nonnegative"));
    }
    let ks = src.k();
    let kt = tgt.k();
    let count = landmarks.pairs.len();
    let underdetermined = count < 3 || (weight == 0.0 && count < ks);
    if underdetermined {
        log::warn!(
            "{} -> {}: {count} landmarks underdetermine a {kt}x{ks} map",
            src.id,
            tgt.id
        );
    }
    let a = landmark_descriptors(src, landmarks.pairs.iter().map(|p| p.0));
    let b = landmark_descriptors(tgt, landmarks.pairs.iter().map(|p| p.1));

    let scale = src
        .basis
        .eigenvalues
        .iter()
        .chain(tgt.basis.eigenvalues.iter())
        .fold(0.0f64, |m, v| m.max(*v));
    let scale = if scale > 0.0 { 1.0 / scale } else { 1.0 };
    let gram = &a * a.transpose();
    let rhs = &b * a.transpose();
    let mut matrix = DMatrix::zeros(kt, ks);
    for r in 0..kt {
        let mut sys = gram.clone();
        for c in 0..ks {
            let d = (tgt.basis.eigenvalues[r] - src.basis.eigenvalues[c]) * scale;
            sys[(c, c)] += weight * d * d + TIKHONOV_FLOOR;
        }
        let chol = sys
            .cholesky()
            .ok_or_else(|| Error::SolverFailure("landmark normal equations not positive definite".into()))?;
        let row = chol.solve(&rhs.row(r).transpose());
        matrix.set_row(r, &row.transpose());
    }
    let bn = b.norm();
    let residual = if bn > 0.0 { (&matrix * &a - &b).norm() / bn } else { 0.0 };
    Ok(LandmarkFit {
        map: FunctionalMap {
            source_id: src.id.clone(),
            target_id: tgt.id.clone(),
            matrix,
        },
        underdetermined,
        residual,
    })
}

/// Spectral coefficients (`k x count`) of one Gaussian probe per landmark.
fn landmark_descriptors(shape: &SpectralShape, vertices: impl Iterator<Item = usize>) -> DMatrix<f64> {
    let phi = &shape.basis.eigenvectors;
    let lam = &shape.basis.eigenvalues;
    let mass = &shape.metric.mass;
    let n = phi.nrows();
    let sigma = LANDMARK_SIGMA_REL * shape.bbox_diagonal;
    // Biharmonic embedding: skip the constant mode, weight by 1 / lambda.
    let weights: Vec<f64> = lam
        .iter()
        .map(|&l| if l > 1e-8 * lam.max() { 1.0 / l } else { 0.0 })
        .collect();
    let columns: Vec<DVector<f64>> = vertices
        .map(|v| {
            let g = DVector::from_fn(n, |x, _| {
                let d2: f64 = (0..phi.ncols())
                    .map(|c| (weights[c] * (phi[(x, c)] - phi[(v, c)])).powi(2))
                    .sum();
                (-d2 / (2.0 * sigma * sigma)).exp()
            });
            let m_norm = g.iter().zip(mass.iter()).map(|(x, m)| x * x * m).sum::<f64>().sqrt();
            let g = g / m_norm;
            phi.transpose() * g.component_mul(mass)
        })
        .collect();
    if columns.is_empty() {
        DMatrix::zeros(phi.ncols(), 0)
    } else {
        DMatrix::from_columns(&columns)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifferenceKind {
    Area,
    Conformal,
}

impl DifferenceKind {
    pub fn name(self) -> &'static str {
        match self {
            DifferenceKind::Area => "area",
            DifferenceKind::Conformal => "conformal",
        }
    }
}

impl std::str::FromStr for DifferenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "area" => Ok(DifferenceKind::Area),
            "conformal" => Ok(DifferenceKind::Conformal),
            other => Err(Error::precondition(format!("unknown difference kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairDifference {
    pub base_id: String,
    pub other_id: String,
    pub kind: DifferenceKind,
    pub matrix: DMatrix<f64>,
}

/// Relative tolerance of the spectral pseudo-inverse used by conformal differences.
pub const CONFORMAL_PINV_RTOL: f64 = 1e-8;

/// Area difference `C^T C` or conformal difference `pinv(L_i) C^T L_j C`.
pub fn pair_difference(
    map: &FunctionalMap,
    source_eigenvalues: &DVector<f64>,
    target_eigenvalues: &DVector<f64>,
    kind: DifferenceKind,
) -> Result<PairDifference> {
    let c = &map.matrix;
    if source_eigenvalues.len() != c.ncols() || target_eigenvalues.len() != c.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "map is {}x{}, spectra have {} (target) and {} (source) entries",
            c.nrows(),
            c.ncols(),
            target_eigenvalues.len(),
            source_eigenvalues.len()
        )));
    }
    let matrix = match kind {
        DifferenceKind::Area => c.transpose() * c,
        DifferenceKind::Conformal => {
            let mut lc = c.clone();
            for (r, mut row) in lc.row_iter_mut().enumerate() {
                row *= target_eigenvalues[r];
            }
            conformal_from(&(c.transpose() * lc), source_eigenvalues, 1.0)
        }
    };
    Ok(PairDifference {
        base_id: map.source_id.clone(),
        other_id: map.target_id.clone(),
        kind,
        matrix,
    })
}

/// `pinv(diag(base)) * inner`, with every zero mode's row and column replaced
/// by `fill * e_z`.
pub(crate) fn conformal_from(inner: &DMatrix<f64>, base: &DVector<f64>, fill: f64) -> DMatrix<f64> {
    let tau = CONFORMAL_PINV_RTOL * base.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = inner.clone();
    let mut zeros = Vec::new();
    for (r, mut row) in out.row_iter_mut().enumerate() {
        if base[r].abs() > tau {
            row /= base[r];
        } else {
            zeros.push(r);
        }
    }
    for z in zeros {
        out.row_mut(z).fill(0.0);
        out.column_mut(z).fill(0.0);
        out[(z, z)] = fill;
    }
    out
}
