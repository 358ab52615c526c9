//! Projected latent differences and distinctive functions of a collection.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{ConsistentLatentBasis, LatentDifference};
use crate::linalg;
use crate::network::FMNetwork;
use crate::spectral::SpectralBasis;

pub const ORTHONORMALITY_TOL: f64 = 1e-10;

/// `m x p` matrix with orthonormal columns spanning a latent function subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBasis {
    pub f: DMatrix<f64>,
    pub description: String,
}

impl ProjectionBasis {
    pub fn new(f: DMatrix<f64>, description: impl Into<String>) -> Result<Self> {
        let r = linalg::orthonormality_residual(&f);
        if r > ORTHONORMALITY_TOL {
            return Err(Error::NonOrthonormal(r));
        }
        Ok(ProjectionBasis {
            f,
            description: description.into(),
        })
    }

    pub fn empty(m: usize) -> Self {
        ProjectionBasis {
            f: DMatrix::zeros(m, 0),
            description: "empty".into(),
        }
    }

    pub fn full(m: usize) -> Self {
        ProjectionBasis {
            f: DMatrix::identity(m, m),
            description: "full".into(),
        }
    }

    /// Span of a single vector, normalized.
    pub fn from_vector(alpha: &DVector<f64>, description: impl Into<String>) -> Result<Self> {
        let n = alpha.norm();
        if n == 0.0 {
            return Err(Error::precondition("cannot span a zero vector"));
        }
        Self::new(DMatrix::from_column_slice(alpha.len(), 1, (alpha / n).as_slice()), description)
    }

    pub fn m(&self) -> usize {
        self.f.nrows()
    }

    pub fn p(&self) -> usize {
        self.f.ncols()
    }

    pub fn projector(&self) -> DMatrix<f64> {
        &self.f * self.f.transpose()
    }

    fn check(&self, m: usize) -> Result<()> {
        if self.m() != m {
            return Err(Error::DimensionMismatch(format!(
                "projection basis has {} rows, operator is {m}x{m}",
                self.m()
            )));
        }
        let r = linalg::orthonormality_residual(&self.f);
        if r > ORTHONORMALITY_TOL {
            return Err(Error::NonOrthonormal(r));
        }
        Ok(())
    }
}

fn check_square(d: &DMatrix<f64>) -> Result<usize> {
    if d.nrows() != d.ncols() {
        return Err(Error::DimensionMismatch(format!("operator is {}x{}", d.nrows(), d.ncols())));
    }
    Ok(d.nrows())
}

/// `P(F) = D (I - F F^T) + F F^T`.
pub fn project_difference(d: &DMatrix<f64>, f: &ProjectionBasis) -> Result<DMatrix<f64>> {
    let m = check_square(d)?;
    f.check(m)?;
    let p = f.projector();
    Ok(d * (DMatrix::identity(m, m) - &p) + p)
}

/// `trace(F^T (D_i - D_j)^T (D_i - D_j) F)`, which equals
/// `|D_i - D_j|^2 - |P_i(F) - P_j(F)|^2`.
pub fn delta(di: &DMatrix<f64>, dj: &DMatrix<f64>, f: &ProjectionBasis) -> Result<f64> {
    let m = check_square(di)?;
    if dj.shape() != di.shape() {
        return Err(Error::DimensionMismatch("operators differ in size".into()));
    }
    f.check(m)?;
    let diff = di - dj;
    let df = &diff * &f.f;
    Ok(df.norm_squared())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariabilityMode {
    Global,
    CrossCollection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistinctiveFunction {
    /// Unit vector in latent coordinates.
    pub alpha: DVector<f64>,
    pub eigenvalue: f64,
    pub mode: VariabilityMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariabilityResult {
    /// Descending eigenvalue order.
    pub functions: Vec<DistinctiveFunction>,
    /// The top eigenvalue is repeated (or the matrix vanishes), so the top function is not unique.
    pub degenerate: bool,
}

/// Two disjoint, nonempty groups of shape ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub cluster_a: Vec<String>,
    pub cluster_b: Vec<String>,
}

impl Partition {
    pub fn validate(&self) -> Result<()> {
        if self.cluster_a.is_empty() || self.cluster_b.is_empty() {
            return Err(Error::precondition("both clusters of a partition must be nonempty"));
        }
        let a: HashSet<&String> = self.cluster_a.iter().collect();
        if let Some(dup) = self.cluster_b.iter().find(|id| a.contains(id)) {
            return Err(Error::precondition(format!("shape '{dup}' is in both clusters")));
        }
        Ok(())
    }
}

/// `(D_i - D_j)^T (D_i - D_j)`.
pub fn pair_term(di: &DMatrix<f64>, dj: &DMatrix<f64>) -> DMatrix<f64> {
    let diff = di - dj;
    diff.transpose() * diff
}

fn top_functions(q: &DMatrix<f64>, count: usize, mode: VariabilityMode) -> Result<VariabilityResult> {
    let (values, vectors) = linalg::sym_eigen_descending(q)?;
    let m = values.len();
    if count == 0 || count > m {
        return Err(Error::precondition(format!("count must be in 1..={m}")));
    }
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let degenerate = scale == 0.0 || (m > 1 && (values[0] - values[1]).abs() <= 1e-10 * scale.max(1.0));
    if degenerate {
        log::warn!("top distinctive eigenvalue is repeated; the distinctive function is not unique");
    }
    let functions = (0..count)
        .map(|c| DistinctiveFunction {
            alpha: vectors.column(c).into_owned(),
            eigenvalue: values[c],
            mode,
        })
        .collect();
    Ok(VariabilityResult { functions, degenerate })
}

fn same_size(diffs: &[LatentDifference]) -> Result<usize> {
    let m = diffs.first().map(|d| d.matrix.nrows()).unwrap_or(0);
    for d in diffs {
        if d.matrix.shape() != (m, m) {
            return Err(Error::DimensionMismatch(format!("difference of {} is not {m}x{m}", d.shape_id)));
        }
    }
    Ok(m)
}

/// Top eigenvectors of `sum_{i<j} (D_i - D_j)^2`.
pub fn global_variability(diffs: &[LatentDifference], count: usize) -> Result<VariabilityResult> {
    if diffs.len() < 2 {
        return Err(Error::InsufficientShapes { need: 2, got: diffs.len() });
    }
    let m = same_size(diffs)?;
    let mut q = DMatrix::zeros(m, m);
    for i in 0..diffs.len() {
        for j in i + 1..diffs.len() {
            q += pair_term(&diffs[i].matrix, &diffs[j].matrix);
        }
    }
    top_functions(&q, count, VariabilityMode::Global)
}

/// Top eigenvectors of `sum_across (D_i - D_j)^2 - w * sum_within (D_i - D_j)^2`.
/// Shapes outside the partition are ignored.
pub fn cross_collection_variability(
    diffs: &[LatentDifference],
    partition: &Partition,
    count: usize,
    within_weight: f64,
) -> Result<VariabilityResult> {
    partition.validate()?;
    let m = same_size(diffs)?;
    let lookup = |id: &String| {
        diffs
            .iter()
            .find(|d| &d.shape_id == id)
            .map(|d| &d.matrix)
            .ok_or_else(|| Error::UnknownShape(id.clone()))
    };
    let a: Vec<&DMatrix<f64>> = partition.cluster_a.iter().map(lookup).collect::<Result<_>>()?;
    let b: Vec<&DMatrix<f64>> = partition.cluster_b.iter().map(lookup).collect::<Result<_>>()?;
    let mut q = DMatrix::zeros(m, m);
    for da in &a {
        for db in &b {
            q += pair_term(da, db);
        }
    }
    for cluster in [&a, &b] {
        for i in 0..cluster.len() {
            for j in i + 1..cluster.len() {
                q -= pair_term(cluster[i], cluster[j]) * within_weight;
            }
        }
    }
    top_functions(&q, count, VariabilityMode::CrossCollection)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub shape_id: String,
    pub raw: DVector<f64>,
    /// `|raw|` divided by its maximum (all zeros for a zero field).
    pub normalized: DVector<f64>,
}

/// `f = Phi_i Y_i alpha` on a member shape.
pub fn transfer_to_shape(
    alpha: &DVector<f64>,
    basis: &SpectralBasis,
    clb: &ConsistentLatentBasis,
) -> Result<ScalarField> {
    let y = clb.block(&basis.shape_id)?;
    if y.nrows() != basis.k() || y.ncols() != alpha.len() {
        return Err(Error::DimensionMismatch(format!(
            "basis of order {}, latent block {}x{}, function of length {}",
            basis.k(),
            y.nrows(),
            y.ncols(),
            alpha.len()
        )));
    }
    let raw = &basis.eigenvectors * (y * alpha);
    let peak = raw.amax();
    let normalized = if peak > 0.0 { raw.map(|v| v.abs() / peak) } else { DVector::zeros(raw.len()) };
    Ok(ScalarField {
        shape_id: basis.shape_id.clone(),
        raw,
        normalized,
    })
}

/// Fraction of `sum_v f_v^2` on the listed vertices.
pub fn squared_mass_fraction(field: &DVector<f64>, region: &[usize]) -> f64 {
    let total = field.norm_squared();
    if total == 0.0 {
        return 0.0;
    }
    region.iter().map(|&v| field[v] * field[v]).sum::<f64>() / total
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationEmbedding {
    /// `beta_i = D_i alpha`.
    pub beta: Vec<DVector<f64>>,
    /// First two principal coordinates of the centered `beta_i`.
    pub coords: Vec<[f64; 2]>,
}

pub fn separation_embedding(diffs: &[LatentDifference], alpha: &DVector<f64>) -> Result<SeparationEmbedding> {
    let beta: Vec<DVector<f64>> = diffs
        .iter()
        .map(|d| {
            if d.matrix.ncols() != alpha.len() {
                Err(Error::DimensionMismatch(format!(
                    "difference of {} has {} columns, function has {} entries",
                    d.shape_id,
                    d.matrix.ncols(),
                    alpha.len()
                )))
            } else {
                Ok(&d.matrix * alpha)
            }
        })
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = beta.iter().map(|b| b.iter().copied().collect()).collect();
    Ok(SeparationEmbedding {
        coords: pca_2d(&rows)?,
        beta,
    })
}

/// Projection of mean-centered rows onto their first two principal axes.
/// Axis signs follow the largest-magnitude-positive convention.
pub fn pca_2d(rows: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let n = rows.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let dim = rows[0].len();
    let mut x = DMatrix::from_fn(n, dim, |i, j| rows[i][j]);
    let mean = x.row_mean();
    for mut row in x.row_iter_mut() {
        row -= &mean;
    }
    let cov = x.transpose() * &x;
    let (values, vectors) = linalg::sym_eigen_descending(&cov)?;
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut coords = vec![[0.0; 2]; n];
    for axis in 0..2.min(dim) {
        if values[axis] <= 1e-14 * scale || scale == 0.0 {
            continue;
        }
        let proj = &x * vectors.column(axis);
        for i in 0..n {
            coords[i][axis] = proj[i];
        }
    }
    Ok(coords)
}

/// Relative commutator `|H^X H^D - H^D H^X|_F / (|H^X|_F |H^D|_F)` maximized
/// over all pairs `(i, j)` and all directed edges `(k, l)`, with
/// `H^D(i, j) = (D_i - D_j)^2` on area differences and
/// `H^X(k, l) = (X_kl Y_k - Y_l)^T (X_kl Y_k - Y_l)`, where the adjoint map
/// `X_kl` is the transpose of the map `l -> k`.
pub fn huang17_commutativity_check(
    diffs: &[LatentDifference],
    clb: &ConsistentLatentBasis,
    net: &FMNetwork,
) -> Result<f64> {
    for (node, y) in net.nodes.iter().zip(&clb.y) {
        if clb.m != node.k() || node.k() != node.num_vertices {
            return Err(Error::NotFullInformation(format!(
                "shape {} has k = {}, {} vertices, latent dimension {}",
                node.id,
                node.k(),
                node.num_vertices,
                clb.m
            )));
        }
        debug_assert_eq!(y.nrows(), node.k());
    }
    if clb.ids.len() != net.len() {
        return Err(Error::DimensionMismatch("latent basis and network differ in size".into()));
    }
    let mut hd = Vec::new();
    for i in 0..diffs.len() {
        for j in i + 1..diffs.len() {
            hd.push(pair_term(&diffs[i].matrix, &diffs[j].matrix));
        }
    }
    let mut hx = Vec::new();
    for ((l, k), map) in net.maps() {
        let r = map.matrix.transpose() * &clb.y[k] - &clb.y[l];
        hx.push(r.transpose() * r);
    }
    let mut worst = 0.0f64;
    for a in &hx {
        for b in &hd {
            let denom = a.norm() * b.norm();
            if denom == 0.0 {
                continue;
            }
            worst = worst.max((a * b - b * a).norm() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fmaps::DifferenceKind;

    fn ld(id: &str, m: DMatrix<f64>) -> LatentDifference {
        LatentDifference::new(id, DifferenceKind::Area, m)
    }

    #[test]
    fn projection_examples() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
        let e1 = ProjectionBasis::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), "e1").unwrap();
        let p = project_difference(&d, &e1).unwrap();
        assert_eq!(p, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]));
        assert_eq!(project_difference(&d, &ProjectionBasis::full(2)).unwrap(), DMatrix::identity(2, 2));
        assert_eq!(project_difference(&d, &ProjectionBasis::empty(2)).unwrap(), d);
    }

    #[test]
    fn delta_example() {
        let di = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let dj = DMatrix::zeros(2, 2);
        let e2 = ProjectionBasis::new(DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), "e2").unwrap();
        assert_eq!(delta(&di, &dj, &e2).unwrap(), 4.0);
        assert_eq!(delta(&di, &di, &e2).unwrap(), 0.0);
    }

    #[test]
    fn non_orthonormal_rejected() {
        let f = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        assert!(matches!(ProjectionBasis::new(f, "bad"), Err(Error::NonOrthonormal(_))));
    }

    #[test]
    fn rank_one_global_difference() {
        let m = 4;
        let mut d2 = DMatrix::zeros(m, m);
        d2[(m - 1, m - 1)] = 5.0;
        let res = global_variability(&[ld("a", DMatrix::zeros(m, m)), ld("b", d2)], 1).unwrap();
        let f = &res.functions[0];
        assert!((f.eigenvalue - 25.0).abs() < 1e-12);
        assert!((f.alpha[m - 1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_differences_flag_degeneracy() {
        let d = DMatrix::<f64>::identity(3, 3);
        let res = global_variability(&[ld("a", d.clone()), ld("b", d)], 2).unwrap();
        assert!(res.degenerate);
        assert_eq!(res.functions[0].eigenvalue, 0.0);
    }

    #[test]
    fn cross_collection_picks_cluster_entry() {
        let m = 3;
        let base = DMatrix::<f64>::identity(m, m);
        let mut other = base.clone();
        other[(m - 1, m - 1)] = 2.0;
        let diffs = vec![ld("a0", base.clone()), ld("a1", base), ld("b0", other.clone()), ld("b1", other)];
        let part = Partition {
            cluster_a: vec!["a0".into(), "a1".into()],
            cluster_b: vec!["b0".into(), "b1".into()],
        };
        let res = cross_collection_variability(&diffs, &part, 1, 1.0).unwrap();
        assert!((res.functions[0].alpha[m - 1].abs() - 1.0).abs() < 1e-12);

        let empty = Partition {
            cluster_a: vec![],
            cluster_b: vec!["b0".into()],
        };
        assert!(cross_collection_variability(&diffs, &empty, 1, 1.0).is_err());
        let unknown = Partition {
            cluster_a: vec!["zz".into()],
            cluster_b: vec!["b0".into()],
        };
        assert!(matches!(
            cross_collection_variability(&diffs, &unknown, 1, 1.0),
            Err(Error::UnknownShape(_))
        ));
    }

    #[test]
    fn embedding_of_equal_differences_is_zero() {
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let diffs = vec![ld("a", d.clone()), ld("b", d.clone())];
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let emb = separation_embedding(&diffs, &e1).unwrap();
        assert_eq!(emb.beta[0], d.column(0).into_owned());
        assert!(emb.coords.iter().all(|c| c == &[0.0, 0.0]));
    }
}
