//! Operator-level synthesis: analogies, interpolation, partial mixing,
//! localized bases and spectral descriptors of latent differences.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmaps::DifferenceKind;
use crate::io::container;
use crate::latent::ConsistentLatentBasis;
use crate::linalg;
use crate::spectral::SpectralBasis;
use crate::variability::ProjectionBasis;

/// Largest condition number accepted for the operator inverted by an analogy.
pub const MAX_CONDITION: f64 = 1e8;

/// An input of a recipe: a label and the sha256 of its matrix container bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Operand {
    pub label: String,
    pub sha256: String,
}

impl Operand {
    pub fn of(label: impl Into<String>, matrix: &DMatrix<f64>) -> Self {
        Operand {
            label: label.into(),
            sha256: container::matrix_hash(matrix),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Recipe {
    /// `B A^-1 C`
    Analogy { a: Operand, b: Operand, c: Operand },
    /// `(1 - t) A + t B`
    Interpolation { a: Operand, b: Operand, t: f64 },
    /// `A (I - F F^T) + B F F^T`
    PartialMix { a: Operand, b: Operand, f: Operand },
}

impl Recipe {
    pub fn operands(&self) -> Vec<&Operand> {
        match self {
            Recipe::Analogy { a, b, c } => vec![a, b, c],
            Recipe::Interpolation { a, b, .. } => vec![a, b],
            Recipe::PartialMix { a, b, f } => vec![a, b, f],
        }
    }

    /// Recomputes the result from operands supplied by `lookup`, checking
    /// every operand against its recorded hash.
    pub fn replay(&self, mut lookup: impl FnMut(&Operand) -> Option<DMatrix<f64>>) -> Result<DMatrix<f64>> {
        let mut fetch = |op: &Operand| -> Result<DMatrix<f64>> {
            let m = lookup(op).ok_or_else(|| Error::UnknownShape(op.label.clone()))?;
            if container::matrix_hash(&m) != op.sha256 {
                return Err(Error::precondition(format!("operand '{}' does not match its recorded hash", op.label)));
            }
            Ok(m)
        };
        Ok(match self {
            Recipe::Analogy { a, b, c } => analogy_matrix(&fetch(a)?, &fetch(b)?, &fetch(c)?)?,
            Recipe::Interpolation { a, b, t } => interpolate_matrix(&fetch(a)?, &fetch(b)?, *t)?,
            Recipe::PartialMix { a, b, f } => {
                let f = ProjectionBasis::new(fetch(f)?, f.label.clone())?;
                partial_mix_matrix(&fetch(a)?, &fetch(b)?, &f)?
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorExpression {
    pub result: DMatrix<f64>,
    pub recipe: Recipe,
}

fn same_square(mats: &[&DMatrix<f64>]) -> Result<usize> {
    let m = mats[0].nrows();
    for x in mats {
        if x.shape() != (m, m) {
            return Err(Error::DimensionMismatch(format!(
                "operators must all be {m}x{m}, got {}x{}",
                x.nrows(),
                x.ncols()
            )));
        }
    }
    Ok(m)
}

fn analogy_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    same_square(&[a, b, c])?;
    let cond = linalg::condition_number(a);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::IllConditioned(cond));
    }
    let x = a
        .clone()
        .lu()
        .solve(c)
        .ok_or(Error::IllConditioned(f64::INFINITY))?;
    Ok(b * x)
}

fn interpolate_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    same_square(&[a, b])?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::precondition(format!("interpolation parameter {t} outside [0, 1]")));
    }
    Ok(a * (1.0 - t) + b * t)
}

fn partial_mix_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, f: &ProjectionBasis) -> Result<DMatrix<f64>> {
    let m = same_square(&[a, b])?;
    if f.m() != m {
        return Err(Error::DimensionMismatch(format!("projection basis has {} rows, operators are {m}x{m}", f.m())));
    }
    let r = linalg::orthonormality_residual(&f.f);
    if r > crate::variability::ORTHONORMALITY_TOL {
        return Err(Error::NonOrthonormal(r));
    }
    let p = f.projector();
    Ok(a * (DMatrix::identity(m, m) - &p) + b * p)
}

/// `D_B D_A^-1 D_C`, through an LU solve.
pub fn analogy(
    a: (&str, &DMatrix<f64>),
    b: (&str, &DMatrix<f64>),
    c: (&str, &DMatrix<f64>),
) -> Result<OperatorExpression> {
    Ok(OperatorExpression {
        result: analogy_matrix(a.1, b.1, c.1)?,
        recipe: Recipe::Analogy {
            a: Operand::of(a.0, a.1),
            b: Operand::of(b.0, b.1),
            c: Operand::of(c.0, c.1),
        },
    })
}

pub fn interpolate(a: (&str, &DMatrix<f64>), b: (&str, &DMatrix<f64>), t: f64) -> Result<OperatorExpression> {
    Ok(OperatorExpression {
        result: interpolate_matrix(a.1, b.1, t)?,
        recipe: Recipe::Interpolation {
            a: Operand::of(a.0, a.1),
            b: Operand::of(b.0, b.1),
            t,
        },
    })
}

/// `D_A (I - F F^T) + D_B F F^T`: acts as `D_B` on span(F) and as `D_A` on its complement.
pub fn partial_mix(
    a: (&str, &DMatrix<f64>),
    b: (&str, &DMatrix<f64>),
    f: &ProjectionBasis,
) -> Result<OperatorExpression> {
    Ok(OperatorExpression {
        result: partial_mix_matrix(a.1, b.1, f)?,
        recipe: Recipe::PartialMix {
            a: Operand::of(a.0, a.1),
            b: Operand::of(b.0, b.1),
            f: Operand::of(f.description.clone(), &f.f),
        },
    })
}

/// Latent functions concentrated on a vertex region of a member shape.
///
/// The region's indicator and its localized Gram operator
/// `Phi^T M diag(1_S) Phi` are pulled into latent coordinates through
/// `pinv(Y_i)`; the basis is the top `p` left singular vectors of
/// `[c_S | pinv(Y) Phi^T M diag(1_S) Phi Y]`, with `c_S` the unit indicator coefficients.
pub fn localized_basis(
    clb: &ConsistentLatentBasis,
    basis: &SpectralBasis,
    mass: &DVector<f64>,
    region: &[usize],
    p: Option<usize>,
) -> Result<ProjectionBasis> {
    if region.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let n = basis.num_vertices();
    if mass.len() != n {
        return Err(Error::DimensionMismatch("mass and basis differ in vertex count".into()));
    }
    if let Some(&bad) = region.iter().find(|&&v| v >= n) {
        return Err(Error::precondition(format!("region vertex {bad} out of range ({n} vertices)")));
    }
    let y = clb.block(&basis.shape_id)?;
    if y.nrows() != basis.k() {
        return Err(Error::DimensionMismatch("latent block and basis order differ".into()));
    }
    let m = clb.m;
    let p = p.unwrap_or(10.min(m)).min(m);
    let mut weights = DVector::zeros(n);
    for &v in region {
        weights[v] = mass[v];
    }
    let phi = &basis.eigenvectors;
    let y_pinv = linalg::pinv(y, 1e-10);
    let indicator = &y_pinv * (phi.transpose() * &weights);
    let mut weighted_phi = phi.clone();
    for (r, mut row) in weighted_phi.row_iter_mut().enumerate() {
        row *= weights[r];
    }
    let local = &y_pinv * (phi.transpose() * weighted_phi) * y;

    let mut g = DMatrix::zeros(m, m + 1);
    let cn = indicator.norm();
    if cn > 0.0 {
        g.set_column(0, &(indicator / cn));
    }
    g.columns_mut(1, m).copy_from(&local);
    let (u, _) = linalg::top_left_singular_vectors(&g, p);
    ProjectionBasis::new(u, format!("region of {} vertices on {}", region.len(), basis.shape_id))
}

/// Largest canonical correlation between two subspaces.
pub fn max_canonical_correlation(a: &ProjectionBasis, b: &ProjectionBasis) -> f64 {
    if a.p() == 0 || b.p() == 0 {
        return 0.0;
    }
    (a.f.transpose() * &b.f).singular_values().max()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumDescriptor {
    /// Ascending eigenvalues.
    pub values: Vec<f64>,
    /// The operator was replaced by its symmetric part first.
    pub symmetrized: bool,
}

impl SpectrumDescriptor {
    pub fn distance(&self, other: &SpectrumDescriptor) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Eigenvalues of a latent difference. Conformal operators use their symmetric part.
pub fn lssd_spectrum_descriptor(d: &DMatrix<f64>, kind: DifferenceKind) -> Result<SpectrumDescriptor> {
    same_square(&[d])?;
    let (values, _) = linalg::sym_eigen_ascending(d)?;
    Ok(SpectrumDescriptor {
        values: values.iter().copied().collect(),
        symmetrized: kind == DifferenceKind::Conformal,
    })
}

/// For every descriptor in `from`, the index of its nearest descriptor in `to`
/// (ties by index).
pub fn nearest_neighbor_alignment(from: &[SpectrumDescriptor], to: &[SpectrumDescriptor]) -> Vec<usize> {
    from.iter()
        .map(|a| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, b) in to.iter().enumerate() {
                let d = a.distance(b);
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    #[test]
    fn diagonal_analogy() {
        let r = analogy(("a", &diag(&[1.0, 2.0])), ("b", &diag(&[2.0, 2.0])), ("c", &diag(&[3.0, 1.0]))).unwrap();
        assert!((r.result - diag(&[6.0, 1.0])).amax() < 1e-14);
    }

    #[test]
    fn singular_analogy_rejected() {
        let a = diag(&[1.0, 1e-12]);
        let err = analogy(("a", &a), ("b", &a), ("c", &a)).unwrap_err();
        assert!(matches!(err, Error::IllConditioned(c) if c > MAX_CONDITION));
    }

    #[test]
    fn interpolation_examples() {
        let zero = DMatrix::zeros(2, 2);
        let id = DMatrix::identity(2, 2);
        assert_eq!(interpolate(("a", &zero), ("b", &id), 0.5).unwrap().result, id.clone() * 0.5);
        assert_eq!(interpolate(("a", &zero), ("b", &id), 0.0).unwrap().result, zero);
        assert!(interpolate(("a", &zero), ("b", &id), 1.5).is_err());
    }

    #[test]
    fn partial_mix_example() {
        let e2 = ProjectionBasis::new(DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), "e2").unwrap();
        let r = partial_mix(("a", &diag(&[1.0, 4.0])), ("b", &DMatrix::identity(2, 2)), &e2).unwrap();
        assert_eq!(r.result, DMatrix::identity(2, 2));
        let a = diag(&[1.0, 4.0]);
        let b = diag(&[5.0, 6.0]);
        assert_eq!(partial_mix(("a", &a), ("b", &b), &ProjectionBasis::full(2)).unwrap().result, b);
        assert_eq!(partial_mix(("a", &a), ("b", &b), &ProjectionBasis::empty(2)).unwrap().result, a);
    }

    #[test]
    fn recipes_replay_bit_identically() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.1, 1.5]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 3.0]);
        let c = DMatrix::from_row_slice(2, 2, &[0.7, 0.0, 0.4, 1.1]);
        let expr = analogy(("a", &a), ("b", &b), ("c", &c)).unwrap();
        let json = serde_json::to_string(&expr.recipe).unwrap();
        let recipe: Recipe = serde_json::from_str(&json).unwrap();
        let replayed = recipe
            .replay(|op| match op.label.as_str() {
                "a" => Some(a.clone()),
                "b" => Some(b.clone()),
                "c" => Some(c.clone()),
                _ => None,
            })
            .unwrap();
        assert_eq!(replayed, expr.result);
        let tampered = recipe.replay(|_| Some(a.clone()));
        assert!(tampered.is_err());
    }

    #[test]
    fn identity_descriptor() {
        let d = lssd_spectrum_descriptor(&DMatrix::identity(4, 4), DifferenceKind::Area).unwrap();
        assert_eq!(d.values, vec![1.0; 4]);
        assert!(!d.symmetrized);
    }

    #[test]
    fn alignment_picks_nearest() {
        let mk = |v: f64| SpectrumDescriptor {
            values: vec![v],
            symmetrized: false,
        };
        let from = [mk(0.0), mk(1.0), mk(2.0)];
        let to = [mk(2.1), mk(-0.1), mk(0.9)];
        assert_eq!(nearest_neighbor_alignment(&from, &to), vec![1, 2, 0]);
    }
}
