//! Consistent latent bases, their canonical form, the latent shape and
//! latent shape differences.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fmaps::{conformal_from, DifferenceKind, FunctionalMap};
use crate::linalg;
use crate::network::FMNetwork;
use crate::spectral::ShapeDna;

/// Tolerance on `sum Y_i^T Y_i = I` accepted by downstream operations.
pub const CONSTRAINT_TOL: f64 = 1e-8;
/// Relative gap below which latent eigenvalues are treated as one cluster.
pub const CLUSTER_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatentWarning {
    /// Eigenvalues `m` and `m+1` of the block matrix coincide, so the latent subspace is not unique.
    SpectralGap { lambda_m: f64, lambda_next: f64 },
    /// Latent eigenvalue clusters whose column order is fixed only by convention.
    ClusterAmbiguity { clusters: Vec<Range<usize>> },
}

/// Per-shape `k_i x m` blocks `Y_i` with `sum Y_i^T Y_i = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistentLatentBasis {
    pub ids: Vec<String>,
    pub y: Vec<DMatrix<f64>>,
    pub m: usize,
    pub canonical: bool,
    /// `sum over directed edges of |C_ij Y_i - Y_j|_F^2`.
    pub consistency_residual: f64,
    pub warnings: Vec<LatentWarning>,
}

impl ConsistentLatentBasis {
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|s| s == id)
    }

    pub fn block(&self, id: &str) -> Result<&DMatrix<f64>> {
        self.index_of(id)
            .map(|i| &self.y[i])
            .ok_or_else(|| Error::UnknownShape(id.to_string()))
    }

    /// `|sum Y_i^T Y_i - I|` (max entry).
    pub fn constraint_residual(&self) -> f64 {
        let mut g = DMatrix::<f64>::identity(self.m, self.m) * -1.0;
        for y in &self.y {
            g += y.transpose() * y;
        }
        g.amax()
    }

    /// Off-diagonal to diagonal Frobenius ratio of `sum Y_i^T Lambda_i Y_i`.
    pub fn diagonality_residual(&self, spectra: &[DVector<f64>]) -> f64 {
        linalg::off_diagonal_ratio(&weighted_gram(&self.y, spectra))
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

fn weighted_gram(y: &[DMatrix<f64>], spectra: &[DVector<f64>]) -> DMatrix<f64> {
    let m = y.first().map_or(0, |b| b.ncols());
    let mut e = DMatrix::zeros(m, m);
    for (yi, lam) in y.iter().zip(spectra) {
        let mut ly = yi.clone();
        for (r, mut row) in ly.row_iter_mut().enumerate() {
            row *= lam[r];
        }
        e += yi.transpose() * ly;
    }
    e
}

/// Latent spectrum and bookkeeping of a canonical basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentShape {
    pub collection_id: String,
    /// Ascending, length `m`.
    pub spectrum: DVector<f64>,
    pub clusters: Vec<Range<usize>>,
}

impl LatentShape {
    pub fn m(&self) -> usize {
        self.spectrum.len()
    }
}

/// Stable identifier of a collection from its ordered shape ids.
pub fn collection_id(ids: &[String]) -> String {
    let mut h = Sha256::new();
    for id in ids {
        h.update(id.as_bytes());
        h.update([0u8]);
    }
    hex::encode(&h.finalize()[..8])
}

/// Block matrix of the quadratic energy `sum |C_ij Y_i - Y_j|_F^2` and the
/// offsets of each shape's block.
pub fn energy_matrix(net: &FMNetwork) -> (DMatrix<f64>, Vec<usize>) {
    let mut offsets = vec![0usize];
    for node in &net.nodes {
        offsets.push(offsets.last().unwrap() + node.k());
    }
    let total = *offsets.last().unwrap();
    let mut w = DMatrix::zeros(total, total);
    for ((i, j), map) in net.maps() {
        let c = &map.matrix;
        let (oi, oj) = (offsets[i], offsets[j]);
        let (ki, kj) = (c.ncols(), c.nrows());
        let mut bii = w.view_mut((oi, oi), (ki, ki));
        bii += c.transpose() * c;
        for d in 0..kj {
            w[(oj + d, oj + d)] += 1.0;
        }
        let mut bij = w.view_mut((oi, oj), (ki, kj));
        bij -= c.transpose();
        let mut bji = w.view_mut((oj, oi), (kj, ki));
        bji -= c;
    }
    (w, offsets)
}

/// The `m` lowest eigenvectors of the energy matrix, split into per-shape blocks.
pub fn consistent_latent_basis(net: &FMNetwork, m: usize) -> Result<ConsistentLatentBasis> {
    if net.is_empty() {
        return Err(Error::InsufficientShapes { need: 1, got: 0 });
    }
    let kmin = net.nodes.iter().map(|n| n.k()).min().unwrap();
    if m == 0 || m > kmin {
        return Err(Error::precondition(format!(
            "latent dimension m = {m} must be in 1..={kmin} (smallest basis size)"
        )));
    }
    let (w, offsets) = energy_matrix(net);
    let (values, vectors) = linalg::sym_eigen_ascending(&w)?;
    let mut warnings = Vec::new();
    if m < values.len() && values[m] - values[m - 1] < 1e-10 {
        log::warn!(
            "latent subspace ill-defined: eigenvalues {} and {} of the block matrix coincide ({:.3e}, {:.3e})",
            m,
            m + 1,
            values[m - 1],
            values[m]
        );
        warnings.push(LatentWarning::SpectralGap {
            lambda_m: values[m - 1],
            lambda_next: values[m],
        });
    }
    let y: Vec<DMatrix<f64>> = (0..net.len())
        .map(|i| vectors.view((offsets[i], 0), (offsets[i + 1] - offsets[i], m)).into_owned())
        .collect();
    let consistency_residual = residual(net, &y);
    Ok(ConsistentLatentBasis {
        ids: net.nodes.iter().map(|n| n.id.clone()).collect(),
        y,
        m,
        canonical: false,
        consistency_residual,
        warnings,
    })
}

fn residual(net: &FMNetwork, y: &[DMatrix<f64>]) -> f64 {
    net.maps()
        .map(|((i, j), map)| (&map.matrix * &y[i] - &y[j]).norm_squared())
        .sum()
}

/// Rotates the basis so that `sum Y_i^T Lambda_i Y_i` is diagonal with
/// ascending entries, which become the latent spectrum.
///
/// Columns inside a latent eigenvalue cluster are ordered by decreasing first
/// entry of the first shape's block; this is a convention, and it is logged.
pub fn canonicalize(
    clb: &ConsistentLatentBasis,
    spectra: &[DVector<f64>],
) -> Result<(ConsistentLatentBasis, LatentShape)> {
    if spectra.len() != clb.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} spectra for {} latent blocks",
            spectra.len(),
            clb.len()
        )));
    }
    for (y, lam) in clb.y.iter().zip(spectra) {
        if lam.len() != y.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "spectrum of length {} for a block with {} rows",
                lam.len(),
                y.nrows()
            )));
        }
    }
    let residual = clb.constraint_residual();
    if residual > CONSTRAINT_TOL {
        return Err(Error::precondition(format!(
            "sum Y_i^T Y_i deviates from identity by {residual:.3e}"
        )));
    }
    let e = weighted_gram(&clb.y, spectra);
    let (values, mut u) = linalg::sym_eigen_ascending(&e)?;
    let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let clusters = linalg::clusters(values.as_slice(), CLUSTER_TOL * scale);
    let mut warnings = clb.warnings.clone();
    if !clusters.is_empty() {
        let first = &clb.y[0];
        for r in &clusters {
            let lead: Vec<f64> = r.clone().map(|c| (first.row(0) * u.column(c))[0]).collect();
            let mut order: Vec<usize> = (0..r.len()).collect();
            order.sort_by(|&a, &b| lead[b].total_cmp(&lead[a]).then(a.cmp(&b)));
            let block: Vec<DVector<f64>> = order.iter().map(|&o| u.column(r.start + o).into_owned()).collect();
            for (d, col) in block.iter().enumerate() {
                u.set_column(r.start + d, col);
            }
        }
        log::info!("latent spectrum clusters {clusters:?}: within-cluster order fixed by convention");
        warnings.push(LatentWarning::ClusterAmbiguity {
            clusters: clusters.clone(),
        });
    }
    let y: Vec<DMatrix<f64>> = clb.y.iter().map(|yi| yi * &u).collect();
    let canonical = ConsistentLatentBasis {
        ids: clb.ids.clone(),
        y,
        m: clb.m,
        canonical: true,
        consistency_residual: clb.consistency_residual,
        warnings,
    };
    let latent = LatentShape {
        collection_id: collection_id(&clb.ids),
        spectrum: values.map(|v| v.max(0.0)),
        clusters,
    };
    Ok((canonical, latent))
}

/// Per-shape latent shape difference.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDifference {
    pub shape_id: String,
    pub kind: DifferenceKind,
    pub matrix: DMatrix<f64>,
}

impl LatentDifference {
    pub fn new(shape_id: impl Into<String>, kind: DifferenceKind, matrix: DMatrix<f64>) -> Self {
        LatentDifference {
            shape_id: shape_id.into(),
            kind,
            matrix,
        }
    }
}

/// Area difference `Y^T Y` or conformal difference `pinv(Lambda_0) Y^T Lambda Y`
/// of a single block. With `normalized`, both are multiplied by the collection size.
pub fn block_difference(
    y: &DMatrix<f64>,
    eigenvalues: &DVector<f64>,
    latent: &LatentShape,
    kind: DifferenceKind,
    collection_size: usize,
    normalized: bool,
) -> Result<DMatrix<f64>> {
    if y.ncols() != latent.m() || y.nrows() != eigenvalues.len() {
        return Err(Error::DimensionMismatch(format!(
            "block {}x{} against {} eigenvalues and latent dimension {}",
            y.nrows(),
            y.ncols(),
            eigenvalues.len(),
            latent.m()
        )));
    }
    let scale = if normalized { collection_size as f64 } else { 1.0 };
    Ok(match kind {
        DifferenceKind::Area => y.transpose() * y * scale,
        DifferenceKind::Conformal => {
            let mut ly = y.clone();
            for (r, mut row) in ly.row_iter_mut().enumerate() {
                row *= eigenvalues[r];
            }
            // The zero mode of an unnormalized difference carries the 1/n share.
            let fill = if normalized { 1.0 } else { 1.0 / collection_size as f64 };
            conformal_from(&(y.transpose() * ly * scale), &latent.spectrum, fill)
        }
    })
}

pub fn latent_differences(
    clb: &ConsistentLatentBasis,
    spectra: &[DVector<f64>],
    latent: &LatentShape,
    kind: DifferenceKind,
    normalized: bool,
) -> Result<Vec<LatentDifference>> {
    if !clb.canonical {
        return Err(Error::RequiresCanonical);
    }
    if spectra.len() != clb.len() {
        return Err(Error::DimensionMismatch("one spectrum per latent block required".into()));
    }
    clb.ids
        .iter()
        .zip(&clb.y)
        .zip(spectra)
        .map(|((id, y), lam)| {
            Ok(LatentDifference::new(
                id.clone(),
                kind,
                block_difference(y, lam, latent, kind, clb.len(), normalized)?,
            ))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NeighborChoice {
    /// Nearest member by Shape-DNA distance, ties by index.
    Auto,
    Id(String),
}

#[derive(Debug, Clone)]
pub struct Extension {
    pub neighbor: String,
    pub y: DMatrix<f64>,
    pub area: DMatrix<f64>,
    pub conformal: DMatrix<f64>,
}

/// Pushes the neighbor's canonical block to a new shape, `Y_new = C Y_neighbor`.
/// The collection and its constraint are left untouched.
pub fn extend_to_shape<P>(
    latent: &LatentShape,
    clb: &ConsistentLatentBasis,
    net: &FMNetwork,
    new_eigenvalues: &DVector<f64>,
    new_dna: &ShapeDna,
    neighbor: &NeighborChoice,
    normalized: bool,
    provider: P,
) -> Result<Extension>
where
    P: FnOnce(usize) -> Result<FunctionalMap>,
{
    if !clb.canonical {
        return Err(Error::RequiresCanonical);
    }
    if clb.is_empty() || net.is_empty() {
        return Err(Error::InsufficientShapes { need: 1, got: 0 });
    }
    let idx = match neighbor {
        NeighborChoice::Id(id) => net.index_of(id).ok_or_else(|| Error::UnknownShape(id.clone()))?,
        NeighborChoice::Auto => {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, node) in net.nodes.iter().enumerate() {
                let d = node.dna.distance(new_dna);
                if d < best_d {
                    best = i;
                    best_d = d;
                }
            }
            log::info!("nearest neighbor by Shape-DNA: {} (distance {best_d:.3e})", net.nodes[best].id);
            best
        }
    };
    let neighbor_id = net.nodes[idx].id.clone();
    let map = provider(idx).map_err(|e| Error::ProviderFailure {
        from: neighbor_id.clone(),
        to: "<new shape>".into(),
        reason: e.to_string(),
    })?;
    let yi = clb.block(&neighbor_id)?;
    if map.matrix.ncols() != yi.nrows() || map.matrix.nrows() != new_eigenvalues.len() {
        return Err(Error::DimensionMismatch(format!(
            "extension map is {}x{}, expected {}x{}",
            map.matrix.nrows(),
            map.matrix.ncols(),
            new_eigenvalues.len(),
            yi.nrows()
        )));
    }
    let y = &map.matrix * yi;
    let n = clb.len();
    let area = block_difference(&y, new_eigenvalues, latent, DifferenceKind::Area, n, normalized)?;
    let conformal = block_difference(&y, new_eigenvalues, latent, DifferenceKind::Conformal, n, normalized)?;
    Ok(Extension {
        neighbor: neighbor_id,
        y,
        area,
        conformal,
    })
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub transform_standard: DMatrix<f64>,
    pub transform_canonical: DMatrix<f64>,
    pub ratio_standard: f64,
    pub ratio_canonical: f64,
}

/// `sum_d T_dd^2 / |T|_F^2`.
pub fn diagonal_dominance(t: &DMatrix<f64>) -> f64 {
    let total = t.norm_squared();
    if total == 0.0 {
        return 0.0;
    }
    t.diagonal().norm_squared() / total
}

/// Change of basis on the first shape between latent bases computed without
/// and with an extra shape, for the standard and canonical variants.
///
/// `extended` must contain the nodes of `base` in the same order, followed by
/// the extra shape.
pub fn stability_probe(base: &FMNetwork, extended: &FMNetwork, m: usize) -> Result<StabilityReport> {
    if base.len() < 3 {
        return Err(Error::InsufficientShapes { need: 3, got: base.len() });
    }
    if extended.len() != base.len() + 1 || base.nodes.iter().zip(&extended.nodes).any(|(a, b)| a.id != b.id) {
        return Err(Error::precondition(
            "extended network must list the base shapes first, then one extra shape",
        ));
    }
    let spectra = |net: &FMNetwork| net.nodes.iter().map(|n| n.eigenvalues.clone()).collect::<Vec<_>>();
    let small = consistent_latent_basis(base, m)?;
    let large = consistent_latent_basis(extended, m)?;
    let (small_c, _) = canonicalize(&small, &spectra(base))?;
    let (large_c, _) = canonicalize(&large, &spectra(extended))?;
    let transform = |a: &ConsistentLatentBasis, b: &ConsistentLatentBasis| linalg::pinv(&a.y[0], 1e-12) * &b.y[0];
    let ts = transform(&small, &large);
    let tc = transform(&small_c, &large_c);
    Ok(StabilityReport {
        ratio_standard: diagonal_dominance(&ts),
        ratio_canonical: diagonal_dominance(&tc),
        transform_standard: ts,
        transform_canonical: tc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{attach_maps, NetworkNode, Topology};

    fn identical_network(n: usize, lam: &[f64]) -> FMNetwork {
        let k = lam.len();
        let nodes: Vec<NetworkNode> = (0..n)
            .map(|i| NetworkNode {
                id: format!("s{i}"),
                eigenvalues: DVector::from_row_slice(lam),
                dna: ShapeDna(lam.to_vec()),
                num_vertices: k,
            })
            .collect();
        let topo = Topology::from_edges(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))));
        attach_maps(nodes, topo, |i, j| {
            Ok(FunctionalMap {
                source_id: format!("s{i}"),
                target_id: format!("s{j}"),
                matrix: DMatrix::identity(k, k),
            })
        })
        .unwrap()
    }

    const LAM: [f64; 5] = [0.0, 1.5, 2.0, 4.0, 7.0];

    #[test]
    fn identical_shapes_split_evenly() {
        let net = identical_network(3, &LAM);
        let clb = consistent_latent_basis(&net, 3).unwrap();
        assert!(clb.consistency_residual <= 1e-10);
        for y in &clb.y {
            let g = y.transpose() * y - DMatrix::<f64>::identity(3, 3) / 3.0;
            assert!(g.amax() < 1e-8);
        }
    }

    #[test]
    fn single_shape_is_orthonormal() {
        let net = FMNetwork::new(
            vec![NetworkNode {
                id: "solo".into(),
                eigenvalues: DVector::from_row_slice(&LAM),
                dna: ShapeDna(LAM.to_vec()),
                num_vertices: 5,
            }],
            Topology::from_edges(1, []),
            Default::default(),
        )
        .unwrap();
        let clb = consistent_latent_basis(&net, 5).unwrap();
        assert!((clb.y[0].transpose() * &clb.y[0] - DMatrix::<f64>::identity(5, 5)).amax() < 1e-12);
    }

    #[test]
    fn identical_collection_recovers_shape_spectrum() {
        let net = identical_network(4, &LAM);
        let spectra: Vec<_> = net.nodes.iter().map(|n| n.eigenvalues.clone()).collect();
        let clb = consistent_latent_basis(&net, 5).unwrap();
        let (canon, latent) = canonicalize(&clb, &spectra).unwrap();
        assert!((&latent.spectrum - DVector::from_row_slice(&LAM)).amax() < 1e-8);
        assert!(canon.diagonality_residual(&spectra) <= 1e-8);
        for d in latent_differences(&canon, &spectra, &latent, DifferenceKind::Area, false).unwrap() {
            assert!((d.matrix - DMatrix::<f64>::identity(5, 5) / 4.0).amax() < 1e-8);
        }
        for d in latent_differences(&canon, &spectra, &latent, DifferenceKind::Area, true).unwrap() {
            assert!((d.matrix - DMatrix::<f64>::identity(5, 5)).amax() < 1e-8);
        }
        for d in latent_differences(&canon, &spectra, &latent, DifferenceKind::Conformal, true).unwrap() {
            assert!((d.matrix - DMatrix::<f64>::identity(5, 5)).amax() < 1e-8);
        }
    }

    #[test]
    fn canonicalizing_twice_is_stable() {
        let net = identical_network(3, &LAM);
        let spectra: Vec<_> = net.nodes.iter().map(|n| n.eigenvalues.clone()).collect();
        let clb = consistent_latent_basis(&net, 5).unwrap();
        let (c1, l1) = canonicalize(&clb, &spectra).unwrap();
        let (c2, l2) = canonicalize(&c1, &spectra).unwrap();
        assert!((&l1.spectrum - &l2.spectrum).amax() < 1e-10);
        for (a, b) in c1.y.iter().zip(&c2.y) {
            assert!((a - b).amax() < 1e-10);
        }
    }

    #[test]
    fn differences_require_canonical() {
        let net = identical_network(2, &LAM);
        let spectra: Vec<_> = net.nodes.iter().map(|n| n.eigenvalues.clone()).collect();
        let clb = consistent_latent_basis(&net, 5).unwrap();
        let (_, latent) = canonicalize(&clb, &spectra).unwrap();
        assert!(matches!(
            latent_differences(&clb, &spectra, &latent, DifferenceKind::Area, false),
            Err(Error::RequiresCanonical)
        ));
    }

    #[test]
    fn latent_dimension_bounds() {
        let net = identical_network(2, &LAM);
        assert!(consistent_latent_basis(&net, 6).is_err());
        assert!(consistent_latent_basis(&net, 0).is_err());
    }

    #[test]
    fn extension_with_identity_copies_member() {
        let net = identical_network(3, &LAM);
        let spectra: Vec<_> = net.nodes.iter().map(|n| n.eigenvalues.clone()).collect();
        let clb = consistent_latent_basis(&net, 5).unwrap();
        let (canon, latent) = canonicalize(&clb, &spectra).unwrap();
        let ext = extend_to_shape(
            &latent,
            &canon,
            &net,
            &spectra[1],
            &net.nodes[1].dna,
            &NeighborChoice::Id("s1".into()),
            false,
            |_| {
                Ok(FunctionalMap {
                    source_id: "s1".into(),
                    target_id: "new".into(),
                    matrix: DMatrix::identity(5, 5),
                })
            },
        )
        .unwrap();
        assert_eq!(ext.y, canon.y[1]);
        let diffs = latent_differences(&canon, &spectra, &latent, DifferenceKind::Area, false).unwrap();
        assert_eq!(ext.area, diffs[1].matrix);
        let unknown = extend_to_shape(
            &latent,
            &canon,
            &net,
            &spectra[1],
            &net.nodes[1].dna,
            &NeighborChoice::Id("nope".into()),
            false,
            |_| unreachable!(),
        );
        assert!(matches!(unknown, Err(Error::UnknownShape(_))));
    }

    #[test]
    fn stability_needs_three_shapes() {
        let base = identical_network(1, &LAM);
        let ext = identical_network(2, &LAM);
        assert!(matches!(stability_probe(&base, &ext, 3), Err(Error::InsufficientShapes { .. })));
    }
}
