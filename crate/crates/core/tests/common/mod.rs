#![allow(dead_code)]

use lsk_core::fmaps::{fmap_from_correspondence, Correspondence};
use lsk_core::mesh::Mesh;
use lsk_core::network::{attach_maps, FMNetwork, NetworkNode, Topology};
use lsk_core::spectral::{EigenConfig, SpectralShape};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

pub fn spectral_shapes(meshes: &[Mesh], k: usize) -> Vec<SpectralShape> {
    meshes
        .par_iter()
        .map(|m| SpectralShape::compute(m, k.min(m.num_vertices()), &EigenConfig::default()).unwrap())
        .collect()
}

pub fn clique_edges(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

pub fn path_edges(n: usize) -> Vec<(usize, usize)> {
    (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect()
}

pub fn node(s: &SpectralShape) -> NetworkNode {
    NetworkNode {
        id: s.id.clone(),
        eigenvalues: s.basis.eigenvalues.clone(),
        dna: s.dna.clone(),
        num_vertices: s.basis.num_vertices(),
    }
}

/// Network on shared-connectivity shapes with maps from identity correspondences.
pub fn identity_network(shapes: &[SpectralShape], edges: &[(usize, usize)]) -> FMNetwork {
    let nodes = shapes.iter().map(node).collect();
    let topo = Topology::from_edges(shapes.len(), edges.iter().copied());
    let corr = Correspondence::identity(shapes[0].basis.num_vertices());
    attach_maps(nodes, topo, |i, j| fmap_from_correspondence(&shapes[i], &shapes[j], &corr)).unwrap()
}

pub fn spectra(net: &FMNetwork) -> Vec<DVector<f64>> {
    net.nodes.iter().map(|n| n.eigenvalues.clone()).collect()
}

pub fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

/// `m x p` with orthonormal columns.
pub fn random_orthonormal(rng: &mut impl Rng, m: usize, p: usize) -> DMatrix<f64> {
    if p == 0 {
        return DMatrix::zeros(m, 0);
    }
    let q = random_matrix(rng, m, p).qr().q();
    q.columns(0, p).into_owned()
}

pub fn relative(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}
