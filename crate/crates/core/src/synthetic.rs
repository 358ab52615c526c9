//! Deterministic generators of shape families with known ground truth.
//!
//! All shapes in a family share the base connectivity, so the identity
//! vertex correspondence is exact between any two members. Ground-truth
//! regions, labels and pairings are returned next to the meshes and are only
//! meant for evaluation.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fmaps::Correspondence;
use crate::mesh::{norm, Mesh};
use crate::variability::Partition;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Base {
    Icosphere { subdiv: u32 },
    GridPatch { res: usize },
}

impl Base {
    pub fn mesh(self) -> Mesh {
        match self {
            Base::Icosphere { subdiv } => icosphere(subdiv),
            Base::GridPatch { res } => grid_patch(res),
        }
    }
}

/// One deformation record.
///
/// On spheres bumps displace radially around `center` (a direction); on grid
/// patches they displace along +z around the point `center` (x, y used).
/// `height` is a range: each shape draws its height uniformly from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Deformation {
    Bump {
        center: [f64; 3],
        radius: f64,
        height: [f64; 2],
    },
    Stretch {
        axis: [f64; 3],
        factor: [f64; 2],
    },
}

/// A reproducible shape family: same spec and seed give bit-identical meshes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub base: Base,
    pub deformations: Vec<Deformation>,
    pub seed: u64,
    pub count: usize,
}

impl FamilySpec {
    pub fn generate(&self) -> Vec<Mesh> {
        let base = self.base.mesh();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.count)
            .map(|s| {
                let mut mesh = base.clone();
                mesh.shape_id = format!("shape_{s:03}");
                for d in &self.deformations {
                    mesh = match *d {
                        Deformation::Bump {
                            center,
                            radius,
                            height,
                        } => {
                            let h = draw(&mut rng, height);
                            match self.base {
                                Base::Icosphere { .. } => radial_bump(&mesh, center, radius, h),
                                Base::GridPatch { .. } => planar_bump(&mesh, center, radius, h),
                            }
                        }
                        Deformation::Stretch { axis, factor } => {
                            stretch(&mesh, axis, draw(&mut rng, factor))
                        }
                    };
                }
                mesh
            })
            .collect()
    }
}

fn draw(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    // Always consume one sample so later records see the same stream.
    let u: f64 = rng.gen();
    range[0] + u * (range[1] - range[0])
}

/// Icosahedron refined `subdiv` times and projected onto the unit sphere.
/// Vertex count is `10 * 4^subdiv + 2`.
pub fn icosphere(subdiv: u32) -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<[f64; 3]> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|&v| unit(v))
    .collect();
    let mut triangles: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdiv {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<[f64; 3]>| -> usize {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                let (p, q) = (verts[a], verts[b]);
                verts.push(unit([p[0] + q[0], p[1] + q[1], p[2] + q[2]]));
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(triangles.len() * 4);
        for &[a, b, c] in &triangles {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        triangles = next;
    }
    Mesh {
        shape_id: format!("icosphere{subdiv}"),
        vertices,
        triangles,
    }
}

/// Flat `(res+1) x (res+1)` grid over the unit square in the z = 0 plane.
pub fn grid_patch(res: usize) -> Mesh {
    let res = res.max(1);
    let idx = |i: usize, j: usize| i * (res + 1) + j;
    let mut vertices = Vec::with_capacity((res + 1) * (res + 1));
    for i in 0..=res {
        for j in 0..=res {
            vertices.push([j as f64 / res as f64, i as f64 / res as f64, 0.0]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * res * res);
    for i in 0..res {
        for j in 0..res {
            triangles.push([idx(i, j), idx(i, j + 1), idx(i + 1, j + 1)]);
            triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i + 1, j)]);
        }
    }
    Mesh {
        shape_id: format!("grid{res}"),
        vertices,
        triangles,
    }
}

/// Icosphere with seeded radial noise of relative amplitude `amp`; breaks the
/// sphere's eigenvalue degeneracies.
pub fn perturbed_icosphere(subdiv: u32, amp: f64, seed: u64) -> Mesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mesh = icosphere(subdiv);
    mesh.shape_id = format!("perturbed{subdiv}_{seed}");
    for v in &mut mesh.vertices {
        let r = 1.0 + amp * (rng.gen::<f64>() - 0.5);
        *v = v.map(|c| c * r);
    }
    stretch(&stretch(&mesh, [1.0, 0.0, 0.0], 1.3), [0.0, 1.0, 0.0], 1.1)
}

/// Smooth C2 profile: `((1 + cos(pi t)) / 2)^2` on `t < 1`, zero outside.
pub fn bump_profile(t: f64) -> f64 {
    if t >= 1.0 {
        0.0
    } else {
        let f = 0.5 * (1.0 + (PI * t).cos());
        f * f
    }
}

/// Radial bump on a sphere-like mesh. `radius` is the angular radius in radians.
pub fn radial_bump(mesh: &Mesh, center: [f64; 3], radius: f64, height: f64) -> Mesh {
    let c = unit(center);
    mesh.map_vertices(|v| {
        let r = norm(v);
        let d = [v[0] / r, v[1] / r, v[2] / r];
        let angle = (d[0] * c[0] + d[1] * c[1] + d[2] * c[2]).clamp(-1.0, 1.0).acos();
        let s = 1.0 + height * bump_profile(angle / radius);
        v.map(|x| x * s)
    })
}

fn planar_bump(mesh: &Mesh, center: [f64; 3], radius: f64, height: f64) -> Mesh {
    mesh.map_vertices(|v| {
        let d = ((v[0] - center[0]).powi(2) + (v[1] - center[1]).powi(2)).sqrt();
        [v[0], v[1], v[2] + height * bump_profile(d / radius)]
    })
}

/// Scales coordinates along `axis` by `factor`.
pub fn stretch(mesh: &Mesh, axis: [f64; 3], factor: f64) -> Mesh {
    let a = unit(axis);
    mesh.map_vertices(|v| {
        let along = v[0] * a[0] + v[1] * a[1] + v[2] * a[2];
        let delta = (factor - 1.0) * along;
        [v[0] + delta * a[0], v[1] + delta * a[1], v[2] + delta * a[2]]
    })
}

/// Vertices whose direction lies within `radius` radians of `center`.
pub fn cap_region(mesh: &Mesh, center: [f64; 3], radius: f64) -> Vec<usize> {
    let c = unit(center);
    (0..mesh.num_vertices())
        .filter(|&i| {
            let d = unit(mesh.vertices[i]);
            (d[0] * c[0] + d[1] * c[1] + d[2] * c[2]).clamp(-1.0, 1.0).acos() < radius
        })
        .collect()
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = norm(v);
    [v[0] / n, v[1] / n, v[2] / n]
}

fn identity_correspondences(n_vertices: usize, pairs: &[(usize, usize)]) -> Vec<(usize, usize, Correspondence)> {
    pairs
        .iter()
        .map(|&(i, j)| (i, j, Correspondence::identity(n_vertices)))
        .collect()
}

pub const HORIZONTAL_DIRECTION: [f64; 3] = [1.0, 0.0, 0.0];
pub const VERTICAL_DIRECTION: [f64; 3] = [0.0, 0.0, 1.0];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SphereBumpSpec {
    pub subdiv: u32,
    /// Largest horizontal bump height; shapes within a cluster ramp from 0 to it.
    pub horizontal_height: f64,
    /// Vertical bump height of each cluster (first entry is cluster A).
    pub vertical_heights: Vec<f64>,
    pub shapes_per_cluster: usize,
    /// Angular bump radius in radians.
    pub radius: f64,
    /// Relative radial jitter drawn from `seed`; zero disables it.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SphereBumpSpec {
    fn default() -> Self {
        let h = 0.15;
        SphereBumpSpec {
            subdiv: 3,
            horizontal_height: 2.0 * h,
            vertical_heights: vec![h, 0.0],
            shapes_per_cluster: 2,
            radius: 0.7,
            jitter: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SphereBumpFamily {
    pub meshes: Vec<Mesh>,
    pub horizontal_heights: Vec<f64>,
    pub vertical_heights: Vec<f64>,
    pub horizontal_region: Vec<usize>,
    pub vertical_region: Vec<usize>,
    pub partition: Partition,
    /// Exact identity correspondences for every ordered pair.
    pub correspondences: Vec<(usize, usize, Correspondence)>,
}

/// Spheres with a horizontal bump that varies inside every cluster and a
/// vertical bump whose height differs between clusters.
pub fn sphere_bump_family(spec: &SphereBumpSpec) -> SphereBumpFamily {
    let base = icosphere(spec.subdiv);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let spc = spec.shapes_per_cluster.max(1);
    let mut meshes = Vec::new();
    let mut hh = Vec::new();
    let mut vh = Vec::new();
    let mut clusters: Vec<Vec<String>> = vec![Vec::new(); spec.vertical_heights.len()];
    for (c, &vertical) in spec.vertical_heights.iter().enumerate() {
        for s in 0..spc {
            let horizontal = if spc == 1 {
                spec.horizontal_height
            } else {
                spec.horizontal_height * s as f64 / (spc - 1) as f64
            };
            let mut mesh = radial_bump(&base, HORIZONTAL_DIRECTION, spec.radius, horizontal);
            mesh = radial_bump(&mesh, VERTICAL_DIRECTION, spec.radius, vertical);
            if spec.jitter > 0.0 {
                for v in &mut mesh.vertices {
                    let r = 1.0 + spec.jitter * (rng.gen::<f64>() - 0.5);
                    *v = v.map(|x| x * r);
                }
            }
            mesh.shape_id = format!("c{c}_s{s}");
            clusters[c].push(mesh.shape_id.clone());
            meshes.push(mesh);
            hh.push(horizontal);
            vh.push(vertical);
        }
    }
    let n = meshes.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let partition = Partition {
        cluster_a: clusters.first().cloned().unwrap_or_default(),
        cluster_b: clusters[1..].concat(),
    };
    SphereBumpFamily {
        horizontal_region: cap_region(&base, HORIZONTAL_DIRECTION, spec.radius),
        vertical_region: cap_region(&base, VERTICAL_DIRECTION, spec.radius),
        correspondences: identity_correspondences(base.num_vertices(), &pairs),
        meshes,
        horizontal_heights: hh,
        vertical_heights: vh,
        partition,
    }
}

#[derive(Debug, Clone)]
pub struct ChainFamily {
    pub meshes: Vec<Mesh>,
    /// Deformation parameter of each frame (an angle when cyclic, a ramp in [0, 1] otherwise).
    pub parameters: Vec<f64>,
    /// Heights of the two bumps at each frame.
    pub heights: Vec<[f64; 2]>,
    /// Identity correspondences between consecutive frames, both directions.
    pub correspondences: Vec<(usize, usize, Correspondence)>,
}

pub const CHAIN_BUMP_A: [f64; 3] = [1.0, 0.2, 0.3];
pub const CHAIN_BUMP_B: [f64; 3] = [-0.3, 1.0, 0.4];
const CHAIN_AMPLITUDE: f64 = 0.25;

/// Bump heights of a chain frame with parameter `p`.
pub fn chain_heights(p: f64, cycle: bool) -> [f64; 2] {
    if cycle {
        [
            CHAIN_AMPLITUDE * (1.0 + 0.5 * p.sin()),
            CHAIN_AMPLITUDE * (1.0 + 0.5 * p.cos()),
        ]
    } else {
        [CHAIN_AMPLITUDE * (1.0 + 0.5 * p), CHAIN_AMPLITUDE * (1.0 + 0.25 * p)]
    }
}

/// A sequence of frames driven by one parameter. With `cycle` the parameter
/// goes once around the circle so frame `count` would coincide with frame 0.
pub fn chain_family(count: usize, cycle: bool, subdiv: u32) -> ChainFamily {
    assert!(count >= 3, "chain family needs at least 3 frames");
    let base = icosphere(subdiv);
    let mut meshes = Vec::with_capacity(count);
    let mut parameters = Vec::with_capacity(count);
    let mut heights = Vec::with_capacity(count);
    for f in 0..count {
        let p = if cycle {
            2.0 * PI * f as f64 / count as f64
        } else {
            f as f64 / (count - 1) as f64
        };
        let h = chain_heights(p, cycle);
        let mut mesh = radial_bump(&base, CHAIN_BUMP_A, 0.8, h[0]);
        mesh = radial_bump(&mesh, CHAIN_BUMP_B, 0.8, h[1]);
        mesh.shape_id = format!("frame_{f:02}");
        meshes.push(mesh);
        parameters.push(p);
        heights.push(h);
    }
    let pairs: Vec<(usize, usize)> = (0..count - 1).flat_map(|i| [(i, i + 1), (i + 1, i)]).collect();
    ChainFamily {
        correspondences: identity_correspondences(base.num_vertices(), &pairs),
        meshes,
        parameters,
        heights,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoClusterSpec {
    pub n_per_cluster: usize,
    /// Magnitude of the per-pair pose-like bumps.
    pub intra_spread: f64,
    /// Magnitude of the cluster-level deformation applied to cluster B.
    pub inter_gap: f64,
    pub seed: u64,
    pub subdiv: u32,
}

impl Default for TwoClusterSpec {
    fn default() -> Self {
        TwoClusterSpec {
            n_per_cluster: 5,
            intra_spread: 0.2,
            inter_gap: 0.5,
            seed: 7,
            subdiv: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TwoClusterFamily {
    pub cluster_a: Vec<Mesh>,
    pub cluster_b: Vec<Mesh>,
    /// `pairing[t] = (t, t)`: member t of A corresponds to member t of B.
    pub pairing: Vec<(usize, usize)>,
    /// Identity correspondences inside each cluster only (ordered pairs).
    pub correspondences: Vec<(usize, usize, Correspondence)>,
}

pub const POSE_SITES: [[f64; 3]; 3] = [[1.0, 0.0, 0.2], [-0.4, 1.0, -0.1], [0.1, -0.5, -1.0]];
const CLUSTER_SITE: [f64; 3] = [-1.0, -0.6, 0.5];

/// Two clusters sharing the same per-pair poses. Cluster B additionally
/// carries a large bump of height `inter_gap`, away from the pose sites.
pub fn two_cluster_family(spec: &TwoClusterSpec) -> TwoClusterFamily {
    assert!(spec.n_per_cluster >= 2, "need at least two shapes per cluster");
    let base = icosphere(spec.subdiv);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let poses: Vec<[f64; 3]> = (0..spec.n_per_cluster)
        .map(|_| [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()])
        .collect();
    let make = |pose: &[f64; 3], cluster: usize, t: usize| {
        let mut mesh = base.clone();
        if cluster == 1 {
            mesh = radial_bump(&mesh, CLUSTER_SITE, 0.9, spec.inter_gap);
        }
        for (site, &u) in POSE_SITES.iter().zip(pose) {
            mesh = radial_bump(&mesh, *site, 0.6, spec.intra_spread * u);
        }
        mesh.shape_id = format!("{}_{t:02}", if cluster == 0 { "a" } else { "b" });
        mesh
    };
    let cluster_a: Vec<Mesh> = poses.iter().enumerate().map(|(t, p)| make(p, 0, t)).collect();
    let cluster_b: Vec<Mesh> = poses.iter().enumerate().map(|(t, p)| make(p, 1, t)).collect();
    let n = spec.n_per_cluster;
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    TwoClusterFamily {
        cluster_a,
        cluster_b,
        pairing: (0..n).map(|t| (t, t)).collect(),
        correspondences: identity_correspondences(base.num_vertices(), &pairs),
    }
}
