//! Workspace-level stages used by the command line tool.
//!
//! A workspace is a directory holding `manifest.json` and derived artifacts:
//!
//! ```text
//! spectra/<id>.{evals,evecs,mass}.lskm
//! maps/<from>__<to>.lskm
//! latent/spectrum.lskm, latent/Y_<id>.lskm, latent/D_<kind>_<id>.lskm
//! variability/, ops/, extended/<id>/
//! ```
//!
//! Meshes stay where they are; the manifest records their paths and hashes.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{self, OperatorExpression, SpectrumDescriptor};
use crate::error::{Error, Result};
use crate::fmaps::{self, Correspondence, CorrespondenceKind, DifferenceKind, FunctionalMap};
use crate::io::config::Config;
use crate::io::container;
use crate::io::manifest::*;
use crate::io::{atomic_write, sha256_file};
use crate::latent::{self, ConsistentLatentBasis, LatentDifference, LatentShape, NeighborChoice};
use crate::mesh::{load_mesh, Mesh, MeshFormat};
use crate::network::{self, consistency_report, ConsistencyReport, FMNetwork, NetworkNode, TopologyKind};
use crate::spectral::{self, metric_measure, MetricMeasure, SpectralBasis, SpectralShape};
use crate::synthetic;
use crate::variability::{self, Partition, ProjectionBasis, VariabilityMode, VariabilityResult};

pub struct Workspace {
    pub root: PathBuf,
}

fn relative_or_absolute(root: &Path, path: &Path) -> String {
    let abs = fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf());
    let root_abs = fs::canonicalize(root).unwrap_or_else(|_| root.to_path_buf());
    match abs.strip_prefix(&root_abs) {
        Ok(rel) => rel.to_string_lossy().into_owned(),
        Err(_) => abs.to_string_lossy().into_owned(),
    }
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    fn write_matrix(&self, rel: &str, m: &DMatrix<f64>) -> Result<FileRef> {
        let sha256 = container::write_matrix(&self.root.join(rel), m)?;
        Ok(FileRef {
            path: rel.to_string(),
            sha256,
        })
    }

    fn write_vector(&self, rel: &str, v: &DVector<f64>) -> Result<FileRef> {
        self.write_matrix(rel, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
    }

    fn write_text(&self, rel: &str, text: &str) -> Result<PathBuf> {
        let path = self.root.join(rel);
        atomic_write(&path, text.as_bytes())?;
        Ok(path)
    }

    fn read_matrix(&self, f: &FileRef) -> Result<DMatrix<f64>> {
        container::read_matrix(&f.resolve(&self.root))
    }

    fn read_vector(&self, f: &FileRef) -> Result<DVector<f64>> {
        container::read_vector(&f.resolve(&self.root))
    }

    fn file_ref(&self, path: &Path) -> Result<FileRef> {
        Ok(FileRef {
            path: relative_or_absolute(&self.root, path),
            sha256: sha256_file(path)?,
        })
    }
}

// ---------------------------------------------------------------- spectra

#[derive(Debug, Default)]
pub struct SpectraSummary {
    pub computed: Vec<String>,
    pub up_to_date: Vec<String>,
    pub failures: Vec<(PathBuf, Error)>,
    pub warnings: Vec<String>,
}

/// Lists mesh files of a directory, sorted by name.
pub fn mesh_files(dir: &Path, format: Option<MeshFormat>) -> Result<Vec<(PathBuf, MeshFormat)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if let Some(f) = MeshFormat::from_path(&path) {
            if format.is_none_or(|want| want == f) {
                out.push((path, f));
            }
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// Computes metric, eigenbasis and Shape-DNA for every mesh in `mesh_dir`.
/// Shapes whose mesh hash and `k` are unchanged are skipped.
pub fn run_spectra(ws: &Workspace, mesh_dir: &Path, format: Option<MeshFormat>, config: Config) -> Result<SpectraSummary> {
    fs::create_dir_all(&ws.root).map_err(|e| Error::io(&ws.root, e))?;
    let previous = match Manifest::read(&ws.root) {
        Ok(m) => {
            m.verify(&ws.root, false)?;
            Some(m)
        }
        Err(Error::Io { .. }) => None,
        Err(e) => return Err(e),
    };
    let files = mesh_files(mesh_dir, format)?;
    if files.is_empty() {
        return Err(Error::precondition(format!("no mesh files in {}", mesh_dir.display())));
    }
    let same_config = previous.as_ref().is_some_and(|p| p.config.k == config.k && p.config.eigen == config.eigen && p.config.dna_length() == config.dna_length());

    enum Outcome {
        Fresh(Box<ShapeEntry>, Vec<String>),
        Kept(Box<ShapeEntry>),
    }
    let results: Vec<(PathBuf, Result<Outcome>)> = files
        .par_iter()
        .map(|(path, format)| {
            let run = || -> Result<Outcome> {
                let mesh_hash = sha256_file(path)?;
                let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("shape").to_string();
                if same_config {
                    if let Some(old) = previous.as_ref().and_then(|p| p.shape(&id)) {
                        if old.mesh.sha256 == mesh_hash {
                            return Ok(Outcome::Kept(Box::new(old.clone())));
                        }
                    }
                }
                let (mesh, warnings) = load_mesh(path, *format)?;
                let warnings = warnings.iter().map(|w| format!("{id}: {w:?}")).collect();
                let k = config.k.min(mesh.num_vertices());
                let metric = metric_measure(&mesh)?;
                let basis = spectral::eigenbasis_with(&metric, k, &id, &config.eigen)?;
                let dna = spectral::shape_dna(&basis, config.dna_length().min(k))?;
                let base = format!("spectra/{id}");
                Ok(Outcome::Fresh(
                    Box::new(ShapeEntry {
                        id: id.clone(),
                        mesh: FileRef {
                            path: relative_or_absolute(&ws.root, path),
                            sha256: mesh_hash,
                        },
                        num_vertices: mesh.num_vertices(),
                        k,
                        eigenvalues: ws.write_vector(&format!("{base}.evals.lskm"), &basis.eigenvalues)?,
                        eigenvectors: ws.write_matrix(&format!("{base}.evecs.lskm"), &basis.eigenvectors)?,
                        mass: ws.write_vector(&format!("{base}.mass.lskm"), &metric.mass)?,
                        dna,
                        clusters: basis.clusters.clone(),
                    }),
                    warnings,
                ))
            };
            (path.clone(), run())
        })
        .collect();

    let mut summary = SpectraSummary::default();
    let mut shapes = Vec::new();
    for (path, r) in results {
        match r {
            Ok(Outcome::Fresh(entry, warnings)) => {
                summary.computed.push(entry.id.clone());
                summary.warnings.extend(warnings);
                shapes.push(*entry);
            }
            Ok(Outcome::Kept(entry)) => {
                summary.up_to_date.push(entry.id.clone());
                shapes.push(*entry);
            }
            Err(e) => summary.failures.push((path, e)),
        }
    }
    let changed = !summary.computed.is_empty()
        || previous.as_ref().is_none_or(|p| p.shapes.iter().map(|s| &s.id).ne(shapes.iter().map(|s| &s.id)));
    let mut manifest = match previous {
        Some(p) if !changed => p,
        Some(p) => {
            // Downstream artifacts depend on every shape; drop them.
            let mut m = Manifest::new(config.clone());
            m.tool_version = p.tool_version;
            m
        }
        None => Manifest::new(config.clone()),
    };
    manifest.config = config;
    manifest.shapes = shapes;
    manifest.save(&ws.root)?;
    Ok(summary)
}

// ---------------------------------------------------------------- loading

/// In-memory view of a workspace's shapes.
pub struct LoadedShape {
    pub entry: ShapeEntry,
    pub mesh: Mesh,
    pub metric: MetricMeasure,
    pub basis: SpectralBasis,
}

impl LoadedShape {
    pub fn spectral(&self) -> SpectralShape {
        SpectralShape {
            id: self.entry.id.clone(),
            metric: self.metric.clone(),
            basis: self.basis.clone(),
            dna: self.entry.dna.clone(),
            bbox_diagonal: self.mesh.bbox_diagonal(),
        }
    }

    pub fn node(&self) -> NetworkNode {
        NetworkNode {
            id: self.entry.id.clone(),
            eigenvalues: self.basis.eigenvalues.clone(),
            dna: self.entry.dna.clone(),
            num_vertices: self.entry.num_vertices,
        }
    }
}

fn load_shape(ws: &Workspace, entry: &ShapeEntry) -> Result<LoadedShape> {
    let path = entry.mesh.resolve(&ws.root);
    let format = MeshFormat::from_path(&path).unwrap_or(MeshFormat::Off);
    let (mut mesh, _) = load_mesh(&path, format)?;
    mesh.shape_id = entry.id.clone();
    let metric = metric_measure(&mesh)?;
    let basis = SpectralBasis {
        shape_id: entry.id.clone(),
        eigenvalues: ws.read_vector(&entry.eigenvalues)?,
        eigenvectors: ws.read_matrix(&entry.eigenvectors)?,
        clusters: entry.clusters.clone(),
    };
    Ok(LoadedShape {
        entry: entry.clone(),
        mesh,
        metric,
        basis,
    })
}

pub fn load_shapes(ws: &Workspace, manifest: &Manifest) -> Result<Vec<LoadedShape>> {
    manifest.shapes.par_iter().map(|e| load_shape(ws, e)).collect()
}

fn map_file_name(from: &str, to: &str) -> String {
    format!("{from}__{to}")
}

pub fn load_network(ws: &Workspace, manifest: &Manifest) -> Result<FMNetwork> {
    let entry = manifest
        .network
        .as_ref()
        .ok_or_else(|| Error::precondition("no functional map network; run `fmn` first"))?;
    let index: HashMap<&str, usize> = manifest.shapes.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let mut nodes = Vec::new();
    for s in &manifest.shapes {
        nodes.push(NetworkNode {
            id: s.id.clone(),
            eigenvalues: ws.read_vector(&s.eigenvalues)?,
            dna: s.dna.clone(),
            num_vertices: s.num_vertices,
        });
    }
    let mut maps = BTreeMap::new();
    for e in &entry.edges {
        let (i, j) = (
            *index.get(e.from.as_str()).ok_or_else(|| Error::UnknownShape(e.from.clone()))?,
            *index.get(e.to.as_str()).ok_or_else(|| Error::UnknownShape(e.to.clone()))?,
        );
        maps.insert(
            (i, j),
            FunctionalMap {
                source_id: e.from.clone(),
                target_id: e.to.clone(),
                matrix: ws.read_matrix(&e.map)?,
            },
        );
    }
    let mut topo = network::Topology::from_edges(nodes.len(), maps.keys().copied());
    topo.kind = entry.topology.parse().unwrap_or(TopologyKind::Custom);
    topo.notes = entry.notes.clone();
    FMNetwork::new(nodes, topo, maps)
}

// ---------------------------------------------------------------- fmn

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapSource {
    Correspondence,
    Landmarks,
}

impl std::str::FromStr for MapSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "correspondence" => Ok(MapSource::Correspondence),
            "landmarks" => Ok(MapSource::Landmarks),
            other => Err(Error::precondition(format!("unknown map source '{other}'"))),
        }
    }
}

/// Looks for `<from>__<to>.txt`; failing that, swaps the pairs of `<to>__<from>.txt`.
pub fn find_correspondence(dir: &Path, from: &str, to: &str, kind: CorrespondenceKind) -> Result<Correspondence> {
    let direct = dir.join(format!("{}.txt", map_file_name(from, to)));
    if direct.exists() {
        return Correspondence::read(&direct, kind);
    }
    let reverse = dir.join(format!("{}.txt", map_file_name(to, from)));
    if reverse.exists() {
        let mut c = Correspondence::read(&reverse, kind)?;
        for p in &mut c.pairs {
            *p = (p.1, p.0);
        }
        return Ok(c);
    }
    Err(Error::precondition(format!(
        "missing correspondence for edge {from} -> {to} (looked for {})",
        direct.display()
    )))
}

#[derive(Debug)]
pub struct FmnSummary {
    pub topology: String,
    pub directed_edges: usize,
    pub notes: Vec<String>,
    pub report: ConsistencyReport,
}

pub fn run_fmn(ws: &Workspace, topology: TopologyKind, source: MapSource, corr_dir: &Path) -> Result<FmnSummary> {
    let mut manifest = Manifest::load(&ws.root)?;
    let shapes = load_shapes(ws, &manifest)?;
    let dnas: Vec<_> = shapes.iter().map(|s| s.entry.dna.clone()).collect();
    let topo = network::build_topology(&dnas, topology)?;
    let spectral: Vec<SpectralShape> = shapes.iter().map(|s| s.spectral()).collect();
    let weight = manifest.config.landmark_weight;
    let maps: Vec<((usize, usize), Result<FunctionalMap>)> = topo
        .directed_edges()
        .into_par_iter()
        .map(|(i, j)| {
            let (a, b) = (&spectral[i], &spectral[j]);
            let r = match source {
                MapSource::Correspondence => find_correspondence(corr_dir, &a.id, &b.id, CorrespondenceKind::FullBijection)
                    .and_then(|c| fmaps::fmap_from_correspondence(a, b, &c)),
                MapSource::Landmarks => find_correspondence(corr_dir, &a.id, &b.id, CorrespondenceKind::SparseLandmarks)
                    .and_then(|c| {
                        let fit = fmaps::fmap_from_landmarks(a, b, &c, weight)?;
                        Ok(fit.map)
                    }),
            };
            ((i, j), r)
        })
        .collect();
    let mut by_edge: HashMap<(usize, usize), Result<FunctionalMap>> = maps.into_iter().collect();
    let nodes: Vec<NetworkNode> = shapes.iter().map(|s| s.node()).collect();
    let net = network::attach_maps(nodes, topo, |i, j| by_edge.remove(&(i, j)).expect("map computed for every edge"))?;
    let report = consistency_report(&net);

    let mut edges = Vec::new();
    for ((i, j), map) in net.maps() {
        let (from, to) = (&net.nodes[i].id, &net.nodes[j].id);
        let file = ws.write_matrix(&format!("maps/{}.lskm", map_file_name(from, to)), &map.matrix)?;
        edges.push(EdgeEntry {
            from: from.clone(),
            to: to.clone(),
            map: file,
        });
    }
    let topology_name = net.topology.kind.to_string();
    manifest.network = Some(NetworkEntry {
        topology: topology_name.clone(),
        maps: match source {
            MapSource::Correspondence => "correspondence".into(),
            MapSource::Landmarks => "landmarks".into(),
        },
        edges,
        notes: net.topology.notes.clone(),
        consistency: ConsistencySummary {
            min: report.min,
            mean: report.mean,
            max: report.max,
            cycles: report.cycles.len(),
        },
    });
    manifest.latent = None;
    manifest.extended.clear();
    manifest.save(&ws.root)?;
    Ok(FmnSummary {
        topology: topology_name,
        directed_edges: net.num_directed_edges(),
        notes: net.topology.notes.clone(),
        report,
    })
}

// ---------------------------------------------------------------- latent

#[derive(Debug)]
pub struct LatentSummary {
    pub m: usize,
    pub consistency_residual: f64,
    pub constraint_residual: f64,
    pub diagonality_residual: f64,
    pub spectrum: Vec<f64>,
    pub difference_files: usize,
    pub warnings: Vec<latent::LatentWarning>,
}

pub fn run_latent(ws: &Workspace, m: usize, kinds: &[DifferenceKind], normalized: bool) -> Result<LatentSummary> {
    let mut manifest = Manifest::load(&ws.root)?;
    let net = load_network(ws, &manifest)?;
    let kmin = net.nodes.iter().map(|n| n.k()).min().unwrap_or(0);
    if m == 0 || m > kmin {
        return Err(Error::precondition(format!("--m {m} must be in 1..={kmin} (smallest k)")));
    }
    let spectra: Vec<DVector<f64>> = net.nodes.iter().map(|n| n.eigenvalues.clone()).collect();
    let clb = latent::consistent_latent_basis(&net, m)?;
    let (canon, shape) = latent::canonicalize(&clb, &spectra)?;
    if !shape.clusters.is_empty() {
        log::info!("latent eigenvalue clusters {:?}: outputs are reproducible but within-cluster order is conventional", shape.clusters);
    }

    let spectrum = ws.write_vector("latent/spectrum.lskm", &shape.spectrum)?;
    let mut blocks = Vec::new();
    for (id, y) in canon.ids.iter().zip(&canon.y) {
        blocks.push(BlockEntry {
            id: id.clone(),
            file: ws.write_matrix(&format!("latent/Y_{id}.lskm"), y)?,
        });
    }
    let mut differences = Vec::new();
    for &kind in kinds {
        for d in latent::latent_differences(&canon, &spectra, &shape, kind, normalized)? {
            differences.push(DifferenceEntry {
                id: d.shape_id.clone(),
                kind: kind.name().into(),
                file: ws.write_matrix(&format!("latent/D_{}_{}.lskm", kind.name(), d.shape_id), &d.matrix)?,
            });
        }
    }
    let summary = LatentSummary {
        m,
        consistency_residual: canon.consistency_residual,
        constraint_residual: canon.constraint_residual(),
        diagonality_residual: canon.diagonality_residual(&spectra),
        spectrum: shape.spectrum.iter().copied().collect(),
        difference_files: differences.len(),
        warnings: canon.warnings.clone(),
    };
    manifest.config.m = m;
    manifest.latent = Some(LatentEntry {
        m,
        canonical: true,
        normalized,
        collection_id: shape.collection_id.clone(),
        spectrum,
        spectrum_values: summary.spectrum.clone(),
        clusters: shape.clusters.clone(),
        blocks,
        differences,
        consistency_residual: summary.consistency_residual,
        constraint_residual: summary.constraint_residual,
        diagonality_residual: summary.diagonality_residual,
        warnings: summary.warnings.clone(),
    });
    manifest.extended.clear();
    manifest.save(&ws.root)?;
    Ok(summary)
}

/// Canonical latent basis, latent shape and manifest of a workspace.
pub struct LatentState {
    pub manifest: Manifest,
    pub clb: ConsistentLatentBasis,
    pub shape: LatentShape,
    pub spectra: Vec<DVector<f64>>,
}

impl LatentState {
    pub fn entry(&self) -> &LatentEntry {
        self.manifest.latent.as_ref().expect("latent state has a latent entry")
    }

    pub fn differences(&self, kind: DifferenceKind) -> Result<Vec<LatentDifference>> {
        latent::latent_differences(&self.clb, &self.spectra, &self.shape, kind, self.entry().normalized)
    }
}

pub fn load_latent(ws: &Workspace) -> Result<LatentState> {
    let manifest = Manifest::load(&ws.root)?;
    let entry = manifest
        .latent
        .clone()
        .ok_or_else(|| Error::precondition("no latent artifacts; run `latent` first"))?;
    let mut y = Vec::new();
    let mut ids = Vec::new();
    for b in &entry.blocks {
        ids.push(b.id.clone());
        y.push(ws.read_matrix(&b.file)?);
    }
    let mut spectra = Vec::new();
    for id in &ids {
        let s = manifest.shape(id).ok_or_else(|| Error::UnknownShape(id.clone()))?;
        spectra.push(ws.read_vector(&s.eigenvalues)?);
    }
    let shape = LatentShape {
        collection_id: entry.collection_id.clone(),
        spectrum: ws.read_vector(&entry.spectrum)?,
        clusters: entry.clusters.clone(),
    };
    let clb = ConsistentLatentBasis {
        ids,
        y,
        m: entry.m,
        canonical: entry.canonical,
        consistency_residual: entry.consistency_residual,
        warnings: entry.warnings.clone(),
    };
    Ok(LatentState {
        manifest,
        clb,
        shape,
        spectra,
    })
}

// ---------------------------------------------------------------- variability

#[derive(Debug, Serialize, Deserialize)]
pub struct VariabilityReport {
    pub mode: VariabilityMode,
    pub kind: DifferenceKind,
    pub result: VariabilityResult,
    pub field_files: Vec<String>,
    pub embedding_file: String,
}

pub fn read_partition(path: &Path) -> Result<Partition> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Serialize)]
struct FieldBundle<'a> {
    shape_id: &'a str,
    function: usize,
    normalization: &'static str,
    max_abs: f64,
    raw: Vec<f64>,
    normalized: Vec<f64>,
}

pub fn run_variability(
    ws: &Workspace,
    mode: VariabilityMode,
    partition: Option<&Partition>,
    count: usize,
    emit_fields: bool,
    kind: DifferenceKind,
) -> Result<VariabilityReport> {
    let state = load_latent(ws)?;
    let diffs = state.differences(kind)?;
    let result = match mode {
        VariabilityMode::Global => variability::global_variability(&diffs, count)?,
        VariabilityMode::CrossCollection => {
            let p = partition.ok_or_else(|| Error::precondition("cross-collection mode needs a partition"))?;
            for id in p.cluster_a.iter().chain(&p.cluster_b) {
                if state.clb.index_of(id).is_none() {
                    return Err(Error::UnknownShape(id.clone()));
                }
            }
            variability::cross_collection_variability(&diffs, p, count, state.manifest.config.cross_within_weight)?
        }
    };
    let tag = match mode {
        VariabilityMode::Global => "global",
        VariabilityMode::CrossCollection => "cross",
    };

    let top = &result.functions[0].alpha;
    let emb = variability::separation_embedding(&diffs, top)?;
    let mut csv = String::from("shape_id,pc1,pc2\n");
    for (d, c) in diffs.iter().zip(&emb.coords) {
        csv.push_str(&format!("{},{:e},{:e}\n", d.shape_id, c[0], c[1]));
    }
    let embedding_rel = format!("variability/{tag}_embedding.csv");
    ws.write_text(&embedding_rel, &csv)?;

    let mut field_files = Vec::new();
    if emit_fields {
        let shapes = load_shapes(ws, &state.manifest)?;
        for s in &shapes {
            for (fi, f) in result.functions.iter().enumerate() {
                let field = variability::transfer_to_shape(&f.alpha, &s.basis, &state.clb)?;
                let mut txt = String::new();
                for (v, x) in field.raw.iter().enumerate() {
                    txt.push_str(&format!("{v} {x:e}\n"));
                }
                let rel = format!("variability/fields/{tag}_{}_{fi}.txt", s.entry.id);
                ws.write_text(&rel, &txt)?;
                let bundle = FieldBundle {
                    shape_id: &s.entry.id,
                    function: fi,
                    normalization: "abs_over_max_per_shape",
                    max_abs: field.raw.amax(),
                    raw: field.raw.iter().copied().collect(),
                    normalized: field.normalized.iter().copied().collect(),
                };
                let json_rel = format!("variability/fields/{tag}_{}_{fi}.json", s.entry.id);
                ws.write_text(&json_rel, &serde_json::to_string(&bundle)?)?;
                field_files.push(rel);
            }
        }
    }
    let report = VariabilityReport {
        mode,
        kind,
        result,
        field_files,
        embedding_file: embedding_rel,
    };
    ws.write_text(&format!("variability/{tag}.json"), &serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

// ---------------------------------------------------------------- ops

/// An operand is either a member shape id (its latent difference of `kind`)
/// or a path to a matrix container.
pub fn resolve_operand(state: &LatentState, ws: &Workspace, spec: &str, kind: DifferenceKind) -> Result<(String, DMatrix<f64>)> {
    if state.clb.index_of(spec).is_some() {
        let e = state
            .entry()
            .differences
            .iter()
            .find(|d| d.id == spec && d.kind == kind.name())
            .ok_or_else(|| Error::precondition(format!("no {} difference stored for '{spec}'", kind.name())))?;
        return Ok((spec.to_string(), ws.read_matrix(&e.file)?));
    }
    let path = Path::new(spec);
    if path.exists() {
        return Ok((spec.to_string(), container::read_matrix(path)?));
    }
    Err(Error::UnknownShape(spec.to_string()))
}

#[derive(Serialize)]
struct RecipeFile<'a> {
    recipe: &'a algebra::Recipe,
    result_sha256: String,
}

pub fn save_expression(ws: &Workspace, name: &str, expr: &OperatorExpression) -> Result<PathBuf> {
    let rel = format!("ops/{name}.lskm");
    let file = ws.write_matrix(&rel, &expr.result)?;
    let recipe = RecipeFile {
        recipe: &expr.recipe,
        result_sha256: file.sha256,
    };
    ws.write_text(&format!("ops/{name}.recipe.json"), &serde_json::to_string_pretty(&recipe)?)?;
    Ok(ws.root.join(rel))
}

pub enum OpRequest<'a> {
    Analogy { a: &'a str, b: &'a str, c: &'a str },
    Interpolate { a: &'a str, b: &'a str, t: f64 },
    Mix { a: &'a str, b: &'a str, region: &'a Path, on: Option<&'a str> },
}

pub fn run_op(ws: &Workspace, req: OpRequest<'_>, kind: DifferenceKind, name: &str) -> Result<(OperatorExpression, PathBuf)> {
    let state = load_latent(ws)?;
    let get = |s: &str| resolve_operand(&state, ws, s, kind);
    let expr = match req {
        OpRequest::Analogy { a, b, c } => {
            let (a, b, c) = (get(a)?, get(b)?, get(c)?);
            algebra::analogy((&a.0, &a.1), (&b.0, &b.1), (&c.0, &c.1))?
        }
        OpRequest::Interpolate { a, b, t } => {
            let (a, b) = (get(a)?, get(b)?);
            algebra::interpolate((&a.0, &a.1), (&b.0, &b.1), t)?
        }
        OpRequest::Mix { a, b, region, on } => {
            let (da, db) = (get(a)?, get(b)?);
            let member = on.unwrap_or(a);
            let entry = state.manifest.shape(member).ok_or_else(|| Error::UnknownShape(member.to_string()))?;
            let shape = load_shape(ws, entry)?;
            let region = read_region(region)?;
            let f = algebra::localized_basis(&state.clb, &shape.basis, &shape.metric.mass, &region, state.manifest.config.localized_p)?;
            algebra::partial_mix((&da.0, &da.1), (&db.0, &db.1), &f)?
        }
    };
    let path = save_expression(ws, name, &expr)?;
    Ok((expr, path))
}

/// Vertex indices, whitespace separated.
pub fn read_region(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.split_whitespace()
        .enumerate()
        .map(|(i, t)| {
            t.parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("bad vertex index '{t}'"),
            })
        })
        .collect()
}

/// Spectrum descriptors of every member (and extended shape), keyed by id.
pub fn descriptors(ws: &Workspace, kind: DifferenceKind) -> Result<Vec<(String, SpectrumDescriptor)>> {
    let state = load_latent(ws)?;
    let mut out = Vec::new();
    for d in state.differences(kind)? {
        out.push((d.shape_id.clone(), algebra::lssd_spectrum_descriptor(&d.matrix, kind)?));
    }
    for e in &state.manifest.extended {
        let file = match kind {
            DifferenceKind::Area => &e.area,
            DifferenceKind::Conformal => &e.conformal,
        };
        out.push((e.id.clone(), algebra::lssd_spectrum_descriptor(&ws.read_matrix(file)?, kind)?));
    }
    let json: Vec<_> = out.iter().map(|(id, d)| serde_json::json!({"id": id, "values": d.values, "symmetrized": d.symmetrized})).collect();
    ws.write_text(&format!("ops/descriptors_{}.json", kind.name()), &serde_json::to_string_pretty(&json)?)?;
    Ok(out)
}

#[derive(Debug)]
pub struct Alignment {
    /// `(id in this workspace, id in the other workspace)`.
    pub pairs: Vec<(String, String)>,
    /// Fraction of pairs matching the ground truth, when one was given.
    pub accuracy: Option<f64>,
}

/// Nearest-neighbor matching by descriptor distance between the members of two workspaces.
pub fn align(ws: &Workspace, other: &Workspace, kind: DifferenceKind, truth: Option<&[(String, String)]>) -> Result<Alignment> {
    let a = descriptors(ws, kind)?;
    let b = descriptors(other, kind)?;
    let da: Vec<SpectrumDescriptor> = a.iter().map(|x| x.1.clone()).collect();
    let db: Vec<SpectrumDescriptor> = b.iter().map(|x| x.1.clone()).collect();
    let nn = algebra::nearest_neighbor_alignment(&da, &db);
    let pairs: Vec<(String, String)> = nn.iter().enumerate().map(|(i, &j)| (a[i].0.clone(), b[j].0.clone())).collect();
    let accuracy = truth.map(|t| {
        let truth: HashMap<&str, &str> = t.iter().map(|(x, y)| (x.as_str(), y.as_str())).collect();
        let hits = pairs.iter().filter(|(x, y)| truth.get(x.as_str()) == Some(&y.as_str())).count();
        hits as f64 / pairs.len().max(1) as f64
    });
    Ok(Alignment { pairs, accuracy })
}

// ---------------------------------------------------------------- extend

#[derive(Debug)]
pub struct ExtendSummary {
    pub id: String,
    pub neighbor: String,
    pub area: DMatrix<f64>,
    pub conformal: DMatrix<f64>,
}

/// Attaches a new mesh through a full correspondence from the neighbor to it.
/// The correspondence file lists `neighbor_vertex new_vertex` pairs.
pub fn run_extend(ws: &Workspace, mesh_path: &Path, correspondence: &Path, neighbor: NeighborChoice) -> Result<ExtendSummary> {
    let state = load_latent(ws)?;
    let manifest = &state.manifest;
    let net = load_network(ws, manifest)?;
    let format = MeshFormat::from_path(mesh_path).ok_or_else(|| Error::precondition(format!("unknown mesh format: {}", mesh_path.display())))?;
    let (mesh, _) = load_mesh(mesh_path, format)?;
    let id = mesh.shape_id.clone();
    if manifest.shape(&id).is_some() {
        return Err(Error::precondition(format!("'{id}' is already a member of the collection")));
    }
    let config = &manifest.config;
    let neighbor_k = match &neighbor {
        NeighborChoice::Id(n) => manifest.shape(n).ok_or_else(|| Error::UnknownShape(n.clone()))?.k,
        NeighborChoice::Auto => config.k,
    };
    let new_shape = SpectralShape::compute(&mesh, neighbor_k.min(mesh.num_vertices()), &config.eigen)?;
    let dna = spectral::shape_dna(&new_shape.basis, manifest.shapes[0].dna.len().min(new_shape.k()))?;
    let corr = Correspondence::read(correspondence, CorrespondenceKind::FullBijection)?;
    let ext = latent::extend_to_shape(
        &state.shape,
        &state.clb,
        &net,
        &new_shape.basis.eigenvalues,
        &dna,
        &neighbor,
        state.entry().normalized,
        |idx| {
            let entry = &manifest.shapes[idx];
            let nb = load_shape(ws, entry)?;
            fmaps::fmap_from_correspondence(&nb.spectral(), &new_shape, &corr)
        },
    )?;
    let base = format!("extended/{id}");
    let entry = ExtendedEntry {
        id: id.clone(),
        extended: true,
        mesh: ws.file_ref(mesh_path)?,
        neighbor: ext.neighbor.clone(),
        y: ws.write_matrix(&format!("{base}/Y.lskm"), &ext.y)?,
        area: ws.write_matrix(&format!("{base}/D_area.lskm"), &ext.area)?,
        conformal: ws.write_matrix(&format!("{base}/D_conformal.lskm"), &ext.conformal)?,
        dna,
    };
    let mut manifest = state.manifest.clone();
    manifest.extended.retain(|e| e.id != id);
    manifest.extended.push(entry);
    manifest.save(&ws.root)?;
    Ok(ExtendSummary {
        id,
        neighbor: ext.neighbor,
        area: ext.area,
        conformal: ext.conformal,
    })
}

// ---------------------------------------------------------------- generate

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GenerateRequest {
    SphereBump(synthetic::SphereBumpSpec),
    Chain { count: usize, cycle: bool, subdiv: u32 },
    TwoCluster(synthetic::TwoClusterSpec),
}

fn write_collection(dir: &Path, meshes: &[Mesh], pairs: &[(usize, usize, Correspondence)]) -> Result<()> {
    let mesh_dir = dir.join("meshes");
    let corr_dir = dir.join("correspondences");
    for m in meshes {
        atomic_write(&mesh_dir.join(format!("{}.off", m.shape_id)), m.to_off_string().as_bytes())?;
    }
    for (i, j, c) in pairs {
        let name = format!("{}.txt", map_file_name(&meshes[*i].shape_id, &meshes[*j].shape_id));
        atomic_write(&corr_dir.join(name), c.to_text().as_bytes())?;
    }
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    atomic_write(path, (serde_json::to_string_pretty(value)? + "\n").as_bytes())
}

/// Writes `meshes/`, `correspondences/` and a `ground_truth.json` sidecar.
/// The two-cluster family becomes two collections, `a/` and `b/`.
pub fn generate(req: &GenerateRequest, out: &Path) -> Result<()> {
    match req {
        GenerateRequest::SphereBump(spec) => {
            let fam = synthetic::sphere_bump_family(spec);
            write_collection(out, &fam.meshes, &fam.correspondences)?;
            write_json(&out.join("partition.json"), &serde_json::to_value(&fam.partition)?)?;
            atomic_write(&out.join("horizontal_region.txt"), region_text(&fam.horizontal_region).as_bytes())?;
            atomic_write(&out.join("vertical_region.txt"), region_text(&fam.vertical_region).as_bytes())?;
            write_json(
                &out.join("ground_truth.json"),
                &serde_json::json!({
                    "spec": spec,
                    "horizontal_heights": fam.horizontal_heights,
                    "vertical_heights": fam.vertical_heights,
                    "horizontal_region": fam.horizontal_region,
                    "vertical_region": fam.vertical_region,
                    "partition": fam.partition,
                }),
            )
        }
        GenerateRequest::Chain { count, cycle, subdiv } => {
            if *count < 3 {
                return Err(Error::precondition("a chain needs at least 3 frames"));
            }
            let fam = synthetic::chain_family(*count, *cycle, *subdiv);
            write_collection(out, &fam.meshes, &fam.correspondences)?;
            write_json(
                &out.join("ground_truth.json"),
                &serde_json::json!({"parameters": fam.parameters, "heights": fam.heights, "cycle": cycle}),
            )
        }
        GenerateRequest::TwoCluster(spec) => {
            if spec.n_per_cluster < 2 {
                return Err(Error::precondition("need at least two shapes per cluster"));
            }
            let fam = synthetic::two_cluster_family(spec);
            write_collection(&out.join("a"), &fam.cluster_a, &fam.correspondences)?;
            write_collection(&out.join("b"), &fam.cluster_b, &fam.correspondences)?;
            let pairing: Vec<(String, String)> = fam
                .pairing
                .iter()
                .map(|&(i, j)| (fam.cluster_a[i].shape_id.clone(), fam.cluster_b[j].shape_id.clone()))
                .collect();
            write_json(&out.join("ground_truth.json"), &serde_json::json!({"spec": spec, "pairing": pairing}))
        }
    }
}

fn region_text(region: &[usize]) -> String {
    let mut s: String = region.iter().map(|v| format!("{v}\n")).collect();
    if s.is_empty() {
        s.push('\n');
    }
    s
}

/// Reads the `pairing` list of a two-cluster ground-truth sidecar.
pub fn read_pairing(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    Ok(serde_json::from_value(v.get("pairing").cloned().unwrap_or_default())?)
}

/// Unused-by-algorithms helper for building the localized basis of a region
/// on a member shape in a workspace.
pub fn localized_basis_for(ws: &Workspace, member: &str, region: &[usize]) -> Result<ProjectionBasis> {
    let state = load_latent(ws)?;
    let entry = state.manifest.shape(member).ok_or_else(|| Error::UnknownShape(member.to_string()))?;
    let shape = load_shape(ws, entry)?;
    algebra::localized_basis(&state.clb, &shape.basis, &shape.metric.mass, region, state.manifest.config.localized_p)
}
