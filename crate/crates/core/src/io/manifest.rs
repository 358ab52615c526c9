//! Collection manifest: the single source of truth of a workspace.

use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::Config;
use crate::error::{Error, Result};
use crate::latent::LatentWarning;
use crate::spectral::ShapeDna;

pub const MANIFEST_NAME: &str = "manifest.json";

/// A file and the sha256 of its contents. Relative paths are resolved
/// against the workspace root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

impl FileRef {
    pub fn resolve(&self, root: &Path) -> PathBuf {
        let p = Path::new(&self.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            root.join(p)
        }
    }

    pub fn verify(&self, root: &Path) -> Result<()> {
        let path = self.resolve(root);
        if super::sha256_file(&path)? != self.sha256 {
            return Err(Error::HashMismatch(path));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeEntry {
    pub id: String,
    pub mesh: FileRef,
    pub num_vertices: usize,
    pub k: usize,
    pub eigenvalues: FileRef,
    pub eigenvectors: FileRef,
    pub mass: FileRef,
    pub dna: ShapeDna,
    pub clusters: Vec<Range<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeEntry {
    pub from: String,
    pub to: String,
    pub map: FileRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySummary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub cycles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEntry {
    pub topology: String,
    pub maps: String,
    pub edges: Vec<EdgeEntry>,
    pub notes: Vec<String>,
    pub consistency: ConsistencySummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceEntry {
    pub id: String,
    pub kind: String,
    pub file: FileRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub id: String,
    pub file: FileRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentEntry {
    pub m: usize,
    pub canonical: bool,
    pub normalized: bool,
    pub collection_id: String,
    pub spectrum: FileRef,
    pub spectrum_values: Vec<f64>,
    pub clusters: Vec<Range<usize>>,
    pub blocks: Vec<BlockEntry>,
    pub differences: Vec<DifferenceEntry>,
    pub consistency_residual: f64,
    pub constraint_residual: f64,
    pub diagonality_residual: f64,
    pub warnings: Vec<LatentWarning>,
}

/// A shape attached after the latent basis was computed; not part of the
/// collection constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedEntry {
    pub id: String,
    pub extended: bool,
    pub mesh: FileRef,
    pub neighbor: String,
    pub y: FileRef,
    pub area: FileRef,
    pub conformal: FileRef,
    pub dna: ShapeDna,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config: Config,
    pub shapes: Vec<ShapeEntry>,
    #[serde(default)]
    pub network: Option<NetworkEntry>,
    #[serde(default)]
    pub latent: Option<LatentEntry>,
    #[serde(default)]
    pub extended: Vec<ExtendedEntry>,
}

impl Manifest {
    pub fn new(config: Config) -> Self {
        Manifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            shapes: Vec::new(),
            network: None,
            latent: None,
            extended: Vec::new(),
        }
    }

    pub fn path(root: &Path) -> PathBuf {
        root.join(MANIFEST_NAME)
    }

    /// Reads the manifest without checking referenced files.
    pub fn read(root: &Path) -> Result<Self> {
        let path = Self::path(root);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Reads the manifest and checks every referenced file's hash.
    pub fn load(root: &Path) -> Result<Self> {
        let m = Self::read(root)?;
        m.verify(root, true)?;
        Ok(m)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        super::atomic_write(&Self::path(root), text.as_bytes())
    }

    pub fn file_refs(&self, include_meshes: bool) -> Vec<&FileRef> {
        let mut refs = Vec::new();
        for s in &self.shapes {
            if include_meshes {
                refs.push(&s.mesh);
            }
            refs.extend([&s.eigenvalues, &s.eigenvectors, &s.mass]);
        }
        if let Some(net) = &self.network {
            refs.extend(net.edges.iter().map(|e| &e.map));
        }
        if let Some(lat) = &self.latent {
            refs.push(&lat.spectrum);
            refs.extend(lat.blocks.iter().map(|b| &b.file));
            refs.extend(lat.differences.iter().map(|d| &d.file));
        }
        for e in &self.extended {
            if include_meshes {
                refs.push(&e.mesh);
            }
            refs.extend([&e.y, &e.area, &e.conformal]);
        }
        refs
    }

    pub fn verify(&self, root: &Path, include_meshes: bool) -> Result<()> {
        for r in self.file_refs(include_meshes) {
            r.verify(root)?;
        }
        Ok(())
    }

    pub fn shape(&self, id: &str) -> Option<&ShapeEntry> {
        self.shapes.iter().find(|s| s.id == id)
    }
}
