use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("triangle {triangle} references vertex {index}, mesh has {num_vertices} vertices")]
    IndexOutOfRange {
        triangle: usize,
        index: usize,
        num_vertices: usize,
    },

    #[error("non-manifold edge ({0}, {1}) shared by more than two triangles")]
    NonManifoldEdge(usize, usize),

    #[error("eigensolver failed: {0}")]
    SolverFailure(String),

    #[error("mass matrix is rank deficient (vertex {0} has no positive area)")]
    RankDeficientMass(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("correspondence is not a bijection: {0}")]
    NonBijective(String),

    #[error("need at least {need} shapes, got {got}")]
    InsufficientShapes { need: usize, got: usize },

    #[error("map provider failed on edge {from} -> {to}: {reason}")]
    ProviderFailure {
        from: String,
        to: String,
        reason: String,
    },

    #[error("invalid functional map network: {0}")]
    InvalidNetwork(String),

    #[error("operation requires a canonical latent basis")]
    RequiresCanonical,

    #[error("projection basis is not orthonormal (|F^T F - I| = {0:.3e})")]
    NonOrthonormal(f64),

    #[error("not in the full-information setting: {0}")]
    NotFullInformation(String),

    #[error("operator is ill-conditioned (condition number {0:.3e})")]
    IllConditioned(f64),

    #[error("region is empty")]
    EmptyRegion,

    #[error("unknown shape '{0}'")]
    UnknownShape(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("matrix container: {0}")]
    Container(String),

    #[error("hash mismatch for {0}")]
    HashMismatch(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}
