//! Latent shape differences over functional map networks.
//!
//! A collection of meshes is connected by functional maps; a consistent
//! latent basis turns every shape into small difference operators relative to
//! an implicit average shape. Those operators support variability analysis,
//! descriptors and operator algebra.

pub mod algebra;
pub mod error;
pub mod fmaps;
pub mod io;
pub mod latent;
pub mod linalg;
pub mod mesh;
pub mod network;
pub mod pipeline;
pub mod spectral;
pub mod synthetic;
pub mod variability;

pub use error::{Error, Result};
