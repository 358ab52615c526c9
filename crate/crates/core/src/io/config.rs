//! Pipeline configuration. One JSON file holds every dimension and tolerance;
//! the effective values are echoed into the manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::EigenConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Eigenbasis size per shape.
    pub k: usize,
    /// Latent dimension.
    pub m: usize,
    /// Shape-DNA length; `None` uses the full basis.
    pub dna_length: Option<usize>,
    pub eigen: EigenConfig,
    /// Laplacian-commutativity weight of landmark-fitted maps.
    pub landmark_weight: f64,
    /// Weight of within-cluster pairs in cross-collection variability.
    pub cross_within_weight: f64,
    /// Number of distinctive functions to report.
    pub variability_count: usize,
    /// Size of localized bases; `None` uses `min(10, m)`.
    pub localized_p: Option<usize>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            k: 60,
            m: 40,
            dna_length: None,
            eigen: EigenConfig::default(),
            landmark_weight: 1e-3,
            cross_within_weight: 1.0,
            variability_count: 3,
            localized_p: None,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn dna_length(&self) -> usize {
        self.dna_length.unwrap_or(self.k).min(self.k)
    }
}
