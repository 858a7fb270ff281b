//! JSON sidecar written next to every artifact.
//!
//! A manifest records what is needed to regenerate its artifact: tool
//! version, command, seed, scene source, targets, the resolved acquisition
//! parameters and the filter/estimator settings. Artifacts read by later
//! stages are looked up through the sidecar `<artifact>.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spl_depth::evaluation::FilterKind;
use spl_depth::{AcquisitionParams, FilterOptions, PmlConfig, Sbr};

use crate::config::SceneSource;
use crate::failure::{CliResult, Failure};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub scene: SceneSource,
    pub mean_reflectivity: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_sbr: Option<Sbr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_signal_ppp: Option<f64>,
    pub params: AcquisitionParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pml: Option<PmlConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<PathBuf>,
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse_m: Option<f64>,
    /// Command-specific settings, e.g. sweep definitions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra: Option<serde_json::Value>,
}

/// Filter choice as recorded; an absent threshold means rejection was off.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterRecord {
    pub kind: FilterKind,
    pub outlier_p: Option<f64>,
    pub neighborhood_side: Option<usize>,
}

impl FilterRecord {
    pub fn new(kind: FilterKind, options: &FilterOptions) -> Self {
        let outlier_p = options.outlier_p.is_finite().then_some(options.outlier_p);
        Self { kind, outlier_p, neighborhood_side: options.neighborhood_side }
    }
}

impl Manifest {
    pub fn new(command: &str, seed: u64, scene: SceneSource, mean_reflectivity: f64, params: AcquisitionParams) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            scene,
            mean_reflectivity,
            target_sbr: None,
            target_signal_ppp: None,
            params,
            filter: None,
            pml: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            rmse_m: None,
            extra: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serialises");
        s.push('\n');
        s
    }

    /// Reads the sidecar of `artifact`.
    pub fn for_artifact(artifact: &Path) -> CliResult<Self> {
        let path = sidecar(artifact);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Failure::config(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::config(format!("manifest {}: {e}", path.display())))
    }
}

/// `cube.sptc` → `cube.json`.
pub fn sidecar(artifact: &Path) -> PathBuf {
    artifact.with_extension("json")
}
