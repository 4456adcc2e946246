use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use beaconlabel_core::calib::CalibOptions;
use beaconlabel_core::pipeline::{default_class_kinds, ClassKinds};
use beaconlabel_core::refine::{MpfKind, RefineConfig};
use beaconlabel_core::sim::SceneConfig;
use beaconlabel_core::CameraIntrinsics;
use serde::Deserialize;

use crate::error::CliError;

/// Contents of the `--config` TOML file. Every section is optional; command
/// line flags override file values, which override the defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub paths: Paths,
    /// Overrides the intrinsics stored in the dataset manifest.
    pub intrinsics: Option<CameraIntrinsics>,
    /// Overrides `T_lidar←cam` from the manifest; homogeneous, row-major.
    pub lidar_from_cam: Option<[f64; 16]>,
    pub calibration: CalibOptions,
    pub generate: GenerateConfig,
    pub refine: RefineConfig,
    /// Proposal functions per object class.
    pub classes: Option<BTreeMap<String, Vec<MpfKind>>>,
    pub simulate: SceneConfig,
    pub evaluate: EvaluateConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    /// Beacon readings averaged per frame and sample.
    pub averaging: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { averaging: 1 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    pub proportions: Vec<f64>,
    pub trials: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            proportions: vec![0.05, 0.1, 0.25, 0.5, 1.0],
            trials: 50,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn class_kinds(&self) -> ClassKinds {
        self.classes.clone().unwrap_or_else(default_class_kinds)
    }
}
