//! The JSON run configuration shared by every command.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distill::{StudentConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::geometry::DEFAULT_VOXEL_SIZE;
use crate::lifting::DEFAULT_DEPTH_TOL;
use crate::pooling::{PoolingConfig, PurifyConfig};
use crate::selection::SelectionConfig;
use crate::student::{DEFAULT_K_CTX, DEFAULT_WIDTHS};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub voxel_size: f64,
    pub k_ctx: usize,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self { voxel_size: DEFAULT_VOXEL_SIZE, k_ctx: DEFAULT_K_CTX }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiftingSection {
    pub depth_tol: f64,
}

impl Default for LiftingSection {
    fn default() -> Self {
        Self { depth_tol: DEFAULT_DEPTH_TOL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentSection {
    pub widths: Vec<usize>,
    pub seed: u64,
    pub concat_mode: bool,
}

impl Default for StudentSection {
    fn default() -> Self {
        Self { widths: DEFAULT_WIDTHS.to_vec(), seed: 0, concat_mode: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Dataset directory read by select/train/purify/eval.
    pub data: Option<String>,
    /// Output directory for artifacts.
    pub out: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, overrides the seed of every section.
    pub seed: Option<u64>,
    pub geometry: GeometrySection,
    pub lifting: LiftingSection,
    pub student: StudentSection,
    pub distill: TrainConfig,
    pub pooling: PoolingConfig,
    pub selection: SelectionConfig,
    pub synth: SynthConfig,
    pub paths: PathsSection,
}

impl RunConfig {
    /// Parses a config; the error text carries serde's line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::param(format!("config: {e}")))?;
        if let Some(seed) = cfg.seed {
            cfg.set_seed(seed);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.student.seed = seed;
        self.distill.seed = seed;
        self.selection.seed = seed;
        self.synth.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.geometry.voxel_size > 0.0) {
            return Err(Error::param("geometry.voxel_size must be positive"));
        }
        if !(self.lifting.depth_tol > 0.0) {
            return Err(Error::param("lifting.depth_tol must be positive"));
        }
        self.distill.validate()?;
        self.synth.corruption.validate()?;
        Ok(())
    }

    pub fn student_config(&self) -> StudentConfig {
        StudentConfig {
            widths: self.student.widths.clone(),
            seed: self.student.seed,
            concat_mode: self.student.concat_mode,
            k_ctx: self.geometry.k_ctx,
        }
    }

    pub fn purify_config(&self) -> PurifyConfig {
        PurifyConfig { voxel_size: self.geometry.voxel_size, pooling: self.pooling.clone(), student: self.student_config() }
    }
}
