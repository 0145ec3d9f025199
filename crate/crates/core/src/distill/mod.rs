//! Contrastive distillation of teacher similarity structure into the
//! student network.

mod adamw;
mod infonce;
mod sampling;
mod schedule;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FeatureField;

pub use adamw::AdamW;
pub use infonce::infonce_loss;
pub use sampling::{sample_triplets, TripletBatch};
pub use schedule::{lr_at, LayerRates};
pub use train::{train, LogRow, StudentConfig, TrainLog, TrainScene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TeacherSource {
    Oracle,
    File,
}

/// Frozen unit-norm teacher embeddings, one row per point.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherField {
    field: FeatureField,
    source: TeacherSource,
}

impl TeacherField {
    pub fn new(field: FeatureField, source: TeacherSource) -> Result<Self> {
        field.check_unit_rows(1e-5)?;
        Ok(Self { field, source })
    }

    pub fn field(&self) -> &FeatureField {
        &self.field
    }

    pub fn source(&self) -> TeacherSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.field.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.field.rows() == 0
    }

    pub fn similarity(&self, a: usize, b: usize) -> f64 {
        crate::field::dot(self.field.row(a), self.field.row(b))
    }
}

/// Distillation hyperparameters. Defaults are the desk-scale settings; see
/// [`TrainConfig::full_scale`] for the full-scale ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub anchors_per_scene: usize,
    pub k_macro: usize,
    pub k_micro: usize,
    pub temperature: f64,
    pub base_lr: f64,
    pub lr_input_mult: f64,
    pub lr_middle_mult: f64,
    pub lr_output_mult: f64,
    pub weight_decay: f64,
    pub warmup_epochs: f64,
    pub warmup_start_factor: f64,
    pub min_lr_factor: f64,
    pub candidate_pool_size: usize,
    pub micro_pool_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            anchors_per_scene: 256,
            k_macro: 12,
            k_micro: 4,
            temperature: 0.07,
            base_lr: 1e-4,
            lr_input_mult: 0.1,
            lr_middle_mult: 1.0,
            lr_output_mult: 5.0,
            weight_decay: 1e-5,
            warmup_epochs: 2.0,
            warmup_start_factor: 1e-6,
            min_lr_factor: 1e-3,
            candidate_pool_size: 4096,
            micro_pool_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Full-scale anchor and negative counts.
    pub fn full_scale() -> Self {
        Self { anchors_per_scene: 4096, k_macro: 48, k_micro: 16, ..Self::default() }
    }

    pub fn negatives(&self) -> usize {
        self.k_macro + self.k_micro
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.temperature,
            self.base_lr,
            self.lr_input_mult,
            self.lr_middle_mult,
            self.lr_output_mult,
            self.warmup_start_factor,
            self.min_lr_factor,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::param("temperature, learning rates and factors must be positive"));
        }
        if !(self.weight_decay >= 0.0) || !(self.warmup_epochs >= 0.0) {
            return Err(Error::param("weight decay and warmup must be non-negative"));
        }
        if self.warmup_epochs > self.epochs as f64 && self.epochs > 0 {
            return Err(Error::param("warmup is longer than training"));
        }
        if self.anchors_per_scene == 0 || self.k_macro + self.k_micro == 0 || self.candidate_pool_size == 0 {
            return Err(Error::param("anchor, negative and pool counts must be positive"));
        }
        if self.k_micro > self.micro_pool_size {
            return Err(Error::param("k_micro exceeds the micro pool size"));
        }
        Ok(())
    }
}
