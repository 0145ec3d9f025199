use std::f64::consts::PI;

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::student::LayerGroup;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerRates {
    pub input: f64,
    pub middle: f64,
    pub output: f64,
}

impl LayerRates {
    pub fn for_group(&self, g: LayerGroup) -> f64 {
        match g {
            LayerGroup::Input => self.input,
            LayerGroup::Middle => self.middle,
            LayerGroup::Output => self.output,
        }
    }
}

/// Linear warmup then cosine annealing, scaled per layer group.
pub fn lr_at(cfg: &TrainConfig, epoch: f64) -> Result<LayerRates> {
    let total = cfg.epochs as f64;
    if !(0.0..=total).contains(&epoch) {
        return Err(Error::param(format!("epoch {epoch} outside [0, {total}]")));
    }
    let base = cfg.base_lr;
    let warm = cfg.warmup_epochs;
    let s = if epoch < warm {
        let f = cfg.warmup_start_factor + (1.0 - cfg.warmup_start_factor) * epoch / warm;
        base * f
    } else if epoch == warm || total <= warm {
        base
    } else {
        let min = cfg.min_lr_factor * base;
        let t = (epoch - warm) / (total - warm);
        min + (base - min) * 0.5 * (1.0 + (PI * t).cos())
    };
    Ok(LayerRates {
        input: s * cfg.lr_input_mult,
        middle: s * cfg.lr_middle_mult,
        output: s * cfg.lr_output_mult,
    })
}
