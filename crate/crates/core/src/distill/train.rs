use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{infonce_loss, lr_at, sample_triplets, AdamW, LayerRates, TeacherField, TrainConfig};
use crate::error::{Error, Result};
use crate::field::FeatureField;
use crate::geometry::{NeighborIndex, PointCloud};
use crate::rng;
use crate::student::{featurize_with_index, Descriptors, StudentNet, BASE_DESCRIPTOR_DIM, DEFAULT_K_CTX, DEFAULT_WIDTHS};

/// Student architecture and input settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentConfig {
    /// Layer widths; the first entry is rewritten to match the descriptor
    /// dimension when `concat_mode` appends semantic features.
    pub widths: Vec<usize>,
    pub seed: u64,
    pub concat_mode: bool,
    pub k_ctx: usize,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self { widths: DEFAULT_WIDTHS.to_vec(), seed: 0, concat_mode: false, k_ctx: DEFAULT_K_CTX }
    }
}

impl StudentConfig {
    /// Widths with the input adjusted for `semantic_dim` concatenated features.
    pub fn resolved_widths(&self, semantic_dim: usize) -> Vec<usize> {
        let mut w = self.widths.clone();
        if let Some(first) = w.first_mut() {
            *first = BASE_DESCRIPTOR_DIM + if self.concat_mode { semantic_dim } else { 0 };
        }
        w
    }

    pub fn init(&self, semantic_dim: usize) -> Result<StudentNet> {
        StudentNet::new(&self.resolved_widths(semantic_dim), self.seed)
    }

    pub fn descriptors(
        &self,
        cloud: &PointCloud,
        index: &NeighborIndex,
        semantic: Option<&FeatureField>,
    ) -> Result<Descriptors> {
        let sem = if self.concat_mode {
            Some(semantic.ok_or_else(|| Error::param("concat mode needs a semantic field"))?)
        } else {
            None
        };
        featurize_with_index(cloud, index, self.k_ctx, sem)
    }
}

/// One training scene: geometry, frozen teacher and (for concat mode) the
/// lifted semantic field.
#[derive(Debug, Clone)]
pub struct TrainScene {
    pub cloud: PointCloud,
    pub teacher: TeacherField,
    pub semantic: Option<FeatureField>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub epoch: usize,
    pub scene_id: String,
    pub mean_loss: f64,
    pub lr_input: f64,
    pub lr_middle: f64,
    pub lr_output: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    /// Scene-level problems that caused a scene (or one step) to be skipped.
    pub warnings: Vec<String>,
}

impl TrainLog {
    /// Mean of the per-scene losses of each epoch, in epoch order.
    pub fn epoch_losses(&self) -> Vec<f64> {
        let epochs = self.rows.iter().map(|r| r.epoch + 1).max().unwrap_or(0);
        (0..epochs)
            .filter_map(|e| {
                let losses: Vec<f64> =
                    self.rows.iter().filter(|r| r.epoch == e).map(|r| r.mean_loss).collect();
                (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64)
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,scene_id,mean_loss,lr_input,lr_middle,lr_output,wall_ms\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:e},{:e},{:e},{:e},{}",
                r.epoch, r.scene_id, r.mean_loss, r.lr_input, r.lr_middle, r.lr_output, r.wall_ms
            );
        }
        s
    }
}

struct Prepared<'a> {
    scene: &'a TrainScene,
    index: NeighborIndex,
    descriptors: Descriptors,
}

fn segments(net: &StudentNet, rates: &LayerRates) -> Vec<(usize, usize, f64)> {
    (0..net.num_layers())
        .map(|l| {
            let (s, e) = net.layer_range(l);
            (s, e, rates.for_group(net.layer_group(l)))
        })
        .collect()
}

/// Trains a fresh student on `scenes`, one optimizer step per scene per
/// epoch. Scene failures are logged and skipped; the call fails only when
/// no scene is usable.
pub fn train(scenes: &[TrainScene], cfg: &TrainConfig, student: &StudentConfig) -> Result<(StudentNet, TrainLog)> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::param("training needs at least one scene"));
    }
    let sem_dim = scenes.iter().find_map(|s| s.semantic.as_ref().map(|f| f.dim())).unwrap_or(0);
    let mut net = student.init(sem_dim)?;
    let mut log = TrainLog::default();
    if cfg.epochs == 0 {
        return Ok((net, log));
    }

    let mut prepared = Vec::new();
    for scene in scenes {
        let id = scene.cloud.scene_id();
        let prep = (|| -> Result<Prepared> {
            if scene.teacher.len() != scene.cloud.len() {
                return Err(Error::param("teacher field is not aligned with the cloud"));
            }
            if scene.cloud.len() < cfg.negatives() + 2 {
                return Err(Error::data(format!("only {} points", scene.cloud.len())));
            }
            let index = NeighborIndex::build(scene.cloud.positions())?;
            let descriptors = student.descriptors(&scene.cloud, &index, scene.semantic.as_ref())?;
            if descriptors.dim != net.input_dim() {
                return Err(Error::param("descriptor dimension differs from the network input"));
            }
            Ok(Prepared { scene, index, descriptors })
        })();
        match prep {
            Ok(p) => prepared.push(p),
            Err(e) => log.warnings.push(format!("scene {id} skipped: {e}")),
        }
    }
    if prepared.is_empty() {
        return Err(Error::data(format!("no usable training scenes: {}", log.warnings.join("; "))));
    }

    let mut opt = AdamW::new(net.param_count());
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut any_step = false;
    for epoch in 0..cfg.epochs {
        let rates = lr_at(cfg, epoch as f64)?;
        order.sort_unstable();
        order.shuffle(&mut rng::sub_rng(cfg.seed, &[0xE90C, epoch as u64]));
        for &si in &order {
            let p = &prepared[si];
            let id = p.scene.cloud.scene_id();
            let start = Instant::now();
            let mut r = rng::sub_rng(cfg.seed, &[0x5A3F, epoch as u64, si as u64]);
            let step = (|| -> Result<f64> {
                let batch = sample_triplets(&p.scene.teacher, &p.index, cfg, &mut r)?;
                let (emb, cache) = net.forward(&p.descriptors)?;
                let (loss, grad) = infonce_loss(&emb, &batch, cfg.temperature)?;
                let g = net.backward(&cache, &grad)?;
                let segs = segments(&net, &rates);
                opt.step(net.params_mut(), &g, &segs, cfg.weight_decay)?;
                Ok(loss)
            })();
            match step {
                Ok(loss) => {
                    any_step = true;
                    log.rows.push(LogRow {
                        epoch,
                        scene_id: id.to_string(),
                        mean_loss: loss,
                        lr_input: rates.input,
                        lr_middle: rates.middle,
                        lr_output: rates.output,
                        wall_ms: start.elapsed().as_millis() as u64,
                    });
                }
                Err(e) => log.warnings.push(format!("epoch {epoch} scene {id} skipped: {e}")),
            }
        }
    }
    if !any_step {
        return Err(Error::data(format!("every training step failed: {}", log.warnings.join("; "))));
    }
    Ok((net, log))
}
