use serde::{Deserialize, Serialize};

use super::corrupt::{corrupt_features, CorruptionConfig};
use super::render::ViewSpec;
use super::scene::{default_classes, default_palette, generate_scene, make_prototypes, ObjectKind, SceneSpec, Structure, SynthScene};
use super::teacher::teacher_oracle;
use crate::distill::TeacherField;
use crate::error::{Error, Result};
use crate::field::FeatureField;
use crate::geometry::ply::quantize;
use crate::geometry::NeighborIndex;
use crate::lifting::{lift_multiview, DEFAULT_DEPTH_TOL};
use crate::rng;

/// Settings for a whole synthetic dataset; each scene gets a derived seed
/// and a jittered room size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub scenes: usize,
    pub seed: u64,
    pub extents: [f64; 3],
    /// Relative jitter applied to the horizontal extents per scene.
    pub extent_jitter: f64,
    /// Inclusive range of object counts per scene.
    pub objects: [usize; 2],
    pub palette: Vec<ObjectKind>,
    pub structures: Vec<Structure>,
    pub points_per_object: usize,
    pub points_per_m2: f64,
    pub noise_sigma: f64,
    pub class_names: Vec<String>,
    pub d_sem: usize,
    pub views: ViewSpec,
    pub teacher_dim: usize,
    pub teacher_sigma: f64,
    pub corruption: CorruptionConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            scenes: 12,
            seed: 0,
            extents: [4.0, 4.0, 2.5],
            extent_jitter: 0.25,
            objects: [3, 9],
            palette: default_palette(),
            structures: vec![Structure::Floor, Structure::Walls, Structure::Ceiling],
            points_per_object: 250,
            points_per_m2: 40.0,
            noise_sigma: 0.005,
            class_names: default_classes(),
            d_sem: 32,
            views: ViewSpec::default(),
            teacher_dim: 32,
            teacher_sigma: 0.05,
            corruption: CorruptionConfig::default(),
        }
    }
}

/// One generated scene with everything downstream stages consume.
#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub scene: SynthScene,
    pub teacher: TeacherField,
    /// Lifted features before corruption.
    pub lifted: FeatureField,
    /// Lifted then corrupted features.
    pub sem: FeatureField,
}

impl SynthConfig {
    pub fn prototypes(&self) -> Vec<Vec<f64>> {
        make_prototypes(self.class_names.len(), self.d_sem, self.seed)
    }

    pub fn scene_id(&self, i: usize) -> String {
        format!("scene_{i:04}")
    }

    pub fn scene_spec(&self, i: usize, prototypes: &[Vec<f64>]) -> Result<SceneSpec> {
        if self.objects[0] > self.objects[1] {
            return Err(Error::param(format!("object range {:?} is inverted", self.objects)));
        }
        let seed = rng::derive(self.seed, &[0x5CE2, i as u64]);
        let mut r = rng::rng(seed);
        use rand::Rng as _;
        let j = self.extent_jitter.clamp(0.0, 0.9);
        let mut extents = self.extents;
        for e in extents.iter_mut().take(2) {
            *e *= 1.0 + j * (2.0 * r.random::<f64>() - 1.0);
        }
        let num_objects = r.random_range(self.objects[0]..=self.objects[1]);
        Ok(SceneSpec {
            scene_id: self.scene_id(i),
            seed,
            extents,
            num_objects,
            palette: self.palette.clone(),
            structures: self.structures.clone(),
            points_per_object: self.points_per_object,
            points_per_m2: self.points_per_m2,
            noise_sigma: self.noise_sigma,
            class_names: self.class_names.clone(),
            prototypes: prototypes.to_vec(),
            views: self.views.clone(),
        })
    }

    /// Generates scene `i`, its teacher field, and its lifted and corrupted
    /// semantic features.
    pub fn build_scene(&self, i: usize, prototypes: &[Vec<f64>], depth_tol: f64) -> Result<SceneBundle> {
        let spec = self.scene_spec(i, prototypes)?;
        let mut scene = generate_scene(&spec)?;
        // Store-precision geometry, so a cloud read back from disk matches.
        scene.cloud = quantize(&scene.cloud)?;
        let teacher = teacher_oracle(&scene.cloud, self.teacher_dim, self.teacher_sigma, rng::derive(spec.seed, &[0x7EA1]))?;
        let lifted = lift_multiview(&scene.cloud, &scene.views, depth_tol)?;
        let index = NeighborIndex::build(scene.cloud.positions())?;
        let labels = scene.cloud.labels().expect("generated clouds carry labels");
        let sem = corrupt_features(&lifted, labels, prototypes, &self.corruption, &index, rng::derive(spec.seed, &[0xC022]))?;
        Ok(SceneBundle { scene, teacher, lifted, sem })
    }

    pub fn build_all(&self) -> Result<Vec<SceneBundle>> {
        let protos = self.prototypes();
        crate::par::map_range(self.scenes, |i| self.build_scene(i, &protos, DEFAULT_DEPTH_TOL)).into_iter().collect()
    }
}
