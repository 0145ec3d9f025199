//! Geometry-guided purification of noisy, view-lifted semantic features on
//! 3D point clouds.
//!
//! The pipeline has four stages:
//!
//! 1. [`lifting`] projects per-view dense feature maps onto points and
//!    averages the visible samples into an initial semantic field.
//! 2. [`student`] and [`distill`] train a small point-context network whose
//!    embedding space reproduces the similarity structure of a frozen teacher
//!    embedding, using a contrastive objective over hybrid-sampled triplets.
//! 3. [`pooling`] builds a sparse softmax affinity graph over voxels from the
//!    student embeddings and repeatedly averages semantic features along it.
//! 4. [`selection`] picks a compact, diverse training subset of scenes and
//!    [`synth`] provides synthetic scenes, teacher oracles, corruption and
//!    segmentation metrics for desk-scale experiments.
//!
//! Data-parallel inner loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and falls back to plain iterators otherwise.
//! Both paths produce bitwise identical results.

pub mod config;
pub mod distill;
pub mod error;
pub mod field;
pub mod geometry;
pub mod gpff;
pub mod lifting;
pub mod par;
pub mod pooling;
pub mod rng;
pub mod selection;
pub mod student;
pub mod synth;

pub use error::{Error, Result};
pub use field::{FeatureField, Granularity};
pub use geometry::{NeighborIndex, PointCloud, VoxelGrid};
