//! Synthetic indoor scenes with ground truth, a teacher-embedding oracle,
//! controlled semantic corruption and segmentation metrics.

mod corrupt;
mod dataset;
mod metrics;
mod render;
mod scene;
mod teacher;

pub use corrupt::{boundary_mask, corrupt_features, CorruptionConfig};
pub use dataset::{SceneBundle, SynthConfig};
pub use metrics::{assign_labels, evaluate, EvalReport, LabelAssignment};
pub use render::{camera_ring, render_views, ViewSpec};
pub use scene::{
    default_classes, default_palette, generate_scene, make_prototypes, sample_box, ObjectKind, SceneSpec, ShapeKind,
    Structure, SynthScene, CEILING, FLOOR, STRUCTURAL_CLASSES, WALL,
};
pub use teacher::teacher_oracle;
