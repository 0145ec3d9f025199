//! Point-cloud containers, sparse voxelization, exact neighbor search and
//! normal estimation.

mod cloud;
mod knn;
pub(crate) mod normals;
pub mod ply;
pub(crate) mod voxel;

pub use cloud::{Point3, PointCloud};
pub use knn::{Neighbor, NeighborIndex};
pub use normals::{estimate_normals, orient_normal, NormalEstimate};
pub use voxel::{voxelize, VoxelGrid, VoxelKey, DEFAULT_VOXEL_SIZE};

pub(crate) fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dist2(a: &Point3, b: &Point3) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

pub(crate) fn dot3(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
