use std::collections::BTreeMap;

use super::{Point3, PointCloud};
use crate::error::{Error, Result};

pub const DEFAULT_VOXEL_SIZE: f64 = 0.02;

pub type VoxelKey = [i64; 3];

/// Sparse voxel partition of a cloud. Keys are sorted lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    voxel_size: f64,
    keys: Vec<VoxelKey>,
    point_to_voxel: Vec<usize>,
    centroids: Vec<Point3>,
    counts: Vec<usize>,
}

impl VoxelGrid {
    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[VoxelKey] {
        &self.keys
    }

    pub fn point_to_voxel(&self) -> &[usize] {
        &self.point_to_voxel
    }

    pub fn centroids(&self) -> &[Point3] {
        &self.centroids
    }

    /// Member-point count per voxel.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }
}

pub fn voxel_key(p: &Point3, voxel_size: f64) -> VoxelKey {
    p.map(|c| (c / voxel_size).floor() as i64)
}

pub fn voxelize(cloud: &PointCloud, voxel_size: f64) -> Result<VoxelGrid> {
    voxelize_points(cloud.positions(), voxel_size)
}

pub(crate) fn voxelize_points(points: &[Point3], voxel_size: f64) -> Result<VoxelGrid> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(Error::param(format!("voxel size must be positive, got {voxel_size}")));
    }
    if points.is_empty() {
        return Err(Error::param("cannot voxelize an empty cloud"));
    }
    if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
        return Err(Error::data(format!("point {i} has a non-finite coordinate")));
    }

    let point_keys: Vec<VoxelKey> = points.iter().map(|p| voxel_key(p, voxel_size)).collect();
    let mut slots: BTreeMap<VoxelKey, usize> = point_keys.iter().map(|k| (*k, 0)).collect();
    for (slot, idx) in slots.values_mut().zip(0..) {
        *slot = idx;
    }
    let keys: Vec<VoxelKey> = slots.keys().copied().collect();
    let point_to_voxel: Vec<usize> = point_keys.iter().map(|k| slots[k]).collect();

    let mut sums = vec![[0.0; 3]; keys.len()];
    let mut counts = vec![0usize; keys.len()];
    for (p, &v) in points.iter().zip(&point_to_voxel) {
        for k in 0..3 {
            sums[v][k] += p[k];
        }
        counts[v] += 1;
    }
    let centroids = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s.map(|x| x / c as f64))
        .collect();

    Ok(VoxelGrid { voxel_size, keys, point_to_voxel, centroids, counts })
}
