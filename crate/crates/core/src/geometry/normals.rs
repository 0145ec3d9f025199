use nalgebra::{Matrix3, SymmetricEigen};

use super::{NeighborIndex, Point3, PointCloud};
use crate::error::{Error, Result};
use crate::par;

/// Components below this magnitude count as zero when orienting normals.
const ORIENT_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct NormalEstimate {
    pub normals: Vec<Point3>,
    /// Points whose neighborhood covariance had rank < 2; they get `(0, 0, 1)`.
    pub degenerate: Vec<usize>,
}

/// Eigen-decomposition of a neighborhood covariance.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LocalShape {
    /// Descending eigenvalues.
    pub eigenvalues: [f64; 3],
    /// Eigenvector of the smallest eigenvalue, oriented.
    pub normal: Point3,
    pub degenerate: bool,
}

pub(crate) fn local_shape(points: &[Point3], members: impl Iterator<Item = usize> + Clone) -> LocalShape {
    let count = members.clone().count() as f64;
    let mut mean = [0.0; 3];
    for i in members.clone() {
        for k in 0..3 {
            mean[k] += points[i][k];
        }
    }
    let mean = mean.map(|m| m / count);
    let mut cov = Matrix3::<f64>::zeros();
    for i in members {
        let d = super::sub(&points[i], &mean);
        for r in 0..3 {
            for c in 0..3 {
                cov[(r, c)] += d[r] * d[c];
            }
        }
    }
    cov /= count;

    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues = order.map(|i| eig.eigenvalues[i].max(0.0));
    let v = eig.eigenvectors.column(order[2]);
    let scale = eigenvalues[0].max(f64::MIN_POSITIVE);
    let degenerate = !(eigenvalues[0] > 0.0) || eigenvalues[1] <= 1e-10 * scale;
    let normal = if degenerate {
        [0.0, 0.0, 1.0]
    } else {
        let mut n = [v[0], v[1], v[2]];
        let len = super::dot3(&n, &n).sqrt();
        n.iter_mut().for_each(|x| *x /= len);
        orient_normal(n)
    };
    LocalShape { eigenvalues, normal, degenerate }
}

/// Flip `n` so it points toward +z; when its z component is zero, toward +x,
/// then +y.
pub fn orient_normal(mut n: Point3) -> Point3 {
    for k in [2, 0, 1] {
        if n[k].abs() > ORIENT_EPS {
            if n[k] < 0.0 {
                n.iter_mut().for_each(|x| *x = -*x);
            }
            break;
        }
    }
    for c in n.iter_mut() {
        if c.abs() <= ORIENT_EPS {
            *c = 0.0;
        }
    }
    let len = super::dot3(&n, &n).sqrt();
    n.map(|x| x / len)
}

/// Per-point PCA normals over the `k` nearest neighbors (self included).
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<NormalEstimate> {
    if cloud.len() < 3 {
        return Err(Error::param("normal estimation needs at least 3 points"));
    }
    if k < 3 {
        return Err(Error::param(format!("normal estimation needs k >= 3, got {k}")));
    }
    let index = NeighborIndex::build(cloud.positions())?;
    Ok(estimate_with_index(&index, k))
}

pub(crate) fn estimate_with_index(index: &NeighborIndex, k: usize) -> NormalEstimate {
    let points = index.points();
    let shapes = par::map_range(points.len(), |i| {
        let nn = index.query_knn(&points[i], k);
        local_shape(points, nn.iter().map(|n| n.index))
    });
    let degenerate = shapes
        .iter()
        .enumerate()
        .filter(|(_, s)| s.degenerate)
        .map(|(i, _)| i)
        .collect();
    NormalEstimate { normals: shapes.into_iter().map(|s| s.normal).collect(), degenerate }
}
