use crate::error::{Error, Result};
use crate::field::FeatureField;
use crate::geometry::normals::{estimate_with_index, local_shape};
use crate::geometry::{dot3, NeighborIndex, PointCloud};
use crate::par;

/// Position (3), color (3), normal (3), shape eigenvalues (3), normal spread (1).
pub const BASE_DESCRIPTOR_DIM: usize = 13;
pub const DEFAULT_K_CTX: usize = 16;

const GRAY: [f64; 3] = [0.5, 0.5, 0.5];

/// Row-major `rows x dim` descriptor matrix, one row per point.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptors {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Descriptors {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::param("descriptor buffer does not match its shape"));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Copy of the selected rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let data = rows.iter().flat_map(|&r| self.row(r).iter().copied()).collect();
        Self { rows: rows.len(), dim: self.dim, data }
    }
}

/// Per-point local-context descriptors. With `semantic`, its rows are
/// appended to each descriptor.
pub fn featurize_context(
    cloud: &PointCloud,
    k_ctx: usize,
    semantic: Option<&FeatureField>,
) -> Result<Descriptors> {
    let index = NeighborIndex::build(cloud.positions())?;
    featurize_with_index(cloud, &index, k_ctx, semantic)
}

pub fn featurize_with_index(
    cloud: &PointCloud,
    index: &NeighborIndex,
    k_ctx: usize,
    semantic: Option<&FeatureField>,
) -> Result<Descriptors> {
    if k_ctx < 4 {
        return Err(Error::param(format!("context neighborhood needs k >= 4, got {k_ctx}")));
    }
    if index.len() != cloud.len() {
        return Err(Error::param("neighbor index was built over a different point set"));
    }
    if let Some(s) = semantic {
        if s.rows() != cloud.len() {
            return Err(Error::param("semantic field is not aligned with the cloud"));
        }
    }
    let estimated;
    let normals = match cloud.normals() {
        Some(n) => n,
        None => {
            estimated = estimate_with_index(index, k_ctx.max(3)).normals;
            &estimated
        }
    };

    let points = cloud.positions();
    let centroid = cloud.centroid();
    let (lo, hi) = cloud.bounds();
    let diag = {
        let d = dot3(&[hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]], &[hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]]).sqrt();
        if d > 0.0 { d } else { 1.0 }
    };
    let extra = semantic.map_or(0, |s| s.dim());
    let dim = BASE_DESCRIPTOR_DIM + extra;

    let mut data = vec![0.0; points.len() * dim];
    par::for_each_row(&mut data, dim, |i, row| {
        let nn = index.query_knn(&points[i], k_ctx);
        let shape = local_shape(points, nn.iter().map(|n| n.index));
        let trace: f64 = shape.eigenvalues.iter().sum();
        let eig = if trace > 0.0 {
            shape.eigenvalues.map(|l| l / trace)
        } else {
            [1.0 / 3.0; 3]
        };
        let n_i = normals[i];
        let others = nn.iter().filter(|n| n.index != i);
        let count = others.clone().count();
        let spread = if count == 0 {
            0.0
        } else {
            others.map(|n| 1.0 - dot3(&n_i, &normals[n.index]).abs()).sum::<f64>() / count as f64
        };
        let color = cloud.colors().map_or(GRAY, |c| c[i]);
        for k in 0..3 {
            row[k] = (points[i][k] - centroid[k]) / diag;
            row[3 + k] = color[k];
            row[6 + k] = n_i[k];
            row[9 + k] = eig[k];
        }
        row[12] = spread.max(0.0);
        if let Some(s) = semantic {
            row[BASE_DESCRIPTOR_DIM..].copy_from_slice(s.row(i));
        }
    });
    Descriptors::new(points.len(), dim, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Granularity;
    use crate::geometry::Point3;

    fn eig_of(points: Vec<Point3>, query: usize, k: usize) -> [f64; 3] {
        let cloud = PointCloud::new("t", points).unwrap();
        let d = featurize_context(&cloud, k, None).unwrap();
        let r = d.row(query);
        [r[9], r[10], r[11]]
    }

    #[test]
    fn planar_neighborhood() {
        // Symmetric 5x5 grid, query the center with all 25 points.
        let mut pts = Vec::new();
        for a in -2..=2 {
            for b in -2..=2 {
                pts.push([a as f64, b as f64, 0.0]);
            }
        }
        let e = eig_of(pts, 12, 25);
        assert!((e[0] - 0.5).abs() < 1e-9 && (e[1] - 0.5).abs() < 1e-9 && e[2].abs() < 1e-9);
    }

    #[test]
    fn isotropic_neighborhood() {
        // Octahedron vertices plus center.
        let pts = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
        ];
        let e = eig_of(pts, 0, 7);
        for v in e {
            assert!((v - 1.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rod_neighborhood() {
        let pts: Vec<Point3> = (0..9).map(|i| [i as f64 * 0.1, 0.0, 0.0]).collect();
        let e = eig_of(pts, 4, 9);
        assert!((e[0] - 1.0).abs() < 1e-9 && e[1].abs() < 1e-9 && e[2].abs() < 1e-9);
    }

    #[test]
    fn descriptor_invariants_and_concat() {
        let pts: Vec<Point3> = (0..60)
            .map(|i| {
                let t = i as f64 * 0.37;
                [t.cos(), t.sin(), 0.05 * (i % 7) as f64]
            })
            .collect();
        let cloud = PointCloud::new("t", pts).unwrap();
        let d = featurize_context(&cloud, 8, None).unwrap();
        assert_eq!(d.dim, BASE_DESCRIPTOR_DIM);
        for i in 0..d.rows {
            let r = d.row(i);
            assert!(r.iter().all(|v| v.is_finite()));
            assert!((r[9] + r[10] + r[11] - 1.0).abs() < 1e-6);
            assert!(r[9] >= r[10] && r[10] >= r[11] && r[11] >= 0.0);
        }
        let sem = FeatureField::new((0..120).map(|v| v as f64).collect(), 2, Granularity::Point).unwrap();
        let c = featurize_context(&cloud, 8, Some(&sem)).unwrap();
        assert_eq!(c.dim, BASE_DESCRIPTOR_DIM + 2);
        assert_eq!(&c.row(5)[13..], &[10.0, 11.0]);
        assert_eq!(&c.row(5)[..13], d.row(5));
        assert!(featurize_context(&cloud, 3, None).is_err());
    }
}
