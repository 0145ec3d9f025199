//! Multi-view semantic initialization: project points into each camera,
//! sample the view's dense feature map, and average over the views that
//! actually see the point.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FeatureField, Granularity};
use crate::geometry::{Point3, PointCloud};
use crate::gpff::{Tensor, TensorData};
use crate::par;

pub const DEFAULT_DEPTH_TOL: f64 = 0.05;

/// A pinhole camera with its rendered feature and depth rasters.
///
/// `extrinsics` maps world to camera coordinates; the camera looks down +z.
/// Rasters are row-major: `feature_map[(v * width + u) * dim + d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub extrinsics: [[f64; 4]; 4],
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub feature_map: Vec<f32>,
    /// Meters; 0 marks an invalid pixel.
    pub depth_map: Vec<f32>,
}

/// A successful projection: pixel coordinates and camera-space depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl CameraView {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::param("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 || self.dim == 0 {
            return Err(Error::param("view dimensions must be positive"));
        }
        let px = self.width * self.height;
        if self.feature_map.len() != px * self.dim || self.depth_map.len() != px {
            return Err(Error::param("feature and depth rasters do not match the view size"));
        }
        let r = &self.extrinsics;
        for a in 0..3 {
            for b in 0..3 {
                let d: f64 = (0..3).map(|k| r[a][k] * r[b][k]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                if (d - want).abs() > 1e-5 {
                    return Err(Error::param("extrinsic rotation is not orthonormal"));
                }
            }
        }
        Ok(())
    }

    pub fn to_camera(&self, p: &Point3) -> Point3 {
        let e = &self.extrinsics;
        let mut out = [0.0; 3];
        for (r, o) in out.iter_mut().enumerate() {
            *o = e[r][0] * p[0] + e[r][1] * p[1] + e[r][2] * p[2] + e[r][3];
        }
        out
    }

    /// Inverse of [`project_point`] for a pixel coordinate and depth.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Point3 {
        let c = [(u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth];
        let e = &self.extrinsics;
        // world = R^T (c - t)
        let d = [c[0] - e[0][3], c[1] - e[1][3], c[2] - e[2][3]];
        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            *o = e[0][k] * d[0] + e[1][k] * d[1] + e[2][k] * d[2];
        }
        out
    }

    pub fn depth_at(&self, u: usize, v: usize) -> f64 {
        self.depth_map[v * self.width + u] as f64
    }

    pub fn feature_at(&self, u: usize, v: usize) -> &[f32] {
        let o = (v * self.width + u) * self.dim;
        &self.feature_map[o..o + self.dim]
    }

    /// Bilinear feature sample; pixel centers sit on integer coordinates.
    pub fn sample_bilinear(&self, u: f64, v: f64, out: &mut [f64]) {
        let x0 = (u.floor().max(0.0) as usize).min(self.width - 1);
        let y0 = (v.floor().max(0.0) as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let wx = (u - x0 as f64).clamp(0.0, 1.0);
        let wy = (v - y0 as f64).clamp(0.0, 1.0);
        let taps = [
            (x0, y0, (1.0 - wx) * (1.0 - wy)),
            (x1, y0, wx * (1.0 - wy)),
            (x0, y1, (1.0 - wx) * wy),
            (x1, y1, wx * wy),
        ];
        out.fill(0.0);
        for (x, y, w) in taps {
            if w == 0.0 {
                continue;
            }
            for (o, &f) in out.iter_mut().zip(self.feature_at(x, y)) {
                *o += w * f as f64;
            }
        }
    }
}

/// Pinhole projection; `None` behind the camera or outside the image.
pub fn project_point(view: &CameraView, p: &Point3) -> Option<Projection> {
    let c = view.to_camera(p);
    if !(c[2] > 0.0) {
        return None;
    }
    let u = view.fx * c[0] / c[2] + view.cx;
    let v = view.fy * c[1] / c[2] + view.cy;
    let inside = u >= 0.0 && u < view.width as f64 && v >= 0.0 && v < view.height as f64;
    inside.then_some(Projection { u, v, depth: c[2] })
}

/// Visibility test: in frustum and not occluded at the nearest pixel.
pub fn visible(view: &CameraView, p: &Point3, depth_tol: f64) -> Option<Projection> {
    let proj = project_point(view, p)?;
    let px = (proj.u.round() as usize).min(view.width - 1);
    let py = (proj.v.round() as usize).min(view.height - 1);
    let d = view.depth_at(px, py);
    (d > 0.0 && (proj.depth - d).abs() <= depth_tol).then_some(proj)
}

/// Per-sample weight: `(view, point, projection) -> weight`.
pub type ViewWeight = dyn Fn(&CameraView, &Point3, &Projection) -> f64 + Sync;

pub fn uniform_weight(_: &CameraView, _: &Point3, _: &Projection) -> f64 {
    1.0
}

/// Uniform-weight multi-view lifting.
pub fn lift_multiview(cloud: &PointCloud, views: &[CameraView], depth_tol: f64) -> Result<FeatureField> {
    lift_multiview_weighted(cloud, views, depth_tol, &uniform_weight)
}

pub fn lift_multiview_weighted(
    cloud: &PointCloud,
    views: &[CameraView],
    depth_tol: f64,
    weight: &ViewWeight,
) -> Result<FeatureField> {
    if !(depth_tol > 0.0) {
        return Err(Error::param("depth tolerance must be positive"));
    }
    let first = views.first().ok_or_else(|| Error::param("at least one view is required"))?;
    let dim = first.dim;
    for (i, v) in views.iter().enumerate() {
        v.validate()?;
        if v.dim != dim {
            return Err(Error::param(format!("view {i} has feature dim {} but view 0 has {dim}", v.dim)));
        }
    }

    let points = cloud.positions();
    let mut values = vec![0.0; points.len() * dim];
    par::for_each_row(&mut values, dim, |i, row| {
        let mut sample = vec![0.0; dim];
        let mut total = 0.0;
        for view in views {
            if let Some(proj) = visible(view, &points[i], depth_tol) {
                let w = weight(view, &points[i], &proj);
                if w <= 0.0 {
                    continue;
                }
                view.sample_bilinear(proj.u, proj.v, &mut sample);
                row.iter_mut().zip(&sample).for_each(|(r, s)| *r += w * s);
                total += w;
            }
        }
        if total > 0.0 {
            row.iter_mut().for_each(|r| *r /= total);
        } else {
            // Sentinel picked up below; uncovered rows stay exactly zero.
            row[0] = f64::NAN;
        }
    });
    let coverage: Vec<bool> = values.chunks_exact(dim).map(|r| !r[0].is_nan()).collect();
    for (row, &c) in values.chunks_exact_mut(dim).zip(&coverage) {
        if !c {
            row.fill(0.0);
        }
    }
    FeatureField::with_coverage(values, dim, Granularity::Point, coverage)
}

/// JSON sidecar for one view; rasters live in GPFF files next to it.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ViewMeta {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub extrinsics: [[f64; 4]; 4],
    pub width: usize,
    pub height: usize,
    pub feature_dim: usize,
    pub feature_file: String,
    pub depth_file: String,
}

/// Writes `<stem>_viewN_{feat,depth}.gpff` into `dir` and returns the
/// metadata list referencing them by file name.
pub fn save_views(dir: &Path, stem: &str, views: &[CameraView]) -> Result<Vec<ViewMeta>> {
    let mut metas = Vec::with_capacity(views.len());
    for (k, v) in views.iter().enumerate() {
        let feature_file = format!("{stem}_view{k}_feat.gpff");
        let depth_file = format!("{stem}_view{k}_depth.gpff");
        Tensor::f32(vec![v.height as u64, v.width as u64, v.dim as u64], v.feature_map.clone())?
            .write_file(dir.join(&feature_file))?;
        Tensor::f32(vec![v.height as u64, v.width as u64], v.depth_map.clone())?
            .write_file(dir.join(&depth_file))?;
        metas.push(ViewMeta {
            fx: v.fx,
            fy: v.fy,
            cx: v.cx,
            cy: v.cy,
            extrinsics: v.extrinsics,
            width: v.width,
            height: v.height,
            feature_dim: v.dim,
            feature_file,
            depth_file,
        });
    }
    Ok(metas)
}

pub fn load_view(dir: &Path, meta: &ViewMeta) -> Result<CameraView> {
    let feat = Tensor::read_file(dir.join(&meta.feature_file))?;
    let depth = Tensor::read_file(dir.join(&meta.depth_file))?;
    let (TensorData::F32(feature_map), TensorData::F32(depth_map)) = (feat.data, depth.data) else {
        return Err(Error::format("view rasters must be float32"));
    };
    let view = CameraView {
        fx: meta.fx,
        fy: meta.fy,
        cx: meta.cx,
        cy: meta.cy,
        extrinsics: meta.extrinsics,
        width: meta.width,
        height: meta.height,
        dim: meta.feature_dim,
        feature_map,
        depth_map,
    };
    view.validate()?;
    Ok(view)
}
