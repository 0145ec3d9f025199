use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::lifting::{project_point, CameraView};
use crate::rng;

/// Camera ring and raster settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewSpec {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in degrees.
    pub fov_deg: f64,
    /// Eye height as a fraction of the room height.
    pub eye_height: f64,
    /// Ring radius as a fraction of the half extents.
    pub ring: f64,
    /// Half-size in pixels of the square each point is drawn into.
    pub splat_radius: usize,
    /// Std-dev of Gaussian noise added to every written feature.
    pub feature_noise: f64,
}

impl Default for ViewSpec {
    fn default() -> Self {
        ViewSpec {
            count: 6,
            width: 96,
            height: 72,
            fov_deg: 90.0,
            eye_height: 0.7,
            ring: 0.8,
            splat_radius: 0,
            feature_noise: 0.0,
        }
    }
}

fn sub3(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Point3, b: Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn unit(a: Point3) -> Point3 {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    a.map(|x| x / n)
}

/// World-to-camera extrinsics for an eye looking at `target` with +z up.
fn look_at(eye: Point3, target: Point3) -> [[f64; 4]; 4] {
    let f = unit(sub3(target, eye));
    let right = unit(cross(f, [0.0, 0.0, 1.0]));
    let down = cross(f, right);
    let mut e = [[0.0; 4]; 4];
    for (r, axis) in [right, down, f].iter().enumerate() {
        e[r][..3].copy_from_slice(axis);
        e[r][3] = -(axis[0] * eye[0] + axis[1] * eye[1] + axis[2] * eye[2]);
    }
    e[3][3] = 1.0;
    e
}

/// Empty views evenly spaced on an ellipse inside the room, all aimed at
/// the room center slightly below eye height.
pub fn camera_ring(spec: &ViewSpec, extents: [f64; 3], dim: usize) -> Result<Vec<CameraView>> {
    if spec.count == 0 || spec.width == 0 || spec.height == 0 || dim == 0 {
        return Err(Error::param("view count, raster size and feature dim must be positive"));
    }
    if !(spec.fov_deg > 0.0 && spec.fov_deg < 180.0) {
        return Err(Error::param(format!("field of view {} is out of range", spec.fov_deg)));
    }
    let [ex, ey, ez] = extents;
    let center = [ex / 2.0, ey / 2.0, ez * 0.4];
    let f = spec.width as f64 / 2.0 / (spec.fov_deg.to_radians() / 2.0).tan();
    let px = spec.width * spec.height;
    Ok((0..spec.count)
        .map(|k| {
            let theta = std::f64::consts::FRAC_PI_4 + std::f64::consts::TAU * k as f64 / spec.count as f64;
            let eye = [
                ex / 2.0 * (1.0 + spec.ring * theta.cos()),
                ey / 2.0 * (1.0 + spec.ring * theta.sin()),
                ez * spec.eye_height,
            ];
            CameraView {
                fx: f,
                fy: f,
                cx: (spec.width as f64 - 1.0) / 2.0,
                cy: (spec.height as f64 - 1.0) / 2.0,
                extrinsics: look_at(eye, center),
                width: spec.width,
                height: spec.height,
                dim,
                feature_map: vec![0.0; px * dim],
                depth_map: vec![0.0; px],
            }
        })
        .collect())
}

/// Z-buffer splatting of the class prototype of each labelled point.
pub fn render_views(
    cloud: &PointCloud,
    spec: &ViewSpec,
    extents: [f64; 3],
    prototypes: &[Vec<f64>],
    seed: u64,
) -> Result<Vec<CameraView>> {
    let labels = cloud.labels().ok_or_else(|| Error::data("rendering needs per-point labels"))?;
    let dim = prototypes.first().map_or(0, |p| p.len());
    let mut views = camera_ring(spec, extents, dim)?;
    let rad = spec.splat_radius as isize;
    for (vi, view) in views.iter_mut().enumerate() {
        let (w, h) = (view.width as isize, view.height as isize);
        let mut owner: Vec<Option<usize>> = vec![None; view.width * view.height];
        let mut zbuf = vec![f64::INFINITY; view.width * view.height];
        for (i, p) in cloud.positions().iter().enumerate() {
            if labels[i] < 0 || labels[i] as usize >= prototypes.len() {
                continue;
            }
            let Some(proj) = project_point(view, p) else { continue };
            let cu = (proj.u.round() as isize).min(w - 1);
            let cv = (proj.v.round() as isize).min(h - 1);
            for dv in -rad..=rad {
                for du in -rad..=rad {
                    let (u, v) = (cu + du, cv + dv);
                    if u < 0 || v < 0 || u >= w || v >= h {
                        continue;
                    }
                    let o = (v * w + u) as usize;
                    if proj.depth < zbuf[o] {
                        zbuf[o] = proj.depth;
                        owner[o] = Some(i);
                    }
                }
            }
        }
        let mut r = rng::sub_rng(seed, &[vi as u64]);
        for (o, who) in owner.iter().enumerate() {
            let Some(i) = who else { continue };
            view.depth_map[o] = zbuf[o] as f32;
            let proto = &prototypes[labels[*i] as usize];
            for (d, &x) in proto.iter().enumerate() {
                let noise = if spec.feature_noise > 0.0 {
                    spec.feature_noise * r.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                view.feature_map[o * dim + d] = (x + noise) as f32;
            }
        }
    }
    Ok(views)
}
