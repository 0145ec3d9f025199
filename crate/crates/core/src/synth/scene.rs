use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::render::{render_views, ViewSpec};
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::lifting::CameraView;
use crate::rng;

pub const WALL: usize = 0;
pub const FLOOR: usize = 1;
pub const CEILING: usize = 2;
pub const STRUCTURAL_CLASSES: [usize; 3] = [WALL, FLOOR, CEILING];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Box,
    Cylinder,
    Sphere,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    Floor,
    Walls,
    Ceiling,
}

/// An object template: its class, primitive and size ranges.
///
/// Box sizes are full extents; cylinders use `[radius, radius, height]`;
/// spheres use `[radius, _, _]`. `elevation` is the range of the bottom
/// height above the floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectKind {
    pub class: usize,
    pub shape: ShapeKind,
    pub size_min: [f64; 3],
    pub size_max: [f64; 3],
    pub elevation: [f64; 2],
}

pub fn default_classes() -> Vec<String> {
    ["wall", "floor", "ceiling", "cabinet", "bed", "table", "bookshelf", "sofa", "bin", "lamp", "ball"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

pub fn default_palette() -> Vec<ObjectKind> {
    let k = |class, shape, size_min, size_max, elevation| ObjectKind { class, shape, size_min, size_max, elevation };
    vec![
        k(3, ShapeKind::Box, [0.4, 0.4, 0.6], [0.8, 0.6, 1.0], [0.0, 0.0]),
        k(4, ShapeKind::Box, [1.4, 0.9, 0.4], [2.0, 1.5, 0.6], [0.0, 0.0]),
        k(5, ShapeKind::Box, [0.8, 0.6, 0.05], [1.4, 1.0, 0.1], [0.65, 0.75]),
        k(6, ShapeKind::Box, [0.8, 0.3, 1.4], [1.2, 0.4, 1.9], [0.0, 0.0]),
        k(7, ShapeKind::Box, [1.5, 0.8, 0.6], [2.1, 1.0, 0.85], [0.0, 0.0]),
        k(8, ShapeKind::Cylinder, [0.15, 0.15, 0.3], [0.25, 0.25, 0.6], [0.0, 0.0]),
        k(9, ShapeKind::Sphere, [0.15, 0.0, 0.0], [0.3, 0.0, 0.0], [0.9, 1.4]),
        k(10, ShapeKind::Sphere, [0.15, 0.0, 0.0], [0.35, 0.0, 0.0], [0.0, 0.0]),
    ]
}

/// `count` pairwise-distinct random unit vectors of dimension `dim`.
pub fn make_prototypes(count: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::sub_rng(seed, &[0x9207]);
    (0..count)
        .map(|_| {
            let mut v: Vec<f64> = (0..dim).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            crate::field::normalize(&mut v);
            v
        })
        .collect()
}

/// Everything needed to generate one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub scene_id: String,
    pub seed: u64,
    /// Room size in meters along x, y, z.
    pub extents: [f64; 3],
    pub num_objects: usize,
    pub palette: Vec<ObjectKind>,
    pub structures: Vec<Structure>,
    pub points_per_object: usize,
    /// Sampling density for walls, floor and ceiling.
    pub points_per_m2: f64,
    pub noise_sigma: f64,
    pub class_names: Vec<String>,
    pub prototypes: Vec<Vec<f64>>,
    pub views: ViewSpec,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.extents.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::param(format!("room extents must be positive, got {:?}", self.extents)));
        }
        if self.num_objects > 0 && (self.palette.is_empty() || self.points_per_object < 10) {
            return Err(Error::param("objects need a palette and at least 10 points each"));
        }
        if self.prototypes.len() != self.class_names.len() || self.prototypes.is_empty() {
            return Err(Error::param("need one prototype per class"));
        }
        let dim = self.prototypes[0].len();
        for (i, p) in self.prototypes.iter().enumerate() {
            if p.len() != dim || (crate::field::norm(p) - 1.0).abs() > 1e-9 {
                return Err(Error::param(format!("prototype {i} is not a unit vector of dim {dim}")));
            }
            if self.prototypes[..i].iter().any(|q| q == p) {
                return Err(Error::param(format!("prototype {i} duplicates an earlier one")));
            }
        }
        if self.palette.iter().any(|k| k.class >= self.class_names.len()) {
            return Err(Error::param("palette refers to an unknown class"));
        }
        if !(self.noise_sigma >= 0.0) || !(self.points_per_m2 >= 0.0) {
            return Err(Error::param("noise and density must be non-negative"));
        }
        if self.num_objects == 0 && self.structures.is_empty() {
            return Err(Error::param("scene has nothing to sample"));
        }
        Ok(())
    }
}

/// A generated scene. `cloud` carries labels and instance ids.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub cloud: PointCloud,
    pub views: Vec<CameraView>,
}

struct Sampler {
    positions: Vec<Point3>,
    normals: Vec<Point3>,
    labels: Vec<i32>,
    instances: Vec<i32>,
    colors: Vec<Point3>,
}

impl Sampler {
    fn push(&mut self, p: Point3, n: Point3, class: usize, instance: usize, color: Point3) {
        self.positions.push(p);
        self.normals.push(n);
        self.labels.push(class as i32);
        self.instances.push(instance as i32);
        self.colors.push(color);
    }
}

/// Area-weighted uniform samples on the six faces of an axis-aligned box.
/// Returns `(point, outward normal, face index)`; faces are ordered
/// `-x, +x, -y, +y, -z, +z`.
pub fn sample_box(
    center: Point3,
    size: [f64; 3],
    count: usize,
    include_bottom: bool,
    r: &mut rng::Rng,
) -> Vec<(Point3, Point3, usize)> {
    let [sx, sy, sz] = size;
    let areas = [sy * sz, sy * sz, sx * sz, sx * sz, if include_bottom { sx * sy } else { 0.0 }, sx * sy];
    let total: f64 = areas.iter().sum();
    (0..count)
        .map(|_| {
            let mut pick = r.random::<f64>() * total;
            let mut face = 5;
            for (f, a) in areas.iter().enumerate() {
                if pick < *a {
                    face = f;
                    break;
                }
                pick -= a;
            }
            let axis = face / 2;
            let sign = if face % 2 == 0 { -1.0 } else { 1.0 };
            let mut p = [0.0; 3];
            let mut n = [0.0; 3];
            for k in 0..3 {
                p[k] = if k == axis { sign * size[k] / 2.0 } else { (r.random::<f64>() - 0.5) * size[k] };
                p[k] += center[k];
            }
            n[axis] = sign;
            (p, n, face)
        })
        .collect()
}

fn sample_cylinder(base: Point3, radius: f64, height: f64, count: usize, include_bottom: bool, r: &mut rng::Rng) -> Vec<(Point3, Point3)> {
    let side = 2.0 * std::f64::consts::PI * radius * height;
    let cap = std::f64::consts::PI * radius * radius;
    let total = side + cap + if include_bottom { cap } else { 0.0 };
    (0..count)
        .map(|_| {
            let pick = r.random::<f64>() * total;
            let theta = r.random::<f64>() * std::f64::consts::TAU;
            if pick < side {
                let z = r.random::<f64>() * height;
                let (s, c) = theta.sin_cos();
                ([base[0] + radius * c, base[1] + radius * s, base[2] + z], [c, s, 0.0])
            } else {
                let rr = radius * r.random::<f64>().sqrt();
                let (s, c) = theta.sin_cos();
                let top = pick < side + cap;
                let z = if top { height } else { 0.0 };
                ([base[0] + rr * c, base[1] + rr * s, base[2] + z], [0.0, 0.0, if top { 1.0 } else { -1.0 }])
            }
        })
        .collect()
}

fn sample_sphere(center: Point3, radius: f64, count: usize, r: &mut rng::Rng) -> Vec<(Point3, Point3)> {
    (0..count)
        .map(|_| loop {
            let v: [f64; 3] = [r.sample(StandardNormal), r.sample(StandardNormal), r.sample(StandardNormal)];
            let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if len > 1e-9 {
                let n = v.map(|x| x / len);
                break ([center[0] + radius * n[0], center[1] + radius * n[1], center[2] + radius * n[2]], n);
            }
        })
        .collect()
}

fn random_color(r: &mut rng::Rng) -> Point3 {
    [0.0; 3].map(|_| 0.2 + 0.6 * r.random::<f64>())
}

/// Samples a room with structural planes and non-overlapping objects, then
/// renders its camera views.
pub fn generate_scene(spec: &SceneSpec) -> Result<SynthScene> {
    spec.validate()?;
    let mut r = rng::sub_rng(spec.seed, &[0x5CE7]);
    let [ex, ey, ez] = spec.extents;
    let mut s = Sampler { positions: vec![], normals: vec![], labels: vec![], instances: vec![], colors: vec![] };
    let mut instance = 0usize;

    let plane = |s: &mut Sampler, r: &mut rng::Rng, origin: Point3, a: Point3, b: Point3, n: Point3, class: usize, inst: usize| {
        let area = (a.iter().map(|x| x * x).sum::<f64>() * b.iter().map(|x| x * x).sum::<f64>()).sqrt();
        let count = (area * spec.points_per_m2).round() as usize;
        let base = random_color(r);
        for _ in 0..count {
            let (u, v) = (r.random::<f64>(), r.random::<f64>());
            let p = [0, 1, 2].map(|k| origin[k] + u * a[k] + v * b[k]);
            s.push(p, n, class, inst, base);
        }
    };
    for st in &spec.structures {
        match st {
            Structure::Floor => {
                plane(&mut s, &mut r, [0.0; 3], [ex, 0.0, 0.0], [0.0, ey, 0.0], [0.0, 0.0, 1.0], FLOOR, instance);
                instance += 1;
            }
            Structure::Ceiling => {
                plane(&mut s, &mut r, [0.0, 0.0, ez], [ex, 0.0, 0.0], [0.0, ey, 0.0], [0.0, 0.0, -1.0], CEILING, instance);
                instance += 1;
            }
            Structure::Walls => {
                let walls = [
                    ([0.0, 0.0, 0.0], [0.0, ey, 0.0], [1.0, 0.0, 0.0]),
                    ([ex, 0.0, 0.0], [0.0, ey, 0.0], [-1.0, 0.0, 0.0]),
                    ([0.0, 0.0, 0.0], [ex, 0.0, 0.0], [0.0, 1.0, 0.0]),
                    ([0.0, ey, 0.0], [ex, 0.0, 0.0], [0.0, -1.0, 0.0]),
                ];
                for (o, a, n) in walls {
                    plane(&mut s, &mut r, o, a, [0.0, 0.0, ez], n, WALL, instance);
                    instance += 1;
                }
            }
        }
    }

    // Objects: rejection-sample non-overlapping footprints.
    let mut footprints: Vec<[f64; 4]> = Vec::new();
    for _ in 0..spec.num_objects {
        let kind = &spec.palette[r.random_range(0..spec.palette.len())];
        let size: [f64; 3] = [0, 1, 2].map(|k| {
            let (lo, hi) = (kind.size_min[k], kind.size_max[k]);
            if hi > lo { r.random_range(lo..hi) } else { lo }
        });
        let (half_x, half_y, height) = match kind.shape {
            ShapeKind::Box => (size[0] / 2.0, size[1] / 2.0, size[2]),
            ShapeKind::Cylinder => (size[0], size[0], size[2]),
            ShapeKind::Sphere => (size[0], size[0], 2.0 * size[0]),
        };
        let elev = if kind.elevation[1] > kind.elevation[0] {
            r.random_range(kind.elevation[0]..kind.elevation[1])
        } else {
            kind.elevation[0]
        };
        let margin = 0.1;
        if 2.0 * (half_x + margin) >= ex || 2.0 * (half_y + margin) >= ey || elev + height >= ez {
            continue;
        }
        let mut placed = None;
        for _ in 0..100 {
            let cx = r.random_range(half_x + margin..ex - half_x - margin);
            let cy = r.random_range(half_y + margin..ey - half_y - margin);
            let fp = [cx - half_x, cx + half_x, cy - half_y, cy + half_y];
            let clear = footprints
                .iter()
                .all(|o| fp[1] + margin < o[0] || o[1] + margin < fp[0] || fp[3] + margin < o[2] || o[3] + margin < fp[2]);
            if clear {
                placed = Some((cx, cy, fp));
                break;
            }
        }
        let Some((cx, cy, fp)) = placed else { continue };
        footprints.push(fp);
        let color = random_color(&mut r);
        let n = spec.points_per_object;
        let elevated = elev > 0.0;
        let surface: Vec<(Point3, Point3)> = match kind.shape {
            ShapeKind::Box => sample_box([cx, cy, elev + size[2] / 2.0], size, n, elevated, &mut r)
                .into_iter()
                .map(|(p, nn, _)| (p, nn))
                .collect(),
            ShapeKind::Cylinder => sample_cylinder([cx, cy, elev], size[0], size[2], n, elevated, &mut r),
            ShapeKind::Sphere => sample_sphere([cx, cy, elev + size[0]], size[0], n, &mut r),
        };
        for (p, nn) in surface {
            s.push(p, nn, kind.class, instance, color);
        }
        instance += 1;
    }
    if s.positions.is_empty() {
        return Err(Error::param("scene spec produced no points"));
    }

    if spec.noise_sigma > 0.0 {
        let jitter = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::param(e.to_string()))?;
        for p in &mut s.positions {
            for c in p.iter_mut() {
                *c += jitter.sample(&mut r);
            }
        }
    }
    for c in &mut s.colors {
        for v in c.iter_mut() {
            *v = (*v + 0.03 * (r.random::<f64>() - 0.5)).clamp(0.0, 1.0);
        }
    }

    let cloud = PointCloud::new(spec.scene_id.clone(), s.positions)?
        .with_normals(s.normals)?
        .with_colors(s.colors)?
        .with_labels(s.labels)?
        .with_instances(s.instances)?;
    let views = render_views(&cloud, &spec.views, spec.extents, &spec.prototypes, rng::derive(spec.seed, &[0x7E3D]))?;
    Ok(SynthScene { cloud, views })
}
