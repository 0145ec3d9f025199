use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// One scene's points with optional per-point attributes.
///
/// `labels` uses `-1` for unlabeled points. `instances` is carried for the
/// synthetic teacher oracle and is optional everywhere else.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<Point3>,
    colors: Option<Vec<Point3>>,
    normals: Option<Vec<Point3>>,
    labels: Option<Vec<i32>>,
    instances: Option<Vec<i32>>,
    scene_id: String,
}

impl PointCloud {
    pub fn new(scene_id: impl Into<String>, positions: Vec<Point3>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::param("point cloud must contain at least one point"));
        }
        if let Some(i) = positions.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::data(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self {
            positions,
            colors: None,
            normals: None,
            labels: None,
            instances: None,
            scene_id: scene_id.into(),
        })
    }

    pub fn with_colors(mut self, colors: Vec<Point3>) -> Result<Self> {
        self.check_len(colors.len(), "colors")?;
        if let Some(i) = colors
            .iter()
            .position(|c| c.iter().any(|v| !(0.0..=1.0).contains(v)))
        {
            return Err(Error::data(format!("color of point {i} outside [0, 1]")));
        }
        self.colors = Some(colors);
        Ok(self)
    }

    pub fn with_normals(mut self, normals: Vec<Point3>) -> Result<Self> {
        self.check_len(normals.len(), "normals")?;
        for (i, n) in normals.iter().enumerate() {
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if !len.is_finite() || (len - 1.0).abs() > 1e-4 {
                return Err(Error::data(format!("normal of point {i} has norm {len}")));
            }
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<i32>) -> Result<Self> {
        self.check_len(labels.len(), "labels")?;
        if let Some(i) = labels.iter().position(|&l| l < -1) {
            return Err(Error::data(format!("label of point {i} is below -1")));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_instances(mut self, instances: Vec<i32>) -> Result<Self> {
        self.check_len(instances.len(), "instances")?;
        self.instances = Some(instances);
        Ok(self)
    }

    fn check_len(&self, len: usize, what: &str) -> Result<()> {
        if len != self.positions.len() {
            return Err(Error::param(format!(
                "{what} has {len} rows for {} points",
                self.positions.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point3] {
        &self.positions
    }

    pub fn colors(&self) -> Option<&[Point3]> {
        self.colors.as_deref()
    }

    pub fn normals(&self) -> Option<&[Point3]> {
        self.normals.as_deref()
    }

    pub fn labels(&self) -> Option<&[i32]> {
        self.labels.as_deref()
    }

    pub fn instances(&self) -> Option<&[i32]> {
        self.instances.as_deref()
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    pub fn centroid(&self) -> Point3 {
        let n = self.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.positions {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        c.map(|v| v / n)
    }

    /// Axis-aligned bounds as `(min, max)`.
    pub fn bounds(&self) -> (Point3, Point3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.positions {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }
}
