use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FeatureField;
use crate::geometry::NeighborIndex;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionConfig {
    pub flip_rate: f64,
    pub sigma_n: f64,
    pub boundary_bias: f64,
    /// Neighborhood size for the label-mixed boundary test.
    pub k: usize,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig { flip_rate: 0.3, sigma_n: 0.3, boundary_bias: 3.0, k: 16 }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_rate) {
            return Err(Error::param(format!("flip rate {} outside [0, 1]", self.flip_rate)));
        }
        if !(self.boundary_bias >= 1.0) {
            return Err(Error::param(format!("boundary bias {} must be at least 1", self.boundary_bias)));
        }
        if !(self.sigma_n >= 0.0 && self.sigma_n.is_finite()) {
            return Err(Error::param("feature noise must be non-negative"));
        }
        if self.k == 0 {
            return Err(Error::param("boundary neighborhood size must be positive"));
        }
        Ok(())
    }
}

/// Points whose `k` nearest neighbors (self included) carry more than one
/// label. Ignored labels (negative) do not count.
pub fn boundary_mask(labels: &[i32], index: &NeighborIndex, k: usize) -> Result<Vec<bool>> {
    if labels.len() != index.len() {
        return Err(Error::param(format!("{} labels for {} indexed points", labels.len(), index.len())));
    }
    let points = index.points();
    Ok(crate::par::map_range(labels.len(), |i| {
        let own = labels[i];
        own >= 0
            && index
                .query_knn(&points[i], k)
                .iter()
                .any(|n| labels[n.index] >= 0 && labels[n.index] != own)
    }))
}

/// Replaces a random subset of rows with a wrong class prototype, then adds
/// Gaussian noise. Boundary points flip `boundary_bias` times as often.
/// Uncovered rows are left untouched.
pub fn corrupt_features(
    sem: &FeatureField,
    labels: &[i32],
    prototypes: &[Vec<f64>],
    cfg: &CorruptionConfig,
    index: &NeighborIndex,
    seed: u64,
) -> Result<FeatureField> {
    cfg.validate()?;
    if labels.len() != sem.rows() {
        return Err(Error::param(format!("{} labels for {} feature rows", labels.len(), sem.rows())));
    }
    if prototypes.iter().any(|p| p.len() != sem.dim()) {
        return Err(Error::param("prototype dim does not match the feature dim"));
    }
    let classes = prototypes.len();
    let boundary = boundary_mask(labels, index, cfg.k)?;
    let p_bnd = (cfg.flip_rate * cfg.boundary_bias).min(1.0);
    let mut out = sem.clone();
    let mut r = rng::sub_rng(seed, &[0xC0AA]);
    for i in 0..sem.rows() {
        let draw = r.random::<f64>();
        let wrong = if classes > 1 { r.random_range(0..classes - 1) } else { 0 };
        if !sem.coverage()[i] {
            continue;
        }
        let p = if boundary[i] { p_bnd } else { cfg.flip_rate };
        let gt = labels[i];
        if draw < p && gt >= 0 && (gt as usize) < classes && classes > 1 {
            let c = if wrong >= gt as usize { wrong + 1 } else { wrong };
            out.row_mut(i).copy_from_slice(&prototypes[c]);
        }
        if cfg.sigma_n > 0.0 {
            for x in out.row_mut(i) {
                *x += cfg.sigma_n * r.sample::<f64, _>(StandardNormal);
            }
        }
    }
    Ok(out)
}
