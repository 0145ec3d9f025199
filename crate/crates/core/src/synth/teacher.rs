use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::distill::{TeacherField, TeacherSource};
use crate::error::{Error, Result};
use crate::field::{normalize, FeatureField, Granularity};
use crate::geometry::PointCloud;
use crate::rng;

/// Instance-coherent stand-in teacher: one random unit vector per instance,
/// per-point Gaussian noise of std `sigma`, then renormalized.
pub fn teacher_oracle(cloud: &PointCloud, dim: usize, sigma: f64, seed: u64) -> Result<TeacherField> {
    let instances = cloud.instances().ok_or_else(|| Error::data("teacher oracle needs instance ids"))?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::param(format!("teacher noise must be non-negative, got {sigma}")));
    }
    let ids: BTreeMap<i32, usize> = {
        let mut m = BTreeMap::new();
        for &id in instances {
            m.entry(id).or_insert(0);
        }
        m.into_keys().enumerate().map(|(k, id)| (id, k)).collect()
    };
    if dim < ids.len() || dim == 0 {
        return Err(Error::param(format!("teacher dim {dim} is smaller than the {} instances", ids.len())));
    }
    let mut r = rng::sub_rng(seed, &[0x7EAC]);
    let bases: Vec<Vec<f64>> = (0..ids.len())
        .map(|_| loop {
            let mut v: Vec<f64> = (0..dim).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            if normalize(&mut v) {
                break v;
            }
        })
        .collect();
    let mut values = Vec::with_capacity(instances.len() * dim);
    for &id in instances {
        let base = &bases[ids[&id]];
        let start = values.len();
        values.extend(base.iter().map(|b| b + if sigma > 0.0 { sigma * r.sample::<f64, _>(StandardNormal) } else { 0.0 }));
        if !normalize(&mut values[start..]) {
            values[start..].copy_from_slice(base);
        }
    }
    let field = FeatureField::new(values, dim, Granularity::Point)?;
    TeacherField::new(field, TeacherSource::Oracle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(instances: Vec<i32>) -> PointCloud {
        let n = instances.len();
        PointCloud::new("t", (0..n).map(|i| [i as f64, 0.0, 0.0]).collect())
            .unwrap()
            .with_instances(instances)
            .unwrap()
    }

    #[test]
    fn zero_noise_shares_instance_vector() {
        let t = teacher_oracle(&cloud(vec![0, 0, 1, 1, 0]), 4, 0.0, 3).unwrap();
        assert_eq!(t.field().row(0), t.field().row(1));
        assert_eq!(t.field().row(0), t.field().row(4));
        assert!((t.similarity(0, 0) - 1.0).abs() < 1e-12);
        let again = teacher_oracle(&cloud(vec![0, 0, 1, 1, 0]), 4, 0.0, 3).unwrap();
        assert_eq!(t.similarity(0, 2), again.similarity(0, 2));
        assert!(t.similarity(0, 2) < 1.0 - 1e-6);
    }

    #[test]
    fn intra_beats_inter() {
        let inst: Vec<i32> = (0..400).map(|i| i % 8).collect();
        let t = teacher_oracle(&cloud(inst.clone()), 32, 0.1, 1).unwrap();
        let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0, 0.0, 0);
        for a in 0..inst.len() {
            for b in a + 1..inst.len() {
                if inst[a] == inst[b] {
                    intra += t.similarity(a, b);
                    ni += 1;
                } else {
                    inter += t.similarity(a, b);
                    nx += 1;
                }
            }
        }
        assert!(intra / ni as f64 >= inter / nx as f64 + 0.3);
    }

    #[test]
    fn dim_too_small() {
        assert!(matches!(teacher_oracle(&cloud(vec![0, 1, 2]), 2, 0.0, 0), Err(Error::Parameter(_))));
    }
}
