use rand::seq::index;
use rand::RngCore;

use super::{TeacherField, TrainConfig};
use crate::error::{Error, Result};
use crate::geometry::NeighborIndex;
use crate::{par, rng};

/// Anchors with one positive and `k_macro + k_micro` negatives each.
///
/// `negatives` is row-major `anchors x k`: macro-negatives first, then
/// micro-negatives. Rows with `valid[a] == false` are ignored by the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    pub anchors: Vec<usize>,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    pub valid: Vec<bool>,
    pub k_macro: usize,
    pub k_micro: usize,
}

impl TripletBatch {
    pub fn k(&self) -> usize {
        self.k_macro + self.k_micro
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn negatives_of(&self, a: usize) -> &[usize] {
        &self.negatives[a * self.k()..(a + 1) * self.k()]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

struct AnchorSample {
    positive: usize,
    negatives: Vec<usize>,
    valid: bool,
}

/// Hybrid sampling against the teacher.
///
/// For each anchor a uniform candidate pool (the whole scene when
/// `candidate_pool_size >= N - 1`) supplies the positive (most similar) and
/// the macro-negatives (least similar). Micro-negatives are the least
/// similar of the anchor's `micro_pool_size` spatial neighbors. Ties go to
/// the lower point index.
pub fn sample_triplets(
    teacher: &TeacherField,
    index: &NeighborIndex,
    cfg: &TrainConfig,
    rng: &mut rng::Rng,
) -> Result<TripletBatch> {
    let n = teacher.len();
    if index.len() != n {
        return Err(Error::param("neighbor index and teacher field differ in size"));
    }
    let k = cfg.negatives();
    if n < k + 2 {
        return Err(Error::data(format!("scene has {n} points, needs at least {}", k + 2)));
    }
    let count = cfg.anchors_per_scene.min(n);
    let anchors: Vec<usize> = if count == n {
        (0..n).collect()
    } else {
        index::sample(rng, n, count).into_vec()
    };
    let stream = rng.next_u64();

    let samples = par::map_range(anchors.len(), |slot| {
        let mut local = rng::sub_rng(stream, &[slot as u64]);
        sample_anchor(teacher, index, cfg, anchors[slot], &mut local)
    });

    let mut batch = TripletBatch {
        anchors,
        positives: Vec::with_capacity(count),
        negatives: Vec::with_capacity(count * k),
        valid: Vec::with_capacity(count),
        k_macro: cfg.k_macro,
        k_micro: cfg.k_micro,
    };
    for s in samples {
        batch.positives.push(s.positive);
        batch.negatives.extend(s.negatives);
        batch.valid.push(s.valid);
    }
    Ok(batch)
}

fn sample_anchor(
    teacher: &TeacherField,
    index: &NeighborIndex,
    cfg: &TrainConfig,
    anchor: usize,
    rng: &mut rng::Rng,
) -> AnchorSample {
    let n = teacher.len();
    let k = cfg.negatives();
    let pool: Vec<usize> = if cfg.candidate_pool_size >= n - 1 {
        (0..n).filter(|&j| j != anchor).collect()
    } else {
        index::sample(rng, n - 1, cfg.candidate_pool_size)
            .into_iter()
            .map(|j| if j >= anchor { j + 1 } else { j })
            .collect()
    };
    let mut scored: Vec<(f64, usize)> = pool.iter().map(|&j| (teacher.similarity(anchor, j), j)).collect();

    let invalid = || AnchorSample { positive: anchor, negatives: vec![anchor; k], valid: false };
    let Some(&(_, positive)) = scored
        .iter()
        .min_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)))
    else {
        return invalid();
    };

    scored.retain(|&(_, j)| j != positive);
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut negatives: Vec<usize> = scored.iter().take(cfg.k_macro).map(|&(_, j)| j).collect();
    if negatives.len() < cfg.k_macro {
        return invalid();
    }

    if cfg.k_micro > 0 {
        let nn = index.query_knn(&index.points()[anchor], cfg.micro_pool_size + 1);
        let mut local: Vec<(f64, usize)> = nn
            .iter()
            .map(|nb| nb.index)
            .filter(|&j| j != anchor && j != positive && !negatives.contains(&j))
            .take(cfg.micro_pool_size)
            .map(|j| (teacher.similarity(anchor, j), j))
            .collect();
        local.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if local.len() < cfg.k_micro {
            return invalid();
        }
        negatives.extend(local.iter().take(cfg.k_micro).map(|&(_, j)| j));
    }
    AnchorSample { positive, negatives, valid: true }
}
