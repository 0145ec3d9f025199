use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{dot, norm, FeatureField};

/// Nearest-prototype labels. Zero rows go to class 0 and are counted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelAssignment {
    pub labels: Vec<i32>,
    pub zero_rows: usize,
}

/// Cosine argmax against unit prototypes; ties go to the lowest class id.
pub fn assign_labels(features: &FeatureField, prototypes: &[Vec<f64>]) -> Result<LabelAssignment> {
    if prototypes.is_empty() {
        return Err(Error::param("no prototypes"));
    }
    if let Some(c) = prototypes.iter().position(|p| p.len() != features.dim()) {
        return Err(Error::param(format!("prototype {c} has dim {}, features have {}", prototypes[c].len(), features.dim())));
    }
    let labels = crate::par::map_range(features.rows(), |i| {
        let row = features.row(i);
        if norm(row) == 0.0 {
            return -1;
        }
        // The row norm is a positive constant per row, so it does not change the argmax.
        let mut best = 0;
        let mut best_s = f64::NEG_INFINITY;
        for (c, p) in prototypes.iter().enumerate() {
            let s = dot(row, p);
            if s > best_s {
                best = c;
                best_s = s;
            }
        }
        best as i32
    });
    let zero_rows = labels.iter().filter(|l| **l < 0).count();
    let labels = labels.into_iter().map(|l| l.max(0)).collect();
    Ok(LabelAssignment { labels, zero_rows })
}

/// Segmentation scores for one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_count: usize,
    /// `None` for a class absent from the ground truth.
    pub iou: Vec<Option<f64>>,
    pub acc: Vec<Option<f64>>,
    pub miou: f64,
    pub macc: f64,
    /// `None` if every present class is excluded.
    pub f_miou: Option<f64>,
    pub f_macc: Option<f64>,
    /// `confusion[gt][pred]`.
    pub confusion: Vec<Vec<u64>>,
    pub excluded: Vec<usize>,
    pub valid_points: u64,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.17}"));
        let mut s = String::from("class,iou,acc,gt_points,excluded\n");
        for c in 0..self.class_count {
            let gt: u64 = self.confusion[c].iter().sum();
            s += &format!("{c},{},{},{gt},{}\n", fmt(self.iou[c]), fmt(self.acc[c]), self.excluded.contains(&c));
        }
        s += &format!("mIoU,{},,,\n", fmt(Some(self.miou)));
        s += &format!("mAcc,,{},,\n", fmt(Some(self.macc)));
        s += &format!("f-mIoU,{},,,\n", fmt(self.f_miou));
        s += &format!("f-mAcc,,{},,\n", fmt(self.f_macc));
        s
    }
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Confusion-matrix IoU and accuracy. Ground-truth `-1` is ignored.
pub fn evaluate(pred: &[i32], gt: &[i32], class_count: usize, excluded: &[usize]) -> Result<EvalReport> {
    if pred.len() != gt.len() {
        return Err(Error::param(format!("{} predictions for {} ground-truth labels", pred.len(), gt.len())));
    }
    if class_count == 0 {
        return Err(Error::param("class count must be positive"));
    }
    let mut confusion = vec![vec![0u64; class_count]; class_count];
    let mut valid = 0u64;
    for (i, (&p, &g)) in pred.iter().zip(gt).enumerate() {
        if g == -1 {
            continue;
        }
        if g < 0 || g as usize >= class_count {
            return Err(Error::param(format!("ground-truth label {g} at point {i} is out of range")));
        }
        if p < 0 || p as usize >= class_count {
            return Err(Error::param(format!("predicted label {p} at point {i} is out of range")));
        }
        confusion[g as usize][p as usize] += 1;
        valid += 1;
    }
    if valid == 0 {
        return Err(Error::data("no valid ground-truth points"));
    }
    let mut iou = vec![None; class_count];
    let mut acc = vec![None; class_count];
    for c in 0..class_count {
        let tp = confusion[c][c] as f64;
        let gt_c: u64 = confusion[c].iter().sum();
        if gt_c == 0 {
            continue;
        }
        let pred_c: u64 = (0..class_count).map(|g| confusion[g][c]).sum();
        let fn_ = gt_c as f64 - tp;
        let fp = pred_c as f64 - tp;
        iou[c] = Some(tp / (tp + fp + fn_));
        acc[c] = Some(tp / gt_c as f64);
    }
    let keep = |c: &usize| !excluded.contains(c);
    let mut excluded: Vec<usize> = excluded.to_vec();
    excluded.sort_unstable();
    excluded.dedup();
    Ok(EvalReport {
        class_count,
        miou: mean(iou.iter().flatten().copied()).unwrap_or(0.0),
        macc: mean(acc.iter().flatten().copied()).unwrap_or(0.0),
        f_miou: mean((0..class_count).filter(keep).filter_map(|c| iou[c])),
        f_macc: mean((0..class_count).filter(keep).filter_map(|c| acc[c])),
        iou,
        acc,
        confusion,
        excluded,
        valid_points: valid,
    })
}
