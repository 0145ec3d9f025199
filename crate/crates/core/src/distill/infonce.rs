use super::TripletBatch;
use crate::error::{Error, Result};
use crate::field::{dot, FeatureField};
use crate::par;

/// Mean InfoNCE loss over the valid anchors and its gradient with respect to
/// every embedding row (row-major, same shape as `embeds`).
///
/// Similarities are raw dot products, which equal cosines because the rows
/// are unit-norm.
pub fn infonce_loss(embeds: &FeatureField, batch: &TripletBatch, temperature: f64) -> Result<(f64, Vec<f64>)> {
    if !(temperature > 0.0) {
        return Err(Error::param("temperature must be positive"));
    }
    embeds.check_unit_rows(1e-4)?;
    let valid = batch.valid_count();
    if valid == 0 {
        return Err(Error::EmptyBatch);
    }
    let rows = embeds.rows();
    let referenced = batch
        .anchors
        .iter()
        .chain(&batch.positives)
        .chain(&batch.negatives)
        .any(|&i| i >= rows);
    if referenced {
        return Err(Error::param("triplet batch references rows outside the embedding field"));
    }
    let d = embeds.dim();
    let k = batch.k();
    let scale = 1.0 / valid as f64;

    // Per anchor: loss and dL/ds for [positive, negatives...].
    let per_anchor = par::map_range(batch.len(), |a| {
        if !batch.valid[a] {
            return None;
        }
        let ga = embeds.row(batch.anchors[a]);
        let mut logits = Vec::with_capacity(k + 1);
        logits.push(dot(ga, embeds.row(batch.positives[a])) / temperature);
        logits.extend(batch.negatives_of(a).iter().map(|&j| dot(ga, embeds.row(j)) / temperature));
        let top = (0..logits.len()).fold(0, |m, i| if logits[i] > logits[m] { i } else { m });
        let max = logits[top];
        let rest: f64 = (0..logits.len()).filter(|&i| i != top).map(|i| (logits[i] - max).exp()).sum();
        let lse = max + rest.ln_1p();
        let loss = (max - logits[0]) + rest.ln_1p();
        let mut ds: Vec<f64> = logits.iter().map(|l| (l - lse).exp() / temperature).collect();
        ds[0] -= 1.0 / temperature;
        Some((loss, ds))
    });

    let mut grad = vec![0.0; rows * d];
    let mut total = 0.0;
    for (a, entry) in per_anchor.into_iter().enumerate() {
        let Some((loss, ds)) = entry else { continue };
        total += loss;
        let anchor = batch.anchors[a];
        let others = std::iter::once(batch.positives[a]).chain(batch.negatives_of(a).iter().copied());
        for (j, w) in others.zip(&ds) {
            let w = w * scale;
            for c in 0..d {
                let (ga, gj) = (embeds.row(anchor)[c], embeds.row(j)[c]);
                grad[anchor * d + c] += w * gj;
                grad[j * d + c] += w * ga;
            }
        }
    }
    Ok((total * scale, grad))
}
