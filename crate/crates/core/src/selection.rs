//! Scene subset selection: entropy/richness statistics, median filtering,
//! k-means over class histograms and stratified top-score picks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::rng;
use rand::Rng as _;

const KMEANS_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneStats {
    pub scene_id: String,
    /// Number of distinct labels present.
    pub n_c: usize,
    /// Shannon entropy of the label proportions, in bits.
    pub h_c: f64,
    /// Proportions over the global class list.
    pub histogram: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl SceneStats {
    /// Stats from raw per-class point counts.
    pub fn from_counts(scene_id: impl Into<String>, counts: &[usize]) -> Result<Self> {
        let scene_id = scene_id.into();
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::data(format!("scene {scene_id} has no labeled points")));
        }
        let histogram: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
        let n_c = counts.iter().filter(|&&c| c > 0).count();
        let h_c = entropy_bits(&histogram);
        Ok(Self { scene_id, n_c, h_c, histogram, cluster: None, score: None })
    }
}

/// `-sum p log2 p` with `0 log 0 = 0`.
pub fn entropy_bits(p: &[f64]) -> f64 {
    let h: f64 = p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.log2()).sum();
    h.max(0.0)
}

pub fn scene_stats(cloud: &PointCloud, class_count: usize) -> Result<SceneStats> {
    let labels = cloud
        .labels()
        .ok_or_else(|| Error::data(format!("scene {} has no labels", cloud.scene_id())))?;
    let mut counts = vec![0usize; class_count];
    for (i, &l) in labels.iter().enumerate() {
        if l < 0 {
            continue;
        }
        let c = l as usize;
        if c >= class_count {
            return Err(Error::data(format!(
                "scene {}: point {i} has class {c} outside [0, {class_count})",
                cloud.scene_id()
            )));
        }
        counts[c] += 1;
    }
    SceneStats::from_counts(cloud.scene_id(), &counts)
}

/// Lower of the two middle values for even counts.
pub fn lower_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

/// Keeps scenes at or above the median for both richness and complexity.
pub fn filter_median(stats: &[SceneStats]) -> Result<Vec<SceneStats>> {
    if stats.is_empty() {
        return Err(Error::param("cannot filter an empty scene list"));
    }
    let n_med = lower_median(&stats.iter().map(|s| s.n_c as f64).collect::<Vec<_>>());
    let h_med = lower_median(&stats.iter().map(|s| s.h_c).collect::<Vec<_>>());
    Ok(stats
        .iter()
        .filter(|s| s.n_c as f64 >= n_med && s.h_c >= h_med)
        .cloned()
        .collect())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Result of [`kmeans`]: labels, centroids and the inertia trace.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
    /// Inertia of the assignment to the seeded centers.
    pub initial_inertia: f64,
    pub inertia: f64,
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, ctr) in centroids.iter().enumerate() {
        let d = sq_dist(point, ctr);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

fn inertia(points: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points.iter().zip(labels).map(|(p, &l)| sq_dist(p, &centroids[l])).sum()
}

/// Lloyd's algorithm with farthest-point seeding. The first seed is drawn
/// from the seeded RNG; every later seed is the point farthest from the
/// chosen ones (lowest index on ties).
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansFit> {
    if k == 0 || points.len() < k {
        return Err(Error::param(format!("cannot form {k} clusters from {} items", points.len())));
    }
    let n = points.len();
    let mut r = rng::sub_rng(seed, &[0xC1_u64]);
    let mut centers = vec![r.random_range(0..n)];
    let mut min_d: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[centers[0]])).collect();
    while centers.len() < k {
        let mut far = 0;
        for i in 1..n {
            if min_d[i] > min_d[far] {
                far = i;
            }
        }
        centers.push(far);
        for (m, p) in min_d.iter_mut().zip(points) {
            *m = m.min(sq_dist(p, &points[far]));
        }
    }
    let mut centroids: Vec<Vec<f64>> = centers.iter().map(|&c| points[c].clone()).collect();
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    let initial_inertia = inertia(points, &labels, &centroids);
    let mut iterations = 0;
    loop {
        iterations += 1;
        // Update step, with empty clusters re-seeded from the worst-fit point.
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            sums[l].iter_mut().zip(p).for_each(|(s, x)| *s += x);
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let mut worst = 0;
                let mut worst_d = -1.0;
                for (i, p) in points.iter().enumerate() {
                    if counts[labels[i]] <= 1 {
                        continue;
                    }
                    let d = sq_dist(p, &centroids[labels[i]]);
                    if d > worst_d {
                        worst = i;
                        worst_d = d;
                    }
                }
                counts[labels[worst]] -= 1;
                labels[worst] = c;
                counts[c] = 1;
                centroids[c] = points[worst].clone();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if next == labels || iterations >= KMEANS_MAX_ITERS {
            labels = next;
            break;
        }
        labels = next;
    }
    let inertia = inertia(points, &labels, &centroids);
    Ok(KMeansFit { labels, centroids, iterations, initial_inertia, inertia })
}

/// Cluster labels for the scenes' histograms.
pub fn kmeans_histograms(stats: &[SceneStats], k_clusters: usize, seed: u64) -> Result<Vec<usize>> {
    let points: Vec<Vec<f64>> = stats.iter().map(|s| s.histogram.clone()).collect();
    kmeans(&points, k_clusters, seed).map(|f| f.labels)
}

/// Min-max scaling; a constant column maps to zeros.
pub fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; values.len()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    #[serde(rename = "K_subset")]
    pub k_subset: usize,
    #[serde(rename = "K_clusters")]
    pub k_clusters: usize,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { k_subset: 4, k_clusters: 4, gamma: 0.5, seed: 0 }
    }
}

/// Full selection outcome, suitable for a JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    /// Every input scene with its metrics.
    pub scenes: Vec<SceneStats>,
    /// Filtered scenes with cluster and score filled in.
    pub filtered: Vec<SceneStats>,
    /// Selected scene ids, in cluster order.
    pub selected: Vec<String>,
    /// Quota shortfalls that were carried to later clusters.
    pub deficits: Vec<String>,
}

/// Filter, cluster, score and pick `k_subset` scenes.
///
/// Cluster `j` receives `floor(K/C) + [j < K mod C]` picks by descending
/// score (scene id breaks ties). A cluster smaller than its quota passes the
/// shortfall on to the following clusters; anything still missing after the
/// last cluster is filled by further passes in cluster order.
pub fn select_subset(stats: &[SceneStats], cfg: &SelectionConfig) -> Result<SelectionReport> {
    if cfg.k_clusters == 0 {
        return Err(Error::param("K_clusters must be positive"));
    }
    let mut filtered = filter_median(stats)?;
    if filtered.len() < cfg.k_subset {
        return Err(Error::param(format!(
            "only {} scenes survive filtering, {} requested",
            filtered.len(),
            cfg.k_subset
        )));
    }
    let labels = kmeans_histograms(&filtered, cfg.k_clusters, cfg.seed)?;
    let n_norm = min_max(&filtered.iter().map(|s| s.n_c as f64).collect::<Vec<_>>());
    let h_norm = min_max(&filtered.iter().map(|s| s.h_c).collect::<Vec<_>>());
    for (i, s) in filtered.iter_mut().enumerate() {
        s.cluster = Some(labels[i]);
        s.score = Some(h_norm[i] + cfg.gamma * n_norm[i]);
    }

    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); cfg.k_clusters];
    for (i, &l) in labels.iter().enumerate() {
        clusters[l].push(i);
    }
    for members in &mut clusters {
        members.sort_by(|&a, &b| {
            let (sa, sb) = (filtered[a].score.unwrap(), filtered[b].score.unwrap());
            sb.total_cmp(&sa).then_with(|| filtered[a].scene_id.cmp(&filtered[b].scene_id))
        });
    }

    let base = cfg.k_subset / cfg.k_clusters;
    let rem = cfg.k_subset % cfg.k_clusters;
    let mut taken = vec![0usize; cfg.k_clusters];
    let mut selected = Vec::with_capacity(cfg.k_subset);
    let mut deficits = Vec::new();
    let mut carry = 0usize;
    for (j, members) in clusters.iter().enumerate() {
        let quota = base + usize::from(j < rem);
        let want = quota + carry;
        let n = want.min(members.len());
        selected.extend(members[..n].iter().map(|&i| filtered[i].scene_id.clone()));
        taken[j] = n;
        carry = want - n;
        if carry > 0 {
            deficits.push(format!("cluster {j} has {} scenes for a quota of {want}", members.len()));
        }
    }
    while carry > 0 {
        for (j, members) in clusters.iter().enumerate() {
            if carry > 0 && taken[j] < members.len() {
                selected.push(filtered[members[taken[j]]].scene_id.clone());
                taken[j] += 1;
                carry -= 1;
            }
        }
    }
    Ok(SelectionReport { scenes: stats.to_vec(), filtered, selected, deficits })
}
