//! Geometry-guided pooling: a sparse softmax affinity graph over voxels and
//! repeated `F <- A F` propagation of semantic features along it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{dot, normalize, FeatureField, Granularity};
use crate::geometry::voxel::voxelize_points;
use crate::geometry::{NeighborIndex, Point3, PointCloud, VoxelGrid, DEFAULT_VOXEL_SIZE};
use crate::par;
use crate::distill::StudentConfig;
use crate::student::StudentNet;

/// Row-stochastic sparse matrix with at most `k` entries per row, the row's
/// own index always among them.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    k: usize,
    alpha: f64,
    /// Row offsets into `cols`/`weights` (CSR layout), length `V + 1`.
    offsets: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
}

impl AffinityGraph {
    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `(neighbor indices, weights)` of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.offsets[i], self.offsets[i + 1]);
        (&self.cols[s..e], &self.weights[s..e])
    }

    /// Row-major dense `V x V` copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let v = self.len();
        let mut m = vec![0.0; v * v];
        for i in 0..v {
            let (cols, w) = self.row(i);
            for (&j, &a) in cols.iter().zip(w) {
                m[i * v + j] += a;
            }
        }
        m
    }

    /// Builds a graph from explicit rows; each row is softmax-free and must
    /// already be row-stochastic.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>, alpha: f64) -> Result<Self> {
        let v = rows.len();
        let mut offsets = vec![0];
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        let mut k = 0;
        for (i, row) in rows.iter().enumerate() {
            let sum: f64 = row.iter().map(|e| e.1).sum();
            if row.iter().any(|e| e.0 >= v || !(e.1 > 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::param(format!("row {i} is not a positive stochastic row")));
            }
            k = k.max(row.len());
            cols.extend(row.iter().map(|e| e.0));
            weights.extend(row.iter().map(|e| e.1));
            offsets.push(cols.len());
        }
        Ok(Self { k, alpha, offsets, cols, weights })
    }
}

/// Sharpened-softmax affinities over each voxel's `k` nearest centroids
/// (itself included).
pub fn build_affinity(embeds: &FeatureField, centroids: &[Point3], k: usize, alpha: f64) -> Result<AffinityGraph> {
    if k < 1 {
        return Err(Error::param("affinity needs k >= 1"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::param(format!("sharpening factor must be positive, got {alpha}")));
    }
    if embeds.rows() != centroids.len() || centroids.is_empty() {
        return Err(Error::param("embeddings and centroids must be non-empty and aligned"));
    }
    embeds.check_unit_rows(1e-4)?;
    let index = NeighborIndex::build(centroids)?;
    let v = centroids.len();
    let kk = k.min(v);
    let rows = par::map_range(v, |i| {
        let nn = index.query_knn(&centroids[i], kk);
        let gi = embeds.row(i);
        let mut cols: Vec<usize> = nn.iter().map(|n| n.index).collect();
        if !cols.contains(&i) {
            // Coincident centroids cannot occur for distinct voxels; keep the
            // self-inclusion guarantee regardless.
            cols.pop();
            cols.insert(0, i);
        }
        let logits: Vec<f64> = cols.iter().map(|&j| alpha * dot(gi, embeds.row(j))).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        (cols, exps.into_iter().map(|e| e / sum).collect::<Vec<f64>>())
    });
    let mut offsets = Vec::with_capacity(v + 1);
    offsets.push(0);
    let mut cols = Vec::with_capacity(v * kk);
    let mut weights = Vec::with_capacity(v * kk);
    for (c, w) in rows {
        cols.extend(c);
        weights.extend(w);
        offsets.push(cols.len());
    }
    Ok(AffinityGraph { k, alpha, offsets, cols, weights })
}

/// `T` Jacobi sweeps `F <- A F`; no renormalization between steps.
pub fn iterate_pool(graph: &AffinityGraph, features: &FeatureField, steps: usize) -> Result<FeatureField> {
    if features.rows() != graph.len() {
        return Err(Error::param(format!(
            "feature field has {} rows but the graph has {}",
            features.rows(),
            graph.len()
        )));
    }
    let d = features.dim();
    let mut cur = features.values().to_vec();
    let mut next = vec![0.0; cur.len()];
    for _ in 0..steps {
        let src = &cur;
        par::for_each_row(&mut next, d, |i, out| {
            out.fill(0.0);
            let (cols, w) = graph.row(i);
            for (&j, &a) in cols.iter().zip(w) {
                out.iter_mut().zip(&src[j * d..(j + 1) * d]).for_each(|(o, s)| *o += a * s);
            }
        });
        std::mem::swap(&mut cur, &mut next);
    }
    let mut out = FeatureField::new(cur, d, features.granularity())?;
    if steps == 0 {
        out = features.clone();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolingConfig {
    #[serde(rename = "K")]
    pub k: usize,
    pub alpha: f64,
    #[serde(rename = "T")]
    pub steps: usize,
}

impl Default for PoolingConfig {
    fn default() -> Self {
        Self { k: 96, alpha: 0.05, steps: 18 }
    }
}

/// Settings for the end-to-end [`purify`] call.
#[derive(Debug, Clone, PartialEq)]
pub struct PurifyConfig {
    pub voxel_size: f64,
    pub pooling: PoolingConfig,
    pub student: StudentConfig,
}

impl Default for PurifyConfig {
    fn default() -> Self {
        Self { voxel_size: DEFAULT_VOXEL_SIZE, pooling: PoolingConfig::default(), student: StudentConfig::default() }
    }
}

/// Intermediate voxel-level state of a purification run, reusable across
/// different step counts.
#[derive(Debug, Clone)]
pub struct VoxelStage {
    pub grid: VoxelGrid,
    pub features: FeatureField,
    pub embeds: FeatureField,
    pub graph: AffinityGraph,
}

impl VoxelStage {
    pub fn prepare(cloud: &PointCloud, sem: &FeatureField, net: &StudentNet, cfg: &PurifyConfig) -> Result<Self> {
        if sem.rows() == 0 || sem.dim() == 0 {
            return Err(Error::param("semantic field is empty"));
        }
        if sem.rows() != cloud.len() {
            return Err(Error::param("semantic field is not aligned with the cloud"));
        }
        let grid = voxelize_points(cloud.positions(), cfg.voxel_size)?;
        let index = NeighborIndex::build(cloud.positions())?;
        let desc = cfg.student.descriptors(cloud, &index, Some(sem))?;
        let point_embeds = net.embed(&desc)?;

        let features = voxel_mean(&grid, sem, false)?;
        let embeds = voxel_mean(&grid, &point_embeds, true)?;
        let graph = build_affinity(&embeds, grid.centroids(), cfg.pooling.k, cfg.pooling.alpha)?;
        Ok(Self { grid, features, embeds, graph })
    }

    /// Pool for `steps` and scatter back to points.
    pub fn run(&self, steps: usize) -> Result<FeatureField> {
        let pooled = iterate_pool(&self.graph, &self.features, steps)?;
        scatter(&self.grid, &pooled)
    }
}

fn voxel_mean(grid: &VoxelGrid, field: &FeatureField, renormalize: bool) -> Result<FeatureField> {
    let d = field.dim();
    let mut sums = vec![0.0; grid.len() * d];
    for (i, &v) in grid.point_to_voxel().iter().enumerate() {
        sums[v * d..(v + 1) * d].iter_mut().zip(field.row(i)).for_each(|(s, x)| *s += x);
    }
    for (row, &c) in sums.chunks_exact_mut(d).zip(grid.counts()) {
        row.iter_mut().for_each(|s| *s /= c as f64);
        if renormalize && !normalize(row) {
            // Member embeddings cancelled out; any unit direction keeps the
            // row valid and only this voxel's affinities are affected.
            row[0] = 1.0;
        }
    }
    FeatureField::new(sums, d, Granularity::Voxel)
}

fn scatter(grid: &VoxelGrid, voxels: &FeatureField) -> Result<FeatureField> {
    let d = voxels.dim();
    let values = grid
        .point_to_voxel()
        .iter()
        .flat_map(|&v| voxels.row(v).iter().copied())
        .collect();
    FeatureField::new(values, d, Granularity::Point)
}

/// Voxelize, pool and scatter the purified features back to the points.
pub fn purify(cloud: &PointCloud, sem: &FeatureField, net: &StudentNet, cfg: &PurifyConfig) -> Result<FeatureField> {
    VoxelStage::prepare(cloud, sem, net, cfg)?.run(cfg.pooling.steps)
}
