//! Voxelization and the multi-scale occupancy of a strided sparse-conv backbone.
//!
//! Only the stride-2 downsampling layers change occupancy: a 3×3×3 stride-2
//! regular sparse convolution writes to every coarse cell its kernel touches,
//! so the coarse support is `{ ⌊(v + d)/2⌋ : d ∈ {−1,0,1}³ }`. Submanifold
//! layers in between keep occupancy fixed and are not modelled.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kitti_io::PointCloud;

pub type VoxelIndex = [u32; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelGridConfig {
    pub range_min: [f64; 3],
    pub range_max: [f64; 3],
    pub voxel_size: [f64; 3],
    #[serde(default = "default_num_scales")]
    pub num_scales: usize,
}

fn default_num_scales() -> usize {
    4
}

impl Default for VoxelGridConfig {
    /// KITTI convention: [0, 70.4] × [−40, 40] × [−3, 1] m at 5 × 5 × 10 cm.
    fn default() -> Self {
        Self {
            range_min: [0.0, -40.0, -3.0],
            range_max: [70.4, 40.0, 1.0],
            voxel_size: [0.05, 0.05, 0.1],
            num_scales: 4,
        }
    }
}

impl VoxelGridConfig {
    /// Validate the config and return the scale-0 grid extents.
    ///
    /// Extents must be integers and divisible by `2^(num_scales−1)` so every
    /// coarse grid tiles the range exactly.
    pub fn extents(&self) -> Result<[u32; 3]> {
        if self.num_scales == 0 || self.num_scales > 16 {
            return Err(Error::contract(format!("num_scales {} out of range", self.num_scales)));
        }
        let mut out = [0u32; 3];
        for k in 0..3 {
            let span = self.range_max[k] - self.range_min[k];
            if !(span > 0.0) || !(self.voxel_size[k] > 0.0) {
                return Err(Error::contract("range must be increasing and voxel size positive"));
            }
            let n = span / self.voxel_size[k];
            let rounded = n.round();
            if (n - rounded).abs() > 1e-6 * rounded.max(1.0) || rounded < 1.0 || rounded > u32::MAX as f64 {
                return Err(Error::contract(format!("axis {k}: extent {n} is not an integer")));
            }
            let e = rounded as u32;
            if !e.is_multiple_of(1 << (self.num_scales - 1)) {
                return Err(Error::contract(format!(
                    "axis {k}: extent {e} not divisible by 2^{}",
                    self.num_scales - 1
                )));
            }
            out[k] = e;
        }
        Ok(out)
    }

    pub fn scale_extents(&self, level: usize) -> Result<[u32; 3]> {
        Ok(self.extents()?.map(|e| e >> level))
    }

    pub fn scale_voxel_size(&self, level: usize) -> [f64; 3] {
        let f = (1u64 << level) as f64;
        self.voxel_size.map(|s| s * f)
    }
}

/// Occupied voxels of one scale with a feature row per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelScale {
    pub level: usize,
    pub extents: [u32; 3],
    /// Sorted, unique.
    pub indices: Vec<VoxelIndex>,
    pub channels: usize,
    /// `indices.len() × channels`, row-major.
    pub features: Vec<f64>,
}

impl VoxelScale {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn feature(&self, row: usize) -> &[f64] {
        &self.features[row * self.channels..(row + 1) * self.channels]
    }

    pub fn contains(&self, idx: &VoxelIndex) -> bool {
        self.indices.binary_search(idx).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseVoxelGrid {
    pub config: VoxelGridConfig,
    pub scales: Vec<VoxelScale>,
    /// Points dropped by voxelization for lying outside the range.
    pub dropped_points: usize,
}

impl SparseVoxelGrid {
    pub fn scale(&self, level: usize) -> Option<&VoxelScale> {
        self.scales.get(level)
    }
}

/// Neumaier-compensated accumulator; makes the mean insensitive to point order.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Bucket points into scale-0 voxels; features are the per-voxel mean of
/// `(x, y, z, intensity)`. Points outside `[range_min, range_max)` are dropped.
pub fn voxelize(cloud: &PointCloud, cfg: &VoxelGridConfig) -> Result<SparseVoxelGrid> {
    let extents = cfg.extents()?;
    let mut buckets: HashMap<VoxelIndex, ([CompensatedSum; 4], usize)> = HashMap::new();
    let mut dropped = 0usize;
    for p in &cloud.points {
        match point_index(p, cfg, extents) {
            Some(idx) => {
                let (acc, n) = buckets.entry(idx).or_default();
                for c in 0..4 {
                    acc[c].add(p[c] as f64);
                }
                *n += 1;
            }
            None => dropped += 1,
        }
    }
    let mut ordered: Vec<_> = buckets.into_iter().collect();
    ordered.sort_unstable_by_key(|(idx, _)| *idx);
    let mut indices = Vec::with_capacity(ordered.len());
    let mut features = Vec::with_capacity(ordered.len() * 4);
    for (idx, (acc, n)) in ordered {
        indices.push(idx);
        features.extend(acc.iter().map(|a| a.value() / n as f64));
    }
    Ok(SparseVoxelGrid {
        config: cfg.clone(),
        scales: vec![VoxelScale {
            level: 0,
            extents,
            indices,
            channels: 4,
            features,
        }],
        dropped_points: dropped,
    })
}

fn point_index(p: &[f32; 4], cfg: &VoxelGridConfig, extents: [u32; 3]) -> Option<VoxelIndex> {
    let mut idx = [0u32; 3];
    for k in 0..3 {
        let x = p[k] as f64;
        if !(x >= cfg.range_min[k] && x < cfg.range_max[k]) {
            return None;
        }
        let i = ((x - cfg.range_min[k]) / cfg.voxel_size[k]).floor();
        if i < 0.0 || i >= extents[k] as f64 {
            return None;
        }
        idx[k] = i as u32;
    }
    Some(idx)
}

/// Output support and features of a 3×3×3 stride-2 regular sparse conv.
///
/// Coarse features are the mean of the fine features of every voxel whose
/// kernel footprint reaches the coarse cell; channel count is unchanged.
pub fn downsample_dilate(fine: &VoxelScale) -> VoxelScale {
    let coarse_ext = fine.extents.map(|e| e.div_ceil(2));
    let mut acc: BTreeMap<VoxelIndex, (Vec<CompensatedSum>, usize)> = BTreeMap::new();
    for (row, v) in fine.indices.iter().enumerate() {
        let feat = fine.feature(row);
        for target in dilation_targets(*v, coarse_ext) {
            let (sums, n) = acc
                .entry(target)
                .or_insert_with(|| (vec![CompensatedSum::default(); fine.channels], 0));
            for (s, x) in sums.iter_mut().zip(feat) {
                s.add(*x);
            }
            *n += 1;
        }
    }
    let mut indices = Vec::with_capacity(acc.len());
    let mut features = Vec::with_capacity(acc.len() * fine.channels);
    for (idx, (sums, n)) in acc {
        indices.push(idx);
        features.extend(sums.iter().map(|s| s.value() / n as f64));
    }
    VoxelScale {
        level: fine.level + 1,
        extents: coarse_ext,
        indices,
        channels: fine.channels,
        features,
    }
}

/// Distinct coarse cells `⌊(v + d)/2⌋`, `d ∈ {−1,0,1}³`, inside `extents`.
pub fn dilation_targets(v: VoxelIndex, extents: [u32; 3]) -> Vec<VoxelIndex> {
    let axis = |k: usize| -> Vec<u32> {
        let mut out: Vec<u32> = (-1i64..=1)
            .map(|d| v[k] as i64 + d)
            .filter(|x| *x >= 0)
            .map(|x| (x.div_euclid(2)) as u32)
            .filter(|x| *x < extents[k])
            .collect();
        out.dedup();
        out
    };
    let (xs, ys, zs) = (axis(0), axis(1), axis(2));
    let mut out = Vec::with_capacity(xs.len() * ys.len() * zs.len());
    for &i in &xs {
        for &j in &ys {
            for &l in &zs {
                out.push([i, j, l]);
            }
        }
    }
    out
}

/// Voxelize and build every scale up to `cfg.num_scales`.
pub fn build_multiscale(cloud: &PointCloud, cfg: &VoxelGridConfig) -> Result<SparseVoxelGrid> {
    let mut grid = voxelize(cloud, cfg)?;
    while grid.scales.len() < cfg.num_scales {
        let next = downsample_dilate(grid.scales.last().expect("scale 0 exists"));
        grid.scales.push(next);
    }
    Ok(grid)
}

/// Metric centers of the occupied voxels of `level`.
pub fn voxel_centers(grid: &SparseVoxelGrid, level: usize) -> Result<Vec<[f64; 3]>> {
    let scale = grid
        .scale(level)
        .ok_or_else(|| Error::contract(format!("scale {level} not built")))?;
    Ok(scale
        .indices
        .iter()
        .map(|idx| voxel_center(&grid.config, level, *idx))
        .collect())
}

pub fn voxel_center(cfg: &VoxelGridConfig, level: usize, idx: VoxelIndex) -> [f64; 3] {
    let size = cfg.scale_voxel_size(level);
    [0, 1, 2].map(|k| cfg.range_min[k] + (idx[k] as f64 + 0.5) * size[k])
}
